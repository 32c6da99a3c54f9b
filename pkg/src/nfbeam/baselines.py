"""Reference architectures run through the same FP and SSCA machinery."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import fp_realtime as fp
from . import manifold
from . import two_timescale as tt
from .beamform import Architecture, AnalogBeamformer, DigitalBeamformer, enforce_power

ArchitectureKind = Architecture


@dataclass(frozen=True)
class FullPhaseAnalog:
    """Fully-connected analog stage: one phase shifter per (antenna, RF chain)."""

    angles: np.ndarray  # N_t x N_RF

    @property
    def matrix(self) -> np.ndarray:
        return tt.full_phase_matrix(self.angles)

    @property
    def active(self) -> np.ndarray:
        return np.ones(self.angles.shape[0], dtype=bool)


@dataclass(frozen=True)
class DigitalOnly:
    """Placeholder analog stage of a fully-digital array."""

    n_antennas: int

    @property
    def active(self) -> np.ndarray:
        return np.ones(self.n_antennas, dtype=bool)


def _matched_digital(h, f_rf, p_t) -> DigitalBeamformer:
    return enforce_power(f_rf, fp.matched_filter(h, f_rf), p_t)


def fully_digital_realtime(h, noise, p_t, settings: fp.FpSettings | None = None) -> fp.FpResult:
    """FP loop with ``F_RF = I``: the precoder update is the closed-form digital step."""
    settings = settings or fp.FpSettings()
    h = np.asarray(h)
    if h.shape[1] > h.shape[0]:
        raise ValueError("fully-digital precoding needs K <= N_t")
    eye = np.eye(h.shape[0])
    step = fp.AnalogStep(matrix=lambda _: eye)
    return fp.fp_loop(h, noise, p_t, settings, DigitalOnly(h.shape[0]), _matched_digital(h, eye, p_t), step)


def full_phase_problem(h, f_bb, mu, xi, d_mat, n_t) -> manifold.CircleQuadraticProblem:
    """``delta`` as a circle problem over ``vec(F_RF)`` (column-major)."""
    f_bb = np.asarray(f_bb)
    coef = np.sqrt(1 + np.asarray(mu)) * xi
    gram = np.conj(f_bb) @ f_bb.T  # sum_k conj(f_k) f_k^T
    q_mat = np.kron(gram, d_mat)
    q_mat = 0.5 * (q_mat + q_mat.conj().T)
    q_vec = np.zeros(n_t * f_bb.shape[0], dtype=complex)
    for k in range(f_bb.shape[1]):
        q_vec += coef[k] * np.kron(np.conj(f_bb[:, k]), h[:, k])
    return manifold.CircleQuadraticProblem(q_mat, q_vec, 1 / np.sqrt(n_t))


def _full_phase_step(settings: fp.FpSettings) -> fp.AnalogStep:
    def refine(analog, h, f_bb, mu, xi, weight, iteration=1):
        n_t, n_rf = analog.angles.shape
        problem = full_phase_problem(h, f_bb, mu, xi, weight, n_t)
        phi0 = analog.matrix.ravel(order="F")
        res = manifold.solve(problem, phi0, settings.rcg)
        if res.objective > problem.objective(phi0):
            return analog
        return FullPhaseAnalog(np.angle(res.phi).reshape(n_t, n_rf, order="F"))

    def extrapolate(old, new, beta):
        return FullPhaseAnalog(old.angles + beta * fp.wrap_angle(new.angles - old.angles))

    return fp.AnalogStep(matrix=lambda a: a.matrix, refine=refine, extrapolate=extrapolate)


def fully_connected_init(h, n_rf: int) -> FullPhaseAnalog:
    """Column ``l`` co-phased with UE ``l mod K``."""
    h = np.asarray(h)
    return FullPhaseAnalog(np.column_stack([np.angle(h[:, l % h.shape[1]]) for l in range(n_rf)]))


def fully_connected_realtime(h, noise, p_t, settings: fp.FpSettings | None = None,
                             n_rf: int | None = None) -> fp.FpResult:
    settings = settings or fp.FpSettings()
    h = np.asarray(h)
    analog = fully_connected_init(h, n_rf or h.shape[1])
    return fp.fp_loop(h, noise, p_t, settings, analog, _matched_digital(h, analog.matrix, p_t),
                      _full_phase_step(settings))


def fixed_subarray_realtime(h, noise, p_t, settings: fp.FpSettings | None = None,
                            n_rf: int | None = None) -> fp.FpResult:
    return fp.run_fixed_partition(h, noise, p_t, settings, n_rf)


def dynamic_subarray_realtime(h, noise, p_t, settings: fp.FpSettings | None = None,
                              n_rf: int | None = None) -> fp.FpResult:
    return fp.run(h, noise, p_t, settings, n_rf)


REALTIME = {
    Architecture.FULLY_DIGITAL: lambda h, noise, p_t, settings, n_rf=None:
        fully_digital_realtime(h, noise, p_t, settings),
    Architecture.FULLY_CONNECTED: fully_connected_realtime,
    Architecture.FIXED_SUBARRAY: fixed_subarray_realtime,
    Architecture.DYNAMIC_SUBARRAY: dynamic_subarray_realtime,
}


def realtime(arch, h, noise, p_t, settings=None, n_rf=None) -> fp.FpResult:
    return REALTIME[Architecture(arch)](h, noise, p_t, settings, n_rf=n_rf)


def two_timescale_variants(arch, scenario, params, schedule, rng) -> tt.SuperframeResult:
    """FS-T keeps the switch pattern; FC-T adapts every phase shifter."""
    arch = Architecture(arch)
    if arch not in (Architecture.FULLY_CONNECTED, Architecture.FIXED_SUBARRAY):
        raise ValueError("two-timescale baselines exist for fully_connected and fixed_subarray only")
    return tt.run_superframe(scenario, params, schedule, rng, arch.value)


def active_fraction(analog) -> float:
    return float(np.mean(analog.active))


def is_hybrid_switch(analog) -> bool:
    return isinstance(analog, AnalogBeamformer)
