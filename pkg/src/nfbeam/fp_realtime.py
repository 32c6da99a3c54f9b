"""Real-time dynamic hybrid beamforming via fractional programming.

One outer iteration updates, in order, the SINR auxiliaries ``mu``, the
quadratic-transform auxiliaries ``xi``, the switch matrix, the phase shifts
and the digital precoder. All analog/digital subproblems maximise the
quadratic-transform objective ``delta``.
"""
from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import manifold
from .beamform import (AnalogBeamformer, DegenerateBeamformerError, DigitalBeamformer,
                       compose, effective_gains, enforce_power, sinr, sum_rate)

log = logging.getLogger(__name__)

EXACT_LIMIT = 10**7
_COND_LIMIT = 1e12
_LOADING = 1e-12


class CapacityError(ValueError):
    pass


class NumericError(FloatingPointError):
    def __init__(self, step: str, iteration: int):
        super().__init__(f"non-finite value after step '{step}' in outer iteration {iteration}")
        self.step = step
        self.iteration = iteration


@dataclass
class FpSettings:
    max_outer_iters: int = 50
    rel_tol: float = 1e-4
    switch_mode: str = "row_coordinate_descent"  # or "exact_enumeration"
    max_sweeps: int = 10
    # let each antenna re-pick its phase together with its RF chain in the switch step
    rephase_rows: bool = True
    # an RF chain without antennas can never be revived by the switch step
    min_per_chain: int = 1
    # outer iterations run before the first switch update
    switch_warmup: int = 0
    # fold the transmit-power equality into the noise term of every subproblem
    power_aware: bool = True
    # after each FP iterate try x_old + beta (x_new - x_old), beta = 2, 4, ...,
    # keeping a candidate only if the sum rate improves
    extrapolate: bool = True
    max_extrapolation: int = 40
    # also run from the converged fixed-subarray point, which is feasible for
    # the dynamic architecture, and keep the better end point
    fixed_partition_start: bool = True
    rcg: manifold.RcgSettings = field(default_factory=manifold.RcgSettings)

    def __post_init__(self):
        if not self.rel_tol > 0:
            raise ValueError("rel_tol must be positive")
        if self.switch_mode not in ("row_coordinate_descent", "exact_enumeration"):
            raise ValueError(f"unknown switch_mode {self.switch_mode!r}")


@dataclass
class FpState:
    mu: np.ndarray
    xi: np.ndarray
    d_mat: np.ndarray
    analog: object
    digital: DigitalBeamformer


@dataclass
class FpResult:
    analog: object
    digital: DigitalBeamformer
    trace: list
    iters: int
    converged: bool
    diagnostics: dict = field(default_factory=dict)

    @property
    def sum_rate(self) -> float:
        return self.trace[-1]


# ---------------------------------------------------------------------------
# auxiliary variables and objectives

def update_mu(h, f_rf, f_bb, noise) -> np.ndarray:
    """Optimal Lagrangian-dual auxiliaries: ``mu_k = SINR_k``."""
    return sinr(h, f_rf, f_bb, noise)


def update_xi(h, f_rf, f_bb, mu, noise) -> np.ndarray:
    gains = effective_gains(h, f_rf, f_bb)
    noise = np.broadcast_to(np.asarray(noise, dtype=float), (gains.shape[0],))
    c = np.sum(np.abs(gains) ** 2, axis=1) + noise
    return np.sqrt(1 + np.asarray(mu)) * np.diag(gains) / c


def d_matrix(h, xi) -> np.ndarray:
    """``D = sum_j |xi_j|^2 h_j h_j^H``."""
    hw = np.asarray(h) * np.abs(xi)
    return hw @ hw.conj().T


def power_weight(xi, noise, p_t) -> float:
    """Coefficient of ``||F_RF F_BB||^2`` once noise is tied to the power budget."""
    noise = np.broadcast_to(np.asarray(noise, dtype=float), np.shape(xi))
    return float(np.sum(np.abs(xi) ** 2 * noise) / p_t)


def _weight(h, xi, noise, p_t, power_aware):
    """The matrix that weighs precoder energy in ``delta``."""
    d = d_matrix(h, xi)
    if power_aware:
        d = d + power_weight(xi, noise, p_t) * np.eye(d.shape[0])
    return d


def delta_objective(h, f_rf, f_bb, mu, xi, d_mat=None) -> float:
    """``sum_k 2 sqrt(1+mu_k) Re{xi_k^* h_k^H F_RF f_k} - f_k^H F_RF^H D F_RF f_k``."""
    if d_mat is None:
        d_mat = d_matrix(h, xi)
    x = np.asarray(f_rf) @ np.asarray(f_bb)
    lin = np.sqrt(1 + np.asarray(mu)) * np.real(np.conj(xi) * np.sum(np.conj(h) * x, axis=0))
    quad = np.real(np.sum(np.conj(x) * (d_mat @ x)))
    return float(2 * lin.sum() - quad)


def fp_objective(h, f_rf, f_bb, mu, xi, noise, logfn=np.log2) -> float:
    """The transformed sum-rate objective for given auxiliaries.

    With ``mu`` and ``xi`` at their closed-form optima this equals the sum
    rate in the base of ``logfn``.
    """
    noise = np.broadcast_to(np.asarray(noise, dtype=float), np.shape(mu))
    const = np.sum(logfn(1 + np.asarray(mu)) - mu - np.abs(xi) ** 2 * noise)
    return float(const + delta_objective(h, f_rf, f_bb, mu, xi))


# ---------------------------------------------------------------------------
# switch matrix

def _switch_terms(h, phases, f_bb, mu, xi):
    lin = np.asarray(h) * (np.sqrt(1 + np.asarray(mu)) * xi)  # N_t x K
    # option 0 is "off"; option l+1 routes RF chain l through antenna n
    options = np.concatenate([np.zeros((1, f_bb.shape[1])), f_bb], axis=0)
    return lin, options


def _rows_from_assignment(assignment, phases, options):
    return phases[:, None] * options[np.asarray(assignment) + 1]


def switch_delta(h, phases, f_bb, mu, xi, assignment, d_mat) -> float:
    """``delta`` for a per-antenna RF assignment (``-1`` = off)."""
    lin, options = _switch_terms(h, phases, f_bb, mu, xi)
    z = _rows_from_assignment(assignment, phases, options)
    return float(2 * np.real(np.sum(np.conj(lin) * z)) - np.real(np.sum(np.conj(z) * (d_mat @ z))))


def _chain_counts(a, n_rf):
    return np.bincount(a[a >= 0], minlength=n_rf)


def _switch_exact(h, phases, f_bb, mu, xi, d_mat, min_per_chain=0):
    n_t, n_rf = h.shape[0], f_bb.shape[0]
    total = (n_rf + 1) ** n_t
    if total > EXACT_LIMIT:
        raise CapacityError(f"exact enumeration needs {total} > {EXACT_LIMIT} assignments")
    lin, options = _switch_terms(h, phases, f_bb, mu, xi)
    best_val, best = -np.inf, None
    choices = itertools.product(range(-1, n_rf), repeat=n_t)
    chunk = max(1, 200_000 // max(n_t * f_bb.shape[1], 1))
    while True:
        block = np.array(list(itertools.islice(choices, chunk)), dtype=int)
        if block.size == 0:
            break
        if min_per_chain:
            counts = np.stack([(block == l).sum(axis=1) for l in range(n_rf)], axis=1)
            block = block[np.all(counts >= min_per_chain, axis=1)]
            if block.size == 0:
                continue
        z = phases[None, :, None] * options[block + 1]  # M x N_t x K
        vals = 2 * np.real(np.einsum("nk,mnk->m", np.conj(lin), z))
        vals -= np.real(np.einsum("mnk,np,mpk->m", np.conj(z), d_mat, z))
        i = int(np.argmax(vals))
        if vals[i] > best_val:
            best_val, best = vals[i], block[i].copy()
    return best


def _switch_coordinate_descent(h, phases, f_bb, mu, xi, d_mat, assignment, max_sweeps,
                               min_per_chain=0):
    lin, options = _switch_terms(h, phases, f_bb, mu, xi)
    a = np.array(assignment, dtype=int)
    counts = _chain_counts(a, f_bb.shape[0])
    z = _rows_from_assignment(a, phases, options)
    w = d_mat @ z
    diag = np.real(np.diag(d_mat))
    for _ in range(max_sweeps):
        changed = False
        for n in range(a.size):
            if a[n] >= 0 and counts[a[n]] <= min_per_chain:
                continue
            cand = phases[n] * options  # (N_RF+1) x K
            u = w[n] - d_mat[n, n] * z[n]  # coupling to every other row
            score = (2 * np.real(cand @ np.conj(lin[n])) - 2 * np.real(np.conj(cand) @ u)
                     - diag[n] * np.sum(np.abs(cand) ** 2, axis=1))
            cur = a[n] + 1
            best = int(np.argmax(score))
            # strict improvement only, so sweeps terminate
            if best != cur and score[best] > score[cur] + 1e-14 * abs(score[cur]):
                step = cand[best] - z[n]
                w += np.outer(d_mat[:, n], step)
                z[n] = cand[best]
                _move(counts, a[n], best - 1)
                a[n] = best - 1
                changed = True
        if not changed:
            break
    return a


def _move(counts, old, new):
    if old >= 0:
        counts[old] -= 1
    if new >= 0:
        counts[new] += 1


def switch_and_rephase(h, angles, f_bb, mu, xi, assignment, d_mat, max_sweeps=10,
                       min_per_chain=0):
    """Row-wise best response over ``(a_n, theta_n)`` jointly.

    For a fixed RF choice the row term of ``delta`` is linear in ``phi_n``
    plus a constant, so the best phase is closed-form. Never lowers
    ``delta``. Returns ``(assignment, angles)``.
    """
    h = np.asarray(h)
    f_bb = np.asarray(f_bb)
    rho = 1 / np.sqrt(h.shape[0])
    phases = rho * np.exp(1j * np.asarray(angles, dtype=float))
    lin, options = _switch_terms(h, phases, f_bb, mu, xi)
    a = np.array(assignment, dtype=int)
    counts = _chain_counts(a, f_bb.shape[0])
    z = _rows_from_assignment(a, phases, options)
    w = d_mat @ z
    diag = np.real(np.diag(d_mat))
    energy = np.sum(np.abs(options) ** 2, axis=1)
    for _ in range(max_sweeps):
        changed = False
        for n in range(a.size):
            u = w[n] - d_mat[n, n] * z[n]
            gam = options @ np.conj(lin[n]) - np.conj(np.conj(options) @ u)
            score = 2 * rho * np.abs(gam) - diag[n] * rho ** 2 * energy
            cur = (2 * np.real(z[n] @ np.conj(lin[n])) - 2 * np.real(np.conj(z[n]) @ u)
                   - diag[n] * np.sum(np.abs(z[n]) ** 2))
            if a[n] >= 0 and counts[a[n]] <= min_per_chain:
                # the row may re-phase but must stay on its chain
                score = np.where(np.arange(score.size) == a[n] + 1, score, -np.inf)
            best = int(np.argmax(score))
            if score[best] > cur + 1e-12 * abs(cur):
                if best > 0 and abs(gam[best]) > 0:
                    phases[n] = rho * np.conj(gam[best]) / abs(gam[best])
                new = phases[n] * options[best]
                w += np.outer(d_mat[:, n], new - z[n])
                z[n] = new
                _move(counts, a[n], best - 1)
                a[n] = best - 1
                changed = True
        if not changed:
            break
    return a, np.angle(phases)


def optimize_switch(h, phases, f_bb, mu, xi, assignment, d_mat=None,
                    mode="row_coordinate_descent", max_sweeps=10, min_per_chain=0) -> np.ndarray:
    """Improve the per-antenna RF assignment with the phases held fixed.

    Returns a new assignment (``-1`` = off). ``exact_enumeration`` returns a
    global maximiser of ``delta``; coordinate descent never lowers ``delta``
    below its value at ``assignment``. With ``min_per_chain > 0`` only
    assignments that give every RF chain that many antennas are considered
    (coordinate descent assumes the start already satisfies this).
    """
    h = np.asarray(h)
    f_bb = np.asarray(f_bb)
    if d_mat is None:
        d_mat = d_matrix(h, xi)
    if mode == "exact_enumeration":
        return _switch_exact(h, phases, f_bb, mu, xi, d_mat, min_per_chain)
    return _switch_coordinate_descent(h, phases, f_bb, mu, xi, d_mat, assignment, max_sweeps,
                                      min_per_chain)


# ---------------------------------------------------------------------------
# phase shifts

def phase_problem(h, switch, f_bb, mu, xi, d_mat=None) -> manifold.CircleQuadraticProblem:
    """Circle-constrained quadratic in ``phi`` whose negation is ``delta``."""
    h = np.asarray(h)
    if d_mat is None:
        d_mat = d_matrix(h, xi)
    zt = np.asarray(switch) @ np.asarray(f_bb)  # column k is S f_k
    q_mat = d_mat * (np.conj(zt) @ zt.T)
    q_mat = 0.5 * (q_mat + q_mat.conj().T)
    q_vec = (np.conj(zt) * h) @ (np.sqrt(1 + np.asarray(mu)) * xi)
    return manifold.CircleQuadraticProblem(q_mat, q_vec, 1 / np.sqrt(h.shape[0]))


def optimize_phase(h, switch, f_bb, mu, xi, angles, d_mat=None, rcg=None) -> np.ndarray:
    problem = phase_problem(h, switch, f_bb, mu, xi, d_mat)
    phi0 = np.exp(1j * np.asarray(angles)) * problem.radius
    res = manifold.solve(problem, phi0, rcg)
    if res.objective >= problem.objective(phi0):
        return np.asarray(angles, dtype=float).copy()
    return np.angle(res.phi)


# ---------------------------------------------------------------------------
# digital precoder

def unconstrained_digital(h, f_rf, mu, xi, d_mat=None):
    """Stationary point of ``delta`` in ``F_BB``; returns ``(F_bar, loaded)``.

    Diagonal loading is applied when ``F_RF^H D F_RF`` is numerically singular.
    """
    h = np.asarray(h)
    f_rf = np.asarray(f_rf)
    if d_mat is None:
        d_mat = d_matrix(h, xi)
    m = f_rf.conj().T @ d_mat @ f_rf
    m = 0.5 * (m + m.conj().T)
    rhs = (f_rf.conj().T @ h) * (np.sqrt(1 + np.asarray(mu)) * xi)
    loaded = False
    if np.linalg.cond(m) > _COND_LIMIT:
        tr = np.real(np.trace(m))
        if not tr > 0:
            raise DegenerateBeamformerError("F_RF^H D F_RF vanishes")
        m = m + _LOADING * tr / m.shape[0] * np.eye(m.shape[0])
        loaded = True
    return np.linalg.solve(m, rhs), loaded


def update_digital(h, f_rf, mu, xi, p_t, d_mat=None) -> DigitalBeamformer:
    f_bar, _ = unconstrained_digital(h, f_rf, mu, xi, d_mat)
    return enforce_power(f_rf, f_bar, p_t)


# ---------------------------------------------------------------------------
# initialisation and the outer loop

def subarray_assignment(n_t: int, n_rf: int) -> np.ndarray:
    """Contiguous blocks of ``n_t // n_rf`` antennas; the last block takes the remainder."""
    size = n_t // n_rf
    if size == 0:
        raise ValueError("need at least one antenna per RF chain")
    return np.minimum(np.arange(n_t) // size, n_rf - 1)


def matched_angles(h) -> np.ndarray:
    """Per antenna, co-phase with the UE it sees most strongly."""
    h = np.asarray(h)
    strongest = np.argmax(np.abs(h), axis=1)
    return np.angle(h[np.arange(h.shape[0]), strongest])


def mmse_precoder(h_eff, noise):
    """``H_e^H (H_e H_e^H + sigma^2 I)^-1`` for a ``K x N`` effective channel."""
    h_eff = np.asarray(h_eff)
    k = h_eff.shape[0]
    noise = np.broadcast_to(np.asarray(noise, dtype=float), (k,))
    gram = h_eff @ h_eff.conj().T + np.diag(noise)
    return h_eff.conj().T @ np.linalg.inv(gram)


def matched_filter(h, f_rf) -> np.ndarray:
    """``(H^H F_RF)^H``, or a flat precoder when the channel is identically zero."""
    f_bb = (np.asarray(h).conj().T @ f_rf).conj().T
    if not np.any(f_bb):
        f_bb = np.ones_like(f_bb)
    return f_bb


def initial_beamformer(h, n_rf: int, p_t: float, noise=None):
    """Fixed-subarray switches, matched phases and a linear digital stage.

    The digital stage is MMSE on the effective channel when ``noise`` is
    given and a matched filter otherwise.
    """
    h = np.asarray(h)
    analog = AnalogBeamformer.from_assignment(matched_angles(h), subarray_assignment(h.shape[0], n_rf), n_rf)
    f_rf = compose(analog)
    h_eff = h.conj().T @ f_rf
    if noise is None:
        f_bb = matched_filter(h, f_rf)
    else:
        # noise referred to the precoder input so the regularisation is scale-consistent
        f_bb = mmse_precoder(h_eff, np.asarray(noise) * np.linalg.norm(f_rf) ** 2 / p_t)
    return analog, enforce_power(f_rf, f_bb, p_t)


@dataclass
class AnalogStep:
    """How one family of architectures composes and refines its analog stage."""

    matrix: Callable[[object], np.ndarray]
    refine: Optional[Callable] = None  # (analog, h, f_bb, mu, xi, weight, iteration) -> analog
    extrapolate: Optional[Callable] = None  # (old, new, beta) -> analog


def wrap_angle(x):
    return np.angle(np.exp(1j * np.asarray(x, dtype=float)))


def _extrapolate_dynamic(old, new, beta):
    return AnalogBeamformer(new.angles if old is None else
                            old.angles + beta * wrap_angle(new.angles - old.angles), new.switch)


def dynamic_step(settings: FpSettings, optimize_switches: bool = True) -> AnalogStep:
    def refine(analog, h, f_bb, mu, xi, weight, iteration=1):
        assignment = analog.assignment()
        angles = analog.angles
        if optimize_switches and iteration > settings.switch_warmup:
            if settings.rephase_rows and settings.switch_mode == "row_coordinate_descent":
                new, new_angles = switch_and_rephase(h, angles, f_bb, mu, xi, assignment, weight,
                                                     settings.max_sweeps, settings.min_per_chain)
            else:
                new = optimize_switch(h, analog.phases, f_bb, mu, xi, assignment, weight,
                                      settings.switch_mode, settings.max_sweeps,
                                      settings.min_per_chain)
                new_angles = angles
            # an empty array cannot carry any power; keep the previous connections
            if np.any(new >= 0):
                assignment, angles = new, new_angles
        switch = AnalogBeamformer.from_assignment(angles, assignment, analog.n_rf).switch
        angles = optimize_phase(h, switch, f_bb, mu, xi, angles, weight, settings.rcg)
        return AnalogBeamformer(angles, switch)

    return AnalogStep(matrix=compose, refine=refine, extrapolate=_extrapolate_dynamic)


def fp_loop(h, noise, p_t, settings: FpSettings, analog, digital: DigitalBeamformer,
            step: AnalogStep) -> FpResult:
    """Generic alternating FP loop shared by all real-time architectures."""
    h = np.asarray(h)
    f_rf = step.matrix(analog)
    f_bb = digital.f_bb
    rate = sum_rate(sinr(h, f_rf, f_bb, noise))
    trace = [rate]
    if not np.any(h):
        # nothing to optimise: every beamformer delivers zero rate
        return FpResult(analog=analog, digital=DigitalBeamformer(f_bb), trace=trace, iters=0,
                        converged=True, diagnostics={"diagonal_loadings": 0, "extrapolation": []})
    loads = 0
    betas = []
    prev, prev_fbb = analog, f_bb
    converged = False
    it = 0
    while it < settings.max_outer_iters:
        it += 1
        mu = update_mu(h, f_rf, f_bb, noise)
        xi = update_xi(h, f_rf, f_bb, mu, noise)
        if not (np.all(np.isfinite(mu)) and np.all(np.isfinite(xi))):
            raise NumericError("auxiliary", it)
        weight = _weight(h, xi, noise, p_t, settings.power_aware)
        if step.refine is not None:
            analog = step.refine(analog, h, f_bb, mu, xi, weight, it)
            f_rf = step.matrix(analog)
            if not np.all(np.isfinite(f_rf)):
                raise NumericError("analog", it)
        f_bar, loaded = unconstrained_digital(h, f_rf, mu, xi, weight)
        loads += loaded
        f_bb = enforce_power(f_rf, f_bar, p_t).f_bb
        if not np.all(np.isfinite(f_bb)):
            raise NumericError("digital", it)
        new_rate = sum_rate(sinr(h, f_rf, f_bb, noise))
        if settings.extrapolate:
            new_rate, analog, f_bb, beta = _extrapolate(h, noise, p_t, settings, step, prev, analog,
                                                        prev_fbb, f_bb, new_rate, mu, xi, weight)
            f_rf = step.matrix(analog)
            betas.append(beta)
        prev, prev_fbb = analog, f_bb
        trace.append(new_rate)
        if abs(new_rate - rate) < settings.rel_tol * max(abs(rate), np.finfo(float).tiny):
            converged = True
            rate = new_rate
            break
        rate = new_rate
    return FpResult(analog=analog, digital=DigitalBeamformer(f_bb), trace=trace, iters=it,
                    converged=converged,
                    diagnostics={"diagonal_loadings": loads, "extrapolation": betas})


def _extrapolate(h, noise, p_t, settings, step, old, new, old_fbb, new_fbb, rate, mu, xi, weight):
    """Safeguarded over-relaxation of one FP iterate; returns the accepted point."""
    best = (rate, new, new_fbb, 1.0)
    beta = 2.0
    for _ in range(settings.max_extrapolation):
        if step.extrapolate is not None:
            cand = step.extrapolate(old, new, beta)
            f_rf = step.matrix(cand)
            f_bar, _ = unconstrained_digital(h, f_rf, mu, xi, weight)
        else:
            cand = new
            f_rf = step.matrix(cand)
            f_bar = old_fbb + beta * (new_fbb - old_fbb)
        try:
            f_bb = enforce_power(f_rf, f_bar, p_t).f_bb
        except DegenerateBeamformerError:
            break
        r = sum_rate(sinr(h, f_rf, f_bb, noise))
        if not (np.isfinite(r) and r > best[0]):
            break
        best = (r, cand, f_bb, beta)
        beta *= 2
    return best


def run_fixed_partition(h, noise, p_t, settings: FpSettings | None = None,
                        n_rf: int | None = None) -> FpResult:
    """The same loop with the contiguous switch partition frozen."""
    settings = settings or FpSettings()
    h = np.asarray(h)
    analog, digital = initial_beamformer(h, n_rf or h.shape[1], p_t)
    return fp_loop(h, noise, p_t, settings, analog, digital, dynamic_step(settings, False))


def run(h, noise, p_t, settings: FpSettings | None = None, n_rf: int | None = None,
        init=None) -> FpResult:
    """Dynamic-subarray real-time design.

    ``init`` is an ``(AnalogBeamformer, DigitalBeamformer)`` pair; by default
    :func:`initial_beamformer` is used with ``n_rf`` RF chains (``K`` if
    omitted), and with ``settings.fixed_partition_start`` a second descent
    starts from the converged fixed-subarray design. ``diagnostics["start"]``
    names the start whose end point is returned.
    """
    settings = settings or FpSettings()
    h = np.asarray(h)
    n_rf = n_rf or h.shape[1]
    step = dynamic_step(settings)
    if init is not None:
        return fp_loop(h, noise, p_t, settings, *init, step)
    best = fp_loop(h, noise, p_t, settings, *initial_beamformer(h, n_rf, p_t), step)
    best.diagnostics["start"] = "default"
    if settings.fixed_partition_start:
        fixed = run_fixed_partition(h, noise, p_t, settings, n_rf)
        warm = fp_loop(h, noise, p_t, settings, fixed.analog, fixed.digital, step)
        if warm.sum_rate > best.sum_rate:
            best = warm
            best.diagnostics["start"] = "fixed_partition"
    return best
