"""Two-timescale hybrid beamforming.

The analog stage is updated once per frame from a single channel sample by
stochastic successive convex approximation (SSCA): a quadratic surrogate of
the negative sum rate is built recursively, Boolean and one-connection
penalties on the relaxed switch vector are majorised by linear forms, and the
resulting box-constrained problem has a closed-form solution. The digital
stage is an MMSE precoder recomputed every slot from the instantaneous
effective channel.

The switch vector ``s`` is ``vec(S)`` in column-major order, i.e. entry
``n + l * N_t`` is the connection of antenna ``n`` to RF chain ``l``.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .beamform import (AnalogBeamformer, DigitalBeamformer, compose, effective_gains,
                       enforce_power, sinr, sum_rate)
from .fp_realtime import matched_angles, subarray_assignment
from .scenario import Scenario

_LN2 = np.log(2.0)


# ---------------------------------------------------------------------------
# objective and gradients

def _switch_matrix(s, n_t):
    s = np.asarray(s, dtype=float)
    return s.reshape(n_t, -1, order="F")


def analog_matrix(theta, s) -> np.ndarray:
    """``F_RF = diag(phi(theta)) mat(s)``; ``s`` may be fractional."""
    theta = np.asarray(theta, dtype=float)
    n_t = theta.size
    phases = np.exp(1j * theta) / np.sqrt(n_t)
    return phases[:, None] * _switch_matrix(s, n_t)


def _rate_sensitivity(h, f_rf, f_bb, noise):
    """Return ``(g0, G)`` with ``d g0 = -(2/ln2) Re sum(G * dF_RF)``."""
    h = np.asarray(h)
    f_bb = np.asarray(f_bb)
    b = effective_gains(h, f_rf, f_bb)  # [k, i] = h_k^H F_RF f_i
    p = np.abs(b) ** 2
    k = b.shape[0]
    noise = np.broadcast_to(np.asarray(noise, dtype=float), (k,))
    total = p.sum(axis=1) + noise
    interf = total - np.diag(p)
    g0 = -float(np.sum(np.log2(total) - np.log2(interf)))
    alpha = (1 / total)[:, None] - (1 - np.eye(k)) / interf[:, None]
    m = np.conj(h) @ (alpha * np.conj(b))  # N_t x K
    return g0, m @ f_bb.T


def g0(theta, s, h, f_bb, noise) -> float:
    """Negative sum rate (bits/s/Hz) of one channel sample."""
    f_rf = analog_matrix(theta, s)
    if not np.any(np.asarray(f_bb)):
        return 0.0
    return -sum_rate(sinr(h, f_rf, f_bb, noise))


def grad_theta_g0(theta, s, h, f_bb, noise) -> np.ndarray:
    f_rf = analog_matrix(theta, s)
    _, g = _rate_sensitivity(h, f_rf, f_bb, noise)
    return -(2 / _LN2) * np.real(1j * np.sum(g * f_rf, axis=1))


def grad_s_g0(theta, s, h, f_bb, noise) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    f_rf = analog_matrix(theta, s)
    _, g = _rate_sensitivity(h, f_rf, f_bb, noise)
    phases = np.exp(1j * theta) / np.sqrt(theta.size)
    return (-(2 / _LN2) * np.real(g * phases[:, None])).ravel(order="F")


def full_phase_matrix(theta_mat) -> np.ndarray:
    """Fully-connected analog matrix from an ``N_t x N_RF`` array of angles."""
    theta_mat = np.asarray(theta_mat, dtype=float)
    return np.exp(1j * theta_mat) / np.sqrt(theta_mat.shape[0])


def grad_full_phase_g0(theta_mat, h, f_bb, noise) -> np.ndarray:
    """Gradient of the negative sum rate in every angle of a fully-connected array."""
    f_rf = full_phase_matrix(theta_mat)
    _, g = _rate_sensitivity(h, f_rf, f_bb, noise)
    return -(2 / _LN2) * np.real(1j * g * f_rf)


# ---------------------------------------------------------------------------
# surrogate recursion

@dataclass
class SscaParams:
    tau: float = 1.0
    rho_exponent: float = 0.6  # rho^t = (1 + t)^-rho_exponent
    varrho1: float = 0.1
    varrho2: float = 0.1
    c1: float = 1.5
    c2: float = 1.5
    epsilon: float = 1e-3
    n_max_inner: int = 15
    inner_tol: float = 1e-6
    activation: float = 0.5

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError("tau must be positive")
        if not 0 < self.rho_exponent <= 1:
            raise ValueError("rho_exponent must lie in (0, 1]")
        if not (self.varrho1 > 0 and self.varrho2 > 0):
            raise ValueError("penalty weights must be positive")
        if not (self.c1 > 1 and self.c2 > 1):
            raise ValueError("penalty growth factors must exceed 1")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if self.n_max_inner < 1:
            raise ValueError("n_max_inner must be at least 1")

    def rho(self, t: int) -> float:
        return float((1.0 + t) ** -self.rho_exponent)


@dataclass(frozen=True)
class FrameSchedule:
    t_frames: int
    ts_slots: int

    def __post_init__(self):
        if self.t_frames < 1 or self.ts_slots < 1:
            raise ValueError("need at least one frame and one slot")


@dataclass
class SurrogateState:
    v: float
    v_theta: np.ndarray
    v_s: np.ndarray
    theta: np.ndarray
    s: np.ndarray
    t: int = 0

    def __post_init__(self):
        self.theta = np.asarray(self.theta, dtype=float)
        self.s = np.asarray(self.s, dtype=float)
        self.v_theta = np.asarray(self.v_theta, dtype=float)
        self.v_s = np.asarray(self.v_s, dtype=float)
        if np.any(self.s < 0) or np.any(self.s > 1):
            raise ValueError("switch vector must lie in [0, 1]")
        for name in ("theta", "s", "v_theta", "v_s"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise FloatingPointError(f"non-finite {name}")

    @classmethod
    def initial(cls, theta, s) -> "SurrogateState":
        theta = np.asarray(theta, dtype=float)
        s = np.asarray(s, dtype=float)
        return cls(v=0.0, v_theta=np.ones(theta.size), v_s=np.ones(s.size), theta=theta, s=s, t=0)


def recurse(state: SurrogateState, rho: float, value: float, g_theta, g_s) -> SurrogateState:
    """One step of the surrogate recursion with weight ``rho`` on the new sample."""
    if not 0 < rho <= 1:
        raise ValueError("rho must lie in (0, 1]")
    return replace(state,
                   v=(1 - rho) * state.v + rho * value,
                   v_theta=(1 - rho) * state.v_theta + rho * np.asarray(g_theta, dtype=float),
                   v_s=(1 - rho) * state.v_s + rho * np.asarray(g_s, dtype=float))


def update_surrogate(state: SurrogateState, params: SscaParams, h, f_bb, noise,
                     rho: float | None = None) -> SurrogateState:
    """Fold the sample ``h`` into the surrogate anchored at ``(theta^t, s^t)``.

    ``rho`` defaults to the schedule value for frame ``state.t + 1``.
    """
    if rho is None:
        rho = params.rho(state.t + 1)
    f_rf = analog_matrix(state.theta, state.s)
    value, g = _rate_sensitivity(h, f_rf, f_bb, noise)
    if not np.any(np.asarray(f_bb)):
        value = 0.0
    g_theta = -(2 / _LN2) * np.real(1j * np.sum(g * f_rf, axis=1))
    phases = np.exp(1j * state.theta) / np.sqrt(state.theta.size)
    g_s = (-(2 / _LN2) * np.real(g * phases[:, None])).ravel(order="F")
    return recurse(state, rho, value, g_theta, g_s)


def surrogate_value(state: SurrogateState, params: SscaParams, theta, s) -> float:
    dt = np.asarray(theta, dtype=float) - state.theta
    ds = np.asarray(s, dtype=float) - state.s
    return float(state.v + state.v_theta @ dt + state.v_s @ ds
                 + params.tau * (dt @ dt + ds @ ds))


# ---------------------------------------------------------------------------
# penalties

def log_smooth(x, epsilon):
    """``log(1 + x/eps) / log(1 + 1/eps)``: 0 at 0, 1 at 1, concave."""
    return np.log1p(np.asarray(x, dtype=float) / epsilon) / np.log1p(1 / epsilon)


def log_smooth_slope(x, epsilon):
    return 1.0 / ((epsilon + np.asarray(x, dtype=float)) * np.log1p(1 / epsilon))


def row_counts(s, n_t, epsilon) -> np.ndarray:
    """Smoothed number of connections of every antenna."""
    return log_smooth(_switch_matrix(s, n_t), epsilon).sum(axis=1)


def boolean_penalty(s) -> float:
    s = np.asarray(s, dtype=float)
    return float(s @ (1 - s))


def row_penalty(s, n_t, epsilon) -> float:
    st = row_counts(s, n_t, epsilon)
    return float(st @ (1 - st))


@dataclass(frozen=True)
class PenaltyForms:
    """Linear majorisers ``lin @ s + const`` of both penalties at ``s_m``."""

    lin1: np.ndarray
    const1: float
    lin2: np.ndarray
    const2: float

    def boolean(self, s) -> float:
        return float(self.lin1 @ np.asarray(s, dtype=float) + self.const1)

    def rows(self, s) -> float:
        return float(self.lin2 @ np.asarray(s, dtype=float) + self.const2)


def penalty_linearization(s_m, n_t: int, epsilon: float) -> PenaltyForms:
    s_m = np.asarray(s_m, dtype=float)
    # s^T(1-s) <= (1 - 2 s_m)^T s + s_m^T s_m
    lin1 = 1 - 2 * s_m
    const1 = float(s_m @ s_m)
    # the smoothed row count is concave in s; take its tangent u + U (s - s_m),
    # then majorise st^T(1-st) at st_m as for the Boolean term
    smat = _switch_matrix(s_m, n_t)
    u = log_smooth(smat, epsilon).sum(axis=1)
    slope = log_smooth_slope(smat, epsilon)  # N_t x N_RF
    outer = 1 - 2 * u
    lin2 = (outer[:, None] * slope).ravel(order="F")
    offset = u - np.sum(slope * smat, axis=1)  # st = offset + U s
    const2 = float(outer @ offset + u @ u)
    return PenaltyForms(lin1, const1, lin2, const2)


# ---------------------------------------------------------------------------
# inner problem

def penalized_value(state, params, forms: PenaltyForms, varrho1, varrho2, theta, s) -> float:
    return (surrogate_value(state, params, theta, s)
            + varrho1 * forms.boolean(s) + varrho2 * forms.rows(s))


def solve_inner(state: SurrogateState, params: SscaParams, forms: PenaltyForms,
                varrho1: float, varrho2: float):
    """Exact minimiser of the penalised surrogate: free ``theta``, ``s`` in the unit box."""
    theta = state.theta - state.v_theta / (2 * params.tau)
    coef = state.v_s + varrho1 * forms.lin1 + varrho2 * forms.lin2
    s = np.clip(state.s - coef / (2 * params.tau), 0.0, 1.0)
    return theta, s


def inner_loop(state: SurrogateState, params: SscaParams, update_s: bool = True):
    """Penalty continuation around the surrogate of one frame.

    Returns ``(theta_bar, s_bar, history)``; ``history`` holds the penalised
    objective after every inner iteration at the penalties used for it.
    """
    n_t = state.theta.size
    r1, r2 = params.varrho1, params.varrho2
    theta, s = state.theta.copy(), state.s.copy()
    history = []
    for _ in range(params.n_max_inner):
        if update_s:
            forms = penalty_linearization(s, n_t, params.epsilon)
            new_theta, new_s = solve_inner(state, params, forms, r1, r2)
            history.append(penalized_value(state, params, forms, r1, r2, new_theta, new_s))
        else:
            new_theta = state.theta - state.v_theta / (2 * params.tau)
            new_s = state.s
            history.append(surrogate_value(state, params, new_theta, new_s))
        step = max(np.max(np.abs(new_theta - theta), initial=0.0),
                   np.max(np.abs(new_s - s), initial=0.0))
        theta, s = new_theta, new_s
        if step < params.inner_tol or not update_s:
            break
        r1, r2 = params.c1 * r1, params.c2 * r2
    return theta, s, history


def round_switch(s, n_t: int, threshold: float = 0.5) -> np.ndarray:
    """Per antenna keep the strongest connection if it exceeds ``threshold``."""
    smat = _switch_matrix(s, n_t)
    best = np.argmax(smat, axis=1)
    on = smat[np.arange(n_t), best] > threshold
    return np.where(on, best, -1)


def commit_frame(state: SurrogateState, params: SscaParams, theta_bar, s_bar,
                 rho: float | None = None):
    """Move towards the inner solution and deploy the rounded analog stage."""
    if rho is None:
        rho = params.rho(state.t + 1)
    theta = (1 - rho) * state.theta + rho * np.asarray(theta_bar, dtype=float)
    s = np.clip((1 - rho) * state.s + rho * np.asarray(s_bar, dtype=float), 0.0, 1.0)
    n_t = theta.size
    n_rf = s.size // n_t
    analog = AnalogBeamformer.from_assignment(theta, round_switch(s, n_t, params.activation), n_rf)
    # the next surrogate is anchored at the deployed (binary) switch pattern
    new = replace(state, theta=theta, s=analog.switch.ravel(order="F").astype(float), t=state.t + 1)
    return new, analog


# ---------------------------------------------------------------------------
# short timescale

def mmse_digital(h_eff, noise, f_rf, p_t) -> DigitalBeamformer:
    """``H_e^H (H_e H_e^H + sigma^2 I)^-1`` scaled to the power budget."""
    h_eff = np.asarray(h_eff)
    k = h_eff.shape[0]
    noise = np.broadcast_to(np.asarray(noise, dtype=float), (k,))
    gram = h_eff @ h_eff.conj().T + np.diag(noise)
    f_tilde = h_eff.conj().T @ np.linalg.solve(gram, np.eye(k))
    return enforce_power(f_rf, f_tilde, p_t)


def slot_rate(h, f_rf, noise, p_t):
    """Sum rate and precoder of one slot under MMSE digital precoding."""
    digital = mmse_digital(np.asarray(h).conj().T @ f_rf, noise, f_rf, p_t)
    return sum_rate(sinr(h, f_rf, digital.f_bb, noise)), digital


# ---------------------------------------------------------------------------
# super-frame driver

@dataclass
class SuperframeResult:
    trace: list  # mean slot sum rate of every frame
    analog: object
    digital: DigitalBeamformer
    f_rf: np.ndarray
    state: SurrogateState
    diagnostics: dict = field(default_factory=dict)

    @property
    def average_rate(self) -> float:
        return float(np.mean(self.trace))

    def plateau_rate(self, tail: int = 5) -> float:
        return float(np.mean(self.trace[-tail:]))


class _Dynamic:
    update_s = True

    def __init__(self, n_t, n_rf):
        self.n_t, self.n_rf = n_t, n_rf

    def initial(self, h_mean):
        assign = subarray_assignment(self.n_t, self.n_rf)
        s = np.zeros((self.n_t, self.n_rf))
        s[np.arange(self.n_t), assign] = 1.0
        return SurrogateState.initial(matched_angles(h_mean), s.ravel(order="F"))

    def deploy(self, state, params):
        assign = round_switch(state.s, self.n_t, params.activation)
        analog = AnalogBeamformer.from_assignment(state.theta, assign, self.n_rf)
        return analog, compose(analog)

    def commit(self, state, params, theta_bar, s_bar, rho):
        state, analog = commit_frame(state, params, theta_bar, s_bar, rho)
        return state, analog, compose(analog)


class _FixedSubarray(_Dynamic):
    update_s = False


class _FullyConnected:
    """Angles of all ``N_t x N_RF`` phase shifters stored in ``theta``; no switches."""

    update_s = False

    def __init__(self, n_t, n_rf):
        self.n_t, self.n_rf = n_t, n_rf

    def initial(self, h_mean):
        cols = [np.angle(h_mean[:, l % h_mean.shape[1]]) for l in range(self.n_rf)]
        theta = np.column_stack(cols).ravel(order="F")
        return SurrogateState.initial(theta, np.zeros(0))

    def _matrix(self, theta):
        return full_phase_matrix(theta.reshape(self.n_t, self.n_rf, order="F"))

    def deploy(self, state, params):
        f_rf = self._matrix(state.theta)
        return f_rf, f_rf

    def commit(self, state, params, theta_bar, s_bar, rho):
        theta = (1 - rho) * state.theta + rho * theta_bar
        state = replace(state, theta=theta, t=state.t + 1)
        f_rf = self._matrix(theta)
        return state, f_rf, f_rf

    def gradient(self, state, h, f_bb, noise):
        f_rf = self._matrix(state.theta)
        value, g = _rate_sensitivity(h, f_rf, f_bb, noise)
        g_theta = -(2 / _LN2) * np.real(1j * g * f_rf)
        return value, g_theta.ravel(order="F")


_VARIANTS = {"dynamic_subarray": _Dynamic, "fixed_subarray": _FixedSubarray,
             "fully_connected": _FullyConnected}


def run_superframe(scenario: Scenario, params: SscaParams, schedule: FrameSchedule,
                   rng: np.random.Generator, architecture: str = "dynamic_subarray") -> SuperframeResult:
    """Long-timescale analog updates per frame, MMSE digital per slot."""
    if architecture not in _VARIANTS:
        raise ValueError(f"unsupported two-timescale architecture {architecture!r}")
    noise, p_t = scenario.noise_w, scenario.p_t_w
    n_t = scenario.geometry.n_antennas
    variant = _VARIANTS[architecture](n_t, scenario.rf_chains)
    state = variant.initial(scenario.mean_channel())
    analog, f_rf = variant.deploy(state, params)
    trace = []
    inner_iters = []
    digital = None
    for _ in range(schedule.t_frames):
        # long timescale: one channel sample per frame
        h_t = scenario.draw_channel(rng)
        f_bb_t = mmse_digital(h_t.conj().T @ f_rf, noise, f_rf, p_t).f_bb
        rho = params.rho(state.t + 1)
        if isinstance(variant, _FullyConnected):
            value, g_theta = variant.gradient(state, h_t, f_bb_t, noise)
            state = recurse(state, rho, value, g_theta, state.v_s)
        else:
            state = update_surrogate(state, params, h_t, f_bb_t, noise, rho)
        theta_bar, s_bar, hist = inner_loop(state, params, update_s=variant.update_s)
        inner_iters.append(len(hist))
        state, analog, f_rf = variant.commit(state, params, theta_bar, s_bar, rho)
        # short timescale: instantaneous channel per slot
        rates = []
        for _ in range(schedule.ts_slots):
            h = scenario.draw_channel(rng)
            rate, digital = slot_rate(h, f_rf, noise, p_t)
            rates.append(rate)
        trace.append(float(np.mean(rates)))
    return SuperframeResult(trace=trace, analog=analog, digital=digital, f_rf=f_rf, state=state,
                            diagnostics={"inner_iters": inner_iters})
