"""Beamformer containers, link metrics and power / overhead accounting."""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

POWER_TOL = 1e-9


class Architecture(str, Enum):
    FULLY_DIGITAL = "fully_digital"
    FULLY_CONNECTED = "fully_connected"
    FIXED_SUBARRAY = "fixed_subarray"
    DYNAMIC_SUBARRAY = "dynamic_subarray"


class DegenerateBeamformerError(ValueError):
    pass


def dbm_to_watt(dbm):
    return 10.0 ** ((np.asarray(dbm, dtype=float) - 30.0) / 10.0)


def watt_to_dbm(w):
    return 10.0 * np.log10(np.asarray(w, dtype=float)) + 30.0


@dataclass
class AnalogBeamformer:
    """Dynamic-subarray analog stage kept in factored form.

    ``angles`` holds one phase per antenna and ``switch`` is the binary
    ``N_t x N_RF`` connection matrix. The dense matrix is only built on demand
    by :func:`compose`.
    """

    angles: np.ndarray
    switch: np.ndarray

    def __post_init__(self):
        self.angles = np.asarray(self.angles, dtype=float).ravel()
        self.switch = np.asarray(self.switch, dtype=float)
        if self.switch.ndim != 2 or self.switch.shape[0] != self.angles.size:
            raise ValueError("switch must be N_t x N_RF with N_t == len(angles)")

    @property
    def n_antennas(self) -> int:
        return self.angles.size

    @property
    def n_rf(self) -> int:
        return self.switch.shape[1]

    @property
    def phases(self) -> np.ndarray:
        return np.exp(1j * self.angles) / np.sqrt(self.n_antennas)

    @property
    def active(self) -> np.ndarray:
        """Boolean mask of antennas connected to some RF chain."""
        return self.switch.sum(axis=1) > 0

    @classmethod
    def from_assignment(cls, angles, assignment, n_rf: int) -> "AnalogBeamformer":
        """Build from a per-antenna RF-chain index (``-1`` means off)."""
        assignment = np.asarray(assignment, dtype=int)
        switch = np.zeros((assignment.size, n_rf))
        on = assignment >= 0
        switch[np.flatnonzero(on), assignment[on]] = 1.0
        return cls(angles, switch)

    def assignment(self) -> np.ndarray:
        """Per-antenna RF-chain index, ``-1`` for antennas that are off."""
        out = np.argmax(self.switch, axis=1)
        out[~self.active] = -1
        return out


@dataclass
class DigitalBeamformer:
    f_bb: np.ndarray

    def __post_init__(self):
        self.f_bb = np.asarray(self.f_bb, dtype=complex)
        if not np.all(np.isfinite(self.f_bb)):
            raise FloatingPointError("non-finite digital beamformer")


@dataclass(frozen=True)
class PowerModel:
    """Component power draws in watts; defaults are the mmWave reference values."""

    p_t_w: float = 10.0
    p_bb_w: float = 0.2
    p_rf_w: float = 0.25
    p_ps_w: float = 0.01
    p_sw_w: float = 0.005

    def __post_init__(self):
        for name in ("p_t_w", "p_bb_w", "p_rf_w", "p_ps_w", "p_sw_w"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")


@dataclass
class LinkMetrics:
    sinr: np.ndarray
    rate_bps_hz: np.ndarray = field(init=False)
    sum_rate: float = field(init=False)

    def __post_init__(self):
        self.sinr = np.asarray(self.sinr, dtype=float)
        self.rate_bps_hz = np.log2(1.0 + self.sinr)
        self.sum_rate = float(self.rate_bps_hz.sum())


@dataclass
class Violation:
    row: int
    kind: str  # "multiple_connections" | "non_binary"
    detail: str = ""


def validate(analog: AnalogBeamformer) -> list[Violation]:
    """Every violated connection rule of the switch matrix; empty list means ok."""
    out = []
    s = analog.switch
    for n in range(s.shape[0]):
        row = s[n]
        bad = np.flatnonzero((row != 0) & (row != 1))
        if bad.size:
            out.append(Violation(n, "non_binary", f"columns {bad.tolist()}"))
        if np.count_nonzero(row) > 1:
            out.append(Violation(n, "multiple_connections",
                                 f"{np.count_nonzero(row)} active switches"))
    return out


def compose(analog: AnalogBeamformer) -> np.ndarray:
    """Dense ``F_RF = diag(phi) S``."""
    if np.any(np.count_nonzero(analog.switch, axis=1) > 1):
        rows = np.flatnonzero(np.count_nonzero(analog.switch, axis=1) > 1)
        raise ValueError(f"rows {rows.tolist()} connect to more than one RF chain")
    return analog.phases[:, None] * analog.switch


def _as_noise(noise, k):
    noise = np.broadcast_to(np.asarray(noise, dtype=float), (k,))
    if np.any(noise <= 0):
        raise ValueError("noise power must be positive")
    return noise


def effective_gains(h, f_rf, f_bb) -> np.ndarray:
    """``B[k, j] = h_k^H F_RF f_j``: the gain of stream ``j`` at UE ``k``."""
    h = np.asarray(h)
    f_rf = np.asarray(f_rf)
    f_bb = np.asarray(f_bb)
    if h.shape[0] != f_rf.shape[0] or f_rf.shape[1] != f_bb.shape[0] or f_bb.shape[1] != h.shape[1]:
        raise ValueError(
            f"dimension mismatch: H {h.shape}, F_RF {f_rf.shape}, F_BB {f_bb.shape}")
    return h.conj().T @ (f_rf @ f_bb)


def sinr(h, f_rf, f_bb, noise) -> np.ndarray:
    gains = np.abs(effective_gains(h, f_rf, f_bb)) ** 2
    noise = _as_noise(noise, gains.shape[0])
    signal = np.diag(gains)
    interference = gains.sum(axis=1) - signal
    return signal / (interference + noise)


def sum_rate(sinr_values) -> float:
    s = np.asarray(sinr_values, dtype=float)
    if np.any(s < 0):
        raise ValueError("SINR must be nonnegative")
    return float(np.log2(1.0 + s).sum())


def link_metrics(h, f_rf, f_bb, noise) -> LinkMetrics:
    return LinkMetrics(sinr(h, f_rf, f_bb, noise))


def enforce_power(f_rf, f_bb_raw, p_t: float) -> DigitalBeamformer:
    """Rescale the digital stage so that ``||F_RF F_BB||_F^2 == p_t``."""
    norm = np.linalg.norm(np.asarray(f_rf) @ np.asarray(f_bb_raw))
    if not norm > 0 or not np.isfinite(norm):
        raise DegenerateBeamformerError("cannot rescale a beamformer with zero output power")
    return DigitalBeamformer(np.sqrt(p_t) * np.asarray(f_bb_raw) / norm)


def power_residual(f_rf, f_bb, p_t: float) -> float:
    """Relative deviation from the transmit-power equality."""
    return abs(np.linalg.norm(np.asarray(f_rf) @ np.asarray(f_bb)) ** 2 - p_t) / p_t


def total_power(arch, model: PowerModel, n_t: int, n_rf: int, m_active: int | None = None) -> float:
    """Total consumed power (W) of each architecture.

    ``m_active`` is the number of antennas switched on; it is only used by the
    dynamic subarray and defaults to all antennas.
    """
    arch = Architecture(arch)
    if m_active is None:
        m_active = n_t
    if not 0 <= m_active <= n_t:
        raise ValueError("m_active must lie in [0, n_t]")
    base = model.p_t_w + model.p_bb_w
    if arch is Architecture.FULLY_DIGITAL:
        return base + n_t * model.p_rf_w
    if arch is Architecture.FULLY_CONNECTED:
        return base + n_rf * model.p_rf_w + n_t * n_rf * model.p_ps_w
    if arch is Architecture.FIXED_SUBARRAY:
        return base + n_rf * model.p_rf_w + n_t * model.p_ps_w
    return base + n_rf * model.p_rf_w + m_active * (model.p_ps_w + model.p_sw_w)


def energy_efficiency(rate: float, power_w: float) -> float:
    if not power_w > 0:
        raise ValueError("total power must be positive")
    return rate / power_w


def estimation_overhead(scheme: str, n_t: int, n_rf: int, k: int, t_frames: int, ts_slots: int) -> int:
    """Number of channel coefficients estimated per super-frame."""
    if scheme == "real_time":
        return n_t * k * t_frames * ts_slots
    if scheme == "two_timescale":
        return n_t * k * t_frames + k * n_rf * t_frames * ts_slots
    raise ValueError(f"unknown scheme {scheme!r}")
