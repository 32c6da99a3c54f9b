"""Near-field ULA channel model.

The array sits on the y-axis with its first element at the origin, so antenna
``n`` (1-based) is at ``(0, (n - 1) d)``. A UE at range ``r`` and angle ``aod``
sits at ``(r cos aod, r sin aod)``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

SPEED_OF_LIGHT = 299_792_458.0

# tolerance on |arccos argument| - 1 before it is treated as a geometry error
_ACOS_SLACK = 1e-12


@dataclass(frozen=True)
class ArrayGeometry:
    n_antennas: int
    carrier_freq_hz: float
    spacing_m: float | None = None

    def __post_init__(self):
        if int(self.n_antennas) != self.n_antennas or self.n_antennas < 1:
            raise ValueError(f"n_antennas must be a positive integer, got {self.n_antennas}")
        if not self.carrier_freq_hz > 0:
            raise ValueError("carrier_freq_hz must be positive")
        if self.spacing_m is None:
            object.__setattr__(self, "spacing_m", self.wavelength_m / 2)
        elif not self.spacing_m > 0:
            raise ValueError("spacing_m must be positive")

    @property
    def wavelength_m(self) -> float:
        return SPEED_OF_LIGHT / self.carrier_freq_hz

    def positions(self) -> np.ndarray:
        """y-coordinates of the elements, shape ``(n_antennas,)``."""
        return np.arange(self.n_antennas) * self.spacing_m


@dataclass(frozen=True)
class UePolar:
    range_m: float
    aod_rad: float

    def __post_init__(self):
        if not self.range_m > 0:
            raise ValueError(f"UE range must be positive, got {self.range_m}")
        if not abs(self.aod_rad) < np.pi / 2:
            raise ValueError(f"UE angle must lie in (-pi/2, pi/2), got {self.aod_rad}")


@dataclass(frozen=True)
class PathLossModel:
    c0_db: float = 30.0
    d0_m: float = 1.0
    exponent: float = 3.0

    def __post_init__(self):
        if not self.d0_m > 0:
            raise ValueError("d0_m must be positive")
        if self.exponent < 0:
            raise ValueError("path-loss exponent must be nonnegative")


def _check_index(geom: ArrayGeometry, n):
    n = np.asarray(n)
    if np.any(n < 1) or np.any(n > geom.n_antennas) or np.any(n != np.floor(n)):
        raise IndexError(f"antenna index must be an integer in [1, {geom.n_antennas}]")
    return n


def antenna_distance(geom: ArrayGeometry, ue: UePolar, n) -> np.ndarray | float:
    """Distance from the ``n``-th antenna (1-based, scalar or array) to ``ue``."""
    n = _check_index(geom, n)
    y = (n - 1) * geom.spacing_m
    r = ue.range_m
    # the Cartesian form avoids cancellation when the UE is nearly on the array axis
    dist = np.hypot(r * np.cos(ue.aod_rad), r * np.sin(ue.aod_rad) - y)
    # the reference antenna sits at the origin, so its distance is the range exactly
    dist = np.where(y == 0, r, dist)
    return dist if dist.ndim else float(dist)


def antenna_aod(geom: ArrayGeometry, ue: UePolar, n) -> np.ndarray | float:
    """Per-antenna angle of departure ``arccos(r cos(aod) / r_n)``, in [0, pi)."""
    dist = np.asarray(antenna_distance(geom, ue, n))
    arg = ue.range_m * np.cos(ue.aod_rad) / dist
    if np.any(np.abs(arg) > 1 + _ACOS_SLACK):
        raise FloatingPointError("arccos argument outside [-1, 1]; inconsistent geometry")
    out = np.arccos(np.clip(arg, -1.0, 1.0))
    return out if out.ndim else float(out)


def path_loss(model: PathLossModel, r_m) -> np.ndarray | float:
    """Linear power attenuation ``10^(-C0/10) (r / D0)^(-alpha)``."""
    r = np.asarray(r_m, dtype=float)
    if np.any(r <= 0):
        raise ValueError("distance must be positive")
    out = 10.0 ** (-model.c0_db / 10.0) * (r / model.d0_m) ** (-model.exponent)
    return out if out.ndim else float(out)


def radiation_gain(aod_rad) -> np.ndarray | float:
    """Element radiation pattern ``cos^3``; only defined for |angle| < pi/2."""
    a = np.asarray(aod_rad, dtype=float)
    if np.any(np.abs(a) >= np.pi / 2):
        raise ValueError("radiation gain undefined for |angle| >= pi/2")
    out = np.cos(a) ** 3
    return out if out.ndim else float(out)


def channel_vector(geom: ArrayGeometry, ue: UePolar, model: PathLossModel) -> np.ndarray:
    """Spherical-wave channel ``h[n] = sqrt(L_n G_n) exp(-j 2 pi r_n / lambda)``."""
    n = np.arange(1, geom.n_antennas + 1)
    dist = antenna_distance(geom, ue, n)
    gain = np.sqrt(path_loss(model, dist) * radiation_gain(antenna_aod(geom, ue, n)))
    return gain * np.exp(-2j * np.pi * dist / geom.wavelength_m)


def channel_matrix(geom: ArrayGeometry, ues: Sequence[UePolar], model: PathLossModel) -> np.ndarray:
    """Stack per-UE channels column-wise into an ``N_t x K`` matrix."""
    h = np.column_stack([channel_vector(geom, ue, model) for ue in ues])
    if not np.all(np.isfinite(h)):
        raise FloatingPointError("non-finite channel coefficient")
    return h


@dataclass(frozen=True)
class MobilityModel:
    """Uniform per-frame jitter of each UE around a centre location."""

    center_aod_rad: tuple
    center_range_m: tuple
    aod_spread_rad: float = 0.0
    range_spread_m: float = 0.0

    def __post_init__(self):
        aod = np.atleast_1d(np.asarray(self.center_aod_rad, dtype=float))
        rng_ = np.atleast_1d(np.asarray(self.center_range_m, dtype=float))
        if aod.shape != rng_.shape:
            raise ValueError("center_aod_rad and center_range_m must have the same length")
        if self.aod_spread_rad < 0 or self.range_spread_m < 0:
            raise ValueError("spreads must be nonnegative")
        if np.any(np.abs(aod) + self.aod_spread_rad / 2 >= np.pi / 2):
            raise ValueError("angle interval escapes (-pi/2, pi/2)")
        if np.any(rng_ - self.range_spread_m / 2 <= 0):
            raise ValueError("range interval reaches r <= 0")
        object.__setattr__(self, "center_aod_rad", tuple(aod.tolist()))
        object.__setattr__(self, "center_range_m", tuple(rng_.tolist()))

    @property
    def n_ues(self) -> int:
        return len(self.center_aod_rad)


def sample_ue_locations(mobility: MobilityModel, rng: np.random.Generator) -> list[UePolar]:
    aod = np.asarray(mobility.center_aod_rad)
    r = np.asarray(mobility.center_range_m)
    k = mobility.n_ues
    # draws are taken even for zero spread so the stream position does not depend on it
    u_aod = rng.uniform(-0.5, 0.5, size=k)
    u_r = rng.uniform(-0.5, 0.5, size=k)
    return [
        UePolar(range_m=float(r[i] + mobility.range_spread_m * u_r[i]),
                aod_rad=float(aod[i] + mobility.aod_spread_rad * u_aod[i]))
        for i in range(k)
    ]
