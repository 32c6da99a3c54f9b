"""A simulation scenario: array, UE statistics and link budget."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .beamform import dbm_to_watt
from .channel import (ArrayGeometry, MobilityModel, PathLossModel, UePolar, channel_matrix,
                      sample_ue_locations)


@dataclass(frozen=True)
class Scenario:
    geometry: ArrayGeometry
    mobility: MobilityModel
    path_loss: PathLossModel = field(default_factory=PathLossModel)
    noise_dbm: float = -80.0
    p_t_dbm: float = 40.0
    n_rf: int | None = None  # defaults to the number of UEs

    def __post_init__(self):
        if self.n_rf is not None and self.n_rf < self.n_ues:
            raise ValueError("need at least as many RF chains as UEs")

    @property
    def n_ues(self) -> int:
        return self.mobility.n_ues

    @property
    def rf_chains(self) -> int:
        return self.n_rf if self.n_rf is not None else self.n_ues

    @property
    def noise_w(self) -> float:
        return float(dbm_to_watt(self.noise_dbm))

    @property
    def p_t_w(self) -> float:
        return float(dbm_to_watt(self.p_t_dbm))

    def mean_channel(self) -> np.ndarray:
        """Channel with every UE at its centre location."""
        m = self.mobility
        ues = [UePolar(r, a) for r, a in zip(m.center_range_m, m.center_aod_rad)]
        return channel_matrix(self.geometry, ues, self.path_loss)

    def draw_channel(self, rng: np.random.Generator) -> np.ndarray:
        return channel_matrix(self.geometry, sample_ue_locations(self.mobility, rng), self.path_loss)
