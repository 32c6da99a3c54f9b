"""Config-driven experiments: sweeps over seeds and algorithms, CSV and manifest output."""
from __future__ import annotations

import csv
import dataclasses
import hashlib
import io
import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from . import baselines as bl
from . import fp_realtime as fp
from . import manifold
from . import two_timescale as tt
from .beamform import Architecture, PowerModel, energy_efficiency, estimation_overhead, total_power
from .channel import ArrayGeometry, MobilityModel, PathLossModel
from .scenario import Scenario

log = logging.getLogger(__name__)

CSV_HEADER = ["sweep_value", "algorithm", "seed", "sum_rate", "energy_eff", "active_fraction",
              "overhead", "wall_ms"]
SWEEP_AXES = ("none", "power", "n_antennas", "distance", "spread", "frames")
METRICS = ("sum_rate", "energy_eff", "active_fraction", "overhead")

# label -> (architecture, framework)
ALGORITHMS = {
    "DS-R": (Architecture.DYNAMIC_SUBARRAY, "real_time"),
    "FS-R": (Architecture.FIXED_SUBARRAY, "real_time"),
    "FC-R": (Architecture.FULLY_CONNECTED, "real_time"),
    "FD-R": (Architecture.FULLY_DIGITAL, "real_time"),
    "DS-T": (Architecture.DYNAMIC_SUBARRAY, "two_timescale"),
    "FS-T": (Architecture.FIXED_SUBARRAY, "two_timescale"),
    "FC-T": (Architecture.FULLY_CONNECTED, "two_timescale"),
}


class ConfigError(ValueError):
    pass


@dataclass
class ScenarioConfig:
    n_antennas: int = 64
    carrier_freq_hz: float = 28e9
    n_ues: int = 3
    n_rf: int = 3
    noise_dbm: float = -80.0
    p_t_dbm: float = 40.0
    aod_range_deg: tuple = (-60.0, 60.0)  # UE centre angles drawn uniformly per seed
    range_m: tuple = (2.0, 5.0)  # UE centre ranges drawn uniformly per seed
    aod_spread_rad: float = float(np.pi / 48)
    range_spread_m: float = 1.0
    c0_db: float = 30.0
    d0_m: float = 1.0
    exponent: float = 3.0


@dataclass
class SweepConfig:
    axis: str = "none"
    values: tuple = (0.0,)


@dataclass
class ExperimentConfig:
    name: str
    scenario: ScenarioConfig = field(default_factory=ScenarioConfig)
    algorithms: tuple = ("DS-R",)
    sweep: SweepConfig = field(default_factory=SweepConfig)
    seeds: tuple = tuple(range(20))
    master_seed: int = 0
    t_frames: int = 40
    ts_slots: int = 50
    realtime_draws: int = 1  # channel samples averaged per real-time run
    fp: dict = field(default_factory=dict)
    ssca: dict = field(default_factory=dict)
    power_model: dict = field(default_factory=dict)
    export_traces: bool = False
    export_selection: bool = False
    record_timing: bool = False  # wall_ms is written as 0 unless set, keeping CSVs reproducible
    output_dir: str = "results"
    workers: int = 1
    description: str = ""

    # ----------------------------------------------------------------- parsing
    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        if not isinstance(raw, dict):
            raise ConfigError("config must be a mapping")
        raw = dict(raw)
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        if "name" not in raw:
            raise ConfigError("config needs a 'name'")
        scen = raw.pop("scenario", {}) or {}
        sweep = raw.pop("sweep", {}) or {}
        try:
            cfg = cls(scenario=_sub(ScenarioConfig, scen, "scenario"),
                      sweep=_sub(SweepConfig, sweep, "sweep"), **raw)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None
        cfg._normalize()
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        with open(path, encoding="utf-8") as fh:
            try:
                raw = yaml.safe_load(fh)
            except yaml.YAMLError as exc:
                raise ConfigError(f"cannot parse {path}: {exc}") from None
        return cls.from_dict(raw)

    def _normalize(self):
        s = self.scenario
        s.aod_range_deg = tuple(float(x) for x in s.aod_range_deg)
        s.range_m = tuple(float(x) for x in s.range_m)
        self.algorithms = tuple(self.algorithms)
        self.seeds = tuple(int(x) for x in self.seeds)
        self.sweep.values = tuple(float(x) for x in self.sweep.values)

    def validate(self):
        s = self.scenario
        if s.n_antennas < 1 or s.n_ues < 1:
            raise ConfigError("n_antennas and n_ues must be positive")
        if s.n_rf < s.n_ues:
            raise ConfigError("n_rf must be at least n_ues")
        if len(s.aod_range_deg) != 2 or not s.aod_range_deg[0] <= s.aod_range_deg[1]:
            raise ConfigError("aod_range_deg must be [low, high]")
        if len(s.range_m) != 2 or not 0 < s.range_m[0] <= s.range_m[1]:
            raise ConfigError("range_m must be [low, high] with low > 0")
        bad = [a for a in self.algorithms if a not in ALGORITHMS]
        if bad or not self.algorithms:
            raise ConfigError(f"unknown algorithms {bad}; choose from {sorted(ALGORITHMS)}")
        if len(set(self.algorithms)) != len(self.algorithms):
            raise ConfigError("algorithms must be distinct")
        if not self.seeds:
            raise ConfigError("need at least one seed")
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigError("seeds must be distinct")
        if min(self.seeds) < 0 or self.master_seed < 0:
            raise ConfigError("seeds must be nonnegative")
        if self.sweep.axis not in SWEEP_AXES:
            raise ConfigError(f"sweep axis must be one of {SWEEP_AXES}")
        vals = self.sweep.values
        if self.sweep.axis != "none" and not vals:
            raise ConfigError("sweep needs values")
        if any(b <= a for a, b in zip(vals, vals[1:])):
            raise ConfigError("sweep values must be strictly increasing")
        if self.t_frames < 1 or self.ts_slots < 1 or self.realtime_draws < 1:
            raise ConfigError("t_frames, ts_slots and realtime_draws must be positive")
        if self.workers < 1:
            raise ConfigError("workers must be positive")
        if self.sweep.axis == "frames":
            total = self.t_frames * self.ts_slots
            for v in vals:
                if v != int(v) or v < 1 or total % int(v):
                    raise ConfigError(f"frame count {v} must divide t_frames*ts_slots = {total}")
        if self.sweep.axis == "n_antennas":
            if any(v != int(v) or v < s.n_rf for v in vals):
                raise ConfigError("antenna counts must be integers >= n_rf")
        try:
            self.fp_settings()
            tt.SscaParams(**self.ssca)
            PowerModel(**self.power_model)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad algorithm settings: {exc}") from None
        for point in self.points():
            point.check()

    def fp_settings(self) -> fp.FpSettings:
        opts = dict(self.fp)
        if "rcg" in opts:
            opts["rcg"] = manifold.RcgSettings(**opts["rcg"])
        return fp.FpSettings(**opts)

    # ----------------------------------------------------------------- derived
    def canonical(self) -> dict:
        """Everything that influences results, in a stable form."""
        d = dataclasses.asdict(self)
        for k in ("output_dir", "workers", "description"):
            d.pop(k)
        return json.loads(json.dumps(d, sort_keys=True))

    def config_hash(self) -> str:
        blob = json.dumps(self.canonical(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    def points(self) -> list["SweepPoint"]:
        vals = self.sweep.values if self.sweep.axis != "none" else (self.sweep.values or (0.0,))[:1]
        return [SweepPoint(self, i, v) for i, v in enumerate(vals)]


def _sub(kind, raw, where):
    if not isinstance(raw, dict):
        raise ConfigError(f"'{where}' must be a mapping")
    known = {f.name for f in dataclasses.fields(kind)}
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"unknown keys in '{where}': {sorted(unknown)}")
    return kind(**raw)


@dataclass
class SweepPoint:
    config: ExperimentConfig
    index: int
    value: float

    def _param(self, name):
        s = self.config.scenario
        axis = self.config.sweep.axis
        if name == "p_t_dbm" and axis == "power":
            return self.value
        if name == "n_antennas" and axis == "n_antennas":
            return int(self.value)
        return getattr(s, name)

    def spreads(self):
        s = self.config.scenario
        scale = self.value if self.config.sweep.axis == "spread" else 1.0
        return s.aod_spread_rad * scale, s.range_spread_m * scale

    def schedule(self) -> tt.FrameSchedule:
        if self.config.sweep.axis == "frames":
            t = int(self.value)
            return tt.FrameSchedule(t, self.config.t_frames * self.config.ts_slots // t)
        return tt.FrameSchedule(self.config.t_frames, self.config.ts_slots)

    def check(self):
        s = self.config.scenario
        d_aod, d_r = self.spreads()
        if d_aod < 0 or d_r < 0:
            raise ConfigError("spreads must be nonnegative")
        if np.deg2rad(max(abs(a) for a in s.aod_range_deg)) + d_aod / 2 >= np.pi / 2:
            raise ConfigError("UE angles plus spread must stay inside (-90, 90) degrees")
        r_min = self.value if self.config.sweep.axis == "distance" else s.range_m[0]
        if r_min - d_r / 2 <= 0:
            raise ConfigError("UE range minus spread must stay positive")

    def scenario(self, seed: int) -> Scenario:
        """UE centres depend on the seed only, so every sweep point sees the same layout."""
        s = self.config.scenario
        rng = np.random.default_rng(np.random.SeedSequence([self.config.master_seed, seed]))
        lo, hi = np.deg2rad(s.aod_range_deg)
        aod = rng.uniform(lo, hi, s.n_ues)
        r = rng.uniform(s.range_m[0], s.range_m[1], s.n_ues)
        if self.config.sweep.axis == "distance":
            r = np.full(s.n_ues, self.value)
        d_aod, d_r = self.spreads()
        return Scenario(
            geometry=ArrayGeometry(self._param("n_antennas"), s.carrier_freq_hz),
            mobility=MobilityModel(tuple(aod), tuple(r), d_aod, d_r),
            path_loss=PathLossModel(s.c0_db, s.d0_m, s.exponent),
            noise_dbm=s.noise_dbm, p_t_dbm=self._param("p_t_dbm"), n_rf=s.n_rf)


# --------------------------------------------------------------------------
# execution

@dataclass
class RunRecord:
    sweep_value: float
    algorithm: str
    seed: int
    sum_rate: float
    energy_eff: float
    active_fraction: float
    overhead: int
    wall_ms: float
    trace: list = field(default_factory=list)
    assignment: list = field(default_factory=list)


@dataclass
class RunManifest:
    name: str
    config_hash: str
    sweep_axis: str
    seeds: tuple
    master_seed: int
    software_version: str
    records: list
    wall_clock_s: float = 0.0

    def summary(self) -> list[dict]:
        """Seed mean and standard deviation for every (sweep point, algorithm)."""
        groups: dict = {}
        for r in self.records:
            groups.setdefault((r.sweep_value, r.algorithm), []).append(r)
        out = []
        for (v, alg), rs in groups.items():
            vals = {m: np.array([getattr(r, m) for r in rs], dtype=float) for m in METRICS}
            out.append({"sweep_value": v, "algorithm": alg, "n_seeds": len(rs),
                        "mean": {m: float(x.mean()) for m, x in vals.items()},
                        "std": {m: float(x.std()) for m, x in vals.items()}})
        return out

    def to_dict(self, csv_sha256: str | None = None) -> dict:
        body = {"name": self.name, "config_hash": self.config_hash, "sweep_axis": self.sweep_axis,
                "seeds": list(self.seeds), "master_seed": self.master_seed,
                "software_version": self.software_version, "points": self.summary()}
        if csv_sha256 is not None:
            body["csv_sha256"] = csv_sha256
        body["manifest_hash"] = hashlib.sha256(
            json.dumps(body, sort_keys=True).encode()).hexdigest()
        body["wall_clock_s"] = self.wall_clock_s  # excluded from the hash
        return body


def _real_time_run(arch, scen: Scenario, cfg: ExperimentConfig, rng):
    settings = cfg.fp_settings()
    rates, active, trace, assign = [], [], None, []
    for _ in range(cfg.realtime_draws):
        h = scen.draw_channel(rng)
        res = bl.realtime(arch, h, scen.noise_w, scen.p_t_w, settings, n_rf=scen.rf_chains)
        rates.append(res.sum_rate)
        active.append(int(np.sum(res.analog.active)))
        if trace is None:
            trace = list(res.trace)
            if hasattr(res.analog, "assignment"):
                assign = res.analog.assignment().tolist()
    return float(np.mean(rates)), float(np.mean(active)), trace, assign


def _two_timescale_run(arch, scen: Scenario, cfg: ExperimentConfig, schedule, rng):
    res = tt.run_superframe(scen, tt.SscaParams(**cfg.ssca), schedule, rng, arch.value)
    act = getattr(res.analog, "active", None)
    n_active = int(np.sum(act)) if act is not None else scen.geometry.n_antennas
    assign = res.analog.assignment().tolist() if hasattr(res.analog, "assignment") else []
    return res.average_rate, float(n_active), list(res.trace), assign


def run_task(cfg: ExperimentConfig, point_index: int, seed_index: int) -> list[RunRecord]:
    """All algorithms for one (sweep point, seed); they share the channel stream."""
    point = cfg.points()[point_index]
    seed = cfg.seeds[seed_index]
    scen = point.scenario(seed)
    schedule = point.schedule()
    # the radiated power in the budget always follows the scenario
    pm = dataclasses.replace(PowerModel(**cfg.power_model), p_t_w=scen.p_t_w)
    n_t, n_rf, k = scen.geometry.n_antennas, scen.rf_chains, scen.n_ues
    out = []
    for label in cfg.algorithms:
        arch, frame = ALGORITHMS[label]
        rng = np.random.default_rng(
            np.random.SeedSequence(cfg.master_seed, spawn_key=(point_index, seed_index)))
        t0 = time.perf_counter()
        if frame == "real_time":
            rate, n_active, trace, assign = _real_time_run(arch, scen, cfg, rng)
        else:
            rate, n_active, trace, assign = _two_timescale_run(arch, scen, cfg, schedule, rng)
        wall = (time.perf_counter() - t0) * 1e3 if cfg.record_timing else 0.0
        p_tot = total_power(arch, pm, n_t, n_rf, int(round(n_active)))
        out.append(RunRecord(
            sweep_value=point.value, algorithm=label, seed=seed, sum_rate=rate,
            energy_eff=energy_efficiency(rate, p_tot), active_fraction=n_active / n_t,
            overhead=estimation_overhead(frame, n_t, n_rf, k, schedule.t_frames, schedule.ts_slots),
            wall_ms=wall, trace=trace, assignment=assign))
    return out


def _run_task_args(args):
    return run_task(*args)


def run_experiment(cfg: ExperimentConfig, workers: int | None = None) -> RunManifest:
    cfg.validate()
    workers = workers or cfg.workers
    tasks = [(cfg, p, s) for p in range(len(cfg.points())) for s in range(len(cfg.seeds))]
    t0 = time.perf_counter()
    if workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            chunks = list(pool.map(_run_task_args, tasks))
    else:
        chunks = [run_task(*t) for t in tasks]
    # rows ordered by (point, algorithm, seed) whatever the completion order
    order = {a: i for i, a in enumerate(cfg.algorithms)}
    records = sorted((r for c in chunks for r in c),
                     key=lambda r: (r.sweep_value, order[r.algorithm], cfg.seeds.index(r.seed)))
    return RunManifest(name=cfg.name, config_hash=cfg.config_hash(), sweep_axis=cfg.sweep.axis,
                       seeds=cfg.seeds, master_seed=cfg.master_seed,
                       software_version=__version__, records=records,
                       wall_clock_s=time.perf_counter() - t0)


# --------------------------------------------------------------------------
# output

def _fmt(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def csv_text(manifest: RunManifest) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for r in manifest.records:
        w.writerow([_fmt(r.sweep_value), r.algorithm, r.seed, _fmt(r.sum_rate), _fmt(r.energy_eff),
                    _fmt(r.active_fraction), _fmt(r.overhead), _fmt(r.wall_ms)])
    return buf.getvalue()


def emit_csv(manifest: RunManifest, path, traces: bool = False, selection: bool = False) -> dict:
    """Write ``<name>.csv`` and ``<name>_manifest.json`` (plus optional extras) under ``path``."""
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    text = csv_text(manifest)
    files = {"csv": out / f"{manifest.name}.csv", "manifest": out / f"{manifest.name}_manifest.json"}
    with open(files["csv"], "w", encoding="utf-8", newline="") as fh:
        fh.write(text)
    if traces:
        files["traces"] = out / f"{manifest.name}_traces.csv"
        with open(files["traces"], "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["sweep_value", "algorithm", "seed", "step", "sum_rate"])
            for r in manifest.records:
                for i, v in enumerate(r.trace):
                    w.writerow([_fmt(r.sweep_value), r.algorithm, r.seed, i, _fmt(v)])
    if selection:
        files["selection"] = out / f"{manifest.name}_selection.csv"
        with open(files["selection"], "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["sweep_value", "algorithm", "seed", "antenna", "rf_chain"])
            for r in manifest.records:
                for n, a in enumerate(r.assignment):
                    w.writerow([_fmt(r.sweep_value), r.algorithm, r.seed, n + 1, a])
    digest = hashlib.sha256(text.encode()).hexdigest()
    with open(files["manifest"], "w", encoding="utf-8") as fh:
        json.dump(manifest.to_dict(digest), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return files


# --------------------------------------------------------------------------
# bundled experiments

def experiments_dir() -> Path:
    return Path(__file__).with_name("experiments")


def list_experiments() -> dict[str, str]:
    out = {}
    for p in sorted(experiments_dir().glob("*.yaml")):
        with open(p, encoding="utf-8") as fh:
            out[p.stem] = (yaml.safe_load(fh) or {}).get("description", "")
    return out


def resolve_config(ref: str) -> Path:
    """A path to a YAML file, or the name of a bundled experiment."""
    p = Path(ref)
    if p.exists():
        return p
    bundled = experiments_dir() / f"{ref}.yaml"
    if bundled.exists():
        return bundled
    raise ConfigError(f"no config file or bundled experiment named {ref!r}")
