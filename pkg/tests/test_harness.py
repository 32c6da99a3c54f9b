import csv
import io
import json

import numpy as np
import pytest
import yaml

from nfbeam import cli
from nfbeam import harness as hs

TINY = {"name": "tiny", "scenario": {"n_antennas": 8, "n_ues": 2, "n_rf": 2},
        "algorithms": ["DS-R", "FS-T"], "sweep": {"axis": "power", "values": [20.0, 30.0]},
        "seeds": [0, 1, 2], "t_frames": 2, "ts_slots": 2}


def tiny(**over):
    raw = json.loads(json.dumps(TINY))
    raw.update(over)
    return hs.ExperimentConfig.from_dict(raw)


@pytest.mark.parametrize("patch, msg", [
    ({"bogus": 1}, "unknown config keys"),
    ({"algorithms": ["XX-R"]}, "unknown algorithms"),
    ({"algorithms": []}, "unknown algorithms"),
    ({"seeds": []}, "at least one seed"),
    ({"seeds": [1, 1]}, "distinct"),
    ({"sweep": {"axis": "power", "values": [30.0, 20.0]}}, "strictly increasing"),
    ({"sweep": {"axis": "weather", "values": [1.0]}}, "sweep axis"),
    ({"sweep": {"axis": "frames", "values": [3]}}, "must divide"),
    ({"sweep": {"axis": "spread", "values": [0.0, 5.0]}}, "range minus spread"),
    ({"scenario": {"n_rf": 1}}, "n_rf"),
    ({"scenario": {"colour": 1}}, "unknown keys in 'scenario'"),
    ({"fp": {"rel_tol": -1}}, "bad algorithm settings"),
    ({"ssca": {"tau": 0}}, "bad algorithm settings"),
    ({"fp": {"nonsense": 1}}, "bad algorithm settings"),
])
def test_invalid_configs_rejected(patch, msg):
    with pytest.raises(hs.ConfigError, match=msg):
        tiny(**patch)


def test_missing_name():
    with pytest.raises(hs.ConfigError, match="name"):
        hs.ExperimentConfig.from_dict({"seeds": [0]})


def test_nested_rcg_settings():
    cfg = tiny(fp={"rcg": {"max_iters": 5}})
    assert cfg.fp_settings().rcg.max_iters == 5


def test_config_hash_ignores_output_location():
    a, b = tiny(), tiny(output_dir="elsewhere", workers=3)
    assert a.config_hash() == b.config_hash()
    assert tiny(master_seed=4).config_hash() != a.config_hash()


def test_sweep_points():
    cfg = tiny(sweep={"axis": "frames", "values": [1, 2, 4]}, t_frames=4, ts_slots=3)
    assert [(p.schedule().t_frames, p.schedule().ts_slots) for p in cfg.points()] == [(1, 12), (2, 6), (4, 3)]
    cfg = tiny(sweep={"axis": "distance", "values": [2.0, 20.0]})
    assert cfg.points()[1].scenario(0).mobility.center_range_m == (20.0, 20.0)
    cfg = tiny(sweep={"axis": "spread", "values": [0.0, 2.0]})
    assert cfg.points()[1].scenario(0).mobility.range_spread_m == 2.0
    assert cfg.points()[0].scenario(0).mobility.aod_spread_rad == 0.0
    cfg = tiny(sweep={"axis": "n_antennas", "values": [4, 16]})
    assert cfg.points()[1].scenario(0).geometry.n_antennas == 16
    # the UE layout depends on the seed, not on the sweep point
    cfg = tiny()
    assert cfg.points()[0].scenario(1).mobility == cfg.points()[1].scenario(1).mobility
    assert cfg.points()[0].scenario(1).mobility != cfg.points()[0].scenario(2).mobility


def test_cardinality_and_determinism(tmp_path):
    cfg = tiny(algorithms=["DS-R", "FS-R"])
    man = hs.run_experiment(cfg)
    assert len(man.records) == 12
    files = hs.emit_csv(man, tmp_path / "a")
    rows = list(csv.DictReader(open(files["csv"])))
    assert len(rows) == 12 and list(rows[0]) == hs.CSV_HEADER
    assert [(r["sweep_value"], r["algorithm"], r["seed"]) for r in rows[:4]] == [
        ("20.0", "DS-R", "0"), ("20.0", "DS-R", "1"), ("20.0", "DS-R", "2"), ("20.0", "FS-R", "0")]
    again = hs.emit_csv(hs.run_experiment(cfg, workers=2), tmp_path / "b")
    assert open(files["csv"], "rb").read() == open(again["csv"], "rb").read()
    m1, m2 = json.load(open(files["manifest"])), json.load(open(again["manifest"]))
    assert m1["manifest_hash"] == m2["manifest_hash"]
    assert len(m1["points"]) == 4 and m1["points"][0]["n_seeds"] == 3


def test_record_contents():
    man = hs.run_experiment(tiny())
    for r in man.records:
        assert r.sum_rate > 0 and r.energy_eff > 0 and 0 <= r.active_fraction <= 1
        assert r.wall_ms == 0.0
    ds = [r for r in man.records if r.algorithm == "DS-R"][0]
    ft = [r for r in man.records if r.algorithm == "FS-T"][0]
    assert ds.overhead == 8 * 2 * 2 * 2
    assert ft.overhead == 8 * 2 * 2 + 2 * 2 * 2 * 2
    assert len(ft.trace) == 2


def test_timing_recorded_when_requested():
    man = hs.run_experiment(tiny(record_timing=True, seeds=[0], algorithms=["DS-R"]))
    assert all(r.wall_ms > 0 for r in man.records)


def test_empty_manifest_header_only(tmp_path):
    man = hs.RunManifest("empty", "0" * 64, "none", (), 0, "x", [])
    files = hs.emit_csv(man, tmp_path)
    assert open(files["csv"]).read() == ",".join(hs.CSV_HEADER) + "\n"


@pytest.mark.parametrize("x", [0.1, 1 / 3, 2.0 ** -40, 123456.789e-7, np.pi * 1e12])
def test_number_round_trip(x):
    text = hs._fmt(np.float64(x))
    assert abs(float(text) - x) <= 1e-12 * abs(x)
    assert hs._fmt(7) == "7"


def test_extra_exports(tmp_path):
    cfg = tiny(seeds=[0], algorithms=["DS-R"], export_traces=True, export_selection=True)
    files = hs.emit_csv(hs.run_experiment(cfg), tmp_path, traces=True, selection=True)
    sel = list(csv.DictReader(open(files["selection"])))
    assert len(sel) == 2 * 8 and {int(r["rf_chain"]) for r in sel} <= {-1, 0, 1}
    tr = list(csv.DictReader(open(files["traces"])))
    assert tr and tr[0]["step"] == "0"


def test_unwritable_path(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(OSError):
        hs.emit_csv(hs.RunManifest("e", "0", "none", (), 0, "x", []), blocker / "sub")


def test_bundled_experiments_validate():
    names = hs.list_experiments()
    assert {"convergence", "selection", "power", "antennas", "efficiency", "distance", "spread",
            "frames"} <= set(names)
    for name in names:
        hs.ExperimentConfig.load(hs.resolve_config(name))
    with pytest.raises(hs.ConfigError):
        hs.resolve_config("no-such-experiment")


def test_cli(tmp_path, capsys):
    path = tmp_path / "cfg.yaml"
    path.write_text(yaml.safe_dump(dict(TINY, seeds=[0], algorithms=["FS-R"])))
    assert cli.main(["validate", str(path)]) == 0
    assert "1 algorithms" in capsys.readouterr().out
    assert cli.main(["run", str(path), "--output-dir", str(tmp_path / "out")]) == 0
    assert (tmp_path / "out" / "tiny.csv").exists()
    assert cli.main(["list-experiments"]) == 0
    assert "power" in capsys.readouterr().out
    bad = tmp_path / "bad.yaml"
    bad.write_text("name: bad\nalgorithms: [ZZ]\n")
    assert cli.main(["validate", str(bad)]) == 2
    assert "unknown algorithms" in capsys.readouterr().err
    assert cli.main(["run", str(tmp_path / "missing.yaml")]) == 2
