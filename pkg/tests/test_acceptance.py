"""Acceptance criteria at desk scale; each test records one PASS/FAIL line.

Run alone with ``pytest tests/test_acceptance.py -v``; the summary lines are
printed at the end of the session.
"""
import itertools
import time

import numpy as np
import pytest

from conftest import ACCEPTANCE, random_channel
from nfbeam import fp_realtime as fp
from nfbeam import harness as hs
from nfbeam import manifold
from nfbeam import two_timescale as tt
from nfbeam.beamform import (AnalogBeamformer, PowerModel, compose, estimation_overhead, sinr,
                             sum_rate, total_power)


def record(number, ok, detail, elapsed, budget):
    ok = bool(ok) and elapsed < budget
    ACCEPTANCE[number] = (f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}  "
                          f"[{elapsed:.1f}s / {budget:.0f}s]")
    print(ACCEPTANCE[number])
    return ok


def fd(fun, x, step=1e-6):
    g = np.zeros_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = step
        g[i] = (fun(x + e) - fun(x - e)) / (2 * step)
    return g


def desk(**over):
    raw = {"name": "acceptance"}
    raw.update(over)
    return hs.ExperimentConfig.from_dict(raw)


def test_01_gradients():
    t0 = time.perf_counter()
    rng = np.random.default_rng(101)
    worst = 0.0
    for _ in range(50):
        h = random_channel(rng, 6, 2)
        theta = rng.uniform(-np.pi, np.pi, 6)
        s = rng.uniform(0.05, 0.95, 12)
        f_bb = random_channel(rng, 2, 2)
        noise = rng.uniform(0.05, 1.0)
        for ana, num in (
                (tt.grad_theta_g0(theta, s, h, f_bb, noise),
                 fd(lambda x: tt.g0(x, s, h, f_bb, noise), theta)),
                (tt.grad_s_g0(theta, s, h, f_bb, noise),
                 fd(lambda x: tt.g0(theta, x, h, f_bb, noise), s))):
            worst = max(worst, np.linalg.norm(ana - num) / np.linalg.norm(num))
    ok = record(1, worst <= 1e-5, f"max relative error {worst:.2e} (<= 1e-5)",
                time.perf_counter() - t0, 10)
    assert ok


def test_02_fp_equivalence():
    t0 = time.perf_counter()
    rng = np.random.default_rng(102)
    worst = 0.0
    for _ in range(100):
        k = int(rng.integers(1, 5))
        n_t, n_rf = 16, k + int(rng.integers(0, 3))
        h = random_channel(rng, n_t, k)
        analog = AnalogBeamformer.from_assignment(rng.uniform(-np.pi, np.pi, n_t),
                                                  rng.integers(-1, n_rf, n_t), n_rf)
        f_rf = compose(analog)
        f_bb = random_channel(rng, n_rf, k)
        noise = 10 ** rng.uniform(-3, 1)
        mu = fp.update_mu(h, f_rf, f_bb, noise)
        xi = fp.update_xi(h, f_rf, f_bb, mu, noise)
        worst = max(worst, abs(fp.fp_objective(h, f_rf, f_bb, mu, xi, noise)
                               - sum_rate(sinr(h, f_rf, f_bb, noise))))
    ok = record(2, worst <= 1e-9, f"max |transformed - sum rate| {worst:.1e} (<= 1e-9)",
                time.perf_counter() - t0, 5)
    assert ok


def test_03_switch_oracle():
    t0 = time.perf_counter()
    rng = np.random.default_rng(103)
    hits = monotone = 0
    for _ in range(100):
        h = random_channel(rng, 4, 2)
        a0 = fp.subarray_assignment(4, 2)
        analog = AnalogBeamformer.from_assignment(rng.uniform(-np.pi, np.pi, 4), a0, 2)
        f_bb = random_channel(rng, 2, 2)
        noise = rng.uniform(0.1, 1.0)
        mu = fp.update_mu(h, compose(analog), f_bb, noise)
        xi = fp.update_xi(h, compose(analog), f_bb, mu, noise)
        d = fp.d_matrix(h, xi)

        def delta(a):
            return fp.switch_delta(h, analog.phases, f_bb, mu, xi, np.array(a), d)

        best = max(delta(a) for a in itertools.product(range(-1, 2), repeat=4))
        cd = fp.optimize_switch(h, analog.phases, f_bb, mu, xi, a0, d)
        hits += delta(cd) >= best - 1e-12 * abs(best)
        monotone += delta(cd) >= delta(a0) - 1e-12 * abs(delta(a0))
    ok = record(3, hits >= 80 and monotone == 100,
                f"optimum attained {hits}/100 (>= 80), never worse than start {monotone}/100",
                time.perf_counter() - t0, 30)
    assert ok


def test_04_manifold_solver():
    t0 = time.perf_counter()
    rng = np.random.default_rng(104)
    off = 0.0
    monotone = True
    for _ in range(100):
        a = rng.standard_normal((32, 32)) + 1j * rng.standard_normal((32, 32))
        p = manifold.CircleQuadraticProblem(a @ a.conj().T, rng.standard_normal(32)
                                            + 1j * rng.standard_normal(32), 1 / np.sqrt(32))
        seen = []
        phi0 = np.exp(1j * rng.uniform(-np.pi, np.pi, 32)) * p.radius
        manifold.solve(p, phi0, manifold.RcgSettings(multistart=False),
                       callback=lambda it, phi, f: seen.append((np.abs(phi), f)))
        off = max(off, max(np.max(np.abs(m - p.radius)) for m, _ in seen))
        vals = [f for _, f in seen]
        monotone &= all(y <= x for x, y in zip(vals, vals[1:]))
    wins = 0
    for _ in range(100):
        a = rng.standard_normal((4, 4)) + 1j * rng.standard_normal((4, 4))
        p = manifold.CircleQuadraticProblem(a @ a.conj().T, rng.standard_normal(4)
                                            + 1j * rng.standard_normal(4), 0.5)
        res = manifold.solve(p, np.exp(1j * rng.uniform(-np.pi, np.pi, 4)) * 0.5)
        x = np.exp(1j * rng.uniform(-np.pi, np.pi, (100_000, 4))) * 0.5
        vals = (np.real(np.einsum("mi,ij,mj->m", x.conj(), p.q_mat, x)) - 2 * np.real(x.conj() @ p.q_vec))
        wins += res.objective <= vals.min()
    ok = record(4, off <= 1e-12 and monotone and wins >= 95,
                f"manifold error {off:.1e} (<= 1e-12), monotone {monotone}, "
                f"beats 1e5 samples {wins}/100 (>= 95)", time.perf_counter() - t0, 60)
    assert ok


def _static_channels(cfg, n):
    point = cfg.points()[0]
    return [point.scenario(seed).draw_channel(np.random.default_rng(seed)) for seed in range(n)]


def test_05_monotone_outer_loop():
    t0 = time.perf_counter()
    cfg = desk()
    scen = cfg.points()[0].scenario(0)
    worst_drop, worst_iters, converged = 0.0, 0, 0
    for h in _static_channels(cfg, 20):
        for start in (False, True):
            res = fp.run(h, scen.noise_w, scen.p_t_w, fp.FpSettings(fixed_partition_start=start))
            worst_drop = max(worst_drop, max(a - b for a, b in zip(res.trace, res.trace[1:])))
            worst_iters = max(worst_iters, res.iters)
            converged += res.converged
    ok = record(5, worst_drop <= 1e-9 and converged == 40 and worst_iters <= 50,
                f"largest rate drop {worst_drop:.1e} (<= 1e-9), converged {converged}/40, "
                f"max {worst_iters} iterations (<= 50)", time.perf_counter() - t0, 300)
    assert ok


def test_06_architecture_ordering():
    t0 = time.perf_counter()
    man = hs.run_experiment(desk(algorithms=["FD-R", "DS-R", "FS-R"]))
    rate = {a: np.array([r.sum_rate for r in man.records if r.algorithm == a])
            for a in ("FD-R", "DS-R", "FS-R")}
    means = {a: v.mean() for a, v in rate.items()}
    wins = int(np.sum(rate["DS-R"] > rate["FS-R"]))
    ok = record(6, means["FD-R"] >= means["DS-R"] >= means["FS-R"] and wins >= 18,
                f"mean FD-R {means['FD-R']:.2f} >= DS-R {means['DS-R']:.2f} >= FS-R "
                f"{means['FS-R']:.2f}; DS-R > FS-R on {wins}/20 seeds (>= 18)",
                time.perf_counter() - t0, 600)
    assert ok


def test_07_near_field_selection():
    t0 = time.perf_counter()
    man = hs.run_experiment(desk(algorithms=["DS-R"], sweep={"axis": "distance", "values": [2.0, 20.0]}))
    frac = {v: np.mean([r.active_fraction for r in man.records if r.sweep_value == v])
            for v in (2.0, 20.0)}
    ok = record(7, frac[2.0] < frac[20.0] and frac[2.0] < 1,
                f"active fraction {frac[2.0]:.5f} at 2 m < {frac[20.0]:.5f} at 20 m, "
                f"off fraction {1 - frac[2.0]:.5f} at 2 m (> 0)", time.perf_counter() - t0, 600)
    assert ok


def _trend_slope(trace, start=5, window=5):
    ma = np.convolve(trace, np.ones(window) / window, mode="valid")[start:]
    return np.polyfit(np.arange(ma.size), ma, 1)[0]


def test_08_two_timescale_static():
    t0 = time.perf_counter()
    cfg = desk(scenario={"aod_spread_rad": 0.0, "range_spread_m": 0.0}, seeds=list(range(10)))
    params, schedule = tt.SscaParams(), tt.FrameSchedule(40, 50)
    ratios, slopes = [], []
    for seed in range(10):
        scen = cfg.points()[0].scenario(seed)
        real = fp.run(scen.mean_channel(), scen.noise_w, scen.p_t_w).sum_rate
        res = tt.run_superframe(scen, params, schedule, np.random.default_rng(seed))
        ratios.append(res.plateau_rate() / real)
        slopes.append(_trend_slope(np.array(res.trace)))
    gap = abs(1 - np.mean(ratios))
    ok = record(8, gap <= 0.10 and min(slopes) >= -1e-9,
                f"mean DS-T/DS-R {np.mean(ratios):.3f} (within 10%; per seed "
                f"{min(ratios):.3f}..{max(ratios):.3f}), min trend slope after frame 5 "
                f"{min(slopes):.1e} (>= 0)", time.perf_counter() - t0, 900)
    assert ok


def test_09_overhead():
    t0 = time.perf_counter()
    rt = estimation_overhead("real_time", 1500, 3, 3, 120, 200)
    ts = estimation_overhead("two_timescale", 1500, 3, 3, 120, 200)
    rows_ok = all(estimation_overhead("real_time", n, r, k, t, s) == n * k * t * s
                  and estimation_overhead("two_timescale", n, r, k, t, s) == n * k * t + k * r * t * s
                  for n, r, k, t, s in itertools.product((1, 64, 1500), (1, 3, 8), (1, 3), (1, 40), (1, 200)))
    ok = record(9, rt == 108_000_000 and ts == 756_000 and rows_ok and round(rt / ts, 1) == 142.9,
                f"real-time {rt}, two-timescale {ts}, ratio {rt / ts:.1f}",
                time.perf_counter() - t0, 1)
    assert ok


def test_10_power_and_efficiency():
    t0 = time.perf_counter()
    pm = PowerModel()
    rows_ok = (total_power("fully_digital", pm, 1500, 3) == pytest.approx(385.2)
               and total_power("fully_connected", pm, 1500, 3) == pytest.approx(10.2 + 0.75 + 45.0)
               and total_power("fixed_subarray", pm, 1500, 3) == pytest.approx(10.2 + 0.75 + 15.0)
               and total_power("dynamic_subarray", pm, 1500, 3, 945) == pytest.approx(10.2 + 0.75 + 945 * 0.015))
    man = hs.run_experiment(desk(algorithms=["DS-R", "FC-R"], scenario={"n_antennas": 256}))
    ee = {a: np.mean([r.energy_eff for r in man.records if r.algorithm == a]) for a in ("DS-R", "FC-R")}
    ok = record(10, rows_ok and ee["DS-R"] >= ee["FC-R"],
                f"power rows match {rows_ok}; mean EE at N_t=256 DS-R {ee['DS-R']:.3f} >= "
                f"FC-R {ee['FC-R']:.3f} bit/s/Hz/W", time.perf_counter() - t0, 600)
    assert ok


def test_11_determinism(tmp_path):
    t0 = time.perf_counter()
    cfg = desk(scenario={"n_antennas": 16}, algorithms=list(hs.ALGORITHMS), seeds=[0, 1],
               sweep={"axis": "power", "values": [20.0, 40.0]}, t_frames=6, ts_slots=5)
    a = hs.emit_csv(hs.run_experiment(cfg), tmp_path / "a", traces=True, selection=True)
    b = hs.emit_csv(hs.run_experiment(cfg, workers=2), tmp_path / "b", traces=True, selection=True)
    same = all(open(a[k], "rb").read() == open(b[k], "rb").read()
               for k in ("csv", "traces", "selection"))
    ok = record(11, same, f"serial and parallel reruns byte-identical: {same}",
                time.perf_counter() - t0, 120)
    assert ok
