"""End-to-end acceptance checks.

Each test records one line through ``conftest.record``; the lines are
printed in the terminal summary.  Runtime budgets are part of each check.
"""

import filecmp
import math
import os
import time

import mpmath
import numpy as np
import pytest
from scipy import stats

from conftest import record
from maxentpop import estimation, growthsim, model, sampling, specfun
from maxentpop.cli import commands as C
from maxentpop.cli.data import Dataset, emit_panel, ingest
from maxentpop.cli.main import main
from maxentpop.dynamics import PanelRecord
from maxentpop.model import ModelParams, RankedSample

mpmath.mp.dps = 30

ALICANTE_N, ALICANTE_NC, ALICANTE_X0 = 1926285, 141, 125.0


def quad_upper_gamma(a, z):
    a, z = mpmath.mpf(a), mpmath.mpf(z)
    # shifted variable keeps the exponential scale fixed for large z
    return mpmath.exp(-z) * mpmath.quad(lambda s: (z + s) ** (a - 1) * mpmath.exp(-s), [0, 1, z + 1, z + 10, mpmath.inf])


def grouped(records_by_group):
    recs = [r for rs in records_by_group for r in rs]
    return Dataset(tuple(recs), {"path": "memory", "sha256": "0"}, {r.unit_id: r.group for r in recs})


def test_1_special_functions():
    t0 = time.perf_counter()
    a_grid = np.linspace(-1.5, 2.0, 15)
    z_grid = np.logspace(-3, math.log10(50.0), 15)
    worst = 0.0
    for a in a_grid:
        for z in z_grid:
            ref = quad_upper_gamma(a, z)
            worst = max(worst, float(abs(specfun.upper_gamma(a, z) - ref) / ref))
    rec_worst, trip_worst = 0.0, 0.0
    for a in a_grid:
        for z in z_grid:
            if a <= 1.0:
                g1, tail = specfun.upper_gamma(a + 1.0, z), z**a * math.exp(-z)
                # relative to the terms: both sides vanish at a = 0
                rec_worst = max(rec_worst, abs(a * specfun.upper_gamma(a, z) - (g1 - tail)) / max(g1, tail))
            back = specfun.inverse_log_upper_gamma(a, specfun.log_upper_gamma(a, z))
            trip_worst = max(trip_worst, abs(back - z) / z)
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-10 and rec_worst <= 1e-9 and trip_worst <= 1e-7 and elapsed < 10
    record(1, ok, f"{a_grid.size * z_grid.size} pts, max rel vs quad {worst:.1e}, recurrence {rec_worst:.1e}, "
                  f"round trip {trip_worst:.1e}, {elapsed:.1f}s")
    assert ok


def test_2_equation_of_state():
    t0 = time.perf_counter()
    val = model.equation_of_state_mean(ModelParams(1.0, 1.0, 1.0))
    oracle = float(mpmath.exp(-1) / mpmath.e1(1))
    lam = model.solve_lambda(oracle, 1, 1.0, 1.0)
    elapsed = time.perf_counter() - t0
    ok = abs(val - 1.67680) <= 1e-4 and abs(val - oracle) <= 1e-12 and abs(lam - 1.0) <= 1e-6 and elapsed < 1
    record(2, ok, f"ratio {val:.10f} (oracle {oracle:.10f}), solved Lambda {lam:.9f}, {elapsed:.2f}s")
    assert ok


def test_3_rank_cumulative_duality():
    t0 = time.perf_counter()
    points = [(q, ll, lx) for q in (0.5, 0.8, 1.0, 1.3, 1.65, 2.0) for ll in (-13.5, -6.0, -1.0, 0.5) for lx in (2.0, 7.0)]
    points.append((1.62, -3.7, 10.1))
    worst = 0.0
    for q, ll, lx in points:
        p = ModelParams(q, math.exp(ll), math.exp(lx))
        for n_c in (10, 141, 1000):
            r = np.linspace(0.5, n_c - 0.5, 40)
            x = model.rank_curve(p, r, n_c)
            worst = max(worst, float(np.max(np.abs(model.cumulative(p, x) - (1 - r / n_c)))))
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-8 and elapsed < 10
    record(3, ok, f"{len(points)} parameter points incl. (1.62, -3.7, 10.1), max |error| {worst:.1e}, {elapsed:.1f}s")
    assert ok


def test_4_sampling_law():
    t0 = time.perf_counter()
    sets = [(0.8, -13.5), (1.0, -6.5), (1.2, -4.3), (1.45, -2.0), (1.65, 0.0)]
    n = 100_000
    crit = stats.kstwo.ppf(0.99, n)
    worst = 0.0
    for k, (q, ll) in enumerate(sets):
        p = ModelParams(q, math.exp(ll), 50.0)
        x = sampling.sample(p, n, k)
        d = stats.kstest(x, lambda v: model.cumulative(p, v)).statistic
        worst = max(worst, d / crit)
    elapsed = time.perf_counter() - t0
    ok = worst < 1 and elapsed < 60
    record(4, ok, f"5 sets, max KS D / 1% critical value {worst:.3f}, {elapsed:.1f}s")
    assert ok


def test_5_band_coverage():
    t0 = time.perf_counter()
    p = ModelParams(1.0, model.solve_lambda(ALICANTE_N, ALICANTE_NC, ALICANTE_X0, 1.0), ALICANTE_X0)
    band = sampling.confidence_band(p, ALICANTE_NC, replicas=10_000, seed=0)
    fresh = sampling.replica_matrix(p, ALICANTE_NC, 10_000, seed=1)
    cov = sampling.coverage(band, fresh)
    elapsed = time.perf_counter() - t0
    ok = np.all(np.abs(cov - 0.90) <= 0.03) and elapsed < 300
    record(5, ok, f"n_c=141, per-rank coverage in [{cov.min():.4f}, {cov.max():.4f}], {elapsed:.1f}s")
    assert ok


@pytest.mark.slow
def test_6_estimator_recovery():
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    dq, dl, statuses = [], [], []
    for k in range(20):
        q, sig = rng.uniform(0.9, 1.7), rng.uniform(0.0, 0.5)
        n, ll, lx = int(rng.integers(100, 501)), rng.uniform(-10, -1), rng.uniform(2, 8)
        p = ModelParams(q, math.exp(ll), math.exp(lx), sig)
        fit = estimation.consistency_workflow(RankedSample.from_sizes(sampling.sample(p, n, k)))
        statuses.append(fit.status)
        dq.append(abs(fit.params.q - q))
        dl.append(abs(math.log(fit.params.lam) - ll))
    elapsed = time.perf_counter() - t0
    mq, ml = float(np.median(dq)), float(np.median(dl))
    ok = mq <= 0.1 and ml <= 0.5 and elapsed < 600
    record(6, ok, f"median |dq| {mq:.3f}, median |dlogLambda| {ml:.3f} (max {max(dq):.2f}, {max(dl):.2f}), "
                  f"{statuses.count('ok')}/20 ok, {elapsed:.0f}s")
    assert ok


def test_7_gamma_scaling_collapse():
    t0 = time.perf_counter()
    rng = np.random.default_rng(5)
    groups = []
    for g in range(10):
        n = int(rng.integers(50, 1000))
        x0, ratio = math.exp(rng.uniform(2, 7)), math.exp(rng.uniform(1.5, 4))
        lam = model.solve_lambda(ratio * n * x0, n, x0, 1.0)
        x = np.rint(sampling.sample(ModelParams(1.0, lam, x0), n, 100 + g)).astype(int)
        groups.append([PanelRecord(f"g{g}_{i}", 2010, max(int(v), 1), f"G{g}") for i, v in enumerate(x)])
    report, _ = C.run_scale(grouped(groups), replicas=2000)
    elapsed = time.perf_counter() - t0
    frac = report["inside_fraction"]
    ok = frac >= 0.9 and not report["errors"] and elapsed < 120
    record(7, ok, f"10 groups, {frac:.3f} of scaled points inside the band, {elapsed:.0f}s")
    assert ok


def test_8_dynamics_link():
    t0 = time.perf_counter()
    rng = np.random.default_rng(11)
    groups, truth, degenerate = [], {}, []
    for k in range(50):
        q = rng.uniform(0.6, 1.7)
        name = f"P{k:02d}"
        if k % 10 == 9:
            k1, kq = 0.01, 0.0
            degenerate.append(name)
        else:
            k1, kq = -0.01, 0.02 * math.exp(-7 * (q - 1))
        cfg = growthsim.SimConfig(n_units=300, q=q, k1_mean=k1, k1_std=0.02, kq_mean=kq, dt=0.1, steps=100,
                                  init=("loguniform", 50.0, 2e4), seed=k, group=name, unit_prefix=name)
        groups.append(growthsim.simulate(cfg))
        truth[name] = q
    report, rows = C.run_compare_q(grouped(groups), reference=truth)
    elapsed = time.perf_counter() - t0
    s = report["summary"]
    flagged = {r["group"]: not r["well_defined"] for r in rows}
    all_flagged = all(flagged[g] for g in degenerate)
    ok = 0.9 <= s["slope_through_origin"] <= 1.1 and s["R"] >= 0.95 and all_flagged and elapsed < 900
    record(8, ok, f"slope {s['slope_through_origin']:.3f}, R {s['R']:.3f} over {s['n_used']} well-defined, "
                  f"{sum(flagged[g] for g in degenerate)}/{len(degenerate)} degenerate flagged, {elapsed:.0f}s")
    assert ok


def test_8_alicante_with_ine_panel(ine_panel_path):
    group = os.environ.get("MAXENTPOP_INE_GROUP", "Alicante")
    report, _ = C.run_fit(ingest(ine_panel_path), group, 2010, "q1", band=False)
    log_x0 = report["params"]["log_x0"]
    ok = abs(log_x0 - 4.826) <= 0.05 and report["R"] >= 0.999
    record("8-INE", ok, f"log x0 {log_x0:.3f}, R {report['R']:.5f}")
    assert ok


def _cli_runs(tmp, work):
    out = str(tmp / work)
    panel = str(tmp / "panel.csv")
    ref = str(tmp / "ref.csv")
    cmds = [
        ["band", "--q", "1.2", "--log-lam", "-4.3", "--log-x0", "5.5", "--n-c", "141", "--replicas", "2000"],
        ["ingest-check", panel],
        ["fit", panel, "--group", "A", "--mode", "q1", "--replicas", "1000"],
        ["fit", panel, "--group", "A", "--mode", "moments", "--with-drift", "--no-band"],
        ["fit", panel, "--group", "M", "--mode", "consistency", "--replicas", "1000"],
        ["scale", panel, "--groups", "A,S", "--year", "2000", "--replicas", "1000"],
        ["dynamics", panel, "--group", "A"],
        ["compare-q", panel, "--groups", "A,S", "--reference", ref],
        ["simulate", "--output", str(tmp / work / "sim.csv"), "--n-units", "50", "--q", "1.3",
         "--k1-std", "0.02", "--kq-mean", "0.001", "--sigma-k", "0.1", "--years", "3", "--seed", "9"],
    ]
    codes = [main(c + ["--out-dir", out]) for c in cmds]
    return out, codes


def test_9_determinism(tmp_path):
    t0 = time.perf_counter()
    panel = []
    for k, q in enumerate([1.3, 1.6]):
        name = "AS"[k]
        cfg = growthsim.SimConfig(n_units=120, q=q, k1_mean=-0.01, k1_std=0.02, kq_mean=0.02 * math.exp(-7 * (q - 1)),
                                  dt=0.1, steps=50, init=("loguniform", 50.0, 2e4), seed=30 + k, group=name, unit_prefix=name)
        panel += growthsim.simulate(cfg)
    x = sampling.sample(ModelParams(1.2, math.exp(-4.3), math.exp(5.5)), 100, 3)
    panel += [PanelRecord(f"M{i:03d}", 2005, max(int(v), 1), "M") for i, v in enumerate(np.rint(x))]
    emit_panel(panel, tmp_path / "panel.csv")
    (tmp_path / "ref.csv").write_text("group,q\nA,1.3\nS,1.6\n", encoding="utf-8")
    first, codes1 = _cli_runs(tmp_path, "run1")
    second, codes2 = _cli_runs(tmp_path, "run2")
    names = sorted(os.listdir(first))
    match, mismatch, errors = filecmp.cmpfiles(first, second, names, shallow=False)
    elapsed = time.perf_counter() - t0
    ok = codes1 == codes2 and not mismatch and not errors and sorted(os.listdir(second)) == names
    record(9, ok, f"{len(codes1)} commands twice, {len(match)}/{len(names)} output files byte-identical, "
                  f"exit codes {codes1}, {elapsed:.0f}s")
    assert ok
    assert all(c in (0, 5, 6) for c in codes1), codes1
