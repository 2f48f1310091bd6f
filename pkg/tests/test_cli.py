import json
import math
import subprocess
import sys

import numpy as np
import pytest

from maxentpop import growthsim as G, model, sampling
from maxentpop.cli import commands as C
from maxentpop.cli.data import Dataset, emit_panel, ingest, panel_to_csv, parse_panel_text
from maxentpop.cli.main import main
from maxentpop.dynamics import PanelRecord
from maxentpop.errors import ParseError, ValidationError
from maxentpop.model import ModelParams


def write(tmp_path, text, name="panel.csv"):
    p = tmp_path / name
    p.write_text(text, encoding="utf-8")
    return p


def province_records(params, n, seed, group="P", year=2010):
    x = np.rint(sampling.sample(params, n, seed)).astype(int)
    return [PanelRecord(f"{group}{i:04d}", year, max(int(v), 1), group) for i, v in enumerate(x)]


def dataset(records):
    groups = {r.unit_id: r.group for r in records} if records[0].group is not None else None
    return Dataset(tuple(records), {"path": "memory", "sha256": "0"}, groups)


def test_ingest_three_rows(tmp_path):
    p = write(tmp_path, "unit_id,year,population\na,2000,10\na,2001,12\nb,2000,7\n")
    ds = ingest(p)
    assert len(ds.panel) == 3
    assert ds.groups is None
    assert len(ds.provenance["sha256"]) == 64


def test_duplicate_row_named(tmp_path):
    p = write(tmp_path, "unit_id,year,population\na,2000,10\nb,2000,3\na,2000,12\n")
    with pytest.raises(ValidationError) as err:
        ingest(p)
    assert "line 4" in str(err.value) and "first on line 2" in str(err.value)


def test_all_problems_enumerated():
    text = "unit_id,year,population\na,2000,0\nb,2000,-3\nc,2000,1.5\nd,20x0,4\n"
    with pytest.raises(ValidationError) as err:
        parse_panel_text(text)
    assert len(err.value.problems) == 4


def test_parse_errors_have_location():
    with pytest.raises(ParseError) as err:
        parse_panel_text("unit,year,population\n")
    assert err.value.line == 1
    with pytest.raises(ParseError) as err:
        parse_panel_text("unit_id,year,population\na,2000\n")
    assert err.value.line == 2 and err.value.column == 3


def test_group_column_must_be_consistent():
    with pytest.raises(ValidationError):
        parse_panel_text("unit_id,year,population,group\na,2000,5,X\na,2001,6,Y\n")


def test_simulated_panel_round_trips(tmp_path):
    cfg = G.SimConfig(n_units=30, q=1.3, k1_std=0.02, kq_mean=0.001, dt=0.1, steps=30, seed=4, group="G")
    panel = G.simulate(cfg)
    p = tmp_path / "sim.csv"
    emit_panel(panel, p)
    ds = ingest(p)
    assert list(ds.panel) == panel
    assert panel_to_csv(ds.panel) == p.read_text(encoding="utf-8")


def test_fit_q1_report_layout_and_quality():
    lam = model.solve_lambda(13660 * 1000, 1000, 125.0, 1.0)
    ds = dataset(province_records(ModelParams(1.0, lam, 125.0), 1000, 2))
    report, rows = C.run_fit(ds, "P", 2010, "q1", replicas=1000)
    for key in ("params", "stderr", "R", "outsiders", "method", "config"):
        assert key in report
    assert report["R"] >= 0.999
    assert report["method"] == "rank_ls_q1"
    assert len(rows) == 1000
    assert set(rows[0]) == set(C.FIT_COLUMNS)
    assert report["config"]["seed"] == 0 and report["config"]["replicas"] == 1000


def test_fit_consistency_lists_outsiders():
    recs = province_records(ModelParams(1.2, math.exp(-4.3), math.exp(5.5)), 60, 1)
    top = max(range(len(recs)), key=lambda i: recs[i].population)
    r = recs[top]
    recs[top] = PanelRecord(r.unit_id, r.year, r.population * 5, r.group)
    report, rows = C.run_fit(dataset(recs), "P", 2010, "consistency", replicas=1000)
    assert [(o["end"], o["id"]) for o in report["outsiders"]] == [("head", r.unit_id)]
    assert report["n_c_fitted"] == 59 and len(rows) == 59


def test_scale_single_group_endpoints():
    lam = model.solve_lambda(2e5, 100, 50.0, 1.0)
    ds = dataset(province_records(ModelParams(1.0, lam, 50.0), 100, 3))
    report, rows = C.run_scale(ds, ["P"], replicas=1000)
    g = report["groups"]["P"]
    p_lam = g["params"]["lam"]
    assert g["endpoint"]["x_scaled"] == p_lam
    assert model.master_curve(g["endpoint"]["r_scaled"]) == pytest.approx(p_lam, rel=1e-9)
    assert rows[-1]["r_scaled"] < g["endpoint"]["r_scaled"]


def test_scale_two_groups_overlap():
    recs = []
    for k, (n, x0, ratio) in enumerate([(80, 20.0, 30.0), (600, 900.0, 8.0)]):
        lam = model.solve_lambda(ratio * n * x0, n, x0, 1.0)
        recs += province_records(ModelParams(1.0, lam, x0), n, 10 + k, group=f"G{k}")
    report, _ = C.run_scale(dataset(recs), replicas=1000)
    assert report["inside_fraction"] >= 0.9
    assert report["errors"] == {}


def test_dynamics_constant_population_degenerate():
    recs = [PanelRecord(f"u{k}", 2000 + t, 10 * (k + 1) ** 2, "P") for k in range(40) for t in range(3)]
    report, rows = C.run_dynamics(dataset(recs), "P", min_frac=0.0)
    assert all(r["mean_udot"] == 0.0 for r in rows)
    assert report["well_defined"] is False


def sim_group(q, kq, seed, group, k1=-0.01):
    cfg = G.SimConfig(n_units=300, q=q, k1_mean=k1, k1_std=0.02, kq_mean=kq, dt=0.1, steps=100, seed=seed,
                      init=("loguniform", 50.0, 2e4), group=group, unit_prefix=group)
    return G.simulate(cfg)


def test_dynamics_simulated_q15():
    report, rows = C.run_dynamics(dataset(sim_group(1.5, 0.02 * math.exp(-3.5), 5, "P")), "P")
    assert report["well_defined"] is True
    assert abs(report["params"]["q"] - 1.5) <= 0.1
    assert rows and set(rows[0]) == set(C.DYNAMICS_COLUMNS)


def test_dynamics_proportional_growth():
    report, _ = C.run_dynamics(dataset(sim_group(1.0, 0.0, 6, "P", k1=0.01)), "P")
    assert report["well_defined"] is False or abs(report["params"]["q"] - 1.0) < 0.1


def test_compare_q_identical_estimates():
    recs = []
    ref = {}
    for k, q in enumerate([0.7, 1.3, 1.6]):
        recs += sim_group(q, 0.02 * math.exp(-7 * (q - 1)), 20 + k, f"G{k}")
    ds = dataset(recs)
    _, rows = C.run_compare_q(ds, reference={f"G{k}": 1.0 for k in range(3)})
    ref = {r["group"]: r["q_dynamics"] for r in rows}
    report, _ = C.run_compare_q(ds, reference=ref)
    assert report["summary"]["slope_through_origin"] == pytest.approx(1.0, abs=1e-12)
    assert report["summary"]["R"] == pytest.approx(1.0, abs=1e-12)


def test_compare_q_needs_two_groups():
    from maxentpop.errors import DomainError

    ds = dataset(sim_group(1.3, 0.02 * math.exp(-2.1), 1, "G0"))
    with pytest.raises(DomainError):
        C.run_compare_q(ds, reference={"G0": 1.3})


def test_exit_codes(tmp_path):
    bad_header = write(tmp_path, "a,b,c\n", "h.csv")
    assert main(["ingest-check", str(bad_header), "--out-dir", str(tmp_path)]) == C.EXIT_PARSE
    bad_rows = write(tmp_path, "unit_id,year,population\na,2000,0\n", "v.csv")
    assert main(["ingest-check", str(bad_rows), "--out-dir", str(tmp_path)]) == C.EXIT_VALIDATION
    assert main(["ingest-check", str(tmp_path / "missing.csv")]) == C.EXIT_PARSE
    ok = write(tmp_path, "unit_id,year,population\na,2000,3\n", "ok.csv")
    assert main(["ingest-check", str(ok), "--out-dir", str(tmp_path)]) == C.EXIT_OK
    assert main(["band", "--q", "1.0", "--log-lam", "-6", "--log-x0", "4", "--n-c", "30",
                 "--replicas", "10", "--out-dir", str(tmp_path)]) == C.EXIT_VALIDATION
    with pytest.raises(SystemExit) as err:
        main(["fit"])
    assert err.value.code == 2


def test_status_exit_codes():
    assert C.status_exit_code("ok") == 0
    assert C.status_exit_code("nonconverged") == 5
    assert C.status_exit_code("failed") == 6


def test_module_entry_point(tmp_path):
    out = subprocess.run([sys.executable, "-m", "maxentpop", "band", "--q", "1.2", "--log-lam", "-4.3",
                          "--log-x0", "5.5", "--n-c", "50", "--replicas", "1000", "--out-dir", str(tmp_path)],
                         capture_output=True, text=True)
    assert out.returncode == 0, out.stderr
    report = json.loads((tmp_path / "band.json").read_text())
    assert report["config"]["replicas"] == 1000
    header = (tmp_path / "band.csv").read_text().splitlines()[0]
    assert header == ",".join(C.BAND_COLUMNS)


def test_reports_are_canonical_json():
    text = C.dumps({"b": float("nan"), "a": np.float64(1.5), "c": np.array([1, 2])})
    assert text == '{\n  "a": 1.5,\n  "b": null,\n  "c": [\n    1,\n    2\n  ]\n}\n'
