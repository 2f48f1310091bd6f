"""Command implementations shared by the argument parser and the tests.

Every ``run_*`` function returns ``(report, rows)``: a JSON-ready report
dict and a list of dict rows for the companion plot-data CSV.
"""

import json
import math
import re

import numpy as np

from .. import dynamics, estimation, model, sampling, specfun
from ..errors import DomainError, MaxEntError
from ..growthsim import simulate
from ..model import ModelParams

FIT_MODES = ("q1", "q", "moments", "consistency")

FIT_COLUMNS = ("rank", "unit_id", "observed", "fitted", "band_low", "band_high", "inside")
SCALE_COLUMNS = ("group", "rank", "r_scaled", "x_scaled", "master", "band_low", "band_high", "inside")
BAND_COLUMNS = ("rank", "lower", "median", "upper", "model")
DYNAMICS_COLUMNS = ("u", "mean_udot", "std_udot", "count", "fitted")
COMPARE_COLUMNS = ("group", "q_maxent", "q_reference", "q_dynamics", "q_dynamics_raw", "well_defined", "maxent_status")

EXIT_OK = 0
EXIT_PARSE = 3
EXIT_VALIDATION = 4
EXIT_NONCONVERGED = 5
EXIT_DECLARED_FAILURE = 6


def jsonable(obj):
    """Recursively convert to JSON types; non-finite floats become ``None``."""
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    return obj


def dumps(report):
    """Canonical JSON text: sorted keys, fixed indent, trailing newline."""
    return json.dumps(jsonable(report), sort_keys=True, indent=2, allow_nan=False) + "\n"


def safe_name(text):
    return re.sub(r"[^A-Za-z0-9._-]+", "_", str(text))


def status_exit_code(status):
    return {"ok": EXIT_OK, "nonconverged": EXIT_NONCONVERGED, "failed": EXIT_DECLARED_FAILURE}.get(status, EXIT_OK)


def _default_year(dataset, group):
    years = dataset.years(group)
    if not years:
        raise DomainError(f"no records for group {group!r}")
    return years[-1]


def _head_tail(outsiders):
    head = sum(1 for o in outsiders if o["end"] == "head")
    tail = sum(1 for o in outsiders if o["end"] == "tail")
    return head, tail


def fit_sample(sample, mode, fit_N=False, with_drift=False, max_head=estimation.MAX_HEAD,
               max_tail=estimation.MAX_TAIL):
    """Dispatch one estimation ``mode`` on a ranked sample."""
    if mode == "q1":
        return estimation.fit_rank_q1(sample, fit_N=fit_N)
    if mode == "q":
        return estimation.fit_rank_q(sample, with_drift=with_drift)
    if mode == "moments":
        return estimation.fit_moments(sample, with_drift=with_drift)
    if mode == "consistency":
        return estimation.consistency_workflow(sample, max_head=max_head, max_tail=max_tail)
    raise DomainError(f"unknown fit mode {mode!r}; choose from {FIT_MODES}")


def run_fit(dataset, group=None, year=None, mode="consistency", fit_N=False, with_drift=False,
            max_head=estimation.MAX_HEAD, max_tail=estimation.MAX_TAIL, replicas=sampling.DEFAULT_REPLICAS,
            level=sampling.DEFAULT_LEVEL, seed=0, band=True):
    """Fit one group/year slice; rows hold observed, fitted and band values per rank."""
    year = _default_year(dataset, group) if year is None else year
    sample = dataset.ranked(group, year)
    fit = fit_sample(sample, mode, fit_N, with_drift, max_head, max_tail)
    head, tail = _head_tail(fit.outsiders)
    sub = sample.trimmed(head, tail)
    params = fit.params
    fitted = model.model_rank_curve(params, sub.ranks, sub.n_c)
    lower = upper = None
    if band:
        b = sampling.confidence_band(params, sub.n_c, replicas=replicas, level=level, seed=seed)
        lower, upper = b.lower, b.upper
    rows = []
    for i in range(sub.n_c):
        row = {
            "rank": float(sub.ranks[i]),
            "unit_id": sub.ids[i] if sub.ids is not None else "",
            "observed": float(sub.sizes[i]),
            "fitted": float(fitted[i]),
        }
        if band:
            row.update(band_low=float(lower[i]), band_high=float(upper[i]),
                       inside=bool(lower[i] <= sub.sizes[i] <= upper[i]))
        rows.append(row)
    report = fit.to_dict()
    report["config"] = {
        **report["config"],
        "command": "fit",
        "mode": mode,
        "group": group,
        "year": year,
        "fit_N": bool(fit_N),
        "with_drift": bool(with_drift),
        "exclude_head_cap": max_head,
        "exclude_tail_cap": max_tail,
        "band": bool(band),
        "replicas": replicas,
        "level": level,
        "seed": seed,
        "input": dataset.provenance,
    }
    report["n_c_sample"] = sample.n_c
    report["n_c_fitted"] = sub.n_c
    if band:
        report["band_inside_fraction"] = float(np.mean([r["inside"] for r in rows]))
    return report, rows


def load_params_file(path):
    """Read per-group parameters: JSON mapping group -> {"lam", "x0"[, "q"]}."""
    with open(path, encoding="utf-8") as fh:
        data = json.load(fh)
    if not isinstance(data, dict):
        raise DomainError("params file must map group names to parameter objects")
    out = {}
    for g, p in data.items():
        try:
            out[str(g)] = ModelParams(float(p.get("q", 1.0)), float(p["lam"]), float(p["x0"]))
        except (KeyError, TypeError, ValueError) as exc:
            raise DomainError(f"bad parameters for group {g!r}: {exc}") from None
    return out


def run_scale(dataset, groups=None, year=None, params=None, replicas=sampling.DEFAULT_REPLICAS,
              level=sampling.DEFAULT_LEVEL, seed=0):
    """Gamma-scale several q=1 groups onto the common master curve.

    Parameters come from ``params`` (group -> ModelParams) when given and
    from :func:`estimation.fit_rank_q1` otherwise.  Each group's
    finite-size band is scaled with the group's own transform; ``inside``
    marks scaled points within it.
    """
    groups = dataset.group_names() if groups is None else list(groups)
    if not groups:
        raise DomainError("no groups to scale")
    rows, summary, errors = [], {}, {}
    for k, g in enumerate(groups):
        try:
            y = _default_year(dataset, g) if year is None else year
            sample = dataset.ranked(g, y)
            if params is not None:
                if g not in params:
                    raise DomainError(f"no parameters supplied for group {g!r}")
                p = params[g]
                source = "file"
            else:
                p = estimation.fit_rank_q1(sample).params
                source = "fit_rank_q1"
            scaled = model.gamma_scale(sample, p)
            b = sampling.confidence_band(p, sample.n_c, replicas=replicas, level=level, seed=seed + k)
        except MaxEntError as exc:
            errors[g] = str(exc)
            continue
        factor = p.lam / p.x0
        master = model.master_curve(scaled.ranks)
        lo, hi = b.lower * factor, b.upper * factor
        inside = (scaled.sizes >= lo) & (scaled.sizes <= hi)
        for i in range(sample.n_c):
            rows.append({
                "group": g, "rank": float(sample.ranks[i]), "r_scaled": float(scaled.ranks[i]),
                "x_scaled": float(scaled.sizes[i]), "master": float(master[i]),
                "band_low": float(lo[i]), "band_high": float(hi[i]), "inside": bool(inside[i]),
            })
        summary[g] = {
            "params": p.to_dict(),
            "source": source,
            "year": y,
            "n_c": sample.n_c,
            "inside_fraction": float(inside.mean()),
            "endpoint": {"r_scaled": specfun.upper_gamma(0.0, p.lam), "x_scaled": p.lam},
        }
    n_in = sum(r["inside"] for r in rows)
    report = {
        "method": "gamma_scaling",
        "groups": summary,
        "errors": errors,
        "inside_fraction": n_in / len(rows) if rows else None,
        "config": {"command": "scale", "groups": groups, "year": year, "replicas": replicas,
                   "level": level, "seed": seed, "input": dataset.provenance},
    }
    return report, rows


def run_band(params, n_c, replicas=sampling.DEFAULT_REPLICAS, level=sampling.DEFAULT_LEVEL, seed=0):
    """Monte Carlo band for given parameters with the model rank curve alongside."""
    b = sampling.confidence_band(params, n_c, replicas=replicas, level=level, seed=seed)
    curve = model.model_rank_curve(params, b.ranks, n_c)
    rows = [
        {"rank": float(r), "lower": float(lo), "median": float(m), "upper": float(hi), "model": float(c)}
        for r, lo, m, hi, c in zip(b.ranks, b.lower, b.median, b.upper, curve)
    ]
    report = {
        "method": "confidence_band",
        "params": params.to_dict(),
        "config": {"command": "band", "n_c": n_c, "replicas": replicas, "level": level, "seed": seed},
    }
    return report, rows


def dynamics_for(records, delta_u=dynamics.DELTA_U, min_frac=dynamics.MIN_BIN_FRAC, weighted=False):
    points = dynamics.panel_to_points(records)
    binned = dynamics.bin_points(points, delta_u=delta_u, min_frac=min_frac)
    fit = dynamics.fit_dynamics(binned, weighted=weighted)
    return points, binned, fit


def run_dynamics(dataset, group=None, delta_u=dynamics.DELTA_U, min_frac=dynamics.MIN_BIN_FRAC,
                 weighted=False):
    """Growth points, bins and the q fit for one group; rows are the bins used."""
    records = dataset.records(group)
    if len({r.year for r in records}) < 2:
        raise DomainError(f"group {group!r} needs at least two years of data")
    points, binned, fit = dynamics_for(records, delta_u, min_frac, weighted)
    uc = binned.bin_center - fit.diagnostics["u_mean"]
    fitted = fit.k1 + fit.diagnostics["c"] * np.exp((fit.q_raw - 1.0) * uc)
    rows = [dict(r, fitted=float(f)) for r, f in zip(binned.rows(), fitted)]
    a, b, r_lin = dynamics.fit_linear_dynamics(binned)
    report = {
        "method": "dynamics",
        "fit": fit.to_dict(),
        "params": {"k1": fit.k1, "kq": fit.kq, "q": fit.q},
        "stderr": dict(fit.stderr),
        "R": fit.correlation,
        "well_defined": fit.well_defined,
        "linear_diagnostic": {"intercept": a, "slope": b, "R": r_lin},
        "n_points": len(points),
        "n_bins": len(binned),
        "bins_dropped": binned.dropped,
        "config": {"command": "dynamics", "group": group, "delta_u": delta_u, "min_bin_frac": min_frac,
                   "weighted": bool(weighted), "input": dataset.provenance},
    }
    return report, rows


def slope_through_origin(x, y):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    return float(x @ y / (x @ x))


def run_compare_q(dataset, groups=None, year=None, mode="consistency", reference=None,
                  delta_u=dynamics.DELTA_U, min_frac=dynamics.MIN_BIN_FRAC, weighted=False):
    """Compare equilibrium and dynamical estimates of q across groups.

    With ``reference`` (group -> q) the reference values take the place of
    the equilibrium fit, which is then skipped.  The summary slope (through
    the origin, dynamics on reference) and Pearson R use well-defined
    dynamics fits only; ill-defined groups are listed separately.
    """
    groups = dataset.group_names() if groups is None else list(groups)
    rows, errors = [], {}
    for g in groups:
        try:
            if reference is not None:
                if g not in reference:
                    raise DomainError(f"no reference q for group {g!r}")
                q_x, q_ref, status = None, float(reference[g]), None
            else:
                y = _default_year(dataset, g) if year is None else year
                fit = fit_sample(dataset.ranked(g, y), mode)
                q_x, q_ref, status = fit.params.q, None, fit.status
            _, _, dfit = dynamics_for(dataset.records(g), delta_u, min_frac, weighted)
        except MaxEntError as exc:
            errors[g] = str(exc)
            continue
        rows.append({
            "group": g, "q_maxent": q_x, "q_reference": q_ref, "q_dynamics": dfit.q,
            "q_dynamics_raw": dfit.q_raw, "well_defined": dfit.well_defined, "maxent_status": status,
        })
    key = "q_reference" if reference is not None else "q_maxent"
    good = [r for r in rows if r["well_defined"] and (reference is not None or r["maxent_status"] == "ok")]
    if len(good) < 2:
        raise DomainError(f"need at least 2 groups with both estimates, got {len(good)}")
    xs = [r[key] for r in good]
    ys = [r["q_dynamics"] for r in good]
    try:
        corr = estimation.pearson_r(xs, ys)
    except DomainError:
        corr = None
    report = {
        "method": "compare_q",
        "summary": {
            "x": key,
            "slope_through_origin": slope_through_origin(xs, ys),
            "R": corr,
            "n_used": len(good),
            "ill_defined": [r["group"] for r in rows if not r["well_defined"]],
            "excluded_maxent": [r["group"] for r in rows if r["well_defined"] and r not in good],
        },
        "rows": rows,
        "errors": errors,
        "config": {"command": "compare-q", "groups": groups, "year": year, "mode": mode,
                   "reference": reference, "delta_u": delta_u, "min_bin_frac": min_frac,
                   "weighted": bool(weighted), "input": dataset.provenance},
    }
    return report, rows


def run_simulate(config):
    """Simulate a panel; returns ``(report, records)``."""
    records = simulate(config)
    report = {"method": "simulate", "rows": len(records), "config": config.to_dict()}
    return report, records
