"""``maxentpop`` command line.

Exit status: 0 success, 2 usage error, 3 unreadable or unparsable input,
4 validation or domain error, 5 non-convergence, 6 declared failure of the
consistency workflow.
"""

import argparse
import csv
import math
import os
import sys

from .. import dynamics, estimation, sampling
from ..errors import ConvergenceError, DomainError, ParseError, ValidationError
from ..growthsim import SimConfig
from ..model import ModelParams
from . import commands as C
from .data import emit_panel, ingest, write_table


def _common(p):
    p.add_argument("--out-dir", default=".", help="directory for reports (default: current)")
    p.add_argument("--seed", type=int, default=0)


def _band_flags(p):
    p.add_argument("--replicas", type=int, default=sampling.DEFAULT_REPLICAS)
    p.add_argument("--level", type=float, default=sampling.DEFAULT_LEVEL)


def _dyn_flags(p):
    p.add_argument("--delta-u", type=float, default=dynamics.DELTA_U)
    p.add_argument("--min-bin-frac", type=float, default=dynamics.MIN_BIN_FRAC)
    p.add_argument("--weighted", action="store_true", help="weight bins by sqrt(count)/std")


def _groups(text):
    return [g for g in text.split(",") if g] if text else None


def build_parser():
    parser = argparse.ArgumentParser(prog="maxentpop", description="Rank-size fits, bands, scaling and growth dynamics.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest-check", help="validate a panel CSV and summarise it")
    p.add_argument("panel")
    _common(p)

    p = sub.add_parser("fit", help="fit one group/year slice")
    p.add_argument("panel")
    p.add_argument("--group")
    p.add_argument("--year", type=int)
    p.add_argument("--mode", choices=C.FIT_MODES, default="consistency")
    p.add_argument("--fit-n", action="store_true", help="also fit the total population (mode q1)")
    p.add_argument("--with-drift", action="store_true", help="drift model for modes q and moments")
    p.add_argument("--exclude-head", type=int, default=estimation.MAX_HEAD, help="cap on excluded largest entries")
    p.add_argument("--exclude-tail", type=int, default=estimation.MAX_TAIL, help="cap on excluded smallest entries")
    p.add_argument("--no-band", action="store_true")
    _band_flags(p)
    _common(p)

    p = sub.add_parser("scale", help="Gamma-scale q=1 groups onto the master curve")
    p.add_argument("panel")
    p.add_argument("--groups", help="comma-separated groups (default: all)")
    p.add_argument("--year", type=int)
    p.add_argument("--params", help="JSON file of per-group {lam, x0}; fitted when absent")
    _band_flags(p)
    _common(p)

    p = sub.add_parser("band", help="Monte Carlo rank band for given parameters")
    p.add_argument("--q", type=float, required=True)
    p.add_argument("--log-lam", type=float, required=True)
    p.add_argument("--log-x0", type=float, required=True)
    p.add_argument("--sigma", type=float, default=0.0)
    p.add_argument("--n-c", type=int, required=True)
    _band_flags(p)
    _common(p)

    p = sub.add_parser("dynamics", help="estimate q from the growth dynamics of one group")
    p.add_argument("panel")
    p.add_argument("--group")
    _dyn_flags(p)
    _common(p)

    p = sub.add_parser("compare-q", help="compare equilibrium and dynamical q across groups")
    p.add_argument("panel")
    p.add_argument("--groups")
    p.add_argument("--year", type=int)
    p.add_argument("--mode", choices=C.FIT_MODES, default="consistency")
    p.add_argument("--reference", help="CSV with header group,q used instead of equilibrium fits")
    _dyn_flags(p)
    _common(p)

    p = sub.add_parser("simulate", help="write a synthetic panel")
    p.add_argument("--output", required=True, help="panel CSV to write")
    p.add_argument("--n-units", type=int, default=200)
    p.add_argument("--q", type=float, default=1.0)
    p.add_argument("--k1-mean", type=float, default=0.0)
    p.add_argument("--k1-std", type=float, default=0.0)
    p.add_argument("--kq-mean", type=float, default=0.0)
    p.add_argument("--kq-std", type=float, default=0.0)
    p.add_argument("--sigma-k", type=float, default=0.0, help="finite-size noise amplitude (enables the noise term)")
    p.add_argument("--dt", type=float, default=0.1)
    p.add_argument("--years", type=int, default=10)
    p.add_argument("--init", default="loguniform:100:100000",
                   help="fixed:X, lognormal:MEAN_LOG:SD_LOG or loguniform:LO:HI")
    p.add_argument("--start-year", type=int, default=2000)
    p.add_argument("--group")
    _common(p)
    return parser


def _write(out_dir, stem, report, rows=None, columns=None):
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, stem + ".json")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(C.dumps(report))
    if rows is not None:
        write_table(rows, columns, os.path.join(out_dir, stem + ".csv"))
    return path


def _read_reference(path):
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"group", "q"} <= set(reader.fieldnames):
            raise ParseError(f"{path}: reference header must contain group,q", line=1)
        out = {}
        for row in reader:
            try:
                out[row["group"]] = float(row["q"])
            except ValueError:
                raise ParseError(f"{path}: bad q value {row['q']!r}", line=reader.line_num) from None
    return out


def _parse_init(text):
    parts = text.split(":")
    try:
        return (parts[0],) + tuple(float(v) for v in parts[1:])
    except ValueError:
        raise DomainError(f"bad --init value {text!r}") from None


def _dispatch(args):
    cmd = args.command
    if cmd == "ingest-check":
        ds = ingest(args.panel)
        report = {
            "method": "ingest_check",
            "input": ds.provenance,
            "units": len({r.unit_id for r in ds.panel}),
            "years": ds.years(),
            "groups": ds.group_names(),
            "config": {"command": cmd},
        }
        _write(args.out_dir, "ingest_check", report)
        sys.stdout.write(C.dumps(report))
        return C.EXIT_OK
    if cmd == "fit":
        ds = ingest(args.panel)
        report, rows = C.run_fit(ds, args.group, args.year, args.mode, fit_N=args.fit_n,
                                 with_drift=args.with_drift, max_head=args.exclude_head,
                                 max_tail=args.exclude_tail, replicas=args.replicas, level=args.level,
                                 seed=args.seed, band=not args.no_band)
        stem = f"fit_{C.safe_name(args.group or 'all')}_{report['config']['year']}"
        cols = C.FIT_COLUMNS if not args.no_band else C.FIT_COLUMNS[:4]
        _write(args.out_dir, stem, report, rows, cols)
        return C.status_exit_code(report["status"])
    if cmd == "scale":
        ds = ingest(args.panel)
        params = C.load_params_file(args.params) if args.params else None
        report, rows = C.run_scale(ds, _groups(args.groups), args.year, params, replicas=args.replicas,
                                   level=args.level, seed=args.seed)
        _write(args.out_dir, "scale", report, rows, C.SCALE_COLUMNS)
        return C.EXIT_VALIDATION if report["errors"] else C.EXIT_OK
    if cmd == "band":
        params = ModelParams(args.q, math.exp(args.log_lam), math.exp(args.log_x0), args.sigma)
        report, rows = C.run_band(params, args.n_c, replicas=args.replicas, level=args.level, seed=args.seed)
        _write(args.out_dir, "band", report, rows, C.BAND_COLUMNS)
        return C.EXIT_OK
    if cmd == "dynamics":
        ds = ingest(args.panel)
        report, rows = C.run_dynamics(ds, args.group, args.delta_u, args.min_bin_frac, args.weighted)
        _write(args.out_dir, f"dynamics_{C.safe_name(args.group or 'all')}", report, rows, C.DYNAMICS_COLUMNS)
        return C.EXIT_OK
    if cmd == "compare-q":
        ds = ingest(args.panel)
        ref = _read_reference(args.reference) if args.reference else None
        report, rows = C.run_compare_q(ds, _groups(args.groups), args.year, args.mode, ref,
                                       args.delta_u, args.min_bin_frac, args.weighted)
        _write(args.out_dir, "compare_q", report, rows, C.COMPARE_COLUMNS)
        return C.EXIT_OK
    if cmd == "simulate":
        cfg = SimConfig(
            n_units=args.n_units, q=args.q, k1_mean=args.k1_mean, k1_std=args.k1_std,
            kq_mean=args.kq_mean, kq_std=args.kq_std, finite_size_noise=args.sigma_k > 0,
            sigma_k=args.sigma_k, dt=args.dt, steps=int(round(args.years / args.dt)),
            init=_parse_init(args.init), seed=args.seed, start_year=args.start_year, group=args.group,
        )
        report, records = C.run_simulate(cfg)
        emit_panel(records, args.output)
        report["output"] = os.path.basename(args.output)
        _write(args.out_dir, "simulate", report)
        return C.EXIT_OK
    raise AssertionError(cmd)


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return _dispatch(args)
    except ParseError as exc:
        print(f"parse error: {exc}", file=sys.stderr)
        return C.EXIT_PARSE
    except OSError as exc:
        print(f"cannot read input: {exc}", file=sys.stderr)
        return C.EXIT_PARSE
    except ValidationError as exc:
        print("validation failed:", file=sys.stderr)
        for p in exc.problems:
            print(f"  {p}", file=sys.stderr)
        return C.EXIT_VALIDATION
    except ConvergenceError as exc:
        print(f"did not converge: {exc}", file=sys.stderr)
        return C.EXIT_NONCONVERGED
    except DomainError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return C.EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
