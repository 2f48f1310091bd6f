"""Growth points from panel data and the exponent ``q`` from the dynamics.

A unit observed at years ``t1 < t2`` gives the point
``u = (log x1 + log x2) / 2``, ``udot = log(x2 / x1) / (t2 - t1)``.  Points
are binned in ``u`` and the bin means are fitted to
``k1 + kq * exp((q - 1) u)``.
"""

from collections import defaultdict
from dataclasses import dataclass, field
import math
import numbers

import numpy as np
from scipy import optimize

from .errors import DomainError, ValidationError
from .estimation import pearson_r

DELTA_U = 0.25
MIN_BIN_FRAC = 0.15
MIN_BINS = 4
DEGENERACY_Z = 2.0
Q_PROFILE = (-1.0, 3.0)



@dataclass(frozen=True)
class PanelRecord:
    """One census observation: ``population`` persons in ``unit_id`` at ``year``."""

    unit_id: str
    year: int
    population: int
    group: str | None = None

    def __post_init__(self):
        problems = _record_problems(self)
        if problems:
            raise ValidationError(problems)


def _record_problems(rec, where=""):
    out = []
    if not isinstance(rec.year, numbers.Integral) or isinstance(rec.year, bool):
        out.append(f"{where}year must be an integer, got {rec.year!r}")
    if not isinstance(rec.population, numbers.Integral) or isinstance(rec.population, bool):
        out.append(f"{where}population must be an integer, got {rec.population!r}")
    elif rec.population < 1:
        out.append(f"{where}population must be >= 1, got {rec.population}")
    if rec.unit_id is None or str(rec.unit_id) == "":
        out.append(f"{where}empty unit_id")
    return out


@dataclass(frozen=True)
class DynamicsPoint:
    u: float
    udot: float
    unit_id: str
    period: tuple


@dataclass(frozen=True)
class BinnedDynamics:
    """Per-bin statistics of ``udot``; only bins passing the count filter.

    ``std_udot`` is the sample standard deviation (``ddof=1``; 0 for a
    single point).  ``anchor`` is the left edge of the first grid bin.
    """

    bin_center: np.ndarray
    mean_udot: np.ndarray
    std_udot: np.ndarray
    count: np.ndarray
    delta_u: float
    min_frac: float
    anchor: float
    dropped: int = 0

    def __len__(self):
        return len(self.bin_center)

    def rows(self):
        return [
            {"u": float(c), "mean_udot": float(m), "std_udot": float(s), "count": int(n)}
            for c, m, s, n in zip(self.bin_center, self.mean_udot, self.std_udot, self.count)
        ]


@dataclass
class DynamicsFit:
    """Fit of ``<udot> = k1 + kq exp((q - 1) u)``.

    When the q-term is within two standard errors of zero (see
    :func:`fit_dynamics`) it cannot be told apart from the proportional drift; then ``well_defined`` is false, ``q`` is reported
    as 1 and the fitted exponent is kept in ``q_raw``.
    """

    k1: float
    kq: float
    q: float
    well_defined: bool
    correlation: float
    q_raw: float = 1.0
    stderr: dict = field(default_factory=dict)
    n_bins: int = 0
    weighted: bool = False
    diagnostics: dict = field(default_factory=dict)

    def to_dict(self):
        def f(v):
            v = float(v)
            return v if math.isfinite(v) else None

        return {
            "k1": f(self.k1),
            "kq": f(self.kq),
            "q": f(self.q),
            "q_raw": f(self.q_raw),
            "well_defined": bool(self.well_defined),
            "degenerate": not self.well_defined,
            "R": f(self.correlation),
            "stderr": {k: f(v) for k, v in sorted(self.stderr.items())},
            "n_bins": int(self.n_bins),
            "weighted": bool(self.weighted),
            "diagnostics": {k: (f(v) if isinstance(v, float) else v) for k, v in sorted(self.diagnostics.items())},
        }


def validate_panel(panel):
    """Collect every structural problem in ``panel`` (index-tagged)."""
    problems = []
    seen = {}
    for i, rec in enumerate(panel):
        problems += _record_problems(rec, f"record {i}: ")
        key = (rec.unit_id, rec.year)
        if key in seen:
            problems.append(f"record {i}: duplicate (unit_id, year) = {key!r}, first at record {seen[key]}")
        else:
            seen[key] = i
    return problems


def panel_to_points(panel):
    """Growth points for every unit and every consecutive pair of observed years.

    Units observed once contribute nothing.  Output is ordered by
    ``(unit_id, t1)`` so it does not depend on input order.

    Raises
    ------
    ValidationError
        Invalid or duplicated records, listed with their positions.
    DomainError
        No unit observed in two or more years.
    """
    panel = list(panel)
    if not panel:
        raise DomainError("empty panel")
    problems = validate_panel(panel)
    if problems:
        raise ValidationError(problems)
    series = defaultdict(list)
    for rec in panel:
        series[rec.unit_id].append((rec.year, rec.population))
    points = []
    for uid in sorted(series, key=str):
        obs = sorted(series[uid])
        for (t1, x1), (t2, x2) in zip(obs[:-1], obs[1:]):
            l1, l2 = math.log(x1), math.log(x2)
            points.append(DynamicsPoint(0.5 * (l1 + l2), (l2 - l1) / (t2 - t1), uid, (t1, t2)))
    if not points:
        raise DomainError("no unit is observed in two or more years")
    return points


def bin_points(points, delta_u=DELTA_U, min_frac=MIN_BIN_FRAC):
    """Bin growth points in ``u`` and drop sparse bins.

    The grid starts at ``min(u)`` with half-open bins ``[a, a + delta_u)``.
    Bins holding fewer than ``min_frac`` times the largest bin count are
    removed.
    """
    if not points:
        raise DomainError("no points to bin")
    if not delta_u > 0:
        raise DomainError("delta_u must be positive")
    if not 0 <= min_frac <= 1:
        raise DomainError("min_frac must lie in [0, 1]")
    u = np.array([p.u for p in points])
    v = np.array([p.udot for p in points])
    anchor = float(u.min())
    # rounding first keeps points that sit on a grid edge (up to float noise)
    # in the bin to their right
    idx = np.floor(np.round((u - anchor) / delta_u, 9)).astype(np.int64)
    counts = np.bincount(idx)
    sums = np.bincount(idx, weights=v)
    occupied = np.nonzero(counts)[0]
    keep = occupied[counts[occupied] >= min_frac * counts.max()]
    if keep.size == 0:
        raise DomainError("all bins removed by the count filter")
    means = sums[keep] / counts[keep]
    stds = np.empty(keep.size)
    for j, b in enumerate(keep):
        vals = v[idx == b]
        stds[j] = float(np.std(vals, ddof=1)) if vals.size > 1 else 0.0
    return BinnedDynamics(
        bin_center=anchor + (keep + 0.5) * delta_u,
        mean_udot=means,
        std_udot=stds,
        count=counts[keep].astype(np.int64),
        delta_u=float(delta_u),
        min_frac=float(min_frac),
        anchor=anchor,
        dropped=int(occupied.size - keep.size),
    )


def _weights(binned, weighted):
    if not weighted:
        return np.ones(len(binned))
    se = binned.std_udot / np.sqrt(binned.count)
    pos = se[se > 0]
    if pos.size == 0:
        return np.ones(len(binned))
    # single-point or constant bins borrow the smallest positive error
    se = np.where(se > 0, se, pos.min())
    return 1.0 / se


def _profile(q, uc, y, w):
    """Best linear (k1, c) for fixed q in the centred basis; returns (ssr, coef)."""
    a = np.column_stack([np.ones_like(uc), np.exp((q - 1.0) * uc)]) * w[:, None]
    coef, *_ = np.linalg.lstsq(a, y * w, rcond=None)
    r = a @ coef - y * w
    return float(r @ r), coef


def _sd_val(v):
    return math.sqrt(v) if np.isfinite(v) and v >= 0 else math.inf


def fit_dynamics(binned, weighted=False, q_range=Q_PROFILE, degeneracy_z=DEGENERACY_Z):
    """Fit the bin means to ``k1 + kq exp((q - 1) u)``.

    ``q`` is found by profiling out the linear coefficients on a grid over
    ``q_range`` followed by a bounded scalar search around the best grid
    point; a joint least-squares polish over ``(k1, kq, q)`` provides the
    local covariance.  The fit is declared degenerate when the q-term
    amplitude at the mean bin position, ``kq exp((q - 1) mean(u))``, is
    within ``degeneracy_z`` joint standard errors of zero, or when ``q``
    sits on a bound of ``q_range``.

    Parameters
    ----------
    binned : BinnedDynamics
    weighted : bool
        Weight bins by ``sqrt(count) / std``; unweighted by default.
    q_range : (float, float)
        Search interval for ``q``.
    degeneracy_z : float
        ``well_defined`` requires ``|kq| > degeneracy_z * se(kq)``.
    """
    n = len(binned)
    if n < MIN_BINS:
        raise DomainError(f"need at least {MIN_BINS} bins, got {n}")
    u = np.asarray(binned.bin_center, dtype=float)
    y = np.asarray(binned.mean_udot, dtype=float)
    w = _weights(binned, weighted)
    ubar = float(np.mean(u))
    uc = u - ubar

    grid = np.linspace(q_range[0], q_range[1], 201)
    ssr = np.array([_profile(q, uc, y, w)[0] for q in grid])
    k = int(np.argmin(ssr))
    lo, hi = grid[max(k - 1, 0)], grid[min(k + 1, grid.size - 1)]
    if hi > lo:
        opt = optimize.minimize_scalar(lambda q: _profile(q, uc, y, w)[0], bounds=(lo, hi),
                                       method="bounded", options={"xatol": 1e-12})
        q0 = float(opt.x) if opt.fun <= ssr[k] else float(grid[k])
    else:
        q0 = float(grid[k])
    _, (k1_0, c0) = _profile(q0, uc, y, w)

    def resid(theta):
        k1, c, q = theta
        return (k1 + c * np.exp((q - 1.0) * uc) - y) * w

    lb = [-np.inf, -np.inf, q_range[0]]
    ub = [np.inf, np.inf, q_range[1]]
    res = optimize.least_squares(resid, [k1_0, c0, q0], bounds=(lb, ub), xtol=1e-15, ftol=1e-15, gtol=1e-15)
    if res.cost <= 0.5 * _profile(q0, uc, y, w)[0]:
        k1, c, q = (float(t) for t in res.x)
    else:
        k1, c, q = k1_0, c0, q0
    r = resid([k1, c, q])
    dof = max(n - 3, 1)
    s2 = float(r @ r) / dof
    jac = res.jac
    try:
        cov = np.linalg.inv(jac.T @ jac) * s2
        if not np.all(np.isfinite(cov)):
            raise np.linalg.LinAlgError
    except np.linalg.LinAlgError:
        cov = np.full((3, 3), np.inf)

    scale = math.exp(-(q - 1.0) * ubar)
    kq = c * scale
    # kq = c exp(-(q - 1) ubar): delta method through (c, q)
    grad = np.array([0.0, scale, -ubar * kq])
    se = {
        "k1": _sd_val(cov[0, 0]),
        "kq": _sd_val(float(grad @ cov @ grad)) if np.all(np.isfinite(cov)) else math.inf,
        "q": _sd_val(cov[2, 2]),
        "c": _sd_val(cov[1, 1]),
    }
    # The q-term is tested where the data sit (amplitude c at u = ubar), with
    # the joint covariance: near q = 1 it is collinear with k1 and se(c) blows
    # up.  An exponent pinned at the search bound is never well defined.
    at_bound = min(q - q_range[0], q_range[1] - q) < 1e-6
    well_defined = bool(abs(c) > degeneracy_z * se["c"] and not at_bound)
    fitted = k1 + c * np.exp((q - 1.0) * uc)
    try:
        corr = pearson_r(y, fitted)
    except DomainError:
        corr = float("nan")
    return DynamicsFit(
        k1=k1,
        kq=kq,
        q=q if well_defined else 1.0,
        well_defined=well_defined,
        correlation=corr,
        q_raw=q,
        stderr=se,
        n_bins=n,
        weighted=bool(weighted),
        diagnostics={
            "c": c,
            "ssr": float(r @ r),
            "u_mean": ubar,
            "degeneracy_z": float(degeneracy_z),
            "q_at_bound": bool(at_bound),
        },
    )


def fit_linear_dynamics(binned):
    """Diagnostic straight-line fit ``<udot> = a + b u``; returns ``(a, b, R)``."""
    u = np.asarray(binned.bin_center, dtype=float)
    y = np.asarray(binned.mean_udot, dtype=float)
    if u.size < 2:
        raise DomainError("need at least 2 bins")
    b, a = np.polyfit(u, y, 1)
    try:
        corr = pearson_r(u, y)
    except DomainError:
        corr = float("nan")
    return float(a), float(b), corr


def points_correlation(points):
    """Pearson R between ``u`` and ``udot`` over raw points."""
    return pearson_r([p.u for p in points], [p.udot for p in points])
