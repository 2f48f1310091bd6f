"""Parameter estimation from ranked samples.

Three estimators are provided:

* least squares of log-size against the model rank curve, either with
  ``q = 1`` and ``lam`` tied to the system totals (:func:`fit_rank_q1`) or
  with ``(q, lam, x0[, sigma])`` free (:func:`fit_rank_q`);
* the logarithmic-moment system (:func:`fit_moments`), optionally with the
  drift variance entering through the Bessel-number expansion;
* :func:`consistency_workflow`, which requires the three estimates to agree
  and trims outsiders from either end of the ranking until they do.
"""

from dataclasses import dataclass, field
import math

import numpy as np
from scipy import optimize

from . import model, specfun
from .errors import ConvergenceError, DomainError, MaxEntError
from .model import ModelParams, RankedSample

METHODS = ("rank_ls_q1", "rank_ls_q", "moments", "moments_drift")

Q_GRID = (0.8, 1.0, 1.3, 1.6)
LOG_LAM_GRID = (-12.0, -8.0, -4.0, -1.0)
SIGMA_GRID = (0.1, 0.4)
LOCAL_STARTS = 4

Q_BOUNDS = (0.05, 2.0)
LOG_LAM_BOUNDS = (-30.0, 7.0)
SIGMA_BOUNDS = (0.01, 2.0)

AGREE_DQ = 0.15
AGREE_DLOG_LAM = 0.5
MAX_HEAD = 3
MAX_TAIL = 5
NESTED_SIGMA = 0.15

_LSQ_TOL = dict(ftol=1e-10, xtol=1e-10, gtol=1e-10)
_PENALTY = 1e3


@dataclass
class FitReport:
    """Outcome of one estimation run.

    ``status`` is ``"ok"``, ``"nonconverged"`` or ``"failed"`` (the
    consistency workflow's declared failure).  ``stderr`` maps parameter
    names (``q``, ``log_lam``, ``log_x0``, ``sigma``, ``log_N``) to local
    standard errors.
    """

    params: ModelParams
    stderr: dict
    correlation: float
    method: str
    outsiders: list = field(default_factory=list)
    converged: bool = True
    residuals: np.ndarray = field(default_factory=lambda: np.empty(0))
    status: str = "ok"
    diagnostics: dict = field(default_factory=dict)
    config: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.method not in METHODS:
            raise DomainError(f"unknown method tag {self.method!r}")
        if not (-1.0 - 1e-12 <= self.correlation <= 1.0 + 1e-12) and not math.isnan(self.correlation):
            raise DomainError("correlation outside [-1, 1]")

    @property
    def ok(self):
        return self.status == "ok"

    def to_dict(self):
        return {
            "method": self.method,
            "status": self.status,
            "converged": bool(self.converged),
            "params": self.params.to_dict(),
            "stderr": {k: _json_float(v) for k, v in sorted(self.stderr.items())},
            "R": _json_float(self.correlation),
            "outsiders": list(self.outsiders),
            "residuals": [float(r) for r in self.residuals],
            "diagnostics": _jsonable(self.diagnostics),
            "config": _jsonable(self.config),
        }


def _json_float(v):
    v = float(v)
    return v if math.isfinite(v) else None


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return _json_float(obj)
    return obj


def pearson_r(xs, ys):
    """Sample Pearson correlation of two equal-length sequences."""
    x = np.asarray(xs, dtype=float)
    y = np.asarray(ys, dtype=float)
    if x.shape != y.shape or x.ndim != 1 or x.size < 2:
        raise DomainError("need two 1-d sequences of equal length >= 2")
    dx = x - x.mean()
    dy = y - y.mean()
    sxx = float(dx @ dx)
    syy = float(dy @ dy)
    if sxx <= 0 or syy <= 0:
        raise DomainError("degenerate variance in pearson_r")
    r = float(dx @ dy) / math.sqrt(sxx * syy)
    return max(-1.0, min(1.0, r))


def _require_size(sample, n_min):
    if sample.n_c < n_min:
        raise DomainError(f"need at least {n_min} entries, got {sample.n_c}")


def _covariance(jac, residuals, n_params):
    dof = max(residuals.size - n_params, 1)
    s2 = float(residuals @ residuals) / dof
    jtj = jac.T @ jac
    try:
        return np.linalg.inv(jtj) * s2
    except np.linalg.LinAlgError:
        return np.full((n_params, n_params), np.inf)


def _stderr(cov):
    d = np.diag(cov)
    return np.sqrt(np.where(d >= 0, d, np.inf))


def tail_extrapolated_log_x0(sample, frac=0.15, min_points=5):
    """Starting value for ``log x0``: extend a straight line through the
    log-sizes of the smallest entries (in the rank plot) to ``r = n_c``."""
    n = sample.n_c
    k = min(n, max(min_points, int(round(frac * n))))
    r = sample.ranks[-k:]
    ly = np.log(sample.sizes[-k:])
    if k < 2 or np.ptp(r) == 0:
        return float(ly[-1])
    slope, intercept = np.polyfit(r, ly, 1)
    return float(slope * n + intercept)


# -- rank-curve least squares ---------------------------------------------------


def _log_shape_q1(log_ratio, n_c, ranks):
    """lam and log(x/x0) along the q=1 rank curve for a given log(N/(n_c x0))."""
    lam = model.solve_lambda_log_ratio(log_ratio, 1.0)
    p = ModelParams(1.0, lam, 1.0)
    return lam, np.log(model.rank_curve(p, ranks, n_c))


def fit_rank_q1(sample, N=None, fit_N=False):
    """Least-squares fit of log-sizes to the ``q = 1`` rank curve.

    ``lam`` is eliminated through the equation of state at every step, so
    the only free parameter is ``log x0`` (plus ``log N`` with ``fit_N``).

    Parameters
    ----------
    sample : RankedSample
    N : float, optional
        Total population.  Defaults to the sample sum; used as the starting
        value when ``fit_N`` is set.
    fit_N : bool
        Also fit the total population.
    """
    _require_size(sample, 10)
    n_c = sample.n_c
    ranks = sample.ranks
    ly = np.log(sample.sizes)
    N = float(sample.sizes.sum()) if N is None else float(N)
    log_n_c = math.log(n_c)
    guess = tail_extrapolated_log_x0(sample)
    ceiling = math.log(N) - log_n_c - 1e-9

    if not fit_N:

        def resid(theta):
            try:
                _, shape = _log_shape_q1(math.log(N) - log_n_c - theta[0], n_c, ranks)
            except MaxEntError:
                return np.full(n_c, _PENALTY)
            return ly - theta[0] - shape

        starts = sorted({min(guess, ceiling - 0.05), min(float(ly[-1]), ceiling - 0.05), ceiling - 1.0})
        lb, ub = [0.0], [ceiling]
    else:

        def resid(theta):
            try:
                _, shape = _log_shape_q1(theta[1], n_c, ranks)
            except MaxEntError:
                return np.full(n_c, _PENALTY)
            return ly - theta[0] - shape

        r0 = max(math.log(N) - log_n_c - guess, 0.05)
        starts = [(guess, r0), (float(ly[-1]), max(math.log(N) - log_n_c - float(ly[-1]), 0.05))]
        lb, ub = [0.0, 1e-9], [np.inf, 60.0]

    best = None
    for i, start in enumerate(starts):
        x_start = np.clip(np.atleast_1d(np.asarray(start, dtype=float)), np.array(lb) + 1e-12, np.array(ub) - 1e-12)
        res = optimize.least_squares(resid, x_start, bounds=(lb, ub), jac="3-point", **_LSQ_TOL)
        key = (2.0 * res.cost, i)
        if best is None or key < best[0]:
            best = (key, res)
    res = best[1]
    theta = res.x
    residuals = res.fun
    cov = _covariance(res.jac, residuals, theta.size)
    se = _stderr(cov)
    log_x0 = float(theta[0])
    if fit_N:
        log_ratio = float(theta[1])
        log_N = log_x0 + log_n_c + log_ratio
        # log N = log x0 + log n_c + log_ratio
        tr = np.array([[1.0, 0.0], [1.0, 1.0]])
        cov_n = tr @ cov @ tr.T
        stderr = {"log_x0": float(se[0]), "log_N": float(math.sqrt(max(cov_n[1, 1], 0.0)))}
        N_fit = math.exp(log_N)
    else:
        log_ratio = math.log(N) - log_n_c - log_x0
        stderr = {"log_x0": float(se[0])}
        N_fit = N
    lam = model.solve_lambda_log_ratio(log_ratio, 1.0)
    params = ModelParams(1.0, lam, math.exp(log_x0), 0.0, n_c=n_c, N=N_fit)
    fitted = ly - residuals
    return FitReport(
        params=params,
        stderr=stderr,
        correlation=pearson_r(ly, fitted),
        method="rank_ls_q1",
        converged=bool(res.success),
        residuals=residuals,
        status="ok" if res.success else "nonconverged",
        diagnostics={"cost": float(res.cost), "nfev": int(res.nfev), "fit_N": bool(fit_N)},
        config={"fit_N": bool(fit_N), "N_start": N},
    )


def _unpack(theta, fix_q, with_drift):
    i = 0
    if fix_q is None:
        q = float(theta[0])
        i = 1
    else:
        q = float(fix_q)
    log_lam, log_x0 = float(theta[i]), float(theta[i + 1])
    sigma = float(theta[i + 2]) if with_drift else 0.0
    return q, log_lam, log_x0, sigma


def _rank_log_model(q, log_lam, log_x0, sigma, ranks, n_c):
    p = ModelParams(q, math.exp(log_lam), math.exp(log_x0), sigma)
    return np.log(model.model_rank_curve(p, ranks, n_c))


def fit_rank_q(sample, with_drift=False, fix_q=None, extra_starts=(), local_starts=LOCAL_STARTS):
    """Least-squares fit of log-sizes to the general rank curve.

    Free parameters are ``(q, log lam, log x0)`` and, with ``with_drift``,
    ``sigma`` (drift rank curve inverted numerically).  ``fix_q`` pins ``q``.

    Multistart: every point of the ``Q_GRID x LOG_LAM_GRID`` (``x SIGMA_GRID``)
    grid, with ``log x0`` from :func:`tail_extrapolated_log_x0`, is scored by
    its residual sum of squares; local fits are run from the
    ``local_starts`` best-scoring points plus any ``extra_starts``.  The
    result with the smallest residual wins, ties going to the earlier start.

    Raises
    ------
    ConvergenceError
        If no start yields a finite fit.
    """
    _require_size(sample, 20)
    n_c = sample.n_c
    ranks = sample.ranks
    ly = np.log(sample.sizes)
    lx0 = tail_extrapolated_log_x0(sample)
    lx0 = min(max(lx0, 0.0), float(ly[-1]) + 1.0)

    lb = [LOG_LAM_BOUNDS[0], 0.0]
    ub = [LOG_LAM_BOUNDS[1], float(ly[0])]
    if fix_q is None:
        lb.insert(0, Q_BOUNDS[0])
        ub.insert(0, Q_BOUNDS[1])
    if with_drift:
        lb.append(SIGMA_BOUNDS[0])
        ub.append(SIGMA_BOUNDS[1])
    lb, ub = np.array(lb), np.array(ub)

    def resid(theta):
        try:
            return ly - _rank_log_model(*_unpack(theta, fix_q, with_drift), ranks, n_c)
        except MaxEntError:
            return np.full(n_c, _PENALTY)

    chosen = []
    if local_starts > 0:
        grid = []
        for q0 in Q_GRID if fix_q is None else (None,):
            for ll in LOG_LAM_GRID:
                for s0 in SIGMA_GRID if with_drift else (None,):
                    theta = ([q0] if q0 is not None else []) + [ll, lx0] + ([s0] if s0 is not None else [])
                    grid.append(np.clip(np.array(theta, dtype=float), lb, ub))
        scores = []
        for i, theta in enumerate(grid):
            r = resid(theta)
            scores.append((float(r @ r), i))
        scores.sort()
        chosen = [grid[i] for _, i in scores[:local_starts]]
    elif not extra_starts:
        raise DomainError("local_starts=0 needs at least one extra start")
    chosen += [np.clip(np.asarray(t, dtype=float), lb, ub) for t in extra_starts]

    results = []
    for i, theta0 in enumerate(chosen):
        try:
            res = optimize.least_squares(resid, theta0, bounds=(lb, ub), jac="2-point", x_scale="jac", **_LSQ_TOL)
        except (MaxEntError, ValueError, np.linalg.LinAlgError):
            continue
        if np.all(np.isfinite(res.fun)):
            results.append((2.0 * res.cost, i, res))
    if not results:
        raise ConvergenceError("all starts of the rank-curve fit failed", {"starts": len(chosen)})
    results.sort(key=lambda t: (t[0], t[1]))
    ssr, _, res = results[0]
    q, log_lam, log_x0, sigma = _unpack(res.x, fix_q, with_drift)
    names = (["q"] if fix_q is None else []) + ["log_lam", "log_x0"] + (["sigma"] if with_drift else [])
    cov = _covariance(res.jac, res.fun, res.x.size)
    stderr = dict(zip(names, map(float, _stderr(cov))))
    params = ModelParams(q, math.exp(log_lam), math.exp(log_x0), sigma, n_c=n_c)
    fitted = ly - res.fun
    converged = bool(res.success) and ssr < _PENALTY
    return FitReport(
        params=params,
        stderr=stderr,
        correlation=pearson_r(ly, fitted),
        method="rank_ls_q",
        converged=converged,
        residuals=res.fun,
        status="ok" if converged else "nonconverged",
        diagnostics={
            "ssr": ssr,
            "nfev": int(res.nfev),
            "starts_tried": len(chosen),
            "starts_finished": len(results),
            "theta": res.x.tolist(),
        },
        config={"with_drift": bool(with_drift), "fix_q": fix_q, "local_starts": local_starts},
    )


# -- logarithmic-moment system ----------------------------------------------------


def _cumulants_from_raw(m):
    """First four cumulants from raw moments m[0..4] (m[0] = 1)."""
    m1, m2, m3, m4 = m[1], m[2], m[3], m[4]
    c2 = m2 - m1**2
    c3 = m3 - 3 * m2 * m1 + 2 * m1**3
    mu4 = m4 - 4 * m3 * m1 + 6 * m2 * m1**2 - 3 * m1**4
    return m1, c2, c3, mu4 - 3 * c2**2


def empirical_log_moments(sample, nmax=4):
    """``E[log^n x] = sum_i log^n(x_i) / n_c`` for n = 0..nmax."""
    ly = np.log(sample.sizes)
    return np.array([np.mean(ly**n) for n in range(nmax + 1)])


def drift_moment(n, q, lam, sigma_sq, m=None):
    """Left-hand side ``sum_i T^n_i sigma^(2i) M_(n-2i)(q, lam)``."""
    m = specfun.log_moments(q, lam) if m is None else m
    return sum(specfun.bessel_triangle(n, i) * sigma_sq**i * m[n - 2 * i] for i in range(n // 2 + 1))


def moment_system_residuals(q, lam, log_x0, sigma_sq, emp, orders):
    """Residuals of the moment equations in binomial form: left side minus the binomial sum."""
    m = specfun.log_moments(q, lam)
    out = []
    for n in orders:
        lhs = drift_moment(n, q, lam, sigma_sq, m)
        rhs = sum((-1) ** k * math.comb(n, k) * emp[n - k] * log_x0**k for k in range(n + 1))
        out.append(lhs - rhs)
    return np.array(out)


def _sample_cumulants(sample):
    ly = np.log(sample.sizes)
    d = ly - ly.mean()
    k2 = float(np.mean(d**2))
    k3 = float(np.mean(d**3))
    k4 = float(np.mean(d**4)) - 3 * k2**2
    return float(ly.mean()), k2, k3, k4


def _moment_equations(with_drift, k2, k3, k4):
    """Scaled cumulant-matching residuals in the unknowns (q, log lam)."""

    def eqs(theta):
        m = specfun.log_moments(float(theta[0]), math.exp(float(theta[1])))
        _, c2, c3, c4 = _cumulants_from_raw(m)
        if with_drift:
            return np.array([(c3 - k3) / k2**1.5, (c4 - k4) / k2**2])
        return np.array([c2 / k2 - 1.0, (c3 - k3) / k2**1.5])

    return eqs


def _moment_stderr(sample, q, log_lam, log_x0, sigma_sq, with_drift):
    """Delta-method standard errors of the moment estimator."""
    ly = np.log(sample.sizes)
    c = float(ly.mean())
    k = 4 if with_drift else 3
    y = ly - c
    powers = np.vstack([y**n for n in range(1, k + 1)])
    cov_m = np.cov(powers, bias=True) / ly.size

    def g(theta):
        qq, ll, lx, ss = theta[0], theta[1], theta[2], (theta[3] if with_drift else 0.0)
        m = specfun.log_moments(qq, math.exp(ll))
        shift = lx - c
        out = []
        for n in range(1, k + 1):
            v = sum(math.comb(n, j) * shift ** (n - j) * drift_moment(j, qq, 0, ss, m) for j in range(n + 1))
            out.append(v)
        return np.array(out)

    theta = np.array([q, log_lam, log_x0] + ([sigma_sq] if with_drift else []))
    jac = np.empty((k, k))
    for j in range(k):
        h = 1e-5 * max(1.0, abs(theta[j]))
        tp, tm = theta.copy(), theta.copy()
        tp[j] += h
        tm[j] -= h
        if j == 0:
            tp[0] = min(tp[0], 2.0)
            tm[0] = max(tm[0], 1e-3)
        jac[:, j] = (g(tp) - g(tm)) / (tp[j] - tm[j])
    try:
        jinv = np.linalg.inv(jac)
    except np.linalg.LinAlgError:
        return {name: math.inf for name in ("q", "log_lam", "log_x0", "sigma_sq")[:k]}
    cov = jinv @ cov_m @ jinv.T
    se = _stderr(cov)
    names = ["q", "log_lam", "log_x0"] + (["sigma_sq"] if with_drift else [])
    out = dict(zip(names, map(float, se)))
    if with_drift and sigma_sq > 0:
        out["sigma"] = out["sigma_sq"] / (2.0 * math.sqrt(sigma_sq))
    return out


def fit_moments(sample, with_drift=False, extra_starts=(), local_starts=LOCAL_STARTS, root_tol=1e-10):
    """Solve the logarithmic-moment system for ``(q, lam, x0[, sigma])``.

    Without drift the equations ``n = 1, 2, 3`` are solved; with drift
    ``n = 1..4`` with the left side ``sum_i T^n_i sigma^(2i) M_(n-2i)``.
    Because cumulants of a convolution add, the system separates: ``q`` and
    ``lam`` follow from the higher cumulants, ``x0`` from the mean and
    ``sigma**2`` from the variance.  The residuals of the original
    equations are reported in ``diagnostics["moment_residuals"]``.

    A negative drift variance (sampling noise around ``sigma = 0``) is kept
    in ``diagnostics["sigma_sq"]`` and reported as ``sigma = 0``.
    """
    _require_size(sample, 20)
    mean, k2, k3, k4 = _sample_cumulants(sample)
    if k2 <= 0:
        raise DomainError("sample has zero log-size variance")
    eqs = _moment_equations(with_drift, k2, k3, k4)
    lb = np.array([Q_BOUNDS[0], LOG_LAM_BOUNDS[0]])
    ub = np.array([Q_BOUNDS[1], LOG_LAM_BOUNDS[1]])

    grid = [np.array([q0, ll]) for q0 in Q_GRID for ll in LOG_LAM_GRID]
    scored = []
    for i, theta in enumerate(grid):
        try:
            r = eqs(theta)
            scored.append((float(r @ r), i))
        except MaxEntError:
            continue
    scored.sort()
    chosen = [grid[i] for _, i in scored[:local_starts]] + [np.clip(np.asarray(t, float), lb, ub) for t in extra_starts]

    results = []
    for i, theta0 in enumerate(chosen):
        try:
            res = optimize.least_squares(eqs, theta0, bounds=(lb, ub), jac="3-point", x_scale="jac", **_LSQ_TOL)
        except (MaxEntError, ValueError, np.linalg.LinAlgError):
            continue
        norm = float(np.max(np.abs(res.fun)))
        results.append((norm, i, res))
        if norm < root_tol:
            break
    method = "moments_drift" if with_drift else "moments"
    if not results:
        raise ConvergenceError("no start of the moment system could be evaluated", {"method": method})
    results.sort(key=lambda t: (t[0], t[1]))
    norm, _, res = results[0]
    q, log_lam = float(res.x[0]), float(res.x[1])
    lam = math.exp(log_lam)
    m = specfun.log_moments(q, lam)
    m1, c2, _, _ = _cumulants_from_raw(m)
    log_x0 = mean - m1
    sigma_sq = k2 - c2 if with_drift else 0.0
    sigma = math.sqrt(sigma_sq) if sigma_sq > 0 else 0.0
    emp = empirical_log_moments(sample)
    orders = range(1, 5) if with_drift else range(1, 4)
    sys_res = moment_system_residuals(q, lam, log_x0, sigma_sq, emp, orders)
    converged = norm < root_tol
    params = ModelParams(q, lam, math.exp(max(log_x0, 0.0)), sigma, n_c=sample.n_c)
    stderr = _moment_stderr(sample, q, log_lam, log_x0, sigma_sq, with_drift)
    try:
        fitted = np.log(model.model_rank_curve(params, sample.ranks, sample.n_c))
        ly = np.log(sample.sizes)
        residuals = ly - fitted
        corr = pearson_r(ly, fitted)
    except MaxEntError:
        residuals = np.full(sample.n_c, np.nan)
        corr = float("nan")
    return FitReport(
        params=params,
        stderr=stderr,
        correlation=corr,
        method=method,
        converged=converged,
        residuals=residuals,
        status="ok" if converged else "nonconverged",
        diagnostics={
            "moment_residuals": sys_res.tolist(),
            "equation_norm": norm,
            "sigma_sq": sigma_sq,
            "log_x0_raw": log_x0,
            "starts_tried": len(chosen),
        },
        config={"with_drift": bool(with_drift), "root_tol": root_tol, "local_starts": local_starts},
    )


# -- three-way consistency ----------------------------------------------------------


def exclusion_schedule(max_head=MAX_HEAD, max_tail=MAX_TAIL):
    """Ordered ``(head, tail)`` trims: fewest exclusions first, largest entries
    before smallest ones at equal count."""
    out = [(0, 0)]
    for total in range(1, max_head + max_tail + 1):
        for tail in range(0, total + 1):
            head = total - tail
            if head <= max_head and tail <= max_tail:
                out.append((head, tail))
    return out


def _agreement(fits, dq, dll):
    qs = [f.params.q for f in fits]
    lls = [math.log(f.params.lam) for f in fits]
    spread_q = max(qs) - min(qs)
    spread_ll = max(lls) - min(lls)
    return spread_q <= dq and spread_ll <= dll, spread_q, spread_ll


def _outsider_list(sample, head, tail):
    out = []
    for i in range(head):
        out.append({"end": "head", "rank": i + 1, "size": float(sample.sizes[i]),
                    "id": sample.ids[i] if sample.ids is not None else None})
    for i in range(sample.n_c - tail, sample.n_c):
        out.append({"end": "tail", "rank": i + 1, "size": float(sample.sizes[i]),
                    "id": sample.ids[i] if sample.ids is not None else None})
    return out


def _three_fits(sub, warm, rank_with_drift):
    mo = fit_moments(sub, extra_starts=warm.get("moments", ()))
    md = fit_moments(sub, with_drift=True, extra_starts=warm.get("drift", ()))
    start = [md.params.q, math.log(md.params.lam), math.log(md.params.x0)]
    if rank_with_drift:
        start.append(min(max(md.params.sigma, 0.05), SIGMA_BOUNDS[1]))
    starts = [start] + list(warm.get("rank", ()))
    # warm starts carry over between trims; the grid is only screened once
    local = 0 if warm else 1
    rq = fit_rank_q(sub, with_drift=rank_with_drift, extra_starts=starts, local_starts=local)
    return rq, mo, md


def consistency_workflow(sample, max_head=MAX_HEAD, max_tail=MAX_TAIL, agree_dq=AGREE_DQ,
                         agree_dlog_lam=AGREE_DLOG_LAM, rank_with_drift=True, nested_sigma=NESTED_SIGMA):
    """Accept parameters only when the rank fit and the moment systems agree.

    The three estimates are the rank-curve fit (drift-convolved curve when
    ``rank_with_drift``), the moment system without drift and the moment
    system with drift.  They agree when pairwise ``|dq| <= agree_dq`` and
    ``|d log lam| <= agree_dlog_lam``.  The no-drift moment estimate only
    enters the comparison when the drift estimate has
    ``sigma <= nested_sigma``: with appreciable drift the no-drift model is
    misspecified and its ``(q, lam)`` are biased by construction.

    Trims follow :func:`exclusion_schedule`.  The first trim that agrees is
    returned as the drift-moment fit with the excluded entries listed as
    outsiders.  If no trim within the caps agrees, the untrimmed
    drift-moment fit is returned with ``status="failed"``.
    """
    _require_size(sample, 20)
    config = {
        "max_head": max_head,
        "max_tail": max_tail,
        "agree_dq": agree_dq,
        "agree_dlog_lam": agree_dlog_lam,
        "rank_with_drift": bool(rank_with_drift),
        "nested_sigma": nested_sigma,
        "q_grid": list(Q_GRID),
        "log_lam_grid": list(LOG_LAM_GRID),
    }
    attempts = []
    first = None
    warm = {}
    for head, tail in exclusion_schedule(max_head, max_tail):
        sub = sample.trimmed(head, tail)
        if sub.n_c < 20:
            continue
        try:
            rq, mo, md = _three_fits(sub, warm, rank_with_drift)
        except MaxEntError as exc:
            attempts.append({"head": head, "tail": tail, "error": str(exc)})
            continue
        fits = (rq, mo, md)
        warm = {
            "rank": [rq.diagnostics["theta"]],
            "moments": [[mo.params.q, math.log(mo.params.lam)]],
            "drift": [[md.params.q, math.log(md.params.lam)]],
        }
        if first is None:
            first = fits
        compared = [rq, md] if md.params.sigma > nested_sigma else [rq, mo, md]
        all_ok = all(f.converged for f in compared)
        agree, sq, sl = _agreement(compared, agree_dq, agree_dlog_lam)
        attempts.append({
            "head": head, "tail": tail, "agree": bool(agree and all_ok), "spread_q": sq,
            "spread_log_lam": sl, "compared": [f.method for f in compared],
            "q": [f.params.q for f in fits],
            "log_lam": [math.log(f.params.lam) for f in fits],
            "converged": [f.converged for f in fits],
        })
        if agree and all_ok:
            md.outsiders = _outsider_list(sample, head, tail)
            md.diagnostics["three_way"] = {f.method: f.params.to_dict() for f in fits}
            md.diagnostics["attempts"] = attempts
            md.config = {**md.config, **config}
            return md
    if first is None:
        raise ConvergenceError("no trimmed sample could be fitted", {"attempts": attempts})
    md = first[2]
    md.status = "failed"
    md.diagnostics["three_way"] = {f.method: f.params.to_dict() for f in first}
    md.diagnostics["attempts"] = attempts
    md.config = {**md.config, **config}
    return md
