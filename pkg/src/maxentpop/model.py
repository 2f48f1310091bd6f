"""Equilibrium size distributions of scale-invariant growth.

The equilibrium density for growth ``dx/dt = k x**q`` is

    p(x) = exp(-lam * x / x0) * x**(-q) / Z,   x >= x0,
    Z    = (lam / x0)**(q - 1) * Gamma(1 - q, lam),

and a slow proportional drift smears it with a log-normal kernel of width
``sigma`` in log-size.  Everything here is expressed in the log variable
``u = log(x / x0)`` internally, where the undrifted density reads
``lam**(1-q) exp((1-q) u - lam e**u) / Gamma(1-q, lam)`` on ``u >= 0``.
"""

from dataclasses import dataclass, field, replace
import math

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy import integrate, optimize, special

from . import specfun
from .errors import ConvergenceError, DomainError, InfeasibleError

Q_MIN = 0.0  # exclusive
Q_MAX = 2.0


@dataclass(frozen=True)
class ModelParams:
    """Equilibrium model plus optional system totals.

    ``lam`` is the dimensionless multiplier ``x0 * lambda``.  ``N`` and ``n_c``
    are only needed by operations that refer to the whole system (rank
    curves, the equation of state check).
    """

    q: float
    lam: float
    x0: float
    sigma: float = 0.0
    n_c: int | None = None
    N: float | None = None

    def __post_init__(self):
        problems = []
        if not (Q_MIN < self.q <= Q_MAX):
            problems.append(f"q={self.q} outside (0, 2]")
        if not (self.lam > 0) or not math.isfinite(self.lam):
            problems.append(f"lam={self.lam} must be positive")
        if not (self.x0 >= 1) or not math.isfinite(self.x0):
            problems.append(f"x0={self.x0} must be >= 1")
        if not (self.sigma >= 0) or not math.isfinite(self.sigma):
            problems.append(f"sigma={self.sigma} must be >= 0")
        if self.n_c is not None and self.n_c < 2:
            problems.append(f"n_c={self.n_c} must be >= 2")
        if self.N is not None and self.n_c is not None and self.sigma == 0:
            if self.N < self.n_c * self.x0:
                problems.append("N must be >= n_c * x0 when sigma = 0")
        if problems:
            raise DomainError("; ".join(problems))

    @property
    def log_Z(self):
        """log of the normalisation ``(lam/x0)**(q-1) Gamma(1-q, lam)``."""
        return (self.q - 1.0) * math.log(self.lam / self.x0) + specfun.log_upper_gamma(
            1.0 - self.q, self.lam
        )

    @property
    def Z(self):
        return math.exp(self.log_Z)

    def with_totals(self, n_c=None, N=None):
        return replace(self, n_c=n_c, N=N)

    def to_dict(self):
        return {
            "q": self.q,
            "lam": self.lam,
            "log_lam": math.log(self.lam),
            "x0": self.x0,
            "log_x0": math.log(self.x0),
            "sigma": self.sigma,
            "n_c": self.n_c,
            "N": self.N,
        }


@dataclass(frozen=True)
class RankedSample:
    """Sizes sorted in descending order with middle-point ranks ``i - 1/2``."""

    sizes: np.ndarray
    label: str = ""
    ids: tuple | None = None
    ranks: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        sizes = np.asarray(self.sizes, dtype=float)
        if sizes.ndim != 1 or sizes.size < 1:
            raise DomainError("sizes must be a non-empty 1-d sequence")
        if np.any(~np.isfinite(sizes)) or np.any(sizes <= 0):
            raise DomainError("sizes must be finite and strictly positive")
        if np.any(np.diff(sizes) > 0):
            raise DomainError("sizes must be non-increasing; use RankedSample.from_sizes")
        if self.ids is not None and len(self.ids) != sizes.size:
            raise DomainError("ids must align with sizes")
        sizes.setflags(write=False)
        ranks = np.arange(sizes.size) + 0.5
        ranks.setflags(write=False)
        object.__setattr__(self, "sizes", sizes)
        object.__setattr__(self, "ranks", ranks)

    @classmethod
    def from_sizes(cls, sizes, label="", ids=None):
        """Sort ``sizes`` (and ``ids`` with them) in descending order."""
        sizes = np.asarray(sizes, dtype=float)
        order = np.argsort(-sizes, kind="stable")
        ids = tuple(ids[i] for i in order) if ids is not None else None
        return cls(sizes[order], label=label, ids=ids)

    @property
    def n_c(self):
        return int(self.sizes.size)

    def __len__(self):
        return self.n_c

    def trimmed(self, head=0, tail=0):
        """Drop the ``head`` largest and ``tail`` smallest entries."""
        stop = self.n_c - tail
        ids = self.ids[head:stop] if self.ids is not None else None
        return RankedSample(self.sizes[head:stop], label=self.label, ids=ids)


@dataclass(frozen=True)
class ScaledSample:
    """Gamma-scaled rank distribution (``r' = r Gamma(0, lam)/n_c``, ``x' = x lam/x0``)."""

    ranks: np.ndarray
    sizes: np.ndarray
    label: str = ""


def _x_array(x):
    arr = np.asarray(x, dtype=float)
    if np.any(~np.isfinite(arr)) or np.any(arr <= 0):
        raise DomainError("x must be finite and > 0")
    return arr


def _out(arr, like):
    return float(arr) if np.ndim(like) == 0 else arr


def _require_no_drift(params, what):
    if params.sigma != 0:
        raise DomainError(f"{what} is only available in closed form for sigma = 0")


def _log_density_u(params, u, lg=None):
    """log of the undrifted density of u = log(x/x0) on u >= 0."""
    a = 1.0 - params.q
    if lg is None:
        lg = specfun.log_upper_gamma(a, params.lam)
    return a * (u + math.log(params.lam)) - params.lam * np.exp(u) - lg


def density(params, x):
    """Probability density of the size ``x``.

    For ``sigma = 0`` the density vanishes below ``x0``.  For ``sigma > 0``
    the log-normal convolution is evaluated by adaptive quadrature over the
    undrifted log-size and is supported on all ``x > 0``.
    """
    xa = _x_array(x)
    if params.sigma == 0:
        flat = xa.ravel()
        out = np.zeros_like(flat)
        inside = flat >= params.x0
        xi = flat[inside]
        out[inside] = np.exp(-params.lam * xi / params.x0 - params.q * np.log(xi) - params.log_Z)
        return _out(out.reshape(xa.shape), x)
    vals = np.array([_drift_density_scalar(params, float(v)) for v in xa.ravel()])
    return _out(vals.reshape(xa.shape), x)


def _drift_density_scalar(params, x):
    sigma = params.sigma
    v = math.log(x / params.x0)
    upper = math.log1p(70.0 / params.lam)
    lo = max(0.0, v - 12 * sigma)
    hi = min(upper, v + 12 * sigma)

    lg = specfun.log_upper_gamma(1.0 - params.q, params.lam)

    def f(u):
        return math.exp(_log_density_u(params, u, lg) - 0.5 * ((v - u) / sigma) ** 2)

    if hi <= lo:
        return 0.0
    res = integrate.quad(f, lo, hi, epsabs=0.0, epsrel=1e-11, limit=200, full_output=1)
    if len(res) > 3:
        raise ConvergenceError("drift density quadrature failed", {"x": x, "msg": res[3]})
    return res[0] / (math.sqrt(2 * math.pi) * sigma * x)


def cumulative(params, x):
    """Cumulative distribution ``1 - Gamma(1-q, lam x/x0) / Gamma(1-q, lam)``."""
    _require_no_drift(params, "cumulative")
    xa = _x_array(x)
    if np.any(xa < params.x0):
        raise DomainError("cumulative is defined for x >= x0")
    a = 1.0 - params.q
    lg = specfun.log_upper_gamma(a, params.lam * xa.ravel() / params.x0)
    lg0 = specfun.log_upper_gamma(a, params.lam)
    vals = -np.expm1(np.minimum(lg - lg0, 0.0))
    return _out(vals.reshape(xa.shape), x)


def survival(params, x):
    """``1 - cumulative``; computed in log space so small tails keep precision."""
    _require_no_drift(params, "survival")
    xa = _x_array(x)
    a = 1.0 - params.q
    z = params.lam * np.maximum(xa.ravel(), params.x0) / params.x0
    vals = np.exp(np.minimum(specfun.log_upper_gamma(a, z) - specfun.log_upper_gamma(a, params.lam), 0.0))
    return _out(vals.reshape(xa.shape), x)


def _rank_fraction(params, r, n_c):
    n_c = params.n_c if n_c is None else n_c
    if n_c is None:
        raise DomainError("n_c is required for rank curves")
    ra = np.asarray(r, dtype=float)
    if np.any(~np.isfinite(ra)) or np.any(ra <= 0) or np.any(ra > n_c):
        raise DomainError(f"ranks must lie in (0, n_c={n_c}]")
    return ra, ra / n_c


def quantile_from_survival(params, log_surv):
    """Sizes whose survival probability is ``exp(log_surv)`` (``sigma = 0``)."""
    a = 1.0 - params.q
    lg0 = specfun.log_upper_gamma(a, params.lam)
    log_surv = np.minimum(np.asarray(log_surv, dtype=float), 0.0)
    z = specfun.inverse_log_upper_gamma(a, lg0 + log_surv, z_floor=params.lam)
    return params.x0 / params.lam * np.asarray(z)


def rank_curve(params, r, n_c=None):
    """Continuous rank distribution ``x(r) = (x0/lam) Gamma^-1[1-q, Gamma(1-q, lam) r/n_c]``.

    ``n_c`` defaults to ``params.n_c``.  ``rank_curve(n_c) == x0``.
    """
    _require_no_drift(params, "rank_curve")
    ra, frac = _rank_fraction(params, r, n_c)
    x = quantile_from_survival(params, np.log(frac.ravel()))
    x = np.where(frac.ravel() >= 1.0, params.x0, x)
    return _out(x.reshape(ra.shape), r)


def gamma_scale(sample, params):
    """Apply the Gamma scaling ``x' = x lam/x0``, ``r' = r Gamma(0, lam)/n_c``.

    Model-exact samples of any ``(N, n_c, x0)`` collapse onto
    ``x' = Gamma^-1(0, r')``.
    """
    if params.q != 1.0:
        raise DomainError("the Gamma scaling law holds for q = 1 only")
    _require_no_drift(params, "gamma_scale")
    g0 = specfun.upper_gamma(0.0, params.lam)
    return ScaledSample(
        ranks=sample.ranks * g0 / sample.n_c,
        sizes=sample.sizes * params.lam / params.x0,
        label=sample.label,
    )


def master_curve(r_scaled):
    """``Gamma^-1(0, r')``, the curve all scaled q=1 distributions share."""
    return specfun.inverse_upper_gamma(0.0, r_scaled)


def log_equation_of_state_mean(q, lam, sigma=0.0):
    return (
        specfun.log_upper_gamma(2.0 - q, lam)
        - math.log(lam)
        - specfun.log_upper_gamma(1.0 - q, lam)
        + 0.5 * sigma**2
    )


def equation_of_state_mean(params):
    """Model prediction for ``N / (n_c x0)``:
    ``Gamma(2-q, lam) / (lam Gamma(1-q, lam)) * exp(sigma**2 / 2)``.
    """
    return math.exp(log_equation_of_state_mean(params.q, params.lam, params.sigma))


def solve_lambda(N, n_c, x0, q, sigma=0.0):
    """Multiplier ``lam`` that reproduces ``N / (n_c x0)`` through the equation of state.

    The mean is strictly decreasing in ``lam`` with infimum
    ``exp(sigma**2/2)`` as ``lam -> inf``, so the root is unique.

    Raises
    ------
    InfeasibleError
        The target ratio is at or below the attainable infimum (``x0`` too
        large for the given totals).
    """
    if not (0 < q <= Q_MAX):
        raise DomainError(f"q={q} outside (0, 2]")
    if n_c < 1 or x0 <= 0 or N <= 0:
        raise DomainError("N, n_c and x0 must be positive")
    return solve_lambda_log_ratio(math.log(N) - math.log(n_c) - math.log(x0), q, sigma)


def solve_lambda_log_ratio(log_target, q, sigma=0.0):
    """:func:`solve_lambda` for a given ``log(N / (n_c x0))``."""
    floor = 0.5 * sigma**2
    if log_target <= floor + 1e-13:
        raise InfeasibleError(
            f"N/(n_c x0) = {math.exp(log_target):.6g} is not above the attainable minimum "
            f"{math.exp(floor):.6g}; x0 is too large"
        )

    def g(s):
        return log_equation_of_state_mean(q, math.exp(s), sigma) - log_target

    s_lo, s_hi = -5.0, 5.0
    while g(s_lo) < 0:
        s_lo -= 10.0
        if s_lo < math.log(specfun.Z_MIN) + 20:
            raise InfeasibleError("target ratio requires lam below the supported floor")
    while g(s_hi) > 0:
        s_hi += 5.0
        if s_hi > 60:
            raise InfeasibleError("target ratio too close to the all-minimum limit")
    s = optimize.brentq(g, s_lo, s_hi, xtol=1e-15, rtol=1e-15, maxiter=500)
    return math.exp(s)


# -- drift-convolved distribution, tabulated -------------------------------------

_GL = leggauss(12)


class DriftTable:
    """Survival function of ``v = log(x/x0)`` under drift, on a dense grid.

    The undrifted density is integrated against the Gaussian kernel with a
    composite Gauss-Legendre rule whose panels are narrower than ``sigma``;
    inversion interpolates ``log S(v)`` and polishes the result with two
    Newton steps.
    """

    def __init__(self, params, n_grid=600):
        if params.sigma <= 0:
            raise DomainError("DriftTable needs sigma > 0")
        self.params = params
        sigma = params.sigma
        upper = math.log1p(70.0 / params.lam)
        width = min(sigma, 0.25, max(upper / 24.0, 1e-3))
        panels = max(24, int(math.ceil(upper / width)))
        edges = np.linspace(0.0, upper, panels + 1)
        x, w = _GL
        half = 0.5 * np.diff(edges)
        mid = 0.5 * (edges[1:] + edges[:-1])
        self._u = (mid[:, None] + half[:, None] * x[None, :]).ravel()
        self._w = (half[:, None] * w[None, :]).ravel() * np.exp(_log_density_u(params, self._u))
        self._tail = np.append(np.cumsum(self._w[::-1])[::-1], 0.0)
        self._v = np.linspace(-9.0 * sigma, upper + 9.0 * sigma, n_grid)
        surv = self.survival_v(self._v)
        keep = surv > 1e-300
        self._logS = np.log(surv[keep])
        self._vk = self._v[keep]

    def _window(self, v):
        """Node indices within 9 sigma of each ``v``; the kernel is 0 or 1 beyond."""
        reach = 9.0 * self.params.sigma
        lo = np.searchsorted(self._u, v - reach)
        hi = np.searchsorted(self._u, v + reach, side="right")
        width = int((hi - lo).max(initial=0))
        idx = lo[:, None] + np.arange(max(width, 1))[None, :]
        mask = idx < hi[:, None]
        return np.minimum(idx, self._u.size - 1), mask, hi

    def survival_v(self, v):
        v = np.asarray(v, dtype=float)
        flat = v.ravel()
        s = self.params.sigma
        idx, mask, hi = self._window(flat)
        # P(U + sigma Z > v) = sum_j w_j Phi((u_j - v)/sigma); Phi = 1 above the window
        phi = special.ndtr((self._u[idx] - flat[:, None]) / s)
        out = np.sum(np.where(mask, phi * self._w[idx], 0.0), axis=1) + self._tail[hi]
        return out.reshape(v.shape)

    def density_v(self, v):
        v = np.asarray(v, dtype=float)
        flat = v.ravel()
        s = self.params.sigma
        idx, mask, _ = self._window(flat)
        kern = np.exp(-0.5 * ((flat[:, None] - self._u[idx]) / s) ** 2)
        out = np.sum(np.where(mask, kern * self._w[idx], 0.0), axis=1) / (math.sqrt(2 * math.pi) * s)
        return out.reshape(v.shape)

    def v_from_log_survival(self, log_surv):
        ls = np.asarray(log_surv, dtype=float).ravel()
        # logS decreasing in v: interpolate on the reversed table
        v = np.interp(-ls, -self._logS, self._vk)
        for _ in range(2):
            s = self.survival_v(v)
            f = self.density_v(v)
            with np.errstate(divide="ignore", invalid="ignore"):
                step = (np.log(s) - ls) * s / f
            v = v + np.clip(np.where(np.isfinite(step), step, 0.0), -0.5, 0.5)
        return v


def drift_cumulative(params, x, table=None):
    """Cumulative of the drift-convolved distribution (numerical)."""
    xa = _x_array(x)
    table = table or DriftTable(params)
    v = np.log(xa / params.x0)
    return _out(1.0 - table.survival_v(v), x)


def drift_rank_curve(params, r, n_c=None, table=None):
    """Rank curve of the drift-convolved distribution (numerical inversion)."""
    ra, frac = _rank_fraction(params, r, n_c)
    table = table or DriftTable(params)
    v = table.v_from_log_survival(np.log(frac.ravel()))
    return _out((params.x0 * np.exp(v)).reshape(ra.shape), r)


def model_rank_curve(params, r, n_c=None):
    """Rank curve for either branch: closed form at ``sigma = 0``, tabulated otherwise."""
    if params.sigma == 0:
        return rank_curve(params, r, n_c)
    return drift_rank_curve(params, r, n_c)
