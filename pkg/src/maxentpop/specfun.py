"""Upper incomplete Gamma function for real parameters, its inverse in the
second argument, logarithmic moments of the equilibrium density and the
Bessel-number triangle.

All evaluators accept a scalar first argument ``a`` and either a scalar or
an array second argument.  Scalars in give Python floats out.

Evaluation strategy for ``Gamma(a, z)``:

* ``z`` above a switch point: Legendre continued fraction (modified Lentz),
  valid for every real ``a`` and evaluated directly in log space.
* ``z`` below it and ``|a| <= 1/2``: the power series written as
  ``(Gamma(1+a) - 1)/a - (z**a - 1)/a - z**a * sum_{k>=1} (-z)**k/(k!(a+k))``,
  where both ratios are computed without cancellation as ``a -> 0``.
* ``z`` below it and ``a > 1/2``: ``Gamma(a) - gamma(a, z)``.
* ``z`` below it and ``a < -1/2``: one downward recurrence step from ``a+1``.
"""

import math

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy import integrate, special

from .errors import ConvergenceError, DomainError

A_MIN = -1.5
A_MAX = 2.0
Z_MIN = 1e-150  # bracketing floor of the inverse; z**A_MIN stays finite
EULER_GAMMA = 0.57721566490153286061

_CF_TOL = 4e-16
_CF_MAXITER = 5000
_SERIES_MAXITER = 500
_TINY = 1e-300

_GL16 = leggauss(16)


def _check_a(a):
    a = float(a)
    if not (A_MIN <= a <= A_MAX):
        raise DomainError(f"a={a!r} outside supported range [{A_MIN}, {A_MAX}]")
    return a


def _as_positive(z, name="z"):
    arr = np.asarray(z, dtype=float)
    if np.any(~np.isfinite(arr)) or np.any(arr <= 0):
        raise DomainError(f"{name} must be finite and > 0")
    return arr


def _switch_point(a):
    return max(1.5, a + 1.0)


def _gamma1pm1_over_a(a):
    """(Gamma(1+a) - 1)/a for |a| <= 1/2, accurate through a = 0."""
    # lgamma(1+a)/a = -gamma + sum_{k>=2} (-1)^k zeta(k) a^(k-1) / k
    s = -EULER_GAMMA
    for k in range(2, 120):
        term = (-1) ** k * special.zeta(k) * a ** (k - 1) / k
        s += term
        if abs(term) < 1e-18:
            break
    return s * special.exprel(a * s)


def _log_cf(a, z):
    """log Gamma(a, z) by the Legendre continued fraction, vectorised in z."""
    out = np.empty_like(z)
    idx = np.arange(z.size)
    b = z + 1.0 - a
    c = np.full_like(z, 1.0 / _TINY)
    d = 1.0 / b
    h = d.copy()
    for i in range(1, _CF_MAXITER):
        an = -i * (i - a)
        b = b + 2.0
        d = an * d + b
        d = np.where(np.abs(d) < _TINY, _TINY, d)
        c = b + an / c
        c = np.where(np.abs(c) < _TINY, _TINY, c)
        d = 1.0 / d
        delta = d * c
        h = h * delta
        done = np.abs(delta - 1.0) < _CF_TOL
        if done.any():
            out[idx[done]] = np.log(h[done])
            keep = ~done
            idx, b, c, d, h = idx[keep], b[keep], c[keep], d[keep], h[keep]
            if idx.size == 0:
                break
    else:
        raise ConvergenceError(
            "continued fraction for Gamma(a, z) did not converge",
            {"a": a, "unconverged": int(idx.size)},
        )
    return a * np.log(z) - z + out


def _series_small_a(a, z):
    """Gamma(a, z) for |a| <= 1/2 and moderate z (see module docstring)."""
    lz = np.log(z)
    first = _gamma1pm1_over_a(a) - lz * special.exprel(a * lz)
    acc = np.zeros_like(z)
    term = np.ones_like(z)
    for k in range(1, _SERIES_MAXITER):
        term = term * (-z) / k
        contrib = term / (a + k)
        acc += contrib
        if np.all(np.abs(contrib) <= 1e-17 * np.maximum(np.abs(acc), 1e-300)):
            break
    else:
        raise ConvergenceError("incomplete Gamma series did not converge", {"a": a})
    return first - np.exp(a * lz) * acc


def _series_lower(a, z):
    """Gamma(a) - gamma(a, z) for a > 1/2 and z below the switch point."""
    term = np.full_like(z, 1.0 / a)
    acc = term.copy()
    for k in range(1, _SERIES_MAXITER):
        term = term * z / (a + k)
        acc += term
        if np.all(term <= 1e-17 * acc):
            break
    else:
        raise ConvergenceError("lower incomplete Gamma series did not converge", {"a": a})
    return math.gamma(a) - np.exp(a * np.log(z) - z) * acc


def _series_value(a, z):
    if a > 0.5:
        return _series_lower(a, z)
    if a >= -0.5:
        return _series_small_a(a, z)
    # one downward step: a*Gamma(a,z) = Gamma(a+1,z) - z^a e^{-z}
    return (_series_small_a(a + 1.0, z) - np.exp(a * np.log(z) - z)) / a


def _log_upper_gamma(a, z):
    """Unchecked log Gamma(a, z) for a validated scalar ``a`` and array ``z``."""
    z = np.atleast_1d(z)
    out = np.empty_like(z)
    small = z < _switch_point(a)
    if small.any():
        val = _series_value(a, z[small])
        if np.any(~(val > 0)):
            raise ConvergenceError(
                "incomplete Gamma series lost all significance", {"a": a}
            )
        out[small] = np.log(val)
    if (~small).any():
        out[~small] = _log_cf(a, z[~small])
    return out


def _unwrap(arr, scalar):
    return float(arr[0]) if scalar else arr


def log_upper_gamma(a, z):
    """Natural logarithm of the upper incomplete Gamma function.

    Stays finite where ``Gamma(a, z)`` itself underflows (large ``z``), which
    is what ratio computations in the model rely on.
    """
    a = _check_a(a)
    arr = _as_positive(z)
    return _unwrap(_log_upper_gamma(a, arr.ravel()).reshape(arr.shape or (1,)), arr.ndim == 0)


def upper_gamma(a, z):
    """Upper incomplete Gamma function ``Gamma(a, z) = int_z^inf t^(a-1) e^-t dt``.

    Parameters
    ----------
    a : float
        First argument, within ``[A_MIN, A_MAX]``.
    z : float or array_like
        Second argument, strictly positive.

    Returns
    -------
    float or ndarray
        Same shape as ``z``.

    Raises
    ------
    DomainError
        If ``z <= 0`` or ``a`` is outside the supported range.
    """
    a = _check_a(a)
    arr = _as_positive(z)
    vals = np.exp(_log_upper_gamma(a, arr.ravel())).reshape(arr.shape or (1,))
    return _unwrap(vals, arr.ndim == 0)


# -- inversion ---------------------------------------------------------------


def _inverse_log(a, log_y, z_floor=Z_MIN):
    """Solve log Gamma(a, z) = log_y for z; vectorised safeguarded Newton in log z."""
    log_y = np.atleast_1d(np.asarray(log_y, dtype=float))
    if np.any(~np.isfinite(log_y)):
        raise DomainError("target values must be finite and positive")
    s_lo = math.log(max(z_floor, Z_MIN))
    f_lo = float(_log_upper_gamma(a, np.array([math.exp(s_lo)]))[0])
    ceiling_tol = 1e-13 * max(1.0, abs(f_lo))
    if np.any(log_y > f_lo + ceiling_tol):
        raise DomainError(
            f"target exceeds Gamma({a}, {math.exp(s_lo):.3g}); not attainable above the bracketing floor"
        )
    y_min = float(log_y.min())
    z_hi = max(2.0, math.exp(s_lo) * 2.0, -y_min + 2.0 * (abs(a) + 1.0))
    for _ in range(200):
        if _log_upper_gamma(a, np.array([z_hi]))[0] < y_min:
            break
        z_hi *= 2.0
    else:
        raise ConvergenceError("could not bracket inverse incomplete Gamma", {"a": a})

    s_hi = math.log(z_hi)
    s_mid = math.log(0.5)
    if s_lo < s_mid < s_hi:
        grid = np.concatenate(
            [np.linspace(s_lo, s_mid, 120, endpoint=False), np.log(np.linspace(0.5, z_hi, 200))]
        )
    else:
        grid = np.log(np.linspace(math.exp(s_lo), z_hi, 240))
    table = _log_upper_gamma(a, np.exp(grid))
    table[0] = f_lo

    n = log_y.size
    result = np.empty(n)
    at_floor = log_y >= f_lo
    result[at_floor] = math.exp(s_lo)

    todo = np.flatnonzero(~at_floor)
    if todo.size == 0:
        return result
    ty = log_y[todo]
    j = np.clip(np.searchsorted(-table, -ty, side="left"), 1, grid.size - 1)
    lo, hi = grid[j - 1], grid[j]
    flo, fhi = table[j - 1], table[j]
    span = flo - fhi
    w = np.where(span > 0, (flo - ty) / np.where(span > 0, span, 1.0), 0.5)
    s = lo + np.clip(w, 0.0, 1.0) * (hi - lo)

    idx = np.arange(todo.size)
    for _ in range(200):
        g = _log_upper_gamma(a, np.exp(s))
        f = g - ty
        lo = np.where(f > 0, s, lo)
        hi = np.where(f < 0, s, hi)
        slope = -np.exp(a * s - np.exp(s) - g)
        with np.errstate(divide="ignore", invalid="ignore"):
            s_new = s - f / slope
        bad = ~np.isfinite(s_new) | (s_new <= lo) | (s_new >= hi)
        s_new = np.where(bad, 0.5 * (lo + hi), s_new)
        # a residual at rounding level cannot steer Newton any further
        at_noise = np.abs(f) <= 8 * np.finfo(float).eps * np.maximum(1.0, np.abs(ty))
        done = (np.abs(s_new - s) <= 1e-14 * np.maximum(1.0, np.abs(s))) | at_noise
        done |= (hi - lo) <= 1e-15 * np.maximum(1.0, np.abs(s))
        s = np.where(at_noise, s, s_new)
        if done.any():
            result[todo[idx[done]]] = np.exp(s[done])
            keep = ~done
            idx, s, lo, hi, ty = idx[keep], s[keep], lo[keep], hi[keep], ty[keep]
            if idx.size == 0:
                return result
    raise ConvergenceError(
        "inverse incomplete Gamma did not converge", {"a": a, "unconverged": int(idx.size)}
    )


def inverse_upper_gamma(a, y):
    """Return ``z`` with ``Gamma(a, z) = y``.

    Raises
    ------
    DomainError
        ``y`` not in ``(0, Gamma(a, Z_MIN))``.
    ConvergenceError
        The bracketed Newton iteration failed; never returns a wrong value.
    """
    a = _check_a(a)
    arr = _as_positive(y, "y")
    z = _inverse_log(a, np.log(arr.ravel())).reshape(arr.shape or (1,))
    return _unwrap(z, arr.ndim == 0)


def inverse_log_upper_gamma(a, log_y, z_floor=Z_MIN):
    """Inverse of :func:`log_upper_gamma`; ``z_floor`` narrows the bracket."""
    a = _check_a(a)
    arr = np.asarray(log_y, dtype=float)
    z = _inverse_log(a, arr.ravel(), z_floor).reshape(arr.shape or (1,))
    return _unwrap(z, arr.ndim == 0)


# -- logarithmic moments -----------------------------------------------------

MAX_MOMENT = 4


def _check_moment_args(n, q, lam):
    if not (0 < q <= 2):
        raise DomainError(f"q={q!r} outside (0, 2]")
    if not (lam > 0) or not math.isfinite(lam):
        raise DomainError(f"lambda={lam!r} must be positive and finite")
    if n is not None and not (0 <= n <= MAX_MOMENT):
        raise DomainError(f"moment order n={n!r} outside [0, {MAX_MOMENT}]")


def _moment_cutoff(lam):
    # integrand ~ exp(-lam e^u); beyond log1p(70/lam) it is below e^-70
    return math.log1p(70.0 / lam)


def _log_weight(q, lam):
    def logw(u):
        return (1.0 - q) * (u + math.log(lam)) - lam * np.exp(u)

    return logw, float(_log_upper_gamma(1.0 - q, np.array([lam]))[0])


def log_moment(n, q, lam, epsrel=1e-12):
    """Logarithmic moment ``<[log(x/x0)]^n>`` of the q-density.

    Computed as ``int_1^inf (ln t)^n e^(-lam t) t^(-q) dt / (lam^(q-1) Gamma(1-q, lam))``
    after the change of variable ``t = e^u``, using adaptive quadrature.

    Raises
    ------
    ConvergenceError
        If the adaptive rule reports failure.
    """
    n = int(n)
    q = float(q)
    lam = float(lam)
    _check_moment_args(n, q, lam)
    logw, log_norm = _log_weight(q, lam)
    upper = _moment_cutoff(lam)
    points = [math.log(1.0 / lam)] if 0 < math.log(1.0 / lam) < upper else None

    def f(u):
        return u**n * math.exp(logw(u) - log_norm)

    res = integrate.quad(
        f, 0.0, upper, epsabs=0.0, epsrel=epsrel, limit=400, points=points, full_output=1
    )
    val, err = res[0], res[1]
    if len(res) > 3 or err > 1e3 * epsrel * max(abs(val), 1e-300):
        raise ConvergenceError(
            "log-moment quadrature did not converge",
            {"n": n, "q": q, "lambda": lam, "estimate": val, "error": err},
        )
    return val


def log_moments(q, lam, nmax=MAX_MOMENT):
    """Vector ``[M_0, ..., M_nmax]`` from a fixed composite Gauss-Legendre rule.

    Fast path used inside the moment estimators; agrees with
    :func:`log_moment` to about 1e-12.
    """
    q = float(q)
    lam = float(lam)
    _check_moment_args(None, q, lam)
    logw, log_norm = _log_weight(q, lam)
    upper = _moment_cutoff(lam)
    panels = max(24, int(math.ceil(upper / 0.4)))
    edges = np.linspace(0.0, upper, panels + 1)
    x, w = _GL16
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[1:] + edges[:-1])
    u = (mid[:, None] + half[:, None] * x[None, :]).ravel()
    wt = (half[:, None] * w[None, :]).ravel() * np.exp(logw(u) - log_norm)
    powers = u[None, :] ** np.arange(nmax + 1)[:, None]
    return powers @ wt


def bessel_triangle(n, i):
    """Bessel-number triangle entry ``n! / (i! 2^i (n-2i)!)``."""
    n = int(n)
    i = int(i)
    if n < 0 or i < 0 or 2 * i > n:
        raise DomainError(f"need 0 <= 2i <= n, got n={n}, i={i}")
    return math.factorial(n) // (math.factorial(i) * 2**i * math.factorial(n - 2 * i))
