"""Random draws from the equilibrium model and Monte Carlo rank bands."""

from dataclasses import dataclass
import math

import numpy as np

from . import model
from .errors import DomainError

DEFAULT_REPLICAS = 10_000
DEFAULT_LEVEL = 0.90
MIN_REPLICAS = 1000


@dataclass(frozen=True)
class ConfidenceBand:
    """Per-rank envelope of simulated rank distributions.

    ``lower[i]`` and ``upper[i]`` bound the size at middle-point rank
    ``i + 1/2``; ``median`` is kept for diagnostics.
    """

    n_c: int
    level: float
    lower: np.ndarray
    upper: np.ndarray
    median: np.ndarray
    replicas: int
    seed: int

    def __post_init__(self):
        if not (0 < self.level < 1):
            raise DomainError("level must lie in (0, 1)")
        if np.any(self.lower > self.upper):
            raise DomainError("band lower bound above upper bound")

    @property
    def ranks(self):
        return np.arange(self.n_c) + 0.5

    def contains(self, sizes):
        """Boolean mask of ranked ``sizes`` lying inside the band (inclusive)."""
        sizes = np.asarray(sizes, dtype=float)
        return (sizes >= self.lower) & (sizes <= self.upper)


def _draw(params, n, rng):
    # survival probabilities in (0, 1]; 1 - U avoids log(0)
    surv = 1.0 - rng.random(n)
    # the closed-form quantile ignores sigma; drift is applied below
    x = model.quantile_from_survival(params, np.log(surv))
    if params.sigma > 0:
        x = x * np.exp(params.sigma * rng.standard_normal(n))
    return x


def sample(params, n, seed):
    """Draw ``n`` independent sizes by inverse transform sampling.

    With ``sigma > 0`` each undrifted draw is multiplied by
    ``exp(sigma * Z)``, ``Z`` standard normal, which samples the log-normal
    convolution exactly.
    """
    n = int(n)
    if n < 1:
        raise DomainError("n must be >= 1")
    return _draw(params, n, np.random.default_rng(seed))


def replica_matrix(params, n_c, replicas, seed):
    """``replicas x n_c`` matrix of descending-sorted synthetic rank lists.

    Each replica draws from its own substream of ``SeedSequence(seed)``, so
    row ``k`` does not depend on how many replicas are requested.
    """
    children = np.random.SeedSequence(seed).spawn(replicas)
    surv = np.empty((replicas, n_c))
    normals = np.empty((replicas, n_c)) if params.sigma > 0 else None
    for k, child in enumerate(children):
        rng = np.random.default_rng(child)
        surv[k] = 1.0 - rng.random(n_c)
        if normals is not None:
            normals[k] = rng.standard_normal(n_c)
    x = model.quantile_from_survival(params, np.log(surv.ravel())).reshape(surv.shape)
    if normals is not None:
        x = x * np.exp(params.sigma * normals)
    return -np.sort(-x, axis=1)


def confidence_band(params, n_c, replicas=DEFAULT_REPLICAS, level=DEFAULT_LEVEL, seed=0):
    """Monte Carlo band for the rank distribution of ``n_c`` units.

    Draw ``n_c`` values, sort them in descending order, repeat ``replicas``
    times and take per-rank empirical quantiles at ``(1 +- level)/2``
    (linear interpolation between order statistics).
    """
    n_c = int(n_c)
    replicas = int(replicas)
    if n_c < 1:
        raise DomainError("n_c must be >= 1")
    if not (0 < level < 1):
        raise DomainError("level must lie in (0, 1)")
    if replicas < MIN_REPLICAS:
        raise DomainError(f"need at least {MIN_REPLICAS} replicas, got {replicas}")
    mat = replica_matrix(params, n_c, replicas, seed)
    lo_q = (1.0 - level) / 2.0
    lower, median, upper = np.quantile(mat, [lo_q, 0.5, 1.0 - lo_q], axis=0, method="linear")
    return ConfidenceBand(
        n_c=n_c,
        level=float(level),
        lower=lower,
        upper=upper,
        median=median,
        replicas=replicas,
        seed=int(seed),
    )


def coverage(band, rank_lists):
    """Fraction of ``rank_lists`` (rows, descending) inside the band at each rank."""
    rank_lists = np.atleast_2d(np.asarray(rank_lists, dtype=float))
    if rank_lists.shape[1] != band.n_c:
        raise DomainError("rank lists must have n_c columns")
    inside = (rank_lists >= band.lower) & (rank_lists <= band.upper)
    return inside.mean(axis=0)


def standard_error_of_mean(x):
    x = np.asarray(x, dtype=float)
    return float(np.std(x, ddof=1) / math.sqrt(x.size))
