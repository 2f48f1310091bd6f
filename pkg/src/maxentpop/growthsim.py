"""Synthetic census panels from stochastic q-exponential growth.

Each unit follows the forward-Euler recursion

    x <- x + dt * (k1 * x + kq * x**q) + sigma_k * sqrt(x * dt) * xi

with rates ``k1 ~ N(k1_mean, k1_std**2 / dt)`` and
``kq ~ N(kq_mean, kq_std**2 / dt)`` redrawn for every unit and step, so
that the accumulated rate over one year has standard deviation
``k1_std`` (``kq_std``) independently of ``dt``.  Populations are floored at
one person and recorded, rounded to integers, once per year.
"""

from dataclasses import dataclass, asdict
import math

import numpy as np

from .dynamics import PanelRecord
from .errors import DomainError, SimulationBlowUp

INIT_KINDS = ("fixed", "lognormal", "loguniform")
RATE_MODES = ("per_step", "per_unit")


@dataclass(frozen=True)
class SimConfig:
    """Simulation settings.

    ``init`` is ``("fixed", x)``, ``("lognormal", mean_log, sd_log)`` or
    ``("loguniform", lo, hi)``.  ``steps * dt`` must be a whole number of
    years and ``1 / dt`` an integer.  ``rate_mode="per_unit"`` draws the
    rates once per unit (debugging aid) instead of once per step.
    """

    n_units: int = 200
    q: float = 1.0
    k1_mean: float = 0.0
    k1_std: float = 0.0
    kq_mean: float = 0.0
    kq_std: float = 0.0
    finite_size_noise: bool = False
    sigma_k: float = 0.0
    dt: float = 0.1
    steps: int = 100
    init: tuple = ("loguniform", 100.0, 100000.0)
    seed: int = 0
    start_year: int = 2000
    ceiling: float = 1e12
    rate_mode: str = "per_step"
    unit_prefix: str = "u"
    group: str | None = None

    def __post_init__(self):
        if self.n_units < 1:
            raise DomainError("n_units must be >= 1")
        if not self.dt > 0:
            raise DomainError("dt must be positive")
        if self.steps < 1:
            raise DomainError("steps must be >= 1")
        if self.k1_std < 0 or self.kq_std < 0 or self.sigma_k < 0:
            raise DomainError("rate standard deviations must be >= 0")
        if abs(1.0 / self.dt - round(1.0 / self.dt)) > 1e-9:
            raise DomainError("1/dt must be an integer so snapshots fall on whole years")
        if self.steps % self.steps_per_year:
            raise DomainError("steps * dt must be a whole number of years")
        if self.rate_mode not in RATE_MODES:
            raise DomainError(f"rate_mode must be one of {RATE_MODES}")
        kind = self.init[0] if self.init else None
        if kind not in INIT_KINDS:
            raise DomainError(f"init kind must be one of {INIT_KINDS}")
        if kind == "fixed" and (len(self.init) != 2 or self.init[1] < 1):
            raise DomainError("fixed init needs one size >= 1")
        if kind == "lognormal" and (len(self.init) != 3 or self.init[2] < 0):
            raise DomainError("lognormal init needs (mean_log, sd_log >= 0)")
        if kind == "loguniform" and (len(self.init) != 3 or not 1 <= self.init[1] <= self.init[2]):
            raise DomainError("loguniform init needs 1 <= lo <= hi")

    @property
    def steps_per_year(self):
        return int(round(1.0 / self.dt))

    @property
    def years(self):
        return self.steps // self.steps_per_year

    def to_dict(self):
        d = asdict(self)
        d["init"] = list(self.init)
        return d


def _initial(cfg, rng):
    kind = cfg.init[0]
    if kind == "fixed":
        return float(cfg.init[1])
    if kind == "lognormal":
        return max(1.0, math.exp(cfg.init[1] + cfg.init[2] * rng.standard_normal()))
    lo, hi = math.log(cfg.init[1]), math.log(cfg.init[2])
    return math.exp(lo + (hi - lo) * rng.random())


def simulate_sizes(cfg):
    """Annual size trajectories, shape ``(years + 1, n_units)``, before rounding."""
    n, steps, dt = cfg.n_units, cfg.steps, cfg.dt
    x = np.empty(n)
    # per-unit substreams keep unit k's path independent of n_units
    xi = np.empty((steps, n, 3))
    for k, child in enumerate(np.random.SeedSequence(cfg.seed).spawn(n)):
        rng = np.random.default_rng(child)
        x[k] = _initial(cfg, rng)
        xi[:, k, :] = rng.standard_normal((steps, 3))
    if cfg.rate_mode == "per_unit":
        xi[:, :, :2] = xi[0, :, :2]
        rate_scale = 1.0
    else:
        rate_scale = 1.0 / math.sqrt(dt)
    k1 = cfg.k1_mean + cfg.k1_std * rate_scale * xi[:, :, 0]
    kq = cfg.kq_mean + cfg.kq_std * rate_scale * xi[:, :, 1]
    noise = cfg.sigma_k * math.sqrt(dt) * xi[:, :, 2] if cfg.finite_size_noise else None

    spy = cfg.steps_per_year
    out = np.empty((cfg.years + 1, n))
    out[0] = x
    for s in range(steps):
        dx = dt * (k1[s] * x + kq[s] * x**cfg.q)
        if noise is not None:
            dx += noise[s] * np.sqrt(x)
        x = np.maximum(x + dx, 1.0)
        if not np.all(np.isfinite(x)) or x.max() > cfg.ceiling:
            bad = int(np.argmax(np.where(np.isfinite(x), x, np.inf)))
            raise SimulationBlowUp(
                f"population exceeded {cfg.ceiling:g} at step {s + 1}; try a smaller dt",
                {"step": s + 1, "unit": bad, "dt": dt, "ceiling": cfg.ceiling},
            )
        if (s + 1) % spy == 0:
            out[(s + 1) // spy] = x
    return out


def simulate(cfg):
    """Run the ensemble and return annual :class:`PanelRecord` rows.

    Rows are ordered by ``(unit_id, year)``; unit ids are
    ``f"{unit_prefix}{k:05d}"``.  Identical configs give identical panels.
    """
    sizes = simulate_sizes(cfg)
    pops = np.rint(sizes).astype(np.int64)
    records = []
    for k in range(cfg.n_units):
        uid = f"{cfg.unit_prefix}{k:05d}"
        for t in range(sizes.shape[0]):
            records.append(PanelRecord(uid, cfg.start_year + t, int(pops[t, k]), cfg.group))
    return records
