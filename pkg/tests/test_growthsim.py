import math

import numpy as np
import pytest

from maxentpop import growthsim as G
from maxentpop.errors import DomainError, SimulationBlowUp


def deterministic(q, k1, kq, dt, years=10, x0=100.0):
    cfg = G.SimConfig(n_units=1, q=q, k1_mean=k1, kq_mean=kq, dt=dt, steps=int(round(years / dt)),
                      init=("fixed", x0))
    return G.simulate_sizes(cfg)[:, 0]


def test_exponential_growth_within_euler_error():
    k1 = 0.05
    t = np.arange(11)
    exact = 100 * np.exp(k1 * t)
    errs = []
    for dt in (0.1, 0.05):
        x = deterministic(1.0, k1, 0.0, dt)
        errs.append(np.max(np.abs(x - exact) / exact))
    assert errs[0] < 0.01
    # first order: halving dt halves the error
    assert errs[0] / errs[1] == pytest.approx(2.0, rel=0.05)


def test_q_growth_matches_separable_solution():
    # dx/dt = k x^1.5  =>  x(t) = (x0^-0.5 - 0.5 k t)^-2
    k, q, x0 = 0.002, 1.5, 100.0
    t = np.arange(11)
    exact = (x0**-0.5 - 0.5 * k * t) ** -2
    errs = []
    for dt in (0.1, 0.05):
        x = deterministic(q, 0.0, k, dt)
        errs.append(np.max(np.abs(x - exact) / exact))
    assert errs[0] < 0.01
    assert errs[0] / errs[1] == pytest.approx(2.0, rel=0.1)


def test_monotone_without_noise():
    cfg = G.SimConfig(n_units=50, q=1.2, k1_mean=0.01, kq_mean=0.001, dt=0.1, steps=50, seed=1)
    sizes = G.simulate_sizes(cfg)
    assert np.all(np.diff(sizes, axis=0) > 0)


def test_seed_determinism_and_substreams():
    cfg = G.SimConfig(n_units=20, q=1.3, k1_mean=0.0, k1_std=0.03, kq_mean=0.001, kq_std=0.001,
                      finite_size_noise=True, sigma_k=0.5, dt=0.1, steps=30, seed=9)
    assert G.simulate(cfg) == G.simulate(cfg)
    more = G.SimConfig(**{**cfg.to_dict(), "n_units": 25, "init": cfg.init})
    a = G.simulate_sizes(cfg)
    b = G.simulate_sizes(more)
    assert np.array_equal(a, b[:, :20])


def test_records_canonical_and_floored():
    cfg = G.SimConfig(n_units=3, q=1.0, k1_mean=-5.0, dt=0.1, steps=20, init=("fixed", 10.0))
    recs = G.simulate(cfg)
    keys = [(r.unit_id, r.year) for r in recs]
    assert keys == sorted(keys)
    assert min(r.population for r in recs) == 1
    assert {r.year for r in recs} == {2000, 2001, 2002}


def test_annual_rate_spread_independent_of_dt():
    spreads = []
    for dt in (0.1, 0.02):
        cfg = G.SimConfig(n_units=4000, q=1.0, k1_std=0.05, dt=dt, steps=int(round(1 / dt)), init=("fixed", 1000.0), seed=3)
        s = G.simulate_sizes(cfg)
        spreads.append(np.std(np.log(s[1] / s[0])))
    assert spreads[0] == pytest.approx(0.05, rel=0.05)
    assert spreads[1] == pytest.approx(0.05, rel=0.05)


def test_blow_up_is_reported():
    cfg = G.SimConfig(n_units=2, q=1.9, kq_mean=0.5, dt=1.0, steps=50, init=("fixed", 1e4), ceiling=1e9)
    with pytest.raises(SimulationBlowUp) as err:
        G.simulate(cfg)
    assert "smaller dt" in str(err.value)
    assert err.value.diagnostics["dt"] == 1.0


@pytest.mark.parametrize(
    "kwargs",
    [dict(dt=0), dict(steps=0), dict(n_units=0), dict(k1_std=-1), dict(dt=0.3), dict(dt=0.5, steps=3),
     dict(init=("weird", 1)), dict(rate_mode="other")],
)
def test_config_validation(kwargs):
    with pytest.raises(DomainError):
        G.SimConfig(**kwargs)


def test_per_unit_rate_mode():
    cfg = G.SimConfig(n_units=5, q=1.0, k1_std=0.1, dt=0.1, steps=20, init=("fixed", 1000.0), rate_mode="per_unit", seed=1)
    s = G.simulate_sizes(cfg)
    # a constant rate gives a straight line in log-size
    growth = np.diff(np.log(s), axis=0)
    assert np.allclose(growth[0], growth[1], rtol=1e-9)
