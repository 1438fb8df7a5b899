import numpy as np
import pytest

from conftest import within
from hitparam.coefficients import ModelError
from hitparam.estimator_forward import (
    estimate_atom,
    estimate_density_D,
    estimate_density_K,
    estimate_functional,
    estimate_ibp,
)
from hitparam.oracles import DriftedBMOracle, oracle_hit_cdf, oracle_hit_density, oracle_killed_density
from hitparam.payoffs import indicator_at, indicator_before, polynomial, unit

N = 100_000


def test_total_mass(tanh_model):
    assert within(estimate_functional(tanh_model, unit(), 0.0, 1.0, n=N), 1.0)


def test_crossing_probability_brownian(bm):
    s = estimate_functional(bm, indicator_before(1.0), 0.0, 1.0, n=N)
    assert within(s, 0.31731, 3.0)
    # constant coefficients without drift: nothing beyond order 0 contributes
    assert s.order_means[1] == 0.0 and s.order_means[2] == 0.0


def test_crossing_probability_drifted(drifted_bm):
    s = estimate_functional(drifted_bm, indicator_before(1.0), 0.0, 1.0, n=N)
    assert within(s, oracle_hit_cdf(DriftedBMOracle(0.5, 1.0, 1.0, 0.0), 1.0))
    assert within(s, 0.490135)


def test_hitting_density(bm, drifted_bm):
    assert within(estimate_density_K(bm, 0.0, 1.0, 1.0, n=N), 0.24197)
    assert within(estimate_density_K(drifted_bm, 0.0, 1.0, 1.0, n=N), 0.352065)


def test_hitting_density_curve_matches_oracle(drifted_bm):
    t = np.array([0.2, 0.5, 0.8])
    res = estimate_density_K(drifted_bm, 0.0, t, 1.0, n=N, full_result=True)
    truth = oracle_hit_density(DriftedBMOracle(0.5, 1.0, 1.0, 0.0), t)
    for s, v in zip(res.summaries, truth):
        assert within(s, v, 3.5)


def test_killed_density(bm, drifted_bm):
    assert within(estimate_density_D(bm, 0.0, 0.0, 1.0, n=N), 0.34495)
    assert within(estimate_density_D(drifted_bm, 0.0, 0.0, 1.0, n=N), 0.304419)
    near = estimate_density_D(drifted_bm, 0.0, 1.0 - 1e-9, 1.0, n=10_000)
    assert abs(near.mean) < 1e-7


def test_start_on_barrier_is_exact(drifted_bm):
    s = estimate_functional(drifted_bm, indicator_before(1.0), 1.0, 1.0, n=10)
    assert (s.mean, s.std_error) == (1.0, 0.0)
    assert estimate_density_K(drifted_bm, 1.0, 0.5, 1.0, n=10).mean == 0.0
    assert estimate_density_D(drifted_bm, 1.0, 0.0, 1.0, n=10).mean == 0.0


def test_hitting_density_vanishes_near_barrier(drifted_bm):
    s = estimate_density_K(drifted_bm, 1.0 - 1e-6, 0.5, 1.0, n=20_000)
    assert abs(s.mean) < 1e-4


def test_atom_is_survival(drifted_bm):
    s = estimate_atom(drifted_bm, 0.0, 1.0, n=N)
    assert within(s, 1.0 - 0.490135)


def test_ibp_unit_payoff_is_zero(tanh_model):
    s = estimate_ibp(tanh_model, lambda x: np.ones_like(x), 0.0, 1.0, n=N)
    assert within(s, 0.0)


def test_ibp_matches_direct_derivative_payoff(tanh_model):
    h = polynomial([0.0, 0.0, 1.0])
    ibp = estimate_ibp(tanh_model, lambda x: h(1.0, x), 0.0, 1.0, n=2 * N, seed=1)
    direct = estimate_functional(tanh_model, polynomial([0.0, 2.0], only_at_T=1.0), 0.0, 1.0, n=2 * N, seed=2)
    assert abs(ibp.mean - direct.mean) <= 3 * np.hypot(ibp.std_error, direct.std_error)


def test_invalid_arguments(drifted_bm, step_model):
    with pytest.raises(ValueError):
        estimate_functional(drifted_bm, unit(), 0.0, 1.0, intensity=0.0, n=10)
    with pytest.raises(ValueError):
        estimate_density_K(drifted_bm, 0.0, 1.5, 1.0, n=10)
    with pytest.raises(ModelError):
        estimate_functional(step_model, unit(), 0.0, 1.0, n=10)


def test_same_seed_same_result(tanh_model):
    a = estimate_functional(tanh_model, indicator_at(1.0), 0.0, 1.0, n=20_000, seed=3)
    b = estimate_functional(tanh_model, indicator_at(1.0), 0.0, 1.0, n=20_000, seed=3, workers=3)
    c = estimate_functional(tanh_model, indicator_at(1.0), 0.0, 1.0, n=20_000, seed=4)
    assert a.mean == b.mean and a.std_error == b.std_error
    assert a.mean != c.mean


def test_without_antithetic_still_unbiased(drifted_bm):
    s = estimate_density_D(drifted_bm, 0.0, 0.0, 1.0, n=N, antithetic=False)
    assert within(s, 0.304419)
