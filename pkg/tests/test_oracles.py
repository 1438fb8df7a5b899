import numpy as np
import pytest
from scipy.integrate import quad

from hitparam.coefficients import build_model, lamperti_inverse
from hitparam.kernels import FrozenParams, exit_time_density
from hitparam.oracles import (
    DriftedBMOracle,
    LampertiOracle,
    baseline_bridge_euler,
    baseline_discrete_euler,
    crossing_probability,
    oracle_atom_infinity,
    oracle_for,
    oracle_hit_cdf,
    oracle_hit_density,
    oracle_hit_density_dx,
    oracle_killed_density,
    oracle_killed_density_dx,
    oracle_survival,
    oracle_survival_dx,
)


def shifted(o, h):
    return DriftedBMOracle(o.drift, o.vol, o.barrier, o.start + h)


def test_brownian_hit_density_is_exit_density():
    o = DriftedBMOracle(0.0, 1.0, 1.0, 0.0)
    assert oracle_hit_density(o, 1.0) == pytest.approx(exit_time_density(FrozenParams(1.0, 1.0), 0.0, 1.0), rel=1e-14)
    assert oracle_hit_density(o, 1.0) == pytest.approx(0.24197072, abs=1e-8)


def test_closed_form_values():
    o = DriftedBMOracle(0.5, 1.0, 1.0, 0.0)
    # Phi(-0.5) + e Phi(-1.5) = 0.4901383; 0.490135 rounds the two normal tails first
    assert oracle_hit_cdf(o, 1.0) == pytest.approx(0.4901383, abs=1e-7)
    assert oracle_hit_cdf(o, 1.0) == pytest.approx(0.490135, abs=5e-6)
    assert oracle_hit_density(o, 1.0) == pytest.approx(0.352065, abs=1e-6)
    assert oracle_killed_density(o, 1.0, 0.0) == pytest.approx(0.304419, abs=1e-6)
    assert oracle_survival(o, 1.0) == pytest.approx(1.0 - 0.4901383, abs=1e-7)


def test_atom_at_infinity():
    assert oracle_atom_infinity(DriftedBMOracle(-0.5, 1.0, 1.0, 0.0)) == pytest.approx(0.63212056, abs=1e-8)
    assert oracle_atom_infinity(DriftedBMOracle(0.0, 1.0, 1.0, 0.0)) == 0.0
    assert oracle_atom_infinity(DriftedBMOracle(0.5, 1.0, 1.0, 0.0)) == 0.0
    o = DriftedBMOracle(-0.5, 1.0, 1.0, 0.0)
    assert oracle_survival(o, 1e4) == pytest.approx(0.63212056, abs=1e-8)


@pytest.mark.parametrize("b, vol", [(0.5, 1.0), (-0.5, 1.0), (0.3, 0.7), (0.0, 1.4)])
def test_mixed_law_mass(b, vol):
    o = DriftedBMOracle(b, vol, 1.0, 0.0)
    T = 1.3
    hit, _ = quad(lambda t: oracle_hit_density(o, t), 0.0, T, epsabs=1e-13)
    stay, _ = quad(lambda z: oracle_killed_density(o, T, z), -np.inf, 1.0, epsabs=1e-13, limit=200)
    assert hit == pytest.approx(oracle_hit_cdf(o, T), abs=1e-10)
    assert hit + stay == pytest.approx(1.0, abs=1e-10)


def test_start_derivatives_match_fd():
    o = DriftedBMOracle(0.5, 1.0, 1.0, 0.0)
    h = 1e-5
    fd = lambda f: (f(shifted(o, h)) - f(shifted(o, -h))) / (2 * h)
    assert oracle_survival_dx(o, 1.0) == pytest.approx(fd(lambda p: oracle_survival(p, 1.0)), rel=1e-6)
    assert oracle_killed_density_dx(o, 1.0, -0.4) == pytest.approx(fd(lambda p: oracle_killed_density(p, 1.0, -0.4)), rel=1e-6)
    assert oracle_hit_density_dx(o, 0.6) == pytest.approx(fd(lambda p: oracle_hit_density(p, 0.6)), rel=1e-6)
    # survival falls as the start moves toward the barrier
    assert oracle_survival_dx(DriftedBMOracle(0.0, 1.0, 1.0, 0.0), 1.0) == pytest.approx(-0.48394, abs=1e-5)


def test_invalid_oracles():
    with pytest.raises(ValueError):
        DriftedBMOracle(0.0, 0.0, 1.0, 0.0)
    with pytest.raises(ValueError):
        DriftedBMOracle(0.0, 1.0, 1.0, 1.0)
    with pytest.raises(ValueError):
        oracle_hit_cdf(DriftedBMOracle(0.0, 1.0, 1.0, 0.0), 0.0)


def test_lamperti_oracle():
    o = LampertiOracle(0.5, 0.3, 0.0, -1.0)
    lat = o.latent
    assert lat.barrier == pytest.approx(float(lamperti_inverse(0.0, 0.3)))
    assert o.hit_cdf(1.0) == pytest.approx(oracle_hit_cdf(lat, 1.0))
    stay, _ = quad(lambda z: o.killed_density(1.0, z), -np.inf, 0.0, epsabs=1e-12)
    assert stay == pytest.approx(1.0 - o.hit_cdf(1.0), abs=1e-9)
    assert crossing_probability(o, 1.0) == o.hit_cdf(1.0)


def test_oracle_for():
    m = build_model("ConstantBM", {"drift": 0.5, "sigma": 2.0}, barrier=3.0)
    o = oracle_for(m, 1.0)
    assert (o.drift, o.vol, o.barrier, o.start) == (0.5, 2.0, 3.0, 1.0)
    assert isinstance(oracle_for(build_model("LampertiDriftedBM"), 0.0), LampertiOracle)
    assert oracle_for(build_model("TanhDiffusion"), 0.0) is None


def test_bridge_baseline_exact_for_constant_coefficients():
    m = build_model("ConstantBM", {"drift": 0.0, "sigma": 1.0})
    truth = oracle_hit_cdf(DriftedBMOracle(0.0, 1.0, 1.0, 0.0), 1.0)
    s = baseline_bridge_euler(m, 0.0, 1.0, steps=1, n=200_000)
    assert abs(s.mean - truth) <= 3 * s.std_error


def test_discrete_baseline_one_sided_and_converging():
    m = build_model("ConstantBM", {"drift": 0.5, "sigma": 1.0})
    truth = oracle_hit_cdf(DriftedBMOracle(0.5, 1.0, 1.0, 0.0), 1.0)
    biases = []
    for steps in (8, 64, 512):
        s = baseline_discrete_euler(m, 0.0, 1.0, steps=steps, n=100_000, seed=steps)
        assert s.mean + 3 * s.std_error < truth
        biases.append(truth - s.mean)
    assert biases[0] > biases[1] > biases[2]
    b = baseline_bridge_euler(m, 0.0, 1.0, steps=64, n=100_000, seed=1)
    assert abs(b.mean - truth) <= 3 * b.std_error


def test_baseline_argument_errors():
    m = build_model("ConstantBM")
    with pytest.raises(ValueError):
        baseline_discrete_euler(m, 0.0, 1.0, steps=0)
    with pytest.raises(ValueError):
        baseline_bridge_euler(m, 0.0, -1.0, steps=4)
