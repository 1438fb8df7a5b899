import numpy as np
import pytest

from hitparam.coefficients import build_model
from hitparam.kernels import FrozenParams, KernelDomainError, bridge_survival, killed_density, killed_density_dz, killed_density_dzz
from hitparam.weights_forward import (
    ForwardWeightContext,
    boundary_correction_ratio,
    boundary_kernel_K,
    mu1,
    mu1_survival,
    mu2,
    theta,
    theta_bar,
)
from hitparam.coefficients import ModelError

E2M1 = np.expm1(2.0)


def test_mu1_value():
    assert mu1(1.0, 0.0, 0.0, 1.0, 1.0) == pytest.approx(-2.0 / E2M1, rel=1e-12)
    assert mu1(1.0, 0.0, 0.0, 1.0, 1.0) == pytest.approx(-0.31303529, abs=1e-8)


def test_mu1_far_from_barrier_is_hermite():
    assert mu1(1.0, 0.0, 0.0, 1.0, 200.0) == pytest.approx(0.0, abs=1e-300)


def test_mu1_survival_limit_at_barrier():
    # -2 (L - x) / (a t): the density falls to 0 at the barrier
    assert mu1_survival(1.0, 0.0, 1.0 - 1e-6, 1.0, 1.0) == pytest.approx(-2.0, rel=1e-5)
    assert mu1_survival(1.0, 0.0, 1.0, 1.0, 1.0) == 0.0


def test_mu2_values():
    assert mu2(1.0, 0.0, 0.0, 1.0, 1.0) == pytest.approx(-1.0 - 4.0 / E2M1, rel=1e-12)
    assert mu2(1.0, 0.0, 0.0, 1.0, 1.0) == pytest.approx(-1.62607058, abs=1e-8)
    assert mu2(2.0, 0.0, 0.0, 1.5, 500.0) == pytest.approx(-1.0 / 3.0, rel=1e-12)
    assert mu2(1.0, 0.0, 0.7, 1.0, 500.0) == pytest.approx(mu2(1.0, 0.0, -0.7, 1.0, 500.0), rel=1e-12)


def test_raw_weights_reject_barrier():
    with pytest.raises(KernelDomainError):
        mu1(1.0, 0.0, 1.0, 1.0, 1.0)


def test_mu_identities_on_grid():
    p = FrozenParams(1.3, 1.0)
    z = np.linspace(-3.0, 0.98, 1000)
    q = killed_density(p, 0.7, 0.1, z)
    np.testing.assert_allclose(mu1(0.7, 0.1, z, 1.3, 1.0) * q, killed_density_dz(p, 0.7, 0.1, z), rtol=1e-8, atol=1e-14)
    np.testing.assert_allclose(mu2(0.7, 0.1, z, 1.3, 1.0) * q, killed_density_dzz(p, 0.7, 0.1, z), rtol=1e-8, atol=1e-14)


def test_theta_constant_bm():
    ctx0 = ForwardWeightContext(build_model("ConstantBM", {"drift": 0.0}))
    z = np.linspace(-3, 0.99, 50)
    assert np.all(theta(0.5, 0.0, z, ctx0) == 0.0)
    assert np.all(theta_bar(0.5, 0.0, z, ctx0) == 0.0)
    ctx = ForwardWeightContext(build_model("ConstantBM", {"drift": 0.5}))
    assert theta(1.0, 0.0, 0.0, ctx) == pytest.approx(0.15651765, abs=1e-8)
    assert theta_bar(1.0, 0.0, 0.0, ctx) == pytest.approx(0.15651765 * 0.86466472, abs=1e-8)
    assert theta_bar(1.0, 0.0, 0.0, ctx) == pytest.approx(np.exp(-2.0), rel=1e-12)
    assert theta_bar(1.0, 0.0, np.array([1.0, 1.5]), ctx).tolist() == [0.0, 0.0]
    assert theta_bar(1.0, 1.0, 0.0, ctx) == 0.0


def test_theta_times_q_equals_difference_kernel():
    m = build_model("SmoothBoundedDrift", {"amplitude": 0.4, "frequency": 1.3}, barrier=1.0)
    m2 = build_model("TanhDiffusion", {"amplitude": 0.5, "drift": 0.3}, barrier=1.0)
    for model in (m, m2):
        ctx = ForwardWeightContext(model)
        t, x = 0.6, 0.1
        z = np.linspace(-3.0, 0.97, 1000)
        p = FrozenParams(float(model.a(x)), 1.0)
        h = 1e-4

        def diff(y):
            return 0.5 * (model.a(y) - model.a(x)) * killed_density(p, t, x, y)

        def flux(y):
            return model.b(y) * killed_density(p, t, x, y)

        second = (diff(z + h) - 2 * diff(z) + diff(z - h)) / h ** 2
        first = (flux(z + h) - flux(z - h)) / (2 * h)
        kernel = second - first
        lhs = theta(t, x, z, ctx) * killed_density(p, t, x, z)
        np.testing.assert_allclose(lhs, kernel, rtol=1e-6, atol=1e-7)


def test_theta_bar_continuous_to_barrier():
    ctx = ForwardWeightContext(build_model("TanhDiffusion", {"amplitude": 0.5, "drift": 0.3}))
    z = 1.0 - np.logspace(-2, -10, 9)
    vals = theta_bar(0.5, 0.2, z, ctx)
    assert np.all(np.isfinite(vals))
    assert abs(vals[-1] - vals[-2]) < 1e-6


def test_boundary_kernel():
    ctx = ForwardWeightContext(build_model("TanhDiffusion", {"amplitude": 0.5}))
    assert boundary_correction_ratio(0.0, ctx) == pytest.approx(0.5 * np.tanh(1.0), rel=1e-12)
    assert boundary_kernel_K(1.0, 0.0, ctx) == pytest.approx(0.38079708 * 0.24197072, abs=1e-8)
    assert boundary_kernel_K(1.0, 1.0, ctx) == 0.0
    flat = ForwardWeightContext(build_model("ConstantBM", {"drift": 0.5, "sigma": 1.3}))
    assert boundary_kernel_K(1.0, np.linspace(-2, 0.9, 20), flat).tolist() == [0.0] * 20
    assert boundary_correction_ratio(0.3, flat) == 0.0


def test_forward_context_needs_h1():
    with pytest.raises(ModelError):
        ForwardWeightContext(build_model("StepDrift"))


def test_bridge_factor_consistency():
    ctx = ForwardWeightContext(build_model("ConstantBM", {"drift": 0.5}))
    lam = bridge_survival(FrozenParams(1.0, 1.0), 1.0, 0.0, 0.0)
    assert theta_bar(1.0, 0.0, 0.0, ctx) == pytest.approx(theta(1.0, 0.0, 0.0, ctx) * lam, rel=1e-12)
