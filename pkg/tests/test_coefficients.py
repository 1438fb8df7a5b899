import numpy as np
import pytest

from hitparam.coefficients import (
    BUILTIN_MODELS,
    CoefficientSet,
    EllipticityError,
    ModelError,
    build_model,
    lamperti_inverse,
    lamperti_transform,
    validate,
)


def test_constant_bm_passes():
    report = validate(build_model("ConstantBM", {"drift": 0.5, "sigma": 1.0}))
    assert report.passed
    assert report.a_min == report.a_max == 1.0
    assert report.sup_abs_drift == 0.5


def test_tanh_diffusion_range():
    m = build_model("TanhDiffusion", {"amplitude": 0.5})
    assert (m.ellipticity_lower, m.ellipticity_upper) == (0.5, 1.5)
    report = validate(m, span=2.0, points=20001)
    assert report.passed
    assert 0.5 <= report.a_min < 0.51 and report.a_max <= 1.5


def test_degenerate_volatility_rejected_with_location():
    m = CoefficientSet(drift=lambda x: 0 * x, diffusion=lambda x: x, ellipticity_lower=0.1,
                       ellipticity_upper=4.0, barrier=1.0, regularity_class="H2")
    with pytest.raises(EllipticityError) as info:
        validate(m)
    assert info.value.x <= 1.0


def test_h1_requires_derivatives():
    with pytest.raises(ModelError):
        CoefficientSet(drift=lambda x: 0 * x, diffusion=lambda x: 1 + 0 * x, ellipticity_lower=1.0,
                       ellipticity_upper=1.0, barrier=1.0, regularity_class="H1")


def test_bad_class_and_bounds_rejected():
    with pytest.raises(ModelError):
        CoefficientSet(lambda x: x, lambda x: x, 1.0, 1.0, 1.0, regularity_class="H3")
    with pytest.raises(ModelError):
        CoefficientSet(lambda x: x, lambda x: x, 2.0, 1.0, 1.0, regularity_class="H2")


def test_unknown_tag():
    with pytest.raises(ModelError):
        build_model("Nope")


@pytest.mark.parametrize("tag", [t for t in BUILTIN_MODELS if t != "StepDrift"])
def test_declared_derivatives_match_fd(tag):
    report = validate(build_model(tag), span=1.0)
    assert report.passed, report.messages
    assert max(report.derivative_errors.values()) < 1e-4


def test_wrong_derivative_is_reported():
    m = build_model("TanhDiffusion", {"amplitude": 0.5})
    bad = CoefficientSet(drift=m.drift, diffusion=m.diffusion, ellipticity_lower=0.5, ellipticity_upper=1.5,
                         barrier=1.0, regularity_class="H1", drift_deriv=m.drift_deriv,
                         diff_sq_deriv=lambda x: 0 * x, diff_sq_deriv2=m.diff_sq_deriv2)
    report = validate(bad)
    assert not report.passed
    assert any("diff_sq_deriv" in msg for msg in report.messages)


def test_step_drift_is_h2_with_discontinuous_drift():
    m = build_model("StepDrift", {"level": 0.5, "jump_at": 0.2})
    assert m.regularity_class == "H2"
    assert m.b(np.array([0.1, 0.3])).tolist() == [-0.5, 0.5]
    assert validate(m).passed


def test_values_bundle_matches_individual_functions():
    m = build_model("LampertiDriftedBM", {"drift": 0.5, "strength": 0.3})
    x = np.linspace(-3, 1, 101)
    v = m.values(x)
    np.testing.assert_allclose(v.drift, m.b(x), rtol=1e-14)
    np.testing.assert_allclose(v.variance, m.a(x), rtol=1e-14)
    np.testing.assert_allclose(v.variance, m.diffusion(x) ** 2, rtol=1e-12)


def test_lamperti_inverse_roundtrip():
    y = np.linspace(-20, 20, 4001)
    x = lamperti_transform(y, 0.7)
    np.testing.assert_allclose(lamperti_inverse(x, 0.7), y, atol=1e-12)


def test_holder_exponent_override():
    m = build_model("StepDrift", holder_exponent=0.5)
    assert m.holder_exponent == 0.5
    with pytest.raises(ModelError):
        build_model("StepDrift", holder_exponent=1.5)
