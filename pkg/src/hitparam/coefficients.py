"""SDE coefficient models dX = b(X) dt + sigma(X) dW and their validation.

A model is immutable once built.  ``regularity_class`` selects which estimators
accept it: "H1" (C^1 drift, C^2 diffusion coefficient with derivatives supplied)
is needed by the forward method, "H2" (bounded measurable drift, Hoelder
diffusion coefficient) is enough for the backward method.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Optional

import numpy as np

ArrayFn = Callable[[np.ndarray], np.ndarray]


class ModelError(ValueError):
    """Raised for inconsistent or non-elliptic coefficient models."""


class CoefficientValues(NamedTuple):
    """Coefficients evaluated at a batch of points."""

    drift: np.ndarray
    variance: np.ndarray
    drift_deriv: Optional[np.ndarray]
    variance_deriv: Optional[np.ndarray]
    variance_deriv2: Optional[np.ndarray]


@dataclass(frozen=True)
class CoefficientSet:
    drift: ArrayFn
    diffusion: ArrayFn
    ellipticity_lower: float
    ellipticity_upper: float
    barrier: float
    regularity_class: str = "H2"
    drift_deriv: Optional[ArrayFn] = None
    diff_sq_deriv: Optional[ArrayFn] = None
    diff_sq_deriv2: Optional[ArrayFn] = None
    # Hoelder exponent of a; only used by truncation bounds
    holder_exponent: float = 1.0
    name: str = "custom"
    params: dict = field(default_factory=dict)
    # optional fast paths: a(x) directly, and all coefficients in one sweep
    diff_sq: Optional[ArrayFn] = None
    evaluate_all: Optional[Callable[[np.ndarray], CoefficientValues]] = None

    def __post_init__(self):
        if self.regularity_class not in ("H1", "H2"):
            raise ModelError(f"regularity_class must be 'H1' or 'H2', got {self.regularity_class!r}")
        if not (0.0 < self.ellipticity_lower <= self.ellipticity_upper < np.inf):
            raise ModelError("ellipticity bounds must satisfy 0 < lower <= upper < inf")
        if self.regularity_class == "H1":
            missing = [n for n in ("drift_deriv", "diff_sq_deriv", "diff_sq_deriv2") if getattr(self, n) is None]
            if missing:
                raise ModelError(f"H1 model needs {', '.join(missing)}")
        if not (0.0 < self.holder_exponent <= 1.0):
            raise ModelError("holder_exponent must lie in (0, 1]")

    def a(self, x):
        x = np.asarray(x, dtype=float)
        if self.diff_sq is not None:
            return self.diff_sq(x)
        s = self.diffusion(x)
        return s * s

    def b(self, x):
        return self.drift(np.asarray(x, dtype=float))

    def values(self, x) -> CoefficientValues:
        x = np.asarray(x, dtype=float)
        if self.evaluate_all is not None:
            return self.evaluate_all(x)
        h1 = self.regularity_class == "H1"
        return CoefficientValues(
            self.b(x),
            self.a(x),
            self.drift_deriv(x) if h1 else None,
            self.diff_sq_deriv(x) if h1 else None,
            self.diff_sq_deriv2(x) if h1 else None,
        )

    @property
    def a_at_barrier(self) -> float:
        return float(self.a(np.array(self.barrier)))


# --- built-in models ----------------------------------------------------------

def _const(value):
    return lambda x: np.full(np.shape(x), float(value))


def constant_bm(drift=0.0, sigma=1.0, barrier=1.0) -> CoefficientSet:
    """Brownian motion with constant drift and volatility."""
    if sigma <= 0:
        raise ModelError("sigma must be > 0")
    a = sigma * sigma
    zero = _const(0.0)

    def all_values(x):
        z = np.zeros(np.shape(x))
        return CoefficientValues(z + drift, z + a, z, z, z)

    return CoefficientSet(
        drift=_const(drift), diffusion=_const(sigma), diff_sq=_const(a),
        ellipticity_lower=a, ellipticity_upper=a, barrier=barrier, regularity_class="H1",
        drift_deriv=zero, diff_sq_deriv=zero, diff_sq_deriv2=zero,
        name="ConstantBM", params={"drift": drift, "sigma": sigma}, evaluate_all=all_values,
    )


def smooth_bounded_drift(amplitude=0.5, frequency=1.0, offset=0.0, sigma=1.0, barrier=1.0) -> CoefficientSet:
    """b(x) = offset + amplitude * sin(frequency * x), constant sigma."""
    if sigma <= 0:
        raise ModelError("sigma must be > 0")
    a = sigma * sigma

    def b(x):
        return offset + amplitude * np.sin(frequency * x)

    def db(x):
        return amplitude * frequency * np.cos(frequency * x)

    zero = _const(0.0)
    return CoefficientSet(
        drift=b, diffusion=_const(sigma), diff_sq=_const(a),
        ellipticity_lower=a, ellipticity_upper=a, barrier=barrier, regularity_class="H1",
        drift_deriv=db, diff_sq_deriv=zero, diff_sq_deriv2=zero,
        name="SmoothBoundedDrift",
        params={"amplitude": amplitude, "frequency": frequency, "offset": offset, "sigma": sigma},
    )


def tanh_diffusion(amplitude=0.5, drift=0.0, barrier=1.0) -> CoefficientSet:
    """a(x) = 1 + amplitude * tanh(x), constant drift."""
    if not (0.0 <= amplitude < 1.0):
        raise ModelError("amplitude must lie in [0, 1)")

    def a(x):
        return 1.0 + amplitude * np.tanh(x)

    def da(x):
        c = np.cosh(x)
        return amplitude / (c * c)

    def dda(x):
        c = np.cosh(x)
        return -2.0 * amplitude * np.tanh(x) / (c * c)

    def all_values(x):
        th = np.tanh(x)
        sech2 = 1.0 - th * th
        z = np.zeros(np.shape(x))
        return CoefficientValues(z + drift, 1.0 + amplitude * th, z, amplitude * sech2, -2.0 * amplitude * th * sech2)

    return CoefficientSet(
        drift=_const(drift), diffusion=lambda x: np.sqrt(a(x)), diff_sq=a,
        ellipticity_lower=1.0 - amplitude, ellipticity_upper=1.0 + amplitude,
        barrier=barrier, regularity_class="H1",
        drift_deriv=_const(0.0), diff_sq_deriv=da, diff_sq_deriv2=dda,
        name="TanhDiffusion", params={"amplitude": amplitude, "drift": drift}, evaluate_all=all_values,
    )


def step_drift(level=0.5, jump_at=0.2, sigma=1.0, barrier=1.0) -> CoefficientSet:
    """b(x) = level * sign(x - jump_at): bounded, discontinuous, H2 only."""
    if sigma <= 0:
        raise ModelError("sigma must be > 0")
    a = sigma * sigma
    return CoefficientSet(
        drift=lambda x: level * np.sign(x - jump_at), diffusion=_const(sigma), diff_sq=_const(a),
        ellipticity_lower=a, ellipticity_upper=a, barrier=barrier, regularity_class="H2",
        name="StepDrift", params={"level": level, "jump_at": jump_at, "sigma": sigma},
    )


def _logcosh(y):
    return np.logaddexp(y, -y) - np.log(2.0)


def lamperti_transform(y, strength):
    """F(y) = y + strength * log cosh(y)."""
    return y + strength * _logcosh(np.asarray(y, dtype=float))


def lamperti_inverse(x, strength):
    """F^{-1}(x) by Newton iteration; F is increasing and convex."""
    x = np.asarray(x, dtype=float)
    y = x / (1.0 + strength * np.sign(x))
    for _ in range(60):
        step = (lamperti_transform(y, strength) - x) / (1.0 + strength * np.tanh(y))
        y = y - step
        # rounding keeps |step| near 1e-16; one more step after 1e-12 polishes the root
        if np.all(np.abs(step) <= 1e-12 * (1.0 + np.abs(y))):
            break
    return y - (lamperti_transform(y, strength) - x) / (1.0 + strength * np.tanh(y))


def lamperti_drifted_bm(drift=0.5, strength=0.5, barrier=1.0) -> CoefficientSet:
    """X = F(Y) with Y a unit-volatility Brownian motion with constant drift.

    F(y) = y + strength * log cosh(y).  By Ito, sigma(x) = F'(y) and
    b(x) = drift * F'(y) + F''(y) / 2 with y = F^{-1}(x), so the hitting law of
    X is that of Y at F^{-1}(L), available in closed form.
    """
    k = float(strength)
    if not (0.0 <= k < 1.0):
        raise ModelError("strength must lie in [0, 1)")

    def inverse(x):
        return lamperti_inverse(x, k)

    def all_values(x):
        y = inverse(x)
        th = np.tanh(y)
        sech2 = 1.0 - th * th
        f1 = 1.0 + k * th
        f2 = k * sech2
        f3 = -2.0 * k * sech2 * th
        return CoefficientValues(
            drift * f1 + 0.5 * f2,
            f1 * f1,
            (drift * f2 + 0.5 * f3) / f1,
            2.0 * f2,
            2.0 * f3 / f1,
        )

    return CoefficientSet(
        drift=lambda x: all_values(x).drift,
        diffusion=lambda x: 1.0 + k * np.tanh(inverse(x)),
        diff_sq=lambda x: all_values(x).variance,
        ellipticity_lower=(1.0 - k) ** 2, ellipticity_upper=(1.0 + k) ** 2,
        barrier=barrier, regularity_class="H1",
        drift_deriv=lambda x: all_values(x).drift_deriv,
        diff_sq_deriv=lambda x: all_values(x).variance_deriv,
        diff_sq_deriv2=lambda x: all_values(x).variance_deriv2,
        name="LampertiDriftedBM", params={"drift": drift, "strength": strength},
        evaluate_all=all_values,
    )


BUILTIN_MODELS = {
    "ConstantBM": constant_bm,
    "SmoothBoundedDrift": smooth_bounded_drift,
    "TanhDiffusion": tanh_diffusion,
    "StepDrift": step_drift,
    "LampertiDriftedBM": lamperti_drifted_bm,
}


def build_model(tag: str, params: dict | None = None, barrier: float = 1.0,
                holder_exponent: float | None = None) -> CoefficientSet:
    try:
        factory = BUILTIN_MODELS[tag]
    except KeyError:
        raise ModelError(f"unknown model tag {tag!r}; choose from {sorted(BUILTIN_MODELS)}") from None
    model = factory(barrier=barrier, **(params or {}))
    if holder_exponent is not None:
        object.__setattr__(model, "holder_exponent", float(holder_exponent))
        model.__post_init__()
    return model


# --- validation ---------------------------------------------------------------

@dataclass
class ValidationReport:
    a_min: float
    a_max: float
    sup_abs_drift: float
    derivative_errors: dict
    holder_quotient: float
    passed: bool
    messages: list


class EllipticityError(ModelError):
    def __init__(self, x, value):
        super().__init__(f"a(x) = {value!r} violates the declared ellipticity bounds at x = {x!r}")
        self.x = x
        self.value = value


def validate(model: CoefficientSet, span: float = 1.0, points: int = 2001,
             derivative_tol: float = 1e-4) -> ValidationReport:
    """Check ellipticity, boundedness and declared derivatives on [L - 10 span, L]."""
    L = model.barrier
    x = np.linspace(L - 10.0 * span, L, points)
    a = np.asarray(model.a(x), dtype=float)
    lo, hi = model.ellipticity_lower, model.ellipticity_upper
    slack = 1e-12 * max(1.0, hi)
    bad = np.nonzero(~np.isfinite(a) | (a < lo - slack) | (a > hi + slack) | (a <= 0.0))[0]
    if bad.size:
        i = bad[0]
        raise EllipticityError(float(x[i]), float(a[i]))
    drift = np.asarray(model.b(x), dtype=float)
    messages = []
    errors = {}
    if model.regularity_class == "H1":
        h = 1e-5 * max(1.0, span)
        xi = x[1:-1]
        checks = {
            "drift_deriv": (model.drift_deriv, model.b),
            "diff_sq_deriv": (model.diff_sq_deriv, model.a),
            "diff_sq_deriv2": (model.diff_sq_deriv2, model.diff_sq_deriv),
        }
        for name, (declared, base) in checks.items():
            fd = (np.asarray(base(xi + h)) - np.asarray(base(xi - h))) / (2.0 * h)
            d = np.asarray(declared(xi), dtype=float)
            scale = max(float(np.max(np.abs(fd))), 1.0)
            err = float(np.max(np.abs(d - fd))) / scale
            errors[name] = err
            if err > derivative_tol:
                messages.append(f"{name} disagrees with finite differences (rel. error {err:.3g})")
    eta = model.holder_exponent
    quotient = 0.0
    for lag in (1, 4, 16, 64):
        dx = x[lag:] - x[:-lag]
        quotient = max(quotient, float(np.max(np.abs(a[lag:] - a[:-lag]) / dx ** eta)))
    return ValidationReport(float(a.min()), float(a.max()), float(np.max(np.abs(drift))),
                            errors, quotient, not messages, messages)
