"""Scalar kernels of the frozen (constant-coefficient, driftless) process.

Every function broadcasts over numpy arrays and returns a Python float when all
inputs are scalars.  The killed density is always evaluated in the factorized
form ``gauss * bridge_survival``; the raw difference of two Gaussians loses all
significant digits as the end point approaches the barrier.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import erf

# exp() of anything below this is treated as an exact zero
UNDERFLOW_EXPONENT = -745.0

_LOG_SQRT_2PI = 0.5 * np.log(2.0 * np.pi)


class KernelDomainError(ValueError):
    """Raised when a kernel is evaluated outside its domain (e.g. t <= 0)."""


@dataclass(frozen=True)
class FrozenParams:
    """Frozen diffusion coefficient ``a(y)`` and barrier ``L``.

    ``freeze_variance`` may be an array when many freeze points are evaluated
    at once.
    """

    freeze_variance: float | np.ndarray
    barrier: float

    def __post_init__(self):
        v = np.asarray(self.freeze_variance, dtype=float)
        if not np.all(np.isfinite(v)) or np.any(v <= 0.0):
            raise KernelDomainError("freeze_variance must be finite and > 0")


def _out(value):
    value = np.asarray(value, dtype=float)
    return float(value) if value.ndim == 0 else value


def _require_positive(name, value):
    value = np.asarray(value, dtype=float)
    if np.any(~(value > 0.0)):
        raise KernelDomainError(f"{name} must be > 0")
    return value


def _safe_exp(exponent):
    exponent = np.asarray(exponent, dtype=float)
    with np.errstate(under="ignore"):
        return np.where(exponent < UNDERFLOW_EXPONENT, 0.0, np.exp(np.maximum(exponent, UNDERFLOW_EXPONENT)))


# --- unchecked array primitives used by the estimators -------------------------

def gauss_raw(c, y):
    c = np.asarray(c, dtype=float)
    y = np.asarray(y, dtype=float)
    return _safe_exp(-0.5 * y * y / c - 0.5 * np.log(c) - _LOG_SQRT_2PI)


def barrier_exponent(a, L, t, x, z):
    """k = 2 (L-x)(L-z) / (a t), clipped at 0 outside the domain."""
    return 2.0 * np.maximum(L - x, 0.0) * np.maximum(L - z, 0.0) / (a * t)


def bridge_survival_raw(a, L, t, x, z):
    k = barrier_exponent(a, L, t, x, z)
    inside = (x < L) & (z < L)
    return np.where(inside, -np.expm1(-k), 0.0)


def killed_density_raw(a, L, t, x, z):
    return gauss_raw(a * t, z - x) * bridge_survival_raw(a, L, t, x, z)


def _reflection_factor(a, L, t, x, z):
    # g(at, z+x-2L) / g(at, z-x) = exp(-k)
    return _safe_exp(-barrier_exponent(a, L, t, x, z))


def killed_density_dz_raw(a, L, t, x, z):
    c = a * t
    lam = bridge_survival_raw(a, L, t, x, z)
    refl = _reflection_factor(a, L, t, x, z)
    val = gauss_raw(c, z - x) * (-(z - x) / c * lam - 2.0 * (L - x) / c * refl)
    return np.where((x <= L) & (z <= L), val, 0.0)


def killed_density_dzz_raw(a, L, t, x, z):
    c = a * t
    lam = bridge_survival_raw(a, L, t, x, z)
    refl = _reflection_factor(a, L, t, x, z)
    y = z - x
    h2 = y * y / (c * c) - 1.0 / c
    val = gauss_raw(c, y) * (h2 * lam + 4.0 * (z - L) * (L - x) / (c * c) * refl)
    return np.where((x <= L) & (z <= L), val, 0.0)


def killed_density_dx_raw(a, L, t, x, z):
    c = a * t
    lam = bridge_survival_raw(a, L, t, x, z)
    refl = _reflection_factor(a, L, t, x, z)
    val = gauss_raw(c, z - x) * ((z - x) / c * lam + 2.0 * (z - L) / c * refl)
    return np.where((x <= L) & (z <= L), val, 0.0)


# the second x-derivative has the same closed form as the second z-derivative
killed_density_dxx_raw = killed_density_dzz_raw


def exit_time_density_raw(a, L, x, s):
    gap = L - x
    val = gap / s * gauss_raw(a * s, gap)
    return np.where(gap > 0.0, val, 0.0)


def exit_time_density_dx_raw(a, L, x, s):
    gap = L - x
    val = gauss_raw(a * s, gap) / s * (gap * gap / (a * s) - 1.0)
    return np.where(gap >= 0.0, val, 0.0)


def exit_time_density_dxx_raw(a, L, x, s):
    gap = L - x
    val = gauss_raw(a * s, gap) * gap / (a * s * s) * (gap * gap / (a * s) - 3.0)
    return np.where(gap >= 0.0, val, 0.0)


def exit_time_survival_raw(a, L, x, t):
    gap = L - x
    return np.where(gap > 0.0, erf(np.maximum(gap, 0.0) / np.sqrt(2.0 * a * t)), 0.0)


# --- public checked operations -------------------------------------------------

def gauss(variance_time, displacement):
    """Centred Gaussian density with variance ``variance_time``."""
    c = _require_positive("variance_time", variance_time)
    return _out(gauss_raw(c, displacement))


def hermite_factor(order, variance_time, displacement):
    """``g^{-1} d^order g / dy^order`` for order 1 or 2."""
    c = _require_positive("variance_time", variance_time)
    y = np.asarray(displacement, dtype=float)
    if order == 1:
        return _out(-y / c)
    if order == 2:
        return _out(y * y / (c * c) - 1.0 / c)
    raise KernelDomainError(f"unsupported Hermite order {order!r}")


def bridge_survival(p: FrozenParams, t, x, z):
    """Probability that a Brownian bridge from x to z over time t stays below L."""
    t = _require_positive("t", t)
    return _out(bridge_survival_raw(p.freeze_variance, p.barrier, t, np.asarray(x, float), np.asarray(z, float)))


def killed_density(p: FrozenParams, t, x, z):
    """Density of the frozen process at z, killed at the barrier."""
    t = _require_positive("t", t)
    return _out(killed_density_raw(p.freeze_variance, p.barrier, t, np.asarray(x, float), np.asarray(z, float)))


def exit_time_density(p: FrozenParams, x, s):
    """Levy density of the frozen first exit time."""
    s = _require_positive("s", s)
    return _out(exit_time_density_raw(p.freeze_variance, p.barrier, np.asarray(x, float), s))


def exit_time_density_dx(order, p: FrozenParams, x, s):
    """x-derivatives of the exit-time density (left limits at the barrier)."""
    s = _require_positive("s", s)
    x = np.asarray(x, float)
    if order == 1:
        return _out(exit_time_density_dx_raw(p.freeze_variance, p.barrier, x, s))
    if order == 2:
        return _out(exit_time_density_dxx_raw(p.freeze_variance, p.barrier, x, s))
    raise KernelDomainError(f"unsupported derivative order {order!r}")


def exit_time_survival(p: FrozenParams, x, t):
    """P(frozen exit time > t) = 2 Phi((L-x)/sqrt(a t)) - 1."""
    t = _require_positive("t", t)
    return _out(exit_time_survival_raw(p.freeze_variance, p.barrier, np.asarray(x, float), t))


def killed_density_dz(p: FrozenParams, t, x, z):
    t = _require_positive("t", t)
    return _out(killed_density_dz_raw(p.freeze_variance, p.barrier, t, np.asarray(x, float), np.asarray(z, float)))


def killed_density_dzz(p: FrozenParams, t, x, z):
    t = _require_positive("t", t)
    return _out(killed_density_dzz_raw(p.freeze_variance, p.barrier, t, np.asarray(x, float), np.asarray(z, float)))


def killed_density_dx(order, p: FrozenParams, t, x, z):
    """x-derivative of order 1 or 2 of the killed density, freeze point fixed."""
    t = _require_positive("t", t)
    x = np.asarray(x, float)
    z = np.asarray(z, float)
    if order == 1:
        return _out(killed_density_dx_raw(p.freeze_variance, p.barrier, t, x, z))
    if order == 2:
        return _out(killed_density_dxx_raw(p.freeze_variance, p.barrier, t, x, z))
    raise KernelDomainError(f"unsupported derivative order {order!r}")
