"""Weights of the forward parametrix, where the coefficient of each frozen step
is taken at the step's starting point x.

``theta_bar`` is the quantity the estimators multiply: it vanishes at and above
the barrier and stays finite as z approaches it, because the bridge survival
factor is folded into the barrier correction analytically (the reflected
Gaussian ratio exp(-k) replaces 1 / (exp(k) - 1)).
"""
from __future__ import annotations

import numpy as np

from .coefficients import CoefficientSet, CoefficientValues, ModelError
from .kernels import (
    KernelDomainError,
    _out,
    _require_positive,
    _safe_exp,
    barrier_exponent,
    bridge_survival_raw,
    exit_time_density_raw,
)


def _check_interior(x, z, L):
    if np.any(np.asarray(x) >= L) or np.any(np.asarray(z) >= L):
        raise KernelDomainError("raw weight is singular on the barrier; use the survival-weighted form")


def mu1(t, x, z, a_x, L):
    """d/dz log of the killed density frozen at x (raw, interior points only)."""
    t = _require_positive("t", t)
    x, z = np.asarray(x, float), np.asarray(z, float)
    _check_interior(x, z, L)
    c = a_x * t
    with np.errstate(over="ignore"):
        em1 = np.expm1(barrier_exponent(a_x, L, t, x, z))
    return _out(-(z - x) / c - 2.0 * (L - x) / c / em1)


def mu2(t, x, z, a_x, L):
    """Second z-derivative of the killed density divided by the density (raw)."""
    t = _require_positive("t", t)
    x, z = np.asarray(x, float), np.asarray(z, float)
    _check_interior(x, z, L)
    c = a_x * t
    with np.errstate(over="ignore"):
        em1 = np.expm1(barrier_exponent(a_x, L, t, x, z))
    y = z - x
    return _out(y * y / (c * c) - 1.0 / c + 4.0 * (z - L) * (L - x) / (c * c) / em1)


def mu1_survival_raw(t, x, z, a_x, L):
    """mu1 * Lambda, finite up to z = L and 0 above it."""
    c = a_x * t
    k = barrier_exponent(a_x, L, t, x, z)
    lam = -np.expm1(-k)
    val = -(z - x) / c * lam - 2.0 * (L - x) / c * _safe_exp(-k)
    return np.where((x < L) & (z < L), val, 0.0)


def mu2_survival_raw(t, x, z, a_x, L):
    c = a_x * t
    k = barrier_exponent(a_x, L, t, x, z)
    lam = -np.expm1(-k)
    y = z - x
    val = (y * y / (c * c) - 1.0 / c) * lam + 4.0 * (z - L) * (L - x) / (c * c) * _safe_exp(-k)
    return np.where((x < L) & (z < L), val, 0.0)


def mu1_survival(t, x, z, a_x, L):
    t = _require_positive("t", t)
    return _out(mu1_survival_raw(t, np.asarray(x, float), np.asarray(z, float), a_x, L))


def mu2_survival(t, x, z, a_x, L):
    t = _require_positive("t", t)
    return _out(mu2_survival_raw(t, np.asarray(x, float), np.asarray(z, float), a_x, L))


class ForwardWeightContext:
    """H1 model plus the cached barrier value a(L)."""

    def __init__(self, model: CoefficientSet):
        if model.regularity_class != "H1":
            raise ModelError("forward weights need an H1 model (C^1 drift, C^2 diffusion coefficient)")
        self.model = model
        self.barrier = model.barrier
        self.a_barrier = model.a_at_barrier

    def values(self, z) -> CoefficientValues:
        # coefficients above the barrier never matter
        return self.model.values(np.minimum(z, self.barrier))

    def a(self, x):
        return self.model.a(np.minimum(x, self.barrier))


def theta_bar_raw(t, x, z, a_x, vz: CoefficientValues, L):
    """theta * Lambda from precomputed coefficient values at z."""
    lam = bridge_survival_raw(a_x, L, t, x, z)
    return ((0.5 * vz.variance_deriv2 - vz.drift_deriv) * lam
            + (vz.variance_deriv - vz.drift) * mu1_survival_raw(t, x, z, a_x, L)
            + 0.5 * (vz.variance - a_x) * mu2_survival_raw(t, x, z, a_x, L))


def theta(t, x, z, ctx: ForwardWeightContext):
    """Difference-kernel weight: S_t(x, z) = theta_t(x, z) * qbar^x_t(x, z)."""
    t = _require_positive("t", t)
    x, z = np.asarray(x, float), np.asarray(z, float)
    L = ctx.barrier
    _check_interior(x, z, L)
    a_x = ctx.a(x)
    vz = ctx.values(z)
    return _out((0.5 * vz.variance_deriv2 - vz.drift_deriv)
                + (vz.variance_deriv - vz.drift) * mu1(t, x, z, a_x, L)
                + 0.5 * (vz.variance - a_x) * mu2(t, x, z, a_x, L))


def theta_bar(t, x, z, ctx: ForwardWeightContext):
    """theta * Lambda; exactly 0 when x >= L or z >= L."""
    t = _require_positive("t", t)
    x, z = np.asarray(x, float), np.asarray(z, float)
    return _out(theta_bar_raw(t, x, z, ctx.a(x), ctx.values(z), ctx.barrier))


def boundary_correction_ratio(x, ctx: ForwardWeightContext):
    """(a(L) - a(x)) / a(x)."""
    x = np.asarray(x, float)
    a_x = ctx.a(x)
    return _out((ctx.a_barrier - a_x) / a_x)


def boundary_kernel_K(t, x, ctx: ForwardWeightContext):
    """Boundary kernel ((a(L) - a(x)) / a(x)) * f^x(x, t)."""
    t = _require_positive("t", t)
    x = np.asarray(x, float)
    a_x = ctx.a(x)
    return _out((ctx.a_barrier - a_x) / a_x * exit_time_density_raw(a_x, ctx.barrier, x, t))
