"""Weights of the backward parametrix, where each frozen step takes its
coefficient at the step's end point (or at the barrier for the exit time).

Argument convention for the step weights: ``vartheta(t, z, x, ctx)`` has ``z``
as the freeze point and ``x`` as the point where the true coefficients enter.
"""
from __future__ import annotations

import numpy as np

from .coefficients import CoefficientSet
from .kernels import (
    KernelDomainError,
    _out,
    _require_positive,
    _safe_exp,
    barrier_exponent,
    bridge_survival_raw,
    exit_time_density_dx_raw,
    exit_time_density_dxx_raw,
    gauss_raw,
    killed_density_raw,
)


def mu_hat(order, t, x, z, a_z, L):
    """d^order/dx^order of the killed density frozen at z, divided by it (raw)."""
    t = _require_positive("t", t)
    x, z = np.asarray(x, float), np.asarray(z, float)
    if np.any(x >= L) or np.any(z >= L):
        raise KernelDomainError("raw weight is singular on the barrier; use the survival-weighted form")
    c = a_z * t
    with np.errstate(over="ignore"):
        em1 = np.expm1(barrier_exponent(a_z, L, t, x, z))
    if order == 1:
        return _out((z - x) / c - 2.0 * (L - z) / c / em1)
    if order == 2:
        y = z - x
        return _out(y * y / (c * c) - 1.0 / c + 4.0 * (z - L) * (L - x) / (c * c) / em1)
    raise KernelDomainError(f"unsupported order {order!r}")


def mu_hat_survival_raw(order, t, x, z, a_z, L):
    """mu_hat * Lambda, finite up to the barrier and 0 beyond."""
    c = a_z * t
    k = barrier_exponent(a_z, L, t, x, z)
    lam = -np.expm1(-k)
    refl = _safe_exp(-k)
    if order == 1:
        val = (z - x) / c * lam + 2.0 * (z - L) / c * refl
    else:
        y = z - x
        val = (y * y / (c * c) - 1.0 / c) * lam + 4.0 * (z - L) * (L - x) / (c * c) * refl
    return np.where((x < L) & (z < L), val, 0.0)


def mu_hat_survival(order, t, x, z, a_z, L):
    t = _require_positive("t", t)
    if order not in (1, 2):
        raise KernelDomainError(f"unsupported order {order!r}")
    return _out(mu_hat_survival_raw(order, t, np.asarray(x, float), np.asarray(z, float), a_z, L))


class BackwardWeightContext:
    """Model (H1 or H2) plus the cached barrier value a(L)."""

    def __init__(self, model: CoefficientSet):
        self.model = model
        self.barrier = model.barrier
        self.a_barrier = model.a_at_barrier

    def a(self, x):
        return self.model.a(np.minimum(x, self.barrier))

    def b(self, x):
        return self.model.b(np.minimum(x, self.barrier))


def vartheta_hat_raw(t, z, x, a_z, a_x, b_x, L):
    """vartheta * Lambda with freeze point z and evaluation point x."""
    return (0.5 * (a_x - a_z) * mu_hat_survival_raw(2, t, x, z, a_z, L)
            + b_x * mu_hat_survival_raw(1, t, x, z, a_z, L))


def vartheta(t, z, x, ctx: BackwardWeightContext):
    """Raw step weight; only the drift value b(x) is used, never b'."""
    z, x = np.asarray(z, float), np.asarray(x, float)
    a_z, a_x = ctx.a(z), ctx.a(x)
    return _out(0.5 * (a_x - a_z) * mu_hat(2, t, x, z, a_z, ctx.barrier)
                + ctx.b(x) * mu_hat(1, t, x, z, a_z, ctx.barrier))


def vartheta_hat(t, z, x, ctx: BackwardWeightContext):
    t = _require_positive("t", t)
    z, x = np.asarray(z, float), np.asarray(x, float)
    return _out(vartheta_hat_raw(t, z, x, ctx.a(z), ctx.a(x), ctx.b(x), ctx.barrier))


def _exit_hermite(s, x, a_L, L):
    gap = L - x
    c = a_L * s
    return gap / c - 1.0 / gap, gap * gap / (c * c) - 3.0 / c


def exit_weight(s, x, ctx: BackwardWeightContext):
    """Weight multiplying f^L(x, s) to give the boundary difference kernel."""
    s = _require_positive("s", s)
    x = np.asarray(x, float)
    L = ctx.barrier
    if np.any(x >= L):
        raise KernelDomainError("exit weight is singular at the barrier; use exit_kernel")
    h1, h2 = _exit_hermite(s, x, ctx.a_barrier, L)
    return _out(0.5 * (ctx.a(x) - ctx.a_barrier) * h2 + ctx.b(x) * h1)


def exit_kernel_raw(s, x, a_x, b_x, a_L, L):
    """exit_weight * f^L in product form, 0 at and above the barrier."""
    val = (0.5 * (a_x - a_L) * exit_time_density_dxx_raw(a_L, L, x, s)
           + b_x * exit_time_density_dx_raw(a_L, L, x, s))
    return np.where(x < L, val, 0.0)


def exit_kernel(s, x, ctx: BackwardWeightContext):
    s = _require_positive("s", s)
    x = np.asarray(x, float)
    return _out(exit_kernel_raw(s, x, ctx.a(x), ctx.b(x), ctx.a_barrier, ctx.barrier))


def ratio_weight(i, t, prev_state, next_state, ctx: BackwardWeightContext):
    """Weight of step i relative to sampling under the start-frozen killed density.

    Step 0 re-freezes the killed density at the step's end point; steps i >= 1
    additionally carry the difference-kernel weight.
    """
    t = _require_positive("t", t)
    x, z = np.asarray(prev_state, float), np.asarray(next_state, float)
    L = ctx.barrier
    a_x, a_z = ctx.a(x), ctx.a(z)
    lam_x = bridge_survival_raw(a_x, L, t, x, z)
    lam_z = bridge_survival_raw(a_z, L, t, x, z)
    inside = (x < L) & (z < L) & (lam_x > 0.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(inside, lam_z * gauss_raw(a_z * t, z - x) / (lam_x * gauss_raw(a_x * t, z - x)), 0.0)
        if i == 0:
            return _out(ratio)
        mu1 = np.where(inside, mu_hat_survival_raw(1, t, x, z, a_z, L) / np.where(inside, lam_z, 1.0), 0.0)
        mu2 = np.where(inside, mu_hat_survival_raw(2, t, x, z, a_z, L) / np.where(inside, lam_z, 1.0), 0.0)
    weight = 0.5 * (a_x - a_z) * mu2 + ctx.b(x) * mu1
    return _out(weight * ratio)


def ratio_weight_direct(i, t, prev_state, next_state, ctx: BackwardWeightContext):
    """Same weight as ratio_weight, from the raw killed-density quotient."""
    x, z = np.asarray(prev_state, float), np.asarray(next_state, float)
    L = ctx.barrier
    num = killed_density_raw(ctx.a(z), L, t, x, z)
    den = killed_density_raw(ctx.a(x), L, t, x, z)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(den > 0.0, num / np.where(den > 0.0, den, 1.0), 0.0)
    if i == 0:
        return _out(ratio)
    return _out(ratio * vartheta(t, z, x, ctx))
