"""Unbiased backward-parametrix estimators (H1 or H2 models).

Each frozen kernel takes its coefficient at the step's end point, so only
b(x) and a(x) are evaluated, never their derivatives.  Two chains share one
Poisson grid per sample:

* the D chain runs the Euler scheme from the terminal point (the query point
  z, or a proposal draw Z) and closes with the killed density frozen at its
  last state, evaluated back at the start x0;
* the K chain runs from x0 with steps re-weighted from freeze-at-left to
  freeze-at-right, and closes with the exit-time density frozen at the barrier.

Branch tags: ``interior`` = D chain, ``boundary`` = K chain with N = 0,
``correction`` = K chain with N >= 1.  The series order of a sample is N.

Integrands that blow up as the remaining time s goes to 0 (exit-time density,
x0-derivative of the killed density) have their last Euler state drawn as a
balance-heuristic pair: the Euler end point plus one state from a fixed
density concentrated where the integrand is large.  This keeps the estimators
unbiased and their variance finite up to a log factor.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.special import ndtr, ndtri

from .coefficients import CoefficientSet
from .engine import ChunkContribution, EstimateResult, constant_result, run_estimator
from .kernels import (
    _safe_exp,
    exit_time_density_dx_raw,
    exit_time_density_raw,
    gauss_raw,
    killed_density_dx_raw,
    killed_density_raw,
)
from .sampling import (
    AntitheticPlan,
    ChunkStream,
    Role,
    balance_factor,
    balance_pair,
    jump_grids,
    rayleigh_below,
    rayleigh_below_density,
)
from .weights_backward import BackwardWeightContext, exit_kernel_raw, mu_hat_survival_raw, vartheta_hat_raw

DEFAULT_MAX_FLIPS = 10
DEFAULT_EXIT_DRAWS = 4
DERIVATIVE_KINDS = ("densityD", "densityK", "killedFunctional")


# --- terminal proposals -------------------------------------------------------

@dataclass(frozen=True)
class TerminalProposal:
    """Density of the D-chain start Z, positive on (-inf, L), sampled by inverse CDF."""

    name: str
    density: Callable
    from_uniform: Callable

    def sample(self, uniform):
        return self.from_uniform(np.asarray(uniform, dtype=float))


def gaussian_proposal(x0, variance, L) -> TerminalProposal:
    """Normal(x0, variance) conditioned on (-inf, L)."""
    sd = float(np.sqrt(variance))
    mass = float(ndtr((L - x0) / sd))

    def density(z):
        z = np.asarray(z, dtype=float)
        return np.where(z < L, gauss_raw(sd * sd, z - x0) / mass, 0.0)

    def from_uniform(u):
        return np.minimum(x0 + sd * ndtri(u * mass), np.nextafter(L, -np.inf))

    return TerminalProposal("gaussian", density, from_uniform)


def exponential_proposal(L, scale) -> TerminalProposal:
    """L - scale * E with E standard exponential."""
    scale = float(scale)

    def density(z):
        z = np.asarray(z, dtype=float)
        return np.where(z < L, _safe_exp(-(L - z) / scale) / scale, 0.0)

    def from_uniform(u):
        return L + scale * np.log(u)

    return TerminalProposal("exponential", density, from_uniform)


def default_proposal(model: CoefficientSet, x0, T) -> TerminalProposal:
    return gaussian_proposal(x0, model.ellipticity_upper * T, model.barrier)


def build_proposal(name, model: CoefficientSet, x0, T) -> TerminalProposal:
    scale = float(np.sqrt(model.ellipticity_upper * T))
    if name in (None, "gaussian"):
        return default_proposal(model, x0, T)
    if name == "exponential":
        return exponential_proposal(model.barrier, scale)
    raise ValueError(f"unknown proposal {name!r}")


# --- shared helpers -------------------------------------------------------------

def default_intensity(T):
    return 1.0 / T


def _check(T, intensity, n):
    if not T > 0:
        raise ValueError("T must be > 0")
    if not intensity > 0:
        raise ValueError("intensity must be > 0")
    if int(n) < 1:
        raise ValueError("n must be >= 1")


def _flips(antithetic):
    return DEFAULT_MAX_FLIPS if antithetic else 0


def _pack(result: EstimateResult, full_result, scalar):
    if full_result:
        return result
    return result.summaries[0] if scalar else result.summaries


@dataclass
class _Grid:
    plan: AntitheticPlan
    counts: np.ndarray
    row_counts: np.ndarray
    row_times: np.ndarray

    def time(self, j, rows):
        return self.row_times[rows, j] if j >= 0 else np.zeros(len(rows))

    def last_time(self):
        """zeta_N per row (0 when N = 0)."""
        out = np.zeros(self.plan.rows)
        for j in range(self.row_times.shape[1]):
            sel = self.row_counts - 1 == j
            out[sel] = self.row_times[sel, j]
        return out


def _grid(T, intensity, cs, antithetic):
    counts, times = jump_grids(T, intensity, cs)
    plan = AntitheticPlan(counts, _flips(antithetic))
    return _Grid(plan, counts, plan.expand(counts), plan.expand(times))


def _step_normal(grid: _Grid, cs, role, j):
    return grid.plan.expand(cs.normals(role, j)) * grid.plan.signs(j)


def _log_gauss_ratio(a_num, a_den, dt, d):
    """log g(a_num dt, d) - log g(a_den dt, d)."""
    return -0.5 * d * d / dt * (1.0 / a_num - 1.0 / a_den) - 0.5 * np.log(a_num / a_den)


def _add_axis(v, like):
    return v[:, None] if like.ndim == 2 and v.ndim == 1 else v


# --- D chain: Euler from the terminal point -----------------------------------------

def d_chain(ctx: BackwardWeightContext, grid: _Grid, start, cs, intensity, stop):
    """Run the terminal-point chain for the rows with ``stop > j`` at step j.

    ``start`` is (rows,) or (rows, q).  Returns state, weight and the time
    elapsed (the sum of the step lengths used).
    """
    L = ctx.barrier
    state = np.array(start, dtype=float)
    weight = np.ones_like(state)
    elapsed = np.zeros(grid.plan.rows)
    for j in range(grid.row_times.shape[1]):
        idx = np.nonzero(stop > j)[0]
        if idx.size == 0:
            break
        y = state[idx]
        dt = grid.row_times[idx, j] - elapsed[idx]
        dtb = _add_axis(dt, y)
        a_y = ctx.a(y)
        normal = _add_axis(_step_normal(grid, cs, Role.EULER_BACKWARD_D, j)[idx], y)
        y_new = y + np.sqrt(a_y * dtb) * normal
        w = vartheta_hat_raw(dtb, y, y_new, a_y, ctx.a(y_new), ctx.b(y_new), L) / intensity
        state[idx] = y_new
        weight[idx] *= w
        elapsed[idx] = grid.row_times[idx, j]
    return state, weight, elapsed


def _d_closing(ctx, x0, s, y, derivative):
    """Killed density frozen at y over time s from x0 to y, or its x0-derivative."""
    a_y = ctx.a(y)
    fn = killed_density_dx_raw if derivative else killed_density_raw
    return fn(a_y, ctx.barrier, s, np.full_like(y, float(x0)), y)


def d_branch(ctx, grid: _Grid, start, x0, T, cs, intensity, derivative=False, centred=False):
    """Per-row D-chain contribution without the e^{lambda T} factor.

    With ``centred`` the last step is a balance pair whose alternative
    candidate is Normal(x0, 2 a_max s), s the remaining time.
    """
    L = ctx.barrier
    if not centred:
        y, w, elapsed = d_chain(ctx, grid, start, cs, intensity, grid.row_counts)
        s = _add_axis(T - elapsed, y)
        return w * _d_closing(ctx, x0, s, y, derivative)
    y, w, elapsed = d_chain(ctx, grid, start, cs, intensity, grid.row_counts - 1)
    out = np.zeros_like(y)
    none = grid.row_counts == 0
    out[none] = _d_closing(ctx, x0, np.full_like(y[none], float(T)), y[none], derivative)
    idx = np.nonzero(~none)[0]
    if idx.size == 0:
        return out
    j_last = grid.row_counts[idx] - 1
    t_last = grid.row_times[idx, j_last]
    normal = np.zeros(idx.size)
    for j in np.unique(j_last):
        sel = j_last == j
        normal[sel] = _step_normal(grid, cs, Role.EULER_BACKWARD_D, j)[idx[sel]]
    y0 = y[idx]
    normal = _add_axis(normal, y0)
    dt = _add_axis(t_last - elapsed[idx], y0)
    s = _add_axis(T - t_last, y0)
    a_y = ctx.a(y0)
    width_sq = 2.0 * ctx.model.ellipticity_upper * s
    centre = x0 + np.sqrt(width_sq) * _add_axis(cs.normals(Role.CENTER_DRAW)[grid.plan.owner[idx]], y0)
    total = np.zeros_like(y0)
    for y_new, g, mix in balance_pair(y0, a_y * dt, normal, centre, lambda v: gauss_raw(width_sq, v - x0)):
        factor = balance_factor(g, mix)
        step = vartheta_hat_raw(dt, y0, y_new, a_y, ctx.a(y_new), ctx.b(y_new), L) / intensity
        total += factor * step * _d_closing(ctx, x0, s, y_new, derivative)
    out[idx] = w[idx] * total
    return out


# --- K chain: Euler from x0, re-frozen at each step's end point -------------------------

def _k_core(ctx, dt, y, y_new, first, derivative):
    """K-step kernel divided by the end-frozen Gaussian g(a(y_new) dt, y_new - y)."""
    L = ctx.barrier
    a_y, a_new = ctx.a(y), ctx.a(y_new)
    if not first:
        return vartheta_hat_raw(dt, y_new, y, a_new, a_y, ctx.b(y), L), a_y, a_new
    if derivative:
        return mu_hat_survival_raw(1, dt, y, y_new, a_new, L), a_y, a_new
    k = 2.0 * np.maximum(L - y, 0.0) * np.maximum(L - y_new, 0.0) / (a_new * dt)
    return np.where((y < L) & (y_new < L), -np.expm1(-k), 0.0), a_y, a_new


def k_step_weight(ctx, dt, y, y_new, first, derivative):
    """Weight of one K-chain step relative to the Euler proposal N(y, a(y) dt)."""
    core, a_y, a_new = _k_core(ctx, dt, y, y_new, first, derivative)
    with np.errstate(over="ignore"):
        ratio = np.exp(_log_gauss_ratio(a_new, a_y, dt, y_new - y))
    return np.where(core != 0.0, core * ratio, 0.0)


def k_step_kernel(ctx, dt, y, y_new, first, derivative):
    """Absolute K-step kernel value at y_new."""
    core, _, a_new = _k_core(ctx, dt, y, y_new, first, derivative)
    return core * gauss_raw(a_new * dt, y_new - y)


def k_chain(ctx: BackwardWeightContext, grid: _Grid, x0, cs, intensity, stop, derivative=False):
    """Run the x0 chain for the rows with ``stop > j`` at step j."""
    state = np.full(grid.plan.rows, float(x0))
    weight = np.ones(grid.plan.rows)
    elapsed = np.zeros(grid.plan.rows)
    for j in range(grid.row_times.shape[1]):
        idx = np.nonzero(stop > j)[0]
        if idx.size == 0:
            break
        y = state[idx]
        dt = grid.row_times[idx, j] - elapsed[idx]
        normal = _step_normal(grid, cs, Role.EULER_BACKWARD_K, j)[idx]
        y_new = y + np.sqrt(ctx.a(y) * dt) * normal
        weight[idx] *= k_step_weight(ctx, dt, y, y_new, j == 0, derivative) / intensity
        state[idx] = y_new
        elapsed[idx] = grid.row_times[idx, j]
    return state, weight, elapsed


def _exit_weight_raw(ctx, y, s):
    """Exit-time weight at the barrier freeze, 0 at and above L."""
    a_L = ctx.a_barrier
    gap = ctx.barrier - y
    safe = np.where(gap > 0.0, gap, 1.0)
    c = a_L * s
    h1 = gap / c - 1.0 / safe
    h2 = gap * gap / (c * c) - 3.0 / c
    return np.where(gap > 0.0, 0.5 * (ctx.a(y) - a_L) * h2 + ctx.b(y) * h1, 0.0)


# --- estimators ------------------------------------------------------------------

def estimate_functional_bw(model: CoefficientSet, h, x0, T, intensity=None, proposal=None, n=100_000, seed=0,
                           workers=1, full_result=False, keep_samples=False, antithetic=True,
                           exit_draws=DEFAULT_EXIT_DRAWS):
    """E[h(tau ^ T, X_{tau ^ T})]; the D chain starts at a proposal draw Z."""
    intensity = default_intensity(T) if intensity is None else float(intensity)
    _check(T, intensity, n)
    ctx = BackwardWeightContext(model)
    L = ctx.barrier
    if x0 >= L:
        return _pack(constant_result(float(np.asarray(h(0.0, x0))), n), full_result, True)
    proposal = default_proposal(model, x0, T) if proposal is None else proposal
    scale = np.exp(intensity * T)
    draws = int(exit_draws)
    if draws < 1:
        raise ValueError("exit_draws must be >= 1")
    a_L = ctx.a_barrier

    def kernel(cs: ChunkStream):
        grid = _grid(T, intensity, cs, antithetic)
        plan = grid.plan
        z = proposal.sample(cs.uniforms(Role.PROPOSAL))
        pay = np.asarray(h(np.full(z.shape, float(T)), z), dtype=float) / proposal.density(z)
        d_part = d_branch(ctx, grid, plan.expand(z), x0, T, cs, intensity)
        interior = scale * plan.expand(pay) * d_part

        y, w, elapsed = k_chain(ctx, grid, x0, cs, intensity, grid.row_counts)
        remaining = T - elapsed
        k_sum = np.zeros(plan.rows)
        for k in range(draws):
            g = cs.normals(Role.EXIT, k)[plan.owner]
            gap = np.maximum(L - y, 0.0)
            with np.errstate(divide="ignore", invalid="ignore"):
                tau = gap * gap / (a_L * g * g)
            hit = (tau < remaining) & (gap > 0.0)
            tau = np.where(hit, tau, 0.5 * remaining)
            ew = np.where(grid.row_counts == 0, 1.0, _exit_weight_raw(ctx, y, tau))
            value = np.asarray(h(elapsed + tau, np.full(plan.rows, L)), dtype=float)
            k_sum += np.where(hit, ew * value, 0.0)
        k_part = scale * w * k_sum / draws
        none = grid.row_counts == 0
        branches = {"interior": interior,
                    "boundary": np.where(none, k_part, 0.0),
                    "correction": np.where(none, 0.0, k_part)}
        return ChunkContribution({t: plan.collapse(v) for t, v in branches.items()},
                                 {t: grid.counts for t in branches}, plan.collapse(scale * w))

    result = run_estimator(kernel, n, seed, workers, keep_samples=keep_samples)
    return _pack(result, full_result, True)


def _density_k(model, x0, t, T, intensity, n, seed, workers, full_result, keep_samples, projection,
               antithetic, derivative):
    intensity = default_intensity(T) if intensity is None else float(intensity)
    _check(T, intensity, n)
    times_q = np.atleast_1d(np.asarray(t, dtype=float))
    if np.any(times_q <= 0) or np.any(times_q > T):
        raise ValueError("query times must lie in (0, T]")
    ctx = BackwardWeightContext(model)
    L = ctx.barrier
    scalar = np.ndim(t) == 0
    if x0 >= L:
        return _pack(constant_result(np.zeros_like(times_q), n, times_q), full_result, scalar)
    scale = np.exp(intensity * T)
    a_L = ctx.a_barrier
    width_scale = 4.0 * model.ellipticity_upper
    first = (exit_time_density_dx_raw if derivative else exit_time_density_raw)(a_L, L, float(x0), times_q)

    def kernel(cs: ChunkStream):
        grid = _grid(T, intensity, cs, antithetic)
        plan = grid.plan
        q = times_q.size
        y, w, elapsed = k_chain(ctx, grid, x0, cs, intensity, grid.row_counts - 1, derivative)
        none = grid.row_counts == 0
        boundary = np.zeros((plan.rows, q))
        correction = np.zeros((plan.rows, q))
        boundary[none] = scale * first
        idx = np.nonzero(~none & (w != 0.0))[0]
        if idx.size:
            j_last = grid.row_counts[idx] - 1
            t_last = grid.row_times[idx, j_last]
            normal = np.zeros(idx.size)
            for j in np.unique(j_last):
                sel = j_last == j
                normal[sel] = _step_normal(grid, cs, Role.EULER_BACKWARD_K, j)[idx[sel]]
            y0 = y[idx][:, None]
            dt = (t_last - elapsed[idx])[:, None]
            s = times_q[None, :] - t_last[:, None]
            valid = s > 0.0
            s = np.where(valid, s, 1.0)
            width_sq = width_scale * s
            layer = rayleigh_below(L, width_sq, cs.uniforms(Role.LAYER_DRAW)[plan.owner[idx]][:, None])
            is_first = (j_last == 0)[:, None]
            total = np.zeros((idx.size, q))
            for y_new, _, mix in balance_pair(y0, ctx.a(y0) * dt, normal[:, None], layer,
                                              lambda v: rayleigh_below_density(L, width_sq, v)):
                step = np.where(is_first,
                                k_step_kernel(ctx, dt, y0, y_new, True, derivative),
                                k_step_kernel(ctx, dt, y0, y_new, False, False))
                kern = exit_kernel_raw(s, y_new, ctx.a(y_new), ctx.b(y_new), a_L, L)
                total += np.where(valid & (step != 0.0), balance_factor(step, mix) * kern, 0.0)
            correction[idx] = scale * w[idx][:, None] * total / intensity
        return ChunkContribution({"boundary": plan.collapse(boundary), "correction": plan.collapse(correction)},
                                 {"boundary": grid.counts, "correction": grid.counts}, plan.collapse(scale * w))

    result = run_estimator(kernel, n, seed, workers, times_q, projection, keep_samples)
    return _pack(result, full_result, scalar)


def estimate_density_K_bw(model: CoefficientSet, x0, t, T, intensity=None, n=100_000, seed=0, workers=1,
                          full_result=False, keep_samples=False, projection=None, antithetic=True):
    """Density of the first hitting time at t (scalar or array of times in (0, T])."""
    return _density_k(model, x0, t, T, intensity, n, seed, workers, full_result, keep_samples, projection,
                      antithetic, derivative=False)


def _density_d(model, x0, z, T, intensity, n, seed, workers, full_result, keep_samples, projection,
               antithetic, derivative, centred):
    intensity = default_intensity(T) if intensity is None else float(intensity)
    _check(T, intensity, n)
    points = np.atleast_1d(np.asarray(z, dtype=float))
    ctx = BackwardWeightContext(model)
    L = ctx.barrier
    scalar = np.ndim(z) == 0
    if x0 >= L:
        return _pack(constant_result(np.zeros_like(points), n, points), full_result, scalar)
    scale = np.exp(intensity * T)

    def kernel(cs: ChunkStream):
        grid = _grid(T, intensity, cs, antithetic)
        plan = grid.plan
        start = np.broadcast_to(points, (plan.rows, points.size))
        part = d_branch(ctx, grid, start, x0, T, cs, intensity, derivative, centred)
        return ChunkContribution({"interior": plan.collapse(scale * part)}, {"interior": grid.counts},
                                 plan.collapse(np.full(plan.rows, scale)))

    result = run_estimator(kernel, n, seed, workers, points, projection, keep_samples)
    return _pack(result, full_result, scalar)


def estimate_density_D_bw(model: CoefficientSet, x0, z, T, intensity=None, n=100_000, seed=0, workers=1,
                          full_result=False, keep_samples=False, projection=None, antithetic=True, centred=False):
    """Killed density at z (scalar or array of points < L)."""
    return _density_d(model, x0, z, T, intensity, n, seed, workers, full_result, keep_samples, projection,
                      antithetic, derivative=False, centred=centred)


def _killed_functional_dx(model, h, x0, T, intensity, proposal, n, seed, workers, full_result, keep_samples,
                          antithetic):
    intensity = default_intensity(T) if intensity is None else float(intensity)
    _check(T, intensity, n)
    ctx = BackwardWeightContext(model)
    if x0 >= ctx.barrier:
        return _pack(constant_result(0.0, n), full_result, True)
    proposal = default_proposal(model, x0, T) if proposal is None else proposal
    scale = np.exp(intensity * T)

    def kernel(cs: ChunkStream):
        grid = _grid(T, intensity, cs, antithetic)
        plan = grid.plan
        z = proposal.sample(cs.uniforms(Role.PROPOSAL))
        pay = np.asarray(h(z), dtype=float) / proposal.density(z)
        part = d_branch(ctx, grid, plan.expand(z), x0, T, cs, intensity, derivative=True, centred=True)
        return ChunkContribution({"interior": plan.collapse(scale * plan.expand(pay) * part)},
                                 {"interior": grid.counts}, plan.collapse(np.full(plan.rows, scale)))

    result = run_estimator(kernel, n, seed, workers, keep_samples=keep_samples)
    return _pack(result, full_result, True)


def estimate_dx(kind, model: CoefficientSet, x0, T, *, t=None, z=None, h=None, intensity=None, proposal=None,
                n=100_000, seed=0, workers=1, full_result=False, keep_samples=False, antithetic=True):
    """x0-derivative of the killed density at z, the hitting density at t, or
    of E[h(X_T) 1{tau > T}] for a state payoff h.
    """
    if kind == "densityD":
        if z is None:
            raise ValueError("densityD needs z")
        return _density_d(model, x0, z, T, intensity, n, seed, workers, full_result, keep_samples, None,
                          antithetic, derivative=True, centred=True)
    if kind == "densityK":
        if t is None:
            raise ValueError("densityK needs t")
        return _density_k(model, x0, t, T, intensity, n, seed, workers, full_result, keep_samples, None,
                          antithetic, derivative=True)
    if kind == "killedFunctional":
        if h is None:
            raise ValueError("killedFunctional needs h")
        return _killed_functional_dx(model, h, x0, T, intensity, proposal, n, seed, workers, full_result,
                                     keep_samples, antithetic)
    raise ValueError(f"unknown derivative kind {kind!r}; expected one of {DERIVATIVE_KINDS}")
