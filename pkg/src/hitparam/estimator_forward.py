"""Unbiased forward-parametrix estimators (H1 models).

One sample: Poisson(lambda T) jump times, a driftless Euler chain with the
coefficient frozen at each step's start, the accumulated weight
Gamma_N = prod_j theta_bar(step j) / lambda, and on the last interval the frozen
process sampled exactly (Gaussian end point, bridge survival decision, bridge
hitting time).  The boundary correction multiplies the exit part by
(a(L) - a(X_N)) / a(X_N); it is the term of the next series order.

Variance controls, all unbiased:
- sign patterns of the step normals (``AntitheticPlan``) cancel the odd part
  of each step weight;
- the last interval is drawn ``terminal_draws`` times in antithetic pairs;
- for the hitting density the last Euler step is paired with a draw from a
  Rayleigh layer below L and combined by the balance heuristic, because the
  final exit-time density is singular where the chain ends near L.

Branch tags: ``interior`` = main term on survival, ``boundary`` = main term on
exit, ``correction`` = boundary-correction term.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .coefficients import CoefficientSet
from .engine import ChunkContribution, EstimateResult, constant_result, run_estimator
from .kernels import (
    bridge_survival_raw,
    exit_time_density_raw,
    killed_density_raw,
)
from .sampling import (
    AntitheticPlan,
    ChunkStream,
    Role,
    balance_factor,
    balance_pair,
    bridge_hit_time,
    jump_grids,
    rayleigh_below,
    rayleigh_below_density,
)
from .payoffs import indicator_at
from .weights_forward import ForwardWeightContext, mu1_survival_raw, theta_bar_raw


def default_intensity(T):
    return 1.0 / T


def _check(T, intensity, n):
    if not T > 0:
        raise ValueError("T must be > 0")
    if not intensity > 0:
        raise ValueError("intensity must be > 0")
    if int(n) < 1:
        raise ValueError("n must be >= 1")


DEFAULT_MAX_FLIPS = 10


def forward_chain(ctx: ForwardWeightContext, x0, T, intensity, cs: ChunkStream, max_flips=DEFAULT_MAX_FLIPS,
                  skip_last=False):
    """Run the weighted Euler chain up to the last jump time.

    Returns a ``Chain`` with the antithetic plan, jump counts per sample and,
    per row, the last jump time, the state there and the accumulated weight.
    With ``skip_last`` the chain stops one jump early (at the second-to-last
    jump time, or at 0 when N = 1) so the last step can be drawn separately.
    """
    counts, times = jump_grids(T, intensity, cs)
    plan = AntitheticPlan(counts, max_flips)
    row_counts = plan.expand(counts)
    row_times = plan.expand(times)
    L = ctx.barrier
    state = np.full(plan.rows, float(x0))
    weight = np.ones(plan.rows)
    last = np.zeros(plan.rows)
    stop = row_counts - 1 if skip_last else row_counts
    for j in range(times.shape[1]):
        idx = np.nonzero(stop > j)[0]
        if idx.size == 0:
            break
        x = state[idx]
        dt = row_times[idx, j] - last[idx]
        a_x = ctx.a(x)
        normal = (plan.expand(cs.normals(Role.EULER, j)) * plan.signs(j))[idx]
        z = x + np.sqrt(a_x * dt) * normal
        w = theta_bar_raw(dt, x, z, a_x, ctx.values(z), L) / intensity
        state[idx] = z
        weight[idx] *= w
        last[idx] = row_times[idx, j]
    return Chain(plan, counts, row_counts, row_times, last, state, weight)


@dataclass
class Chain:
    plan: AntitheticPlan
    counts: np.ndarray
    row_counts: np.ndarray
    row_times: np.ndarray
    last: np.ndarray
    state: np.ndarray
    weight: np.ndarray

    def unpack(self):
        return self.plan, self.counts, self.last, self.state, self.weight


def final_step_inputs(chain: Chain, cs: ChunkStream, role=Role.EULER):
    """Time and signed Euler normal of each row's last step (rows with N >= 1)."""
    plan = chain.plan
    t_last = np.zeros(plan.rows)
    normal = np.zeros(plan.rows)
    for j in range(chain.row_times.shape[1]):
        sel = np.nonzero(chain.row_counts - 1 == j)[0]
        if sel.size:
            t_last[sel] = chain.row_times[sel, j]
            normal[sel] = cs.normals(role, j)[plan.owner[sel]] * plan.signs(j)[sel]
    return t_last, normal


def _pack(result: EstimateResult, full_result, scalar):
    if full_result:
        return result
    return result.summaries[0] if scalar else result.summaries


def _flips(antithetic):
    return DEFAULT_MAX_FLIPS if antithetic else 0


def _contribution(plan, counts, branches, orders_offset, weight):
    return ChunkContribution(
        {tag: plan.collapse(v) for tag, v in branches.items()},
        {tag: counts + orders_offset.get(tag, 0) for tag in branches},
        plan.collapse(weight),
    )


DEFAULT_TERMINAL_DRAWS = 4


def terminal_normals(cs: ChunkStream, own, k):
    """Normal of last-interval draw k; draws come in antithetic pairs."""
    sign = -1.0 if k % 2 else 1.0
    return sign * cs.normals(Role.TERMINAL, k // 2)[own]


def estimate_functional(model: CoefficientSet, h, x0, T, intensity=None, n=100_000, seed=0,
                        workers=1, full_result=False, keep_samples=False, antithetic=True,
                        terminal_draws=DEFAULT_TERMINAL_DRAWS):
    """E[h(tau ^ T, X_{tau ^ T})] for a payoff h(t, x).

    The frozen last interval is sampled exactly ``terminal_draws`` times per
    sample (antithetic pairs of the end-point normal) and averaged.
    """
    intensity = default_intensity(T) if intensity is None else float(intensity)
    _check(T, intensity, n)
    draws = int(terminal_draws)
    if draws < 1:
        raise ValueError("terminal_draws must be >= 1")
    ctx = ForwardWeightContext(model)
    L = ctx.barrier
    if x0 >= L:
        return _pack(constant_result(float(np.asarray(h(0.0, x0))), n), full_result, True)
    scale = np.exp(intensity * T)

    def kernel(cs: ChunkStream):
        plan, counts, last, state, weight = forward_chain(ctx, x0, T, intensity, cs, _flips(antithetic)).unpack()
        live = np.nonzero((weight != 0.0) & (state < L))[0]
        x = state[live]
        s = T - last[live]
        a_x = ctx.a(x)
        own = plan.owner[live]
        w = scale * weight[live] / draws
        ratio = (ctx.a_barrier - a_x) / a_x
        branches = {tag: np.zeros(plan.rows) for tag in ("interior", "boundary", "correction")}
        for k in range(draws):
            end = x + np.sqrt(a_x * s) * terminal_normals(cs, own, k)
            survive = cs.uniforms(Role.SURVIVAL, k)[own] < bridge_survival_raw(a_x, L, s, x, end)
            hit = bridge_hit_time(a_x, L, s, x, end, cs.normals(Role.BRIDGE_NORMAL, k)[own],
                                  cs.uniforms(Role.BRIDGE_UNIFORM, k)[own])
            hit_value = np.asarray(h(last[live] + hit, np.full(live.size, L)), dtype=float)
            stay_value = np.asarray(h(np.full(live.size, float(T)), end), dtype=float)
            branches["interior"][live] += np.where(survive, w * stay_value, 0.0)
            branches["boundary"][live] += np.where(survive, 0.0, w * hit_value)
            branches["correction"][live] += np.where(survive, 0.0, w * ratio * hit_value)
        return _contribution(plan, counts, branches, {"correction": 1}, scale * weight)

    result = run_estimator(kernel, n, seed, workers, keep_samples=keep_samples)
    return _pack(result, full_result, True)


def estimate_density_K(model: CoefficientSet, x0, t, T, intensity=None, n=100_000, seed=0,
                       workers=1, full_result=False, keep_samples=False, projection=None, antithetic=True):
    """Density of the first hitting time at t (scalar or array of times in (0, T])."""
    intensity = default_intensity(T) if intensity is None else float(intensity)
    _check(T, intensity, n)
    times_q = np.atleast_1d(np.asarray(t, dtype=float))
    if np.any(times_q <= 0) or np.any(times_q > T):
        raise ValueError("query times must lie in (0, T]")
    ctx = ForwardWeightContext(model)
    L = ctx.barrier
    scalar = np.ndim(t) == 0
    if x0 >= L:
        return _pack(constant_result(np.zeros_like(times_q), n, times_q), full_result, scalar)
    scale = np.exp(intensity * T)

    width_scale = model.ellipticity_upper

    def kernel(cs: ChunkStream):
        chain = forward_chain(ctx, x0, T, intensity, cs, _flips(antithetic), skip_last=True)
        plan = chain.plan
        t_last, normal = final_step_inputs(chain, cs)
        q = times_q.size
        boundary = np.zeros((plan.rows, q))
        correction = np.zeros((plan.rows, q))
        ratio0 = (ctx.a_barrier - ctx.a(np.array(x0))) / ctx.a(np.array(x0))
        f0 = exit_time_density_raw(ctx.a(np.array(x0)), L, float(x0), times_q)
        none = chain.row_counts == 0
        boundary[none] = scale * f0
        correction[none] = scale * f0 * ratio0
        idx = np.nonzero(~none & (chain.weight != 0.0))[0]
        if idx.size:
            own = plan.owner[idx]
            x = chain.state[idx][:, None]
            a_x = ctx.a(chain.state[idx])[:, None]
            dt = (t_last[idx] - chain.last[idx])[:, None]
            s_left = times_q[None, :] - t_last[idx][:, None]
            valid = s_left > 0.0
            s_left = np.where(valid, s_left, 1.0)
            w = scale * chain.weight[idx][:, None] / intensity
            width_sq = width_scale * s_left
            layer = rayleigh_below(L, width_sq, cs.uniforms(Role.LAYER_DRAW)[own][:, None])
            for z, g, mix in balance_pair(x, a_x * dt, normal[idx][:, None], layer,
                                          lambda y: rayleigh_below_density(L, width_sq, y)):
                factor = balance_factor(g, mix)
                vz = ctx.values(z)
                a_z = vz.variance
                step = np.where(valid, theta_bar_raw(dt, x, z, a_x, vz, L) * factor, 0.0)
                main = w * step * exit_time_density_raw(a_z, L, z, s_left)
                boundary[idx] += main
                correction[idx] += main * (ctx.a_barrier - a_z) / a_z
        return _contribution(plan, chain.counts, {"boundary": boundary, "correction": correction},
                             {"correction": 1}, scale * chain.weight)

    result = run_estimator(kernel, n, seed, workers, times_q, projection, keep_samples)
    return _pack(result, full_result, scalar)


def estimate_density_D(model: CoefficientSet, x0, z, T, intensity=None, n=100_000, seed=0,
                       workers=1, full_result=False, keep_samples=False, projection=None, antithetic=True):
    """Density of the killed process at z (scalar or array of points < L)."""
    intensity = default_intensity(T) if intensity is None else float(intensity)
    _check(T, intensity, n)
    points = np.atleast_1d(np.asarray(z, dtype=float))
    ctx = ForwardWeightContext(model)
    L = ctx.barrier
    scalar = np.ndim(z) == 0
    if x0 >= L:
        return _pack(constant_result(np.zeros_like(points), n, points), full_result, scalar)
    scale = np.exp(intensity * T)

    def kernel(cs: ChunkStream):
        plan, counts, last, state, weight = forward_chain(ctx, x0, T, intensity, cs, _flips(antithetic)).unpack()
        a_x = ctx.a(state)
        s = (T - last)[:, None]
        q = killed_density_raw(a_x[:, None], L, s, state[:, None], points[None, :])
        return _contribution(plan, counts, {"interior": (scale * weight)[:, None] * q}, {}, scale * weight)

    result = run_estimator(kernel, n, seed, workers, points, projection, keep_samples)
    return _pack(result, full_result, scalar)


def estimate_atom(model: CoefficientSet, x0, T, intensity=None, n=100_000, seed=0, workers=1,
                  full_result=False, antithetic=True, terminal_draws=DEFAULT_TERMINAL_DRAWS):
    """P(tau > T), the mass of the stopped law at time T."""
    return estimate_functional(model, indicator_at(T), x0, T, intensity, n, seed, workers, full_result,
                               antithetic=antithetic, terminal_draws=terminal_draws)


def estimate_ibp(model: CoefficientSet, h, x0, T, intensity=None, n=100_000, seed=0, workers=1,
                 full_result=False, keep_samples=False, antithetic=True, terminal_draws=DEFAULT_TERMINAL_DRAWS):
    """E[h'(X_T) 1{tau > T}] using h only (integration by parts in the end point).

    ``h`` is a function of the state alone.
    """
    intensity = default_intensity(T) if intensity is None else float(intensity)
    _check(T, intensity, n)
    draws = int(terminal_draws)
    ctx = ForwardWeightContext(model)
    L = ctx.barrier
    if x0 >= L:
        return _pack(constant_result(0.0, n), full_result, True)
    scale = np.exp(intensity * T)

    def kernel(cs: ChunkStream):
        plan, counts, last, state, weight = forward_chain(ctx, x0, T, intensity, cs, _flips(antithetic)).unpack()
        a_x = ctx.a(state)
        s = T - last
        total = np.zeros(plan.rows)
        for k in range(draws):
            end = state + np.sqrt(a_x * s) * terminal_normals(cs, plan.owner, k)
            score = mu1_survival_raw(s, state, end, a_x, L)
            total += np.where(score != 0.0, np.asarray(h(np.minimum(end, L)), dtype=float) * score, 0.0)
        return _contribution(plan, counts, {"interior": -scale * weight * total / draws}, {}, scale * weight)

    result = run_estimator(kernel, n, seed, workers, keep_samples=keep_samples)
    return _pack(result, full_result, True)
