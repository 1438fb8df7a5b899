"""Closed forms for Brownian motion with constant drift and volatility, the
transformed-model oracle, and biased Euler baselines.

With l = L - x > 0 the first hitting time is inverse Gaussian.  The killed
density follows from the reflection density by a Girsanov factor.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import log_ndtr, ndtr

from .coefficients import CoefficientSet, lamperti_inverse
from .engine import ChunkContribution, EstimateSummary, run_estimator
from .kernels import bridge_survival_raw, gauss_raw, killed_density_dx_raw, killed_density_raw
from .payoffs import indicator_before
from .sampling import ChunkStream, Role, bridge_hit_time


@dataclass(frozen=True)
class DriftedBMOracle:
    drift: float
    vol: float
    barrier: float
    start: float

    def __post_init__(self):
        if not self.vol > 0:
            raise ValueError("vol must be > 0")
        if not self.start < self.barrier:
            raise ValueError("start must lie below the barrier")

    @property
    def gap(self):
        return self.barrier - self.start

    @property
    def variance(self):
        return self.vol * self.vol


def _time(t):
    t = np.asarray(t, dtype=float)
    if np.any(t <= 0):
        raise ValueError("time must be > 0")
    return t


def oracle_hit_density(o: DriftedBMOracle, t):
    """Inverse-Gaussian density of the first hitting time."""
    t = _time(t)
    l, a, b = o.gap, o.variance, o.drift
    return l / np.sqrt(2.0 * np.pi * a * t ** 3) * np.exp(-((l - b * t) ** 2) / (2.0 * a * t))


def _cdf_parts(o, t):
    l, s, b = o.gap, o.vol, o.drift
    root = s * np.sqrt(t)
    d1 = (b * t - l) / root
    d2 = (-l - b * t) / root
    return d1, d2, root, 2.0 * b * l / o.variance


def oracle_hit_cdf(o: DriftedBMOracle, t):
    """P(tau <= t)."""
    t = _time(t)
    d1, d2, _, expo = _cdf_parts(o, t)
    return np.clip(ndtr(d1) + np.exp(expo + log_ndtr(d2)), 0.0, 1.0)


def oracle_survival(o: DriftedBMOracle, T):
    """P(tau > T)."""
    return 1.0 - oracle_hit_cdf(o, T)


def oracle_killed_density(o: DriftedBMOracle, T, z):
    """Density of X_T on {tau > T}."""
    T = _time(T)
    z = np.asarray(z, dtype=float)
    a, b = o.variance, o.drift
    # the tilt folded into the free Gaussian: g(aT, z - x) e^{...} = g(aT, z - x - bT)
    return gauss_raw(a * T, z - o.start - b * T) * bridge_survival_raw(a, o.barrier, T, o.start, z)


def oracle_atom_infinity(o: DriftedBMOracle):
    """P(tau = infinity): 1 - exp(-2 |b| l / sigma^2) for b < 0, else 0."""
    if o.drift >= 0:
        return 0.0
    return float(-np.expm1(-2.0 * abs(o.drift) * o.gap / o.variance))


# --- start-point derivatives ---------------------------------------------------

def oracle_killed_density_dx(o: DriftedBMOracle, T, z):
    T = _time(T)
    z = np.asarray(z, dtype=float)
    a, b, x, L = o.variance, o.drift, o.start, o.barrier
    with np.errstate(over="ignore", invalid="ignore"):
        tilt = np.exp(b / a * (z - x) - b * b * T / (2.0 * a))
        val = tilt * (killed_density_dx_raw(a, L, T, x, z) - b / a * killed_density_raw(a, L, T, x, z))
    # inf * 0 only where the Gaussian factor has underflowed
    return np.where(np.isfinite(val), val, 0.0)


def oracle_hit_density_dx(o: DriftedBMOracle, t):
    t = _time(t)
    l = o.gap
    return -oracle_hit_density(o, t) * (1.0 / l - (l - o.drift * t) / (o.variance * t))


def oracle_survival_dx(o: DriftedBMOracle, T):
    """d/dx P(tau > T); negative, since a start closer to L survives less."""
    T = _time(T)
    d1, d2, root, expo = _cdf_parts(o, T)
    phi = lambda d: np.exp(-0.5 * d * d) / np.sqrt(2.0 * np.pi)
    reflected = np.exp(expo + log_ndtr(d2))
    return (-phi(d1) / root + (2.0 * o.drift / o.variance) * reflected
            - np.exp(expo) * phi(d2) / root)


# --- transformed model -----------------------------------------------------------

@dataclass(frozen=True)
class LampertiOracle:
    """X = F(Y), F(y) = y + strength log cosh y, Y unit-volatility BM with drift."""

    drift: float
    strength: float
    barrier: float
    start: float

    @property
    def latent(self) -> DriftedBMOracle:
        return DriftedBMOracle(self.drift, 1.0, float(lamperti_inverse(self.barrier, self.strength)),
                               float(lamperti_inverse(self.start, self.strength)))

    def hit_density(self, t):
        return oracle_hit_density(self.latent, t)

    def hit_cdf(self, t):
        return oracle_hit_cdf(self.latent, t)

    def killed_density(self, T, z):
        y = lamperti_inverse(np.asarray(z, dtype=float), self.strength)
        slope = 1.0 + self.strength * np.tanh(y)
        return oracle_killed_density(self.latent, T, y) / slope

    def atom_infinity(self):
        return oracle_atom_infinity(self.latent)


def crossing_probability(oracle, t):
    """P(tau <= t) for either oracle type."""
    if isinstance(oracle, LampertiOracle):
        return oracle.hit_cdf(t)
    return oracle_hit_cdf(oracle, t)


def oracle_for(model: CoefficientSet, x0):
    """Closed-form oracle of a built-in model when one exists, else None."""
    p = model.params
    if model.name == "ConstantBM":
        return DriftedBMOracle(p["drift"], p["sigma"], model.barrier, x0)
    if model.name == "LampertiDriftedBM":
        return LampertiOracle(p["drift"], p["strength"], model.barrier, x0)
    return None


# --- Euler baselines ----------------------------------------------------------------

def _baseline(model: CoefficientSet, x0, T, steps, n, seed, workers, h, bridge):
    steps = int(steps)
    if steps < 1:
        raise ValueError("steps must be >= 1")
    if not T > 0:
        raise ValueError("T must be > 0")
    h = indicator_before(T) if h is None else h
    L = model.barrier
    dt = T / steps
    sq = np.sqrt(dt)
    last_before_T = np.nextafter(float(T), 0.0)

    def kernel(cs: ChunkStream):
        m = cs.size
        x = np.full(m, float(x0))
        alive = x < L
        tau = np.where(alive, np.inf, 0.0)
        for i in range(steps):
            v = model.values(x)
            nxt = x + v.drift * dt + np.sqrt(v.variance) * sq * cs.normals(Role.BASELINE, i)
            t_end = (i + 1) * dt
            hit = alive & (nxt >= L)
            tau = np.where(hit, t_end, tau)
            if bridge:
                # crossing of the frozen bridge between two points below L
                lam = bridge_survival_raw(v.variance, L, dt, x, np.minimum(nxt, L))
                cross = alive & ~hit & (cs.uniforms(Role.BASELINE_BRIDGE, 3 * i) >= lam)
                inside = bridge_hit_time(v.variance, L, dt, x, nxt, cs.normals(Role.BASELINE_BRIDGE, 3 * i + 1),
                                         cs.uniforms(Role.BASELINE_BRIDGE, 3 * i + 2))
                tau = np.where(cross, i * dt + inside, tau)
                hit = hit | cross
            alive = alive & ~hit
            x = np.where(alive, nxt, x)
        exited = np.isfinite(tau)
        # a crossing found at the last node happened before T
        tau = np.minimum(tau, last_before_T)
        boundary = np.where(exited, h(np.where(exited, tau, T), np.full(m, L)), 0.0)
        interior = np.where(exited, 0.0, h(np.full(m, T), x))
        zero = np.zeros(m, dtype=np.int64)
        return ChunkContribution({"interior": interior, "boundary": boundary},
                                 {"interior": zero, "boundary": zero}, np.ones(m))

    return run_estimator(kernel, n, seed, workers).summary


def baseline_discrete_euler(model: CoefficientSet, x0, T, steps, n=100_000, seed=0, workers=1,
                            h=None) -> EstimateSummary:
    """Euler scheme with the crossing checked only at grid points.

    Default payoff 1{tau < T}, the crossing probability.
    """
    return _baseline(model, x0, T, steps, n, seed, workers, h, bridge=False)


def baseline_bridge_euler(model: CoefficientSet, x0, T, steps, n=100_000, seed=0, workers=1,
                          h=None) -> EstimateSummary:
    """Euler scheme with a Brownian-bridge crossing test inside each step.

    The bridge uses the variance frozen at the left node of the step.
    """
    return _baseline(model, x0, T, steps, n, seed, workers, h, bridge=True)


__all__ = [
    "DriftedBMOracle", "LampertiOracle", "oracle_hit_density", "oracle_hit_cdf", "oracle_survival",
    "oracle_killed_density", "oracle_atom_infinity", "oracle_killed_density_dx", "oracle_hit_density_dx",
    "oracle_survival_dx", "crossing_probability", "oracle_for", "baseline_discrete_euler", "baseline_bridge_euler",
]
