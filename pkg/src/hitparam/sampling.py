"""Counter-based random streams, Poisson grids, Euler steps and exact samplers
for the frozen exit time.

Addressing: every random number is fixed by (master seed, role, chunk, column,
offset) where sample ``i`` lives in chunk ``i // CHUNK_SIZE`` at offset
``i % CHUNK_SIZE`` and ``column`` is the step or jump index.  The Philox key is
(seed, role) and the 256-bit counter starts at (0, column, chunk, 0), so any
single value can be regenerated without touching its neighbours.  Consumption
per sample is fixed (inverse-CDF normals and Poisson counts), which makes
results independent of how chunks are scheduled on workers.
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum

import numpy as np
from scipy.special import ndtri
from scipy.stats import poisson

from .kernels import FrozenParams, _safe_exp, bridge_survival_raw, gauss_raw

CHUNK_SIZE = 16384
_MASK64 = (1 << 64) - 1
_U53 = 2.0 ** -53


class Role(IntEnum):
    """Disjoint sub-streams; the value is part of the Philox key."""

    JUMP_COUNT = 1
    JUMP_TIMES = 2
    EULER = 3
    EULER_BACKWARD_D = 4
    EULER_BACKWARD_K = 5
    TERMINAL = 6
    SURVIVAL = 7
    BRIDGE_NORMAL = 8
    BRIDGE_UNIFORM = 9
    EXIT = 10
    PROPOSAL = 11
    BASELINE = 12
    BASELINE_BRIDGE = 13
    LAYER_DRAW = 14
    CENTER_DRAW = 15


def _key(seed, role):
    return np.array([int(seed) & _MASK64, int(role)], dtype=np.uint64)


def raw_to_uniform(raw):
    """Map uint64 to the open interval (0, 1) on a 2^-53 grid."""
    return ((raw >> np.uint64(11)).astype(np.float64) + 0.5) * _U53


class ChunkStream:
    """All random numbers of one chunk of consecutive sample indices."""

    def __init__(self, seed: int, chunk: int, size: int):
        self.seed = int(seed)
        self.chunk = int(chunk)
        self.size = int(size)

    def raw(self, role, column):
        bg = np.random.Philox(key=_key(self.seed, role),
                              counter=np.array([0, int(column), self.chunk, 0], dtype=np.uint64))
        return bg.random_raw(self.size)

    def uniforms(self, role, column=0):
        return raw_to_uniform(self.raw(role, column))

    def normals(self, role, column=0):
        return ndtri(self.uniforms(role, column))


class SampleStream:
    """Random numbers of one sample index, for replay and scalar use.

    Each role keeps its own column counter, so calling the scalar samplers in
    the estimators' order reproduces the vectorized draws bit for bit.
    """

    def __init__(self, seed: int, index: int):
        self.seed = int(seed)
        self.index = int(index)
        self._columns = {}

    def raw(self, role, column):
        chunk, offset = divmod(self.index, CHUNK_SIZE)
        bg = np.random.Philox(key=_key(self.seed, role),
                              counter=np.array([offset // 4, int(column), chunk, 0], dtype=np.uint64))
        return bg.random_raw(4)[offset % 4]

    def uniform(self, role, column=None):
        if column is None:
            column = self._columns.get(role, 0)
            self._columns[role] = column + 1
        return float(raw_to_uniform(np.array([self.raw(role, column)], dtype=np.uint64))[0])

    def normal(self, role, column=None):
        return float(ndtri(self.uniform(role, column)))


# --- Poisson grids ------------------------------------------------------------

def poisson_inverse_cdf(u, mean):
    """Smallest n with P(N <= n) >= u, vectorized with a fixed table."""
    kmax = int(mean + 40.0 * np.sqrt(mean) + 40)
    cdf = poisson.cdf(np.arange(kmax + 1), mean)
    return np.minimum(np.searchsorted(cdf, u, side="left"), kmax).astype(np.int64)


@dataclass(frozen=True)
class RandomGrid:
    horizon: float
    jump_count: int
    times: np.ndarray  # 0 = t_0 < t_1 < ... < t_N < t_{N+1} = horizon
    intensity: float


def jump_grids(T, intensity, cs: ChunkStream):
    """Jump counts (m,) and sorted jump times (m, max count), padded with inf."""
    counts = poisson_inverse_cdf(cs.uniforms(Role.JUMP_COUNT), intensity * T)
    width = int(counts.max()) if counts.size else 0
    times = np.full((cs.size, width), np.inf)
    for j in range(width):
        col = T * cs.uniforms(Role.JUMP_TIMES, j)
        times[:, j] = np.where(counts > j, col, np.inf)
    times.sort(axis=1)
    return counts, times


def sample_grid(T, intensity, stream: SampleStream) -> RandomGrid:
    """Poisson(intensity * T) jump times on [0, T] for one sample."""
    if not (T > 0 and intensity > 0):
        raise ValueError("T and intensity must be > 0")
    n = int(poisson_inverse_cdf(np.array([stream.uniform(Role.JUMP_COUNT, 0)]), intensity * T)[0])
    u = np.array([T * stream.uniform(Role.JUMP_TIMES, j) for j in range(n)])
    return RandomGrid(float(T), n, np.concatenate(([0.0], np.sort(u), [float(T)])), float(intensity))


def euler_step(x, dt, model, stream: SampleStream, role=Role.EULER):
    """x + sigma(x) sqrt(dt) Z with the coefficient frozen at x (no drift)."""
    if not dt > 0:
        raise ValueError("dt must be > 0")
    g = stream.normal(role)
    return float(x + np.sqrt(float(model.a(np.array(x))) * dt) * g)


def frozen_exit_time(a, L, x, normal):
    """Levy-distributed exit time (L-x)^2 / (a Z^2); 0 if x >= L."""
    gap = np.maximum(L - x, 0.0)
    return gap * gap / (a * normal * normal)


def sample_frozen_exit(p: FrozenParams, x, stream: SampleStream, role=Role.EXIT):
    """Exact draw of the frozen first exit time from x."""
    if x >= p.barrier:
        return 0.0
    return float(frozen_exit_time(p.freeze_variance, p.barrier, x, stream.normal(role)))


def bridge_survival_bernoulli(p: FrozenParams, t, x, z, stream: SampleStream, role=Role.SURVIVAL):
    """True if the Brownian bridge from x to z over [0, t] stays below the barrier."""
    lam = float(bridge_survival_raw(p.freeze_variance, p.barrier, t, np.asarray(x, float), np.asarray(z, float)))
    return stream.uniform(role) < lam


def inverse_gaussian(mean, shape, normal, uniform):
    """Michael-Schucany-Haas transform with fixed consumption (one normal, one uniform).

    Written in a form that stays finite for an infinite mean.  Returns u and 1/u.
    """
    y = normal * normal
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        r = shape / (mean * y)
        root = 1.0 + np.sqrt(1.0 + 4.0 * r)
        cand = 4.0 * shape / (y * root * root)
        accept = uniform * (mean + cand) <= mean
        u = np.where(accept, cand, mean * mean / cand)
        inv_u = np.where(accept, 1.0 / cand, cand / (mean * mean))
    return u, inv_u


def bridge_hit_time(a, L, t, x, z, normal, uniform):
    """Hitting time of L by a Brownian bridge x -> z on [0, t] that crosses L.

    With u = tau / (t - tau), u is inverse Gaussian with mean (L-x)/|L-z| and
    shape (L-x)^2 / (a t).
    """
    gap = L - x
    end_gap = np.maximum(np.abs(L - z), 1e-300)
    _, inv_u = inverse_gaussian(gap / end_gap, gap * gap / (a * t), normal, uniform)
    return t / (1.0 + inv_u)


class AntitheticPlan:
    """Expansion of each sample into the 2^k sign patterns of its first k step normals.

    Row r belongs to sample ``owner[r]`` and flips the normal of step j when bit
    j of its pattern is set (only for j < min(N, max_flips)).  Averaging a
    sample's rows leaves the estimator unbiased, uses no extra random numbers,
    and cancels the part of every step weight that is odd in its increment.
    ``max_flips = 0`` gives the plain estimator.
    """

    def __init__(self, counts, max_flips):
        counts = np.asarray(counts)
        flips = np.minimum(counts, int(max_flips))
        reps = np.left_shift(1, flips).astype(np.int64)
        self.size = counts.size
        self.starts = np.cumsum(reps) - reps
        self.owner = np.repeat(np.arange(counts.size), reps)
        self.pattern = np.arange(self.owner.size) - np.repeat(self.starts, reps)
        self.flips = flips[self.owner]
        self.share = 1.0 / reps[self.owner]

    @property
    def rows(self):
        return self.owner.size

    def expand(self, values):
        return np.asarray(values)[self.owner]

    def signs(self, column):
        flipped = (column < self.flips) & (((self.pattern >> column) & 1) == 1)
        return np.where(flipped, -1.0, 1.0)

    def collapse(self, values):
        """Average row values back to one value per sample."""
        values = np.asarray(values, dtype=float)
        shares = self.share if values.ndim == 1 else self.share[:, None]
        return np.add.reduceat(values * shares, self.starts, axis=0)


# --- two-candidate draws for singular final factors ---------------------------

def rayleigh_below(L, width_sq, uniform):
    """L - R with R Rayleigh of scale sqrt(width_sq)."""
    return L - np.sqrt(-2.0 * width_sq * np.log(uniform))


def rayleigh_below_density(L, width_sq, z):
    gap = L - z
    return np.where(gap > 0.0, gap / width_sq * _safe_exp(-0.5 * gap * gap / width_sq), 0.0)


def balance_pair(x, step_var, normal, alt_state, alt_density):
    """Euler candidate and one alternative candidate for the balance heuristic.

    Returns ``[(state, euler_density, mixture_density), ...]`` for the Euler
    end point x + sqrt(step_var) * normal and for ``alt_state``, where
    mixture_density = euler_density + alt_density(state).  For any kernel k,
    the pair sum of ``k(state) / mixture_density`` has the same mean as
    k(Z) / euler_density(Z) with Z the Euler end point.
    """
    out = []
    for z in (x + np.sqrt(step_var) * normal, alt_state):
        g = gauss_raw(step_var, z - x)
        out.append((z, g, g + alt_density(z)))
    return out


def balance_factor(euler_density, mixture_density):
    """euler_density / mixture_density, 0 where both vanish."""
    with np.errstate(divide="ignore", invalid="ignore"):
        f = euler_density / mixture_density
    return np.where(mixture_density > 0.0, f, 0.0)
