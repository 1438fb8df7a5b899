"""Chunked, schedule-independent Monte Carlo driver and result summaries.

A kernel maps one ``ChunkStream`` to per-sample contributions.  Each chunk is
reduced on its own (pairwise sums inside numpy) and chunk moments are merged
in chunk order with Chan's update, so the result does not depend on the number
of workers or on which worker ran which chunk.
"""
from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .sampling import CHUNK_SIZE, ChunkStream

BRANCHES = ("interior", "boundary", "correction")
# series orders tallied separately; the last bucket collects everything above
ORDER_BUCKETS = 3


@dataclass
class ChunkContribution:
    """Per-sample contributions of one chunk.

    ``branches`` maps a branch tag to an (m, q) array; ``orders`` maps the same
    tag to the (m,) series order each sample's contribution belongs to;
    ``weights`` holds the accumulated parametrix weight per sample (m,).
    """

    branches: dict
    orders: dict
    weights: np.ndarray


@dataclass
class _Moments:
    count: int
    mean: np.ndarray
    m2: np.ndarray

    @classmethod
    def of(cls, values):
        mean = values.mean(axis=0)
        dev = values - mean
        return cls(values.shape[0], mean, np.sum(dev * dev, axis=0))

    def merge(self, other: "_Moments") -> "_Moments":
        n = self.count + other.count
        delta = other.mean - self.mean
        mean = self.mean + delta * (other.count / n)
        m2 = self.m2 + other.m2 + delta * delta * (self.count * other.count / n)
        return _Moments(n, mean, m2)

    def std_error(self):
        if self.count < 2:
            return np.full_like(self.mean, np.inf)
        return np.sqrt(self.m2 / (self.count - 1) / self.count)


@dataclass
class EstimateSummary:
    n_samples: int
    mean: float
    std_error: float
    branch_means: dict
    max_abs_weight: float
    wall_seconds: float
    effective_sample_size: float = float("nan")
    order_means: list = field(default_factory=list)
    order_std_errors: list = field(default_factory=list)
    # std. error of the sum of order buckets 0..k, k = 0, 1, ...
    cumulative_std_errors: list = field(default_factory=list)
    query_point: float = float("nan")

    @property
    def branch_triple(self):
        return tuple(self.branch_means.get(b, 0.0) for b in BRANCHES)

    def to_dict(self):
        return {
            "query_point": self.query_point,
            "n_samples": self.n_samples,
            "mean": self.mean,
            "std_error": self.std_error,
            "branch_means": dict(self.branch_means),
            "order_means": list(self.order_means),
            "order_std_errors": list(self.order_std_errors),
            "cumulative_std_errors": list(self.cumulative_std_errors),
            "max_abs_weight": self.max_abs_weight,
            "effective_sample_size": self.effective_sample_size,
            "wall_seconds": self.wall_seconds,
        }


@dataclass
class EstimateResult:
    summaries: list
    projections: list
    samples: np.ndarray | None = None

    @property
    def summary(self) -> EstimateSummary:
        if len(self.summaries) != 1:
            raise ValueError("result holds several query points; use .summaries")
        return self.summaries[0]


@dataclass
class _ChunkReduction:
    total: _Moments
    by_order: list
    cumulative: list
    branch_sums: dict
    projected: _Moments | None
    max_abs_weight: float
    abs_weight_sum: float
    sq_weight_sum: float
    samples: np.ndarray | None


def _reduce(c: ChunkContribution, projection, keep_samples) -> _ChunkReduction:
    total = None
    by_order = [None] * ORDER_BUCKETS
    branch_sums = {}
    for tag, values in c.branches.items():
        values = np.asarray(values, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        total = values if total is None else total + values
        branch_sums[tag] = values.sum(axis=0)
        order = np.minimum(np.asarray(c.orders[tag]), ORDER_BUCKETS - 1)
        for k in range(ORDER_BUCKETS):
            part = np.where((order == k)[:, None], values, 0.0)
            by_order[k] = part if by_order[k] is None else by_order[k] + part
    w = np.abs(np.asarray(c.weights, dtype=float))
    running = np.cumsum(np.stack(by_order), axis=0)
    return _ChunkReduction(
        _Moments.of(total),
        [_Moments.of(v) for v in by_order],
        [_Moments.of(v) for v in running],
        branch_sums,
        _Moments.of(total @ projection) if projection is not None else None,
        float(w.max()) if w.size else 0.0,
        float(w.sum()),
        float(np.sum(w * w)),
        total.copy() if keep_samples else None,
    )


def run_estimator(kernel, n, seed, workers=1, query_points=None, projection=None,
                  keep_samples=False) -> EstimateResult:
    """Evaluate ``kernel`` on ``n`` samples split into fixed-size chunks.

    ``projection`` is an optional (q, r) matrix; the summaries of
    ``contribution @ projection`` (e.g. quadrature sums of a curve) are
    returned with properly correlated standard errors.
    """
    n = int(n)
    if n < 1:
        raise ValueError("n must be >= 1")
    start = time.perf_counter()
    n_chunks = -(-n // CHUNK_SIZE)
    proj = None if projection is None else np.asarray(projection, dtype=float)

    def work(chunk):
        size = min(CHUNK_SIZE, n - chunk * CHUNK_SIZE)
        return _reduce(kernel(ChunkStream(seed, chunk, size)), proj, keep_samples)

    if workers <= 1:
        parts = [work(c) for c in range(n_chunks)]
    else:
        with ThreadPoolExecutor(max_workers=int(workers)) as pool:
            parts = list(pool.map(work, range(n_chunks)))

    total = parts[0].total
    by_order = list(parts[0].by_order)
    cumulative = list(parts[0].cumulative)
    branch_sums = {k: v.copy() for k, v in parts[0].branch_sums.items()}
    projected = parts[0].projected
    for p in parts[1:]:
        total = total.merge(p.total)
        by_order = [a.merge(b) for a, b in zip(by_order, p.by_order)]
        cumulative = [a.merge(b) for a, b in zip(cumulative, p.cumulative)]
        for k, v in p.branch_sums.items():
            branch_sums[k] = branch_sums[k] + v if k in branch_sums else v.copy()
        if projected is not None:
            projected = projected.merge(p.projected)
    max_w = max(p.max_abs_weight for p in parts)
    abs_sum = sum(p.abs_weight_sum for p in parts)
    sq_sum = sum(p.sq_weight_sum for p in parts)
    ess = abs_sum * abs_sum / sq_sum if sq_sum > 0 else float("nan")
    wall = time.perf_counter() - start

    q = total.mean.shape[0]
    points = np.full(q, np.nan) if query_points is None else np.broadcast_to(np.asarray(query_points, float), (q,))
    se = total.std_error()
    order_se = [m.std_error() for m in by_order]
    cumulative_se = [m.std_error() for m in cumulative]
    summaries = []
    for j in range(q):
        summaries.append(EstimateSummary(
            n_samples=n,
            mean=float(total.mean[j]),
            std_error=float(se[j]),
            branch_means={b: float(branch_sums[b][j] / n) if b in branch_sums else 0.0 for b in BRANCHES},
            max_abs_weight=max_w,
            wall_seconds=wall,
            effective_sample_size=ess,
            order_means=[float(m.mean[j]) for m in by_order],
            order_std_errors=[float(s[j]) for s in order_se],
            cumulative_std_errors=[float(s[j]) for s in cumulative_se],
            query_point=float(points[j]),
        ))
    projections = []
    if projected is not None:
        pse = projected.std_error()
        for r in range(projected.mean.shape[0]):
            projections.append(EstimateSummary(n, float(projected.mean[r]), float(pse[r]), {}, max_w, wall, ess))
    samples = np.concatenate([p.samples for p in parts]) if keep_samples else None
    return EstimateResult(summaries, projections, samples)


def constant_result(value, n, query_points=None) -> EstimateResult:
    """Result for queries answered exactly (e.g. start point on the barrier)."""
    values = np.atleast_1d(np.asarray(value, dtype=float))
    points = np.full(values.shape, np.nan) if query_points is None else np.atleast_1d(query_points)
    out = [EstimateSummary(int(n), float(v), 0.0, {"interior": float(v), "boundary": 0.0, "correction": 0.0},
                           1.0, 0.0, float(n), [float(v), 0.0, 0.0], [0.0, 0.0, 0.0], [0.0, 0.0, 0.0],
                           float(p))
           for v, p in zip(values, points)]
    return EstimateResult(out, [])
