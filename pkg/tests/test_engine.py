import numpy as np
import pytest

from hitparam.engine import ChunkContribution, EstimateSummary, constant_result, run_estimator
from hitparam.sampling import CHUNK_SIZE, ChunkStream, Role


def kernel(cs: ChunkStream):
    u = cs.uniforms(Role.EULER)
    order = (cs.uniforms(Role.JUMP_COUNT) * 3).astype(np.int64)
    base = np.stack([u, u * u], axis=1)
    return ChunkContribution({"interior": base, "boundary": 0.5 * base}, {"interior": order, "boundary": order + 1},
                             np.ones(cs.size) * (1 + u))


N = 3 * CHUNK_SIZE + 123


def flat_values():
    parts = []
    for c in range(-(-N // CHUNK_SIZE)):
        cs = ChunkStream(4, c, min(CHUNK_SIZE, N - c * CHUNK_SIZE))
        parts.append(1.5 * cs.uniforms(Role.EULER))
    return np.concatenate(parts)


def test_moments_match_flat_computation():
    res = run_estimator(kernel, N, seed=4, query_points=[0.0, 1.0])
    v = flat_values()
    s = res.summaries[0]
    assert s.mean == pytest.approx(v.mean(), rel=1e-13)
    assert s.std_error == pytest.approx(v.std(ddof=1) / np.sqrt(N), rel=1e-10)
    assert s.branch_means["interior"] == pytest.approx(v.mean() / 1.5, rel=1e-13)
    assert s.branch_means["correction"] == 0.0
    assert s.query_point == 0.0 and res.summaries[1].query_point == 1.0
    assert s.n_samples == N


def test_order_buckets_and_cumulative():
    s = run_estimator(kernel, N, seed=4, query_points=[0.0, 1.0]).summaries[0]
    assert sum(s.order_means) == pytest.approx(s.mean, rel=1e-12)
    assert len(s.cumulative_std_errors) == 3
    assert s.cumulative_std_errors[-1] == pytest.approx(s.std_error, rel=1e-12)


def test_worker_count_invariance_is_bitwise():
    a = run_estimator(kernel, N, seed=4, workers=1, query_points=[0.0, 1.0])
    for w in (4, 16):
        b = run_estimator(kernel, N, seed=4, workers=w, query_points=[0.0, 1.0])
        for x, y in zip(a.summaries, b.summaries):
            dx, dy = x.to_dict(), y.to_dict()
            dx.pop("wall_seconds"), dy.pop("wall_seconds")
            assert repr(dx) == repr(dy)


def test_projection_stderr_accounts_for_correlation():
    proj = np.array([[1.0], [-1.0]])
    res = run_estimator(kernel, N, seed=4, query_points=[0, 1], projection=proj)
    parts = []
    for c in range(-(-N // CHUNK_SIZE)):
        cs = ChunkStream(4, c, min(CHUNK_SIZE, N - c * CHUNK_SIZE))
        u = cs.uniforms(Role.EULER)
        parts.append(1.5 * (u - u * u))
    v = np.concatenate(parts)
    p = res.projections[0]
    assert p.mean == pytest.approx(v.mean(), rel=1e-12)
    assert p.std_error == pytest.approx(v.std(ddof=1) / np.sqrt(N), rel=1e-9)


def test_keep_samples_and_errors():
    res = run_estimator(kernel, 1000, seed=1, keep_samples=True)
    assert res.samples.shape == (1000, 2)
    with pytest.raises(ValueError):
        run_estimator(kernel, 0, seed=1)
    with pytest.raises(ValueError):
        res.summary


def test_constant_result():
    s = constant_result(0.25, 10).summary
    assert (s.mean, s.std_error, s.n_samples) == (0.25, 0.0, 10)
    assert isinstance(s, EstimateSummary)
    assert s.to_dict()["branch_means"]["interior"] == 0.25
