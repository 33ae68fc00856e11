"""EOF completion: SVD oracle checks, exact recovery, convergence, variants."""

import numpy as np
import pytest

from ocfill.dineof import (DataMatrix, DineofConfig, truncated_svd, dineof,
                           edineof, select_rank, field_to_matrix,
                           matrix_to_frames, _binomial_kernel)
from ocfill.grid import SpatioTemporalField, MISSING


# ---------------------------------------------------------------------------
# truncated SVD

def test_svd_identity():
    U, S, V, _ = truncated_svd(np.eye(3), 3)
    np.testing.assert_allclose(S, np.ones(3), atol=1e-10)


def test_svd_rank_one(rng):
    a = rng.standard_normal(30)
    b = rng.standard_normal(20)
    M = np.outer(a, b)
    U, S, V, _ = truncated_svd(M, 1)
    assert S[0] == pytest.approx(np.linalg.norm(a) * np.linalg.norm(b),
                                 rel=1e-10)
    np.testing.assert_allclose(S[0] * np.outer(U[:, 0], V[:, 0]), M,
                               atol=1e-8)


def test_svd_matches_dense_oracle(rng):
    M = rng.standard_normal((50, 40))
    k = 10
    U, S, V, _ = truncated_svd(M, k)
    # orthonormal factors
    np.testing.assert_allclose(U.T @ U, np.eye(k), atol=1e-8)
    np.testing.assert_allclose(V.T @ V, np.eye(k), atol=1e-8)
    assert np.all(np.diff(S) <= 1e-12)
    # residual equals the tail of the dense decomposition
    s_full = np.linalg.svd(M, compute_uv=False)
    np.testing.assert_allclose(S, s_full[:k], rtol=1e-8)
    resid = np.linalg.norm(M - U @ np.diag(S) @ V.T)
    tail = np.sqrt(np.sum(s_full[k:] ** 2))
    assert resid == pytest.approx(tail, rel=1e-6)


def test_svd_rank_out_of_range(rng):
    with pytest.raises(ValueError):
        truncated_svd(rng.standard_normal((5, 4)), 5)
    with pytest.raises(ValueError):
        truncated_svd(rng.standard_normal((5, 4)), 0)


def test_svd_deterministic(rng):
    M = rng.standard_normal((30, 20))
    r1 = truncated_svd(M, 5)
    r2 = truncated_svd(M, 5)
    np.testing.assert_array_equal(r1[1], r2[1])
    np.testing.assert_array_equal(r1[0], r2[0])


# ---------------------------------------------------------------------------
# completion

def low_rank_instance(rng, m=64, n=100, r=2, missing=0.3):
    U = rng.standard_normal((m, r))
    V = rng.standard_normal((n, r))
    M = U @ V.T
    obs = rng.random((m, n)) >= missing
    return M, DataMatrix(X=np.where(obs, M, 0.0), obs_mask=obs)


def test_dineof_no_missing_is_identity(rng):
    M = rng.standard_normal((20, 15))
    data = DataMatrix(X=M, obs_mask=np.ones_like(M, bool))
    res = dineof(data, DineofConfig(rank=5))
    np.testing.assert_array_equal(res.completed, M)
    assert res.n_iter == 1


def test_dineof_exact_rank2_recovery(rng):
    M, data = low_rank_instance(rng, 64, 100, 2, 0.3)
    res = dineof(data, DineofConfig(rank=2, tol=1e-9, max_outer_iter=200))
    assert np.max(np.abs(res.completed - M)) < 1e-6
    # observed entries pass through exactly
    np.testing.assert_array_equal(res.completed[data.obs_mask],
                                  M[data.obs_mask])
    assert not np.any(np.isnan(res.completed))


def test_dineof_observed_fit_monotone(rng):
    M, data = low_rank_instance(rng, 40, 30, 3, 0.4)
    # perturb so the instance is not exactly low-rank
    data = DataMatrix(X=data.X + 0.01 * rng.standard_normal(data.X.shape) *
                      data.obs_mask, obs_mask=data.obs_mask)
    res = dineof(data, DineofConfig(rank=3, tol=1e-8))
    h = np.array(res.obs_rms_history)
    assert np.all(np.diff(h) <= 1e-10)


def test_dineof_full_rank_fixed_point(rng):
    M, data = low_rank_instance(rng, 12, 10, 4, 0.3)
    cfg = DineofConfig(rank=10, tol=1e-7)
    res = dineof(data, cfg)
    # another iteration changes missing entries less than tol
    assert res.final_change < cfg.tol


def test_dineof_all_missing_rejected():
    data = DataMatrix(X=np.zeros((3, 3)), obs_mask=np.zeros((3, 3), bool))
    with pytest.raises(ValueError, match="all entries missing"):
        dineof(data, DineofConfig(rank=1))


def test_dineof_permutation_equivariance(rng):
    M, data = low_rank_instance(rng, 30, 25, 2, 0.3)
    cfg = DineofConfig(rank=2, tol=1e-10)
    base = dineof(data, cfg).completed
    pr = rng.permutation(30)
    pc = rng.permutation(25)
    perm = DataMatrix(X=data.X[pr][:, pc], obs_mask=data.obs_mask[pr][:, pc])
    out = dineof(perm, cfg).completed
    np.testing.assert_allclose(out, base[pr][:, pc], atol=1e-6)


# ---------------------------------------------------------------------------
# rank selection

def test_select_rank_finds_truth(rng):
    M, data = low_rank_instance(rng, 40, 50, 2, 0.2)
    assert select_rank(data, [1, 2, 3], 0.1, seed=5) == 2


def test_select_rank_single_candidate(rng):
    M, data = low_rank_instance(rng, 20, 20, 2, 0.2)
    assert select_rank(data, [7], 0.1, seed=5) == 7


def test_select_rank_order_independent(rng):
    M, data = low_rank_instance(rng, 30, 30, 2, 0.2)
    a = select_rank(data, [3, 1, 2], 0.1, seed=5)
    b = select_rank(data, [1, 2, 3], 0.1, seed=5)
    assert a == b


# ---------------------------------------------------------------------------
# enhanced variant

def test_edineof_width_one_equals_dineof(rng):
    M, data = low_rank_instance(rng, 25, 20, 2, 0.3)
    cfg = DineofConfig(rank=2, tol=1e-8, temporal_filter_width=1)
    np.testing.assert_array_equal(edineof(data, cfg).completed,
                                  dineof(data, cfg).completed)


def test_edineof_even_width_rejected(rng):
    M, data = low_rank_instance(rng, 10, 10, 2, 0.2)
    with pytest.raises(ValueError, match="odd"):
        edineof(data, DineofConfig(rank=2, temporal_filter_width=4))


def test_edineof_constant_in_time_unchanged(rng):
    col = rng.standard_normal(20)
    M = np.tile(col[:, None], (1, 15))
    obs = rng.random((20, 15)) >= 0.3
    data = DataMatrix(X=np.where(obs, M, 0.0), obs_mask=obs)
    res = edineof(data, DineofConfig(rank=1, tol=1e-10,
                                     temporal_filter_width=3))
    assert np.max(np.abs(res.completed - M)) < 1e-6


def test_edineof_smooths_filled_series(rng):
    # white-noise temporal coefficients: the filtered fill-in must have a
    # smaller mean squared first difference than the unfiltered one
    m, n, r = 40, 60, 3
    U = rng.standard_normal((m, r))
    C = rng.standard_normal((r, n))  # temporally white
    M = U @ C
    obs = rng.random((m, n)) >= 0.35
    data = DataMatrix(X=np.where(obs, M, 0.0), obs_mask=obs)
    cfg = DineofConfig(rank=r, tol=1e-8, temporal_filter_width=3)
    plain = dineof(data, cfg).completed
    smooth = edineof(data, cfg).completed
    miss = ~obs

    def msd(X):
        d = np.diff(X, axis=1)
        dm = miss[:, 1:] | miss[:, :-1]
        return np.mean(d[dm] ** 2)

    assert msd(smooth) < msd(plain)


def test_binomial_kernel_width3():
    np.testing.assert_allclose(_binomial_kernel(3), [0.25, 0.5, 0.25])


# ---------------------------------------------------------------------------
# field adapters

def test_field_matrix_roundtrip(rng):
    H, W, T = 6, 5, 4
    land = np.zeros((H, W), bool)
    land[0, :] = True
    valid = ~land[None].repeat(T, 0) & (rng.random((T, H, W)) > 0.3)
    vals = np.where(valid, rng.normal(-2.5, 0.3, (T, H, W)), MISSING)
    f = SpatioTemporalField(values=vals.astype(np.float32), valid_mask=valid,
                            land_mask=land)
    mat, sea = field_to_matrix(f)
    assert mat.X.shape == (int(sea.sum()), T)
    frames = matrix_to_frames(mat.X, sea, T, H, W)
    np.testing.assert_allclose(frames[valid], f.values[valid], rtol=1e-6)
    assert np.all(np.isnan(frames[:, land]))
