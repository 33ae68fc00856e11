"""EOF-based matrix completion baselines.

The data matrix holds one vectorized frame per column, restricted to sea
pixels. Completion alternates a truncated SVD with overwriting the missing
entries from the low-rank reconstruction until the filled values settle.
The enhanced variant low-pass filters the temporal expansion coefficients
after every decomposition, which couples neighbouring days.

The truncated SVD is a block power iteration with orthonormalization and a
fixed oversampling of 8; warm starts from the previous outer iteration keep
the inner sweep count low.
"""

from dataclasses import dataclass, field

import numpy as np

_SVD_SEED = 0x5EED


@dataclass
class DataMatrix:
    """m x n matrix (sea pixels x frames) with an observed-entry mask."""

    X: np.ndarray
    obs_mask: np.ndarray

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        self.obs_mask = np.asarray(self.obs_mask, dtype=bool)
        if self.X.ndim != 2 or self.X.shape != self.obs_mask.shape:
            raise ValueError("X and obs_mask must be matching 2D arrays")
        if self.X.shape[0] < 1 or self.X.shape[1] < 1:
            raise ValueError("matrix must be at least 1x1")


@dataclass
class DineofConfig:
    rank: int = 8
    candidate_ranks: list = field(default_factory=list)
    max_outer_iter: int = 200
    tol: float = 1e-5
    cv_fraction: float = 0.1
    temporal_filter_width: int = 3

    def __post_init__(self):
        if self.tol <= 0:
            raise ValueError("tol must be positive")


@dataclass
class DineofResult:
    completed: np.ndarray
    rank: int
    n_iter: int
    final_change: float
    obs_rms_history: list


def field_to_matrix(f):
    """(DataMatrix, sea index) with one column per frame."""
    sea = ~f.land_mask
    X = np.where(f.valid_mask, f.values, 0.0)[:, sea].T.astype(np.float64)
    mask = f.valid_mask[:, sea].T
    return DataMatrix(X=X, obs_mask=mask), sea


def matrix_to_frames(M, sea, T, H, W):
    """Scatter an m x n completed matrix back to (T,H,W); land stays NaN."""
    out = np.full((T, H, W), np.nan)
    out[:, sea] = M.T
    return out


def truncated_svd(M, k, start=None, max_sweeps=200, tol=1e-10):
    """Rank-k SVD by block power iteration; S non-increasing, U/V orthonormal."""
    m, n = M.shape
    if not 1 <= k <= min(m, n):
        raise ValueError(f"rank {k} out of range for {m}x{n}")
    p = min(min(m, n), k + 8)
    rng = np.random.Generator(np.random.Philox(key=np.uint64([_SVD_SEED, m * 131 + n])))
    if start is not None and start.shape == (n, p):
        V = start.copy()
    else:
        V = rng.standard_normal((n, p))
    V, _ = np.linalg.qr(V)
    prev = None
    for _ in range(max(2, max_sweeps)):
        U, _ = np.linalg.qr(M @ V)
        V, R = np.linalg.qr(M.T @ U)
        s = np.abs(np.diag(R))[:k]
        if prev is not None and prev.shape == s.shape:
            denom = np.maximum(np.abs(prev), 1e-300)
            if np.max(np.abs(s - prev) / denom) < tol:
                break
        prev = s
    # rotate the converged subspace onto exact singular directions
    B = U.T @ M @ V
    Ub, S, Vbt = np.linalg.svd(B)
    U = U @ Ub
    V = V @ Vbt.T
    return U[:, :k], S[:k], V[:, :k], V


def _binomial_kernel(width):
    if width % 2 == 0:
        raise ValueError("temporal filter width must be odd")
    k = np.array([1.0])
    for _ in range(width - 1):
        k = np.convolve(k, [1.0, 1.0])
    return k / k.sum()


def _smooth_rows(C, width):
    """Reflect-padded binomial smoothing of each row (time series)."""
    if width == 1:
        return C
    ker = _binomial_kernel(width)
    h = width // 2
    if C.shape[1] == 1:
        return C
    pad = np.pad(C, ((0, 0), (h, h)), mode="reflect")
    out = np.empty_like(C)
    for i in range(C.shape[0]):
        out[i] = np.convolve(pad[i], ker, mode="valid")
    return out


def _complete(data, k, cfg, filter_width):
    obs = data.obs_mask
    miss = ~obs
    if not obs.any():
        raise ValueError("all entries missing")
    # missing entries start at the observed-entry global mean (zero anomaly);
    # the decomposition runs on the uncentered matrix so an exactly rank-k
    # truth stays rank-k
    center = data.X[obs].mean()
    X = np.where(obs, data.X, center)
    warm = None
    n_iter = 0
    change = np.inf
    obs_rms = []
    for n_iter in range(1, cfg.max_outer_iter + 1):
        U, S, V, warm = truncated_svd(X, k, start=warm)
        C = S[:, None] * V.T  # temporal expansion coefficients, k x n
        if filter_width > 1:
            C = _smooth_rows(C, filter_width)
        recon = U @ C
        obs_rms.append(float(np.sqrt(np.mean((recon[obs] - X[obs]) ** 2))))
        new_vals = recon[miss]
        old_vals = X[miss]
        if old_vals.size == 0:
            change = 0.0
            break
        num = np.sqrt(np.mean((new_vals - old_vals) ** 2))
        den = max(np.sqrt(np.mean(new_vals ** 2)), 1e-12)
        change = float(num / den)
        X[miss] = new_vals
        if change < cfg.tol:
            break
    out = np.where(obs, data.X, X)
    return DineofResult(completed=out, rank=k, n_iter=n_iter,
                        final_change=change, obs_rms_history=obs_rms)


def dineof(data, cfg):
    """Iterative truncated-SVD completion; observed entries pass through."""
    return _complete(data, cfg.rank, cfg, filter_width=1)


def edineof(data, cfg):
    """Like dineof but smooths temporal coefficients each iteration."""
    if cfg.temporal_filter_width % 2 == 0:
        raise ValueError("temporal filter width must be odd")
    return _complete(data, cfg.rank, cfg, filter_width=cfg.temporal_filter_width)


def select_rank(data, candidate_ranks, cv_fraction, seed, cfg=None):
    """Cross-validate the rank on held-out observed entries.

    Ties break toward the smaller rank; the hold-out set is deterministic
    given the seed.
    """
    if not candidate_ranks:
        raise ValueError("need at least one candidate rank")
    cands = sorted(set(int(k) for k in candidate_ranks))
    if len(cands) == 1:
        return cands[0]
    cfg = cfg or DineofConfig()
    # coarse completions are plenty for discriminating ranks
    cfg = DineofConfig(rank=cfg.rank, tol=max(cfg.tol, 1e-4),
                       max_outer_iter=min(cfg.max_outer_iter, 60),
                       cv_fraction=cfg.cv_fraction,
                       temporal_filter_width=cfg.temporal_filter_width)
    rng = np.random.Generator(np.random.Philox(key=np.uint64([seed, 0xCF])))
    oi, oj = np.nonzero(data.obs_mask)
    n_obs = oi.size
    n_hold = max(1, int(round(cv_fraction * n_obs)))
    idx = rng.permutation(n_obs)[:n_hold]
    cv_mask = data.obs_mask.copy()
    cv_mask[oi[idx], oj[idx]] = False
    cv_data = DataMatrix(X=np.where(cv_mask, data.X, 0.0), obs_mask=cv_mask)
    held = (data.obs_mask & ~cv_mask)
    best_k, best_err = None, np.inf
    for k in cands:
        res = _complete(cv_data, k, cfg, filter_width=1)
        err = float(np.sqrt(np.mean((res.completed[held] - data.X[held]) ** 2)))
        if err < best_err - 1e-15:
            best_k, best_err = k, err
    return best_k
