"""Thresholded block segmentation detector.

Pipeline: (1) block fused lasso over a partition of the time axis, solved in
per-block cumulative coefficients so the regularizer is an exact
per-coordinate sparse-fused chain; (2) localized screening of the candidate
block ends via an information criterion with a data-driven penalty; (3) an
exhaustive search inside each surviving cluster; (4) l1-penalized refits on
the trimmed stationary segments.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from time import perf_counter
from typing import Optional

import numpy as np

from .core import (
    BlockPartition,
    DetectionResult,
    PenaltySpec,
    TimeSeriesMatrix,
    lagged_responses,
    make_blocks,
    stack_lag_rows,
)
from .errors import ConfigError, SegmentTooShortError
from .solvers import (
    fista_engine,
    fused_chain_prox,
    group_lasso_regression,
    lasso_regression,
    lowrank_sparse_regression,
    resolve_groups_design,
    singular_value_threshold,
    soft_threshold,
)

# declare-zero rule for block differences: ||theta_i||_inf must exceed
# ZERO_TOL * max(1, ||phi||_inf) to count as a candidate
ZERO_TOL = 1e-6

KMEANS_SEPARATION = 0.67  # "high" between-SS/total-SS cut for omega selection


@dataclass
class TbssConfig:
    penalty: PenaltySpec
    q: int = 1
    block_size: Optional[int] = None
    blocks: Optional[BlockPartition] = None
    lambda1_grid: Optional[tuple] = None
    lambda2_grid: Optional[tuple] = None
    an_grid: Optional[tuple] = None
    use_bic_for_omega: bool = False
    tol: float = 1e-2
    max_iter: int = 50
    refit: bool = False
    refit_radius: Optional[int] = None  # R_T; defaults to the block size
    rho_T: Optional[float] = None
    cv_seed: int = 0

    def __post_init__(self):
        if self.q < 1:
            raise ConfigError("lag must be >= 1")
        if self.tol <= 0 or self.max_iter < 1:
            raise ConfigError("need tol > 0 and max_iter >= 1")
        for grid in (self.lambda1_grid, self.lambda2_grid):
            if grid is not None and len(grid) > 0 and all(v == 0 for v in grid):
                raise ConfigError("lambda grids must contain a nonzero value")


@dataclass(frozen=True)
class CandidateSet:
    """Block ends whose fitted coefficient difference is nonzero."""

    points: tuple        # times r_{i-1}, i >= 2 in block numbering
    block_indices: tuple  # the 1-based block numbers i
    theta_hats: tuple     # difference estimates, design orientation

    def __post_init__(self):
        if any(i < 2 for i in self.block_indices):
            raise ConfigError("candidate block indices start at 2")

    def __len__(self):
        return len(self.points)


@dataclass
class BlockStepResult:
    candidates: CandidateSet
    phi: np.ndarray                 # (k_n, p*q, p) cumulative, design orient.
    blocks: BlockPartition
    lowrank: Optional[np.ndarray]   # fixed low-rank part, design orientation
    n_variables: int
    lambda1: float
    lambda2: float

    def phi_hats(self) -> list:
        """Per-block transition matrices (p x p*q), via cumulative sums."""
        return [self.phi[i].T.copy() for i in range(self.phi.shape[0])]

    def lowrank_transition(self) -> Optional[np.ndarray]:
        return None if self.lowrank is None else self.lowrank.T.copy()


class _BlockDesign:
    """Lagged design split by blocks, padded for batched block algebra."""

    def __init__(self, data: TimeSeriesMatrix, q: int, blocks: BlockPartition):
        self.data = data
        self.q = q
        self.T = data.T
        self.blocks = blocks
        self.X = stack_lag_rows(data, q)
        self.Y = lagged_responses(data, q)
        self.N, self.d = self.X.shape
        self.m = self.Y.shape[1]
        ends = blocks.endpoints
        k = blocks.k_n
        self.row_ranges = []
        for i in range(k):
            lo = max(ends[i], q + 1) - (q + 1)
            hi = ends[i + 1] - (q + 1)
            self.row_ranges.append((lo, hi))
        self.counts = np.array([hi - lo for lo, hi in self.row_ranges])
        if np.any(self.counts <= 0):
            raise ConfigError("every block needs at least one usable row")
        self.bmax = int(self.counts.max())
        self.X3 = np.zeros((k, self.bmax, self.d))
        self.Y3 = np.zeros((k, self.bmax, self.m))
        for i, (lo, hi) in enumerate(self.row_ranges):
            self.X3[i, : hi - lo] = self.X[lo:hi]
            self.Y3[i, : hi - lo] = self.Y[lo:hi]
        gram = np.matmul(self.X3.transpose(0, 2, 1), self.X3)
        self.lipschitz = (
            2.0 * float(np.max(np.linalg.eigvalsh(gram)[:, -1])) / self.N
        )

    def window_rows(self, t_lo: int, t_hi: int) -> slice:
        """Row slice for response times [t_lo, t_hi], clipped to the data."""
        lo = max(t_lo, self.q + 1) - (self.q + 1)
        hi = min(t_hi, self.T) - (self.q + 1) + 1
        return slice(max(lo, 0), max(hi, 0))


def _value_prox_builder(penalty: PenaltySpec, d: int, m: int):
    """Per-block value shrinkage acting on the (d*m, k) chain array."""
    if penalty.kind in ("sparse", "fixed_lowrank_sparse"):
        def shrink(W, t, lam_val):
            return soft_threshold(W, t * lam_val)

        def value(W, lam_val):
            return lam_val * float(np.sum(np.abs(W)))

        return shrink, value
    if penalty.kind == "group_sparse":
        groups = resolve_groups_design(penalty.grouping, d, m)

        def shrink(W, t, lam_val):
            out = W.copy()
            for g in groups:
                sub = out[g, :]
                norms = np.linalg.norm(sub, axis=0)
                scale = np.maximum(0.0, 1.0 - t * lam_val / np.maximum(norms, 1e-300))
                out[g, :] = sub * scale
            return out

        def value(W, lam_val):
            tot = 0.0
            for g in groups:
                tot += float(np.sum(np.linalg.norm(W[g, :], axis=0)))
            return lam_val * tot

        return shrink, value
    raise ConfigError(f"penalty kind {penalty.kind!r} not supported in step 1")


def _solve_chain_blocks(
    design: _BlockDesign,
    lam_tv: float,
    lam_val: float,
    penalty: PenaltySpec,
    tol: float,
    max_iter: int,
    phi0: Optional[np.ndarray] = None,
    Y3: Optional[np.ndarray] = None,
    mask_rows: Optional[np.ndarray] = None,
):
    """Block fused fit in cumulative coefficients phi (k, d, m)."""
    X3 = design.X3
    Y3 = design.Y3 if Y3 is None else Y3
    if mask_rows is not None:
        X3 = X3 * mask_rows[..., None]
        Y3 = Y3 * mask_rows[..., None]
        n_eff = int(mask_rows.sum())
    else:
        n_eff = design.N
    k, d, m = design.blocks.k_n, design.d, design.m
    X3t = X3.transpose(0, 2, 1)
    shrink, val_fn = _value_prox_builder(penalty, d, m)

    def smooth(phi):
        R = np.matmul(X3, phi) - Y3
        return float(np.sum(R * R)) / n_eff

    def grad(phi):
        R = np.matmul(X3, phi) - Y3
        return 2.0 * np.matmul(X3t, R) / n_eff

    def prox(z, t):
        W = z.reshape(k, d * m).T
        W = fused_chain_prox(W, t * lam_tv)
        W = shrink(W, t, lam_val)
        return np.ascontiguousarray(W.T).reshape(k, d, m)

    def penalty_value(phi):
        W = phi.reshape(k, d * m).T
        tv = lam_tv * float(np.sum(np.abs(np.diff(W, axis=1))))
        return tv + val_fn(W, lam_val)

    x0 = np.zeros((k, d, m)) if phi0 is None else phi0
    return fista_engine(
        grad,
        prox,
        x0,
        smooth,
        penalty_value,
        tol=tol,
        max_iter=max_iter,
        lipschitz=design.lipschitz,
    )


def _solve_fls_blocks(design, lam_tv, lam_val, mu, tol, max_iter, outer=3):
    """Penalty C: alternate the sparse-chain fit (low-rank part frozen) with
    a nuclear-prox update of the shared low-rank component."""
    k, d, m = design.blocks.k_n, design.d, design.m
    L = np.zeros((d, m))
    phi = None
    mu_eff = mu / design.N  # user weight is against the unnormalized SSE
    sparse_pen = PenaltySpec("sparse")
    X, Y = design.X, design.Y
    XtX = X.T @ X
    lip = 2.0 * float(np.linalg.eigvalsh(XtX)[-1]) / design.N
    for _ in range(outer):
        resid_Y3 = design.Y3 - np.matmul(design.X3, L)
        res = _solve_chain_blocks(
            design, lam_tv, lam_val, sparse_pen, tol, max_iter,
            phi0=phi, Y3=resid_Y3,
        )
        phi = res.x
        # full-sample residual after removing the block sparse predictions
        R3 = design.Y3 - np.matmul(design.X3, phi)
        R = np.concatenate(
            [R3[i, : hi - lo] for i, (lo, hi) in enumerate(design.row_ranges)]
        )
        XtR = X.T @ R

        def smooth(Lm):
            E = X @ Lm - R
            return float(np.sum(E * E)) / design.N

        def grad(Lm):
            return 2.0 * (XtX @ Lm - XtR) / design.N

        lres = fista_engine(
            grad,
            lambda z, t: singular_value_threshold(z, t * mu_eff),
            L,
            smooth,
            lambda Lm: mu_eff * float(
                np.sum(np.linalg.svd(Lm, compute_uv=False))
            ),
            tol=1e-3,
            max_iter=max_iter,
            lipschitz=lip,
        )
        L = lres.x
    return phi, L


def _extract_candidates(phi: np.ndarray, blocks: BlockPartition) -> CandidateSet:
    theta = np.diff(phi, axis=0)
    scale = max(1.0, float(np.max(np.abs(phi))))
    mags = np.max(np.abs(theta), axis=(1, 2))
    nz = np.nonzero(mags > ZERO_TOL * scale)[0]
    points = []
    indices = []
    thetas = []
    for idx in nz:
        i = idx + 2  # 1-based block number of the changed block
        indices.append(i)
        points.append(blocks.endpoints[i - 1])
        thetas.append(theta[idx])
    return CandidateSet(tuple(points), tuple(indices), tuple(thetas))


def _default_lambda2_grid(design: _BlockDesign, penalty: PenaltySpec) -> tuple:
    n = design.N + 1
    if penalty.kind == "group_sparse":
        # group norms need the group-dimension factor, else 20-wide groups
        # are effectively unpenalized and the per-block fits overfit
        groups = resolve_groups_design(penalty.grouping, design.d, design.m)
        g_max = max(len(g) for g in groups)
        base = (np.sqrt(g_max) + np.sqrt(2.0 * np.log(len(groups)))) / np.sqrt(n)
    else:
        base = np.sqrt(np.log(design.m) / n)
    return tuple(c * base for c in (1.0, 0.5, 0.25))


def _lambda_max(design: _BlockDesign, penalty: PenaltySpec, lam_val: float,
                tol: float, max_iter: int) -> float:
    """Smallest TV weight that fuses every block, from the stationarity
    conditions at the fully fused solution, then solver-verified."""
    k = design.blocks.k_n
    phi_bar = lasso_regression(
        design.X, design.Y, k * lam_val, tol=1e-4, max_iter=300
    )
    R3 = np.matmul(design.X3, phi_bar[None, :, :]) - design.Y3
    G = 2.0 * np.matmul(design.X3.transpose(0, 2, 1), R3) / design.N
    total = G.sum(axis=0)
    if lam_val > 0:
        u = np.where(
            phi_bar != 0, np.sign(phi_bar),
            np.clip(-total / (k * lam_val), -1.0, 1.0),
        )
    else:
        u = np.sign(phi_bar)
    suffix = np.cumsum(G[::-1], axis=0)[::-1]  # suffix[i] = sum_{j>=i} G_j
    lam = 0.0
    for idx in range(1, k):  # 1-based block i = idx + 1 >= 2
        need = np.max(np.abs(suffix[idx] + (k - idx) * lam_val * u))
        lam = max(lam, float(need))
    lam = lam * 1.02 + 1e-12
    for _ in range(8):
        res = _solve_chain_blocks(
            design, lam, lam_val, penalty, tol, max_iter
        )
        cands = _extract_candidates(res.x, design.blocks)
        if len(cands) == 0:
            break
        lam *= 1.5
    return lam


def cross_validate_lambdas(data: TimeSeriesMatrix, config: TbssConfig,
                           design: Optional[_BlockDesign] = None):
    """One-step-ahead cross validation over the (lambda1, lambda2) grid.

    Holds out the last time point of 20% of the blocks (equally spaced with
    a seeded random initial offset) and scores mean squared prediction error.
    """
    if design is None:
        design = _BlockDesign(data, config.q, _resolve_blocks(data, config))
    k = design.blocks.k_n
    if k < 5:
        raise ConfigError("cross validation needs at least 5 blocks")
    lam2_grid = config.lambda2_grid or _default_lambda2_grid(design, config.penalty)
    lam2_grid = tuple(sorted(lam2_grid, reverse=True))
    if config.lambda1_grid is not None:
        lam1_grids = {l2: tuple(sorted(config.lambda1_grid, reverse=True))
                      for l2 in lam2_grid}
    else:
        eps = 1e-3 if design.blocks.block_size < 2 * design.m else 1e-4
        lam1_grids = {}
        for l2 in lam2_grid:
            lmax = _lambda_max(design, config.penalty, l2, config.tol,
                               config.max_iter)
            lam1_grids[l2] = tuple(
                np.exp(np.linspace(np.log(lmax), np.log(eps * lmax), 10))
            )
    if len(lam2_grid) == 1 and len(lam1_grids[lam2_grid[0]]) == 1:
        return lam1_grids[lam2_grid[0]][0], lam2_grid[0]

    stride = 5  # hold out 20% of the blocks
    rng = np.random.default_rng(config.cv_seed)
    start = int(rng.integers(0, stride))
    sel = list(range(start, k, stride))
    if not sel:
        raise ConfigError("degenerate validation set")
    mask = np.zeros((k, design.bmax))
    for i, (lo, hi) in enumerate(design.row_ranges):
        mask[i, : hi - lo] = 1.0
    hold_rows = []
    for i in sel:
        t = design.blocks.endpoints[i + 1] - 1  # last time point of block i
        lo, hi = design.row_ranges[i]
        row = t - (config.q + 1)
        if lo <= row < hi:
            mask[i, row - lo] = 0.0
            hold_rows.append((i, row))
    if not hold_rows:
        raise ConfigError("degenerate validation set")

    best = None
    for l2 in lam2_grid:
        phi = None
        for l1 in lam1_grids[l2]:
            res = _solve_chain_blocks(
                design, l1, l2, config.penalty, config.tol, config.max_iter,
                phi0=phi, mask_rows=mask,
            )
            phi = res.x
            err = 0.0
            for i, row in hold_rows:
                pred = design.X[row] @ phi[i]
                err += float(np.sum((design.Y[row] - pred) ** 2))
            err /= len(hold_rows)
            if best is None or err < best[0] - 1e-15:
                best = (err, l1, l2)
    return best[1], best[2]


def _resolve_blocks(data: TimeSeriesMatrix, config: TbssConfig) -> BlockPartition:
    if config.blocks is not None:
        return config.blocks
    return make_blocks(data.T, config.q, config.block_size)


def block_fused_step(
    data: TimeSeriesMatrix,
    config: TbssConfig,
    lambda1: Optional[float] = None,
    lambda2: Optional[float] = None,
    design: Optional[_BlockDesign] = None,
) -> BlockStepResult:
    """Step 1: fit the block model and report candidate change points.

    Explicit weights win; otherwise nonzero weights on the penalty spec are
    used; otherwise both are chosen by cross validation.
    """
    if design is None:
        design = _BlockDesign(data, config.q, _resolve_blocks(data, config))
    if data.T <= 2 * design.blocks.block_size:
        raise ConfigError("need T greater than two block sizes")
    auto_tuned = False
    if lambda1 is None or lambda2 is None:
        pen = config.penalty
        if pen.lambda1 > 0 or pen.lambda2 > 0:
            lambda1 = pen.lambda1 if lambda1 is None else lambda1
            lambda2 = pen.lambda2 if lambda2 is None else lambda2
        else:
            lambda1, lambda2 = cross_validate_lambdas(data, config, design)
            auto_tuned = True
    if lambda1 == 0 and lambda2 == 0:
        raise ConfigError("step 1 needs a nonzero penalty weight")

    def fit(l1, phi0=None):
        if config.penalty.kind == "fixed_lowrank_sparse":
            return _solve_fls_blocks(
                design, l1, lambda2, config.penalty.mu,
                config.tol, config.max_iter,
            )
        res = _solve_chain_blocks(
            design, l1, lambda2, config.penalty,
            config.tol, config.max_iter, phi0=phi0,
        )
        return res.x, None

    phi, lowrank = fit(lambda1)
    candidates = _extract_candidates(phi, design.blocks)
    if auto_tuned:
        # a fit that flags more than half of all block ends is
        # under-penalized by construction (the theory expects a handful of
        # change blocks); walk up the fused weight until plausible
        k = design.blocks.k_n
        for _ in range(12):
            if len(candidates) <= k // 2:
                break
            lambda1 *= 2.0
            phi, lowrank = fit(lambda1, phi0=phi)
            candidates = _extract_candidates(phi, design.blocks)
    return BlockStepResult(
        candidates=candidates,
        phi=phi,
        blocks=design.blocks,
        lowrank=lowrank,
        n_variables=design.blocks.k_n * design.d * design.m,
        lambda1=float(lambda1),
        lambda2=float(lambda2),
    )


def _expanded_hier_design(X: np.ndarray, p: int, q: int):
    """Latent replication of the design for nested-suffix lag groups."""
    spans = []
    cols = []
    offset = 0
    for s in range(q):
        width = (q - s) * p
        cols.append(X[:, s * p :])
        spans.append((offset, offset + width, s * p))
        offset += width
    return np.hstack(cols), spans


def _hier_group_sse(X, Y, p, q, lam, tol, max_iter):
    """Group lasso with the overlapping hierarchical-lag cover, solved in the
    replicated latent space where the prox is separable."""
    X_lat, spans = _expanded_hier_design(X, p, q)
    d_lat = X_lat.shape[1]
    m = Y.shape[1]
    groups = []
    for lo, hi, _ in spans:
        for c in range(m):
            groups.append(np.arange(lo, hi) * m + c)
    B_lat = group_lasso_regression(X_lat, Y, groups, lam, tol=tol,
                                   max_iter=max_iter)
    B = np.zeros((X.shape[1], m))
    for lo, hi, col0 in spans:
        B[col0:, :] += B_lat[lo:hi, :]
    R = Y - X @ B
    return float(np.sum(R * R))


def _penalized_window_sse(design: _BlockDesign, rows: slice,
                          penalty: PenaltySpec, eta: float,
                          tol: float, max_iter: int) -> float:
    """Raw SSE of the eta-penalized local fit on the given rows."""
    X = design.X[rows]
    Y = design.Y[rows]
    if X.shape[0] == 0:
        return 0.0
    if penalty.kind == "sparse":
        B = lasso_regression(X, Y, eta, tol=tol, max_iter=max_iter)
    elif penalty.kind == "group_sparse":
        if penalty.grouping.overlapping:
            return _hier_group_sse(X, Y, design.m, design.q, eta, tol, max_iter)
        groups = resolve_groups_design(penalty.grouping, design.d, design.m)
        B = group_lasso_regression(X, Y, groups, eta, tol=tol,
                                   max_iter=max_iter)
    else:  # low-rank plus sparse local model
        L, S = lowrank_sparse_regression(X, Y, eta, eta, tol=tol,
                                         max_iter=max_iter)
        B = (L + S).T
    R = Y - X @ B
    return float(np.sum(R * R))


def _screening_stats(design: _BlockDesign, points, a_n: int, eta: float,
                     penalty: PenaltySpec, tol: float, max_iter: int):
    """Per-candidate LIC jump merged_SSE - split_SSE, plus the reference jump."""
    q, T = design.q, design.T
    valid = []
    jumps = []
    for t_hat in points:
        if t_hat - a_n < q + 1 or t_hat + a_n - 1 > T:
            warnings.warn(
                f"candidate {t_hat} dropped: a_n={a_n} window leaves the data"
            )
            continue
        left = design.window_rows(t_hat - a_n, t_hat - 1)
        right = design.window_rows(t_hat, t_hat + a_n - 1)
        merged = design.window_rows(t_hat - a_n, t_hat + a_n - 1)
        split = _penalized_window_sse(design, left, penalty, eta, tol, max_iter)
        split += _penalized_window_sse(design, right, penalty, eta, tol, max_iter)
        whole = _penalized_window_sse(design, merged, penalty, eta, tol, max_iter)
        valid.append(int(t_hat))
        jumps.append(whole - split)
    vref = -np.inf
    for t_ref in (a_n + q, T - a_n):
        left = design.window_rows(t_ref - a_n, t_ref - 1)
        right = design.window_rows(t_ref, t_ref + a_n - 1)
        merged = design.window_rows(t_ref - a_n, t_ref + a_n - 1)
        split = _penalized_window_sse(design, left, penalty, eta, tol, max_iter)
        split += _penalized_window_sse(design, right, penalty, eta, tol, max_iter)
        whole = _penalized_window_sse(design, merged, penalty, eta, tol, max_iter)
        vref = max(vref, whole - split)
    return valid, jumps, float(vref)


def _two_means_split(values: np.ndarray):
    """Exact 2-means on a 1-D array via the best sorted split.

    Returns (threshold, ratio): members >= threshold form the large-center
    cluster; ratio is between-SS over total-SS (1.0 when total is zero).
    """
    v = np.sort(np.asarray(values, dtype=float))
    n = v.size
    total = float(np.sum((v - v.mean()) ** 2))
    if total == 0.0:
        return np.inf, 1.0
    best = (np.inf, 1)
    for s in range(1, n):
        lo, hi = v[:s], v[s:]
        wss = float(np.sum((lo - lo.mean()) ** 2) + np.sum((hi - hi.mean()) ** 2))
        if wss < best[0] - 1e-15:
            best = (wss, s)
    wss, s = best
    return float(v[s]), 1.0 - wss / total


def eta_default(a_n: int, p: int) -> float:
    return float(np.log(2 * a_n) * np.log(p) / (2 * a_n))


def _omega_from_stats(stats, use_bic: bool = False) -> float:
    valid, jumps, vref = stats
    if not valid:
        return np.inf
    V = np.array(list(jumps) + [vref, vref])
    threshold, ratio = _two_means_split(V)
    if use_bic:
        # BIC-scored cut: prefer the 2-cluster model when it wins on a
        # penalized Gaussian likelihood of the jump values
        n = V.size
        wss1 = float(np.sum((V - V.mean()) ** 2))
        srt = np.sort(V)
        s = int(np.searchsorted(srt, threshold))
        lo, hi = srt[:s], srt[s:]
        wss2 = float(np.sum((lo - lo.mean()) ** 2) + np.sum((hi - hi.mean()) ** 2))
        bic1 = n * np.log(wss1 / n + 1e-300) + np.log(n)
        bic2 = n * np.log(wss2 / n + 1e-300) + 3 * np.log(n)
        separated = bic2 < bic1
    else:
        separated = ratio > KMEANS_SEPARATION
    if separated and vref < threshold:
        # strictly between the clusters, so the whole large cluster survives
        # the strict LIC comparison and the small one never does
        large_min = float(np.min(V[V >= threshold]))
        small_max = float(np.max(V[V < threshold]))
        return 0.5 * (large_min + small_max)
    return float(np.max(V))


def _screen_from_stats(stats, omega: float):
    valid, jumps, _ = stats
    return [t for t, v in zip(valid, jumps) if v > omega]


def select_omega(data: TimeSeriesMatrix, config: TbssConfig,
                 candidates: CandidateSet, a_n: int,
                 eta: Optional[float] = None,
                 design: Optional[_BlockDesign] = None) -> float:
    """Data-driven screening penalty from 2-means clustering of the jumps
    merged_SSE - split_SSE, with the boundary reference jump appended twice.
    Returns +inf when there is nothing to screen."""
    if len(candidates) == 0:
        return np.inf
    if design is None:
        design = _BlockDesign(data, config.q, _resolve_blocks(data, config))
    if eta is None:
        eta = eta_default(a_n, design.m)
    stats = _screening_stats(
        design, candidates.points, a_n, eta, config.penalty,
        config.tol, config.max_iter,
    )
    return _omega_from_stats(stats, config.use_bic_for_omega)


def local_screen(data: TimeSeriesMatrix, config: TbssConfig,
                 candidates: CandidateSet, a_n: int, eta: float, omega: float,
                 design: Optional[_BlockDesign] = None):
    """Candidates whose split fit beats the merged fit by at least omega.

    The per-candidate rule minimizes the LIC exactly because the criterion is
    additively separable across candidates.
    """
    if design is None:
        design = _BlockDesign(data, config.q, _resolve_blocks(data, config))
    stats = _screening_stats(
        design, candidates.points, a_n, eta, config.penalty,
        config.tol, config.max_iter,
    )
    return _screen_from_stats(stats, omega)


def _auto_an_grid(design: _BlockDesign, points) -> list:
    n = design.N + 1
    p = design.m
    mean_block = design.N / design.blocks.k_n
    a_lb = max(int(np.floor(mean_block)), int(np.floor(np.log(n) * np.log(p))))
    a_lb = max(a_lb, 2)
    a_ub = min(
        10 * a_lb,
        int(points[0]) - design.q - 1,
        design.T - design.q - int(points[-1]) - 1,
    )
    if a_ub < a_lb:
        warnings.warn("a_n upper bound below lower bound; using the lower bound")
        return [a_lb]
    return sorted(set(int(round(a)) for a in np.linspace(a_lb, a_ub, 5)))


def select_an(data: TimeSeriesMatrix, config: TbssConfig,
              candidates: CandidateSet,
              design: Optional[_BlockDesign] = None):
    """Stability-based neighborhood size selection.

    Runs the screening over the a_n grid and returns
    (a_n, screened_points, omega) at the first grid value whose screened
    count repeats three times in a row (the last grid value otherwise).
    """
    if design is None:
        design = _BlockDesign(data, config.q, _resolve_blocks(data, config))
    if len(candidates) == 0:
        raise ConfigError("a_n selection needs at least one candidate")
    grid = list(config.an_grid) if config.an_grid else _auto_an_grid(
        design, candidates.points
    )
    results = []
    counts = []
    for a_n in grid:
        eta = eta_default(a_n, design.m)
        stats = _screening_stats(
            design, candidates.points, a_n, eta, config.penalty,
            config.tol, config.max_iter,
        )
        omega = _omega_from_stats(stats, config.use_bic_for_omega)
        screened = _screen_from_stats(stats, omega)
        results.append((a_n, screened, omega))
        counts.append(len(screened))
    return results[first_stable_index(counts)]


def first_stable_index(counts) -> int:
    """First grid index whose screened count repeats three times in a row;
    the last index when none does."""
    for i in range(len(counts) - 2):
        if counts[i] == counts[i + 1] == counts[i + 2]:
            return i
    return len(counts) - 1


def _clusters_by_diameter(points, diameter):
    clusters = []
    cur = [points[0]]
    for t in points[1:]:
        if t - cur[0] <= diameter:
            cur.append(t)
        else:
            clusters.append(cur)
            cur = [t]
    clusters.append(cur)
    return clusters


def exhaustive_search(design: _BlockDesign, screened, a_n: int,
                      step1: BlockStepResult):
    """Step 3: per-cluster scan of the split SSE over the search interval.

    Returns (final_points, segment_estimates) with one design-orientation
    coefficient matrix per final segment (taken at the mid-gap blocks).
    """
    blocks = design.blocks
    k = blocks.k_n
    phi = step1.phi
    if not screened:
        mid = max(1, k // 2)
        return [], [phi[mid - 1]]
    pts = sorted(screened)
    clusters = _clusters_by_diameter(pts, 2 * a_n)
    m_t = len(clusters)
    intervals = []
    for C in clusters:
        if len(C) == 1:
            intervals.append((C[0] - a_n, C[0] + a_n))
        else:
            intervals.append((min(C), max(C)))
    ends = blocks.endpoints

    def block_indices_in(lo, hi):
        out = [j for j in range(1, k + 1) if lo < ends[j] < hi]
        if not out:
            centre = 0.5 * (lo + hi)
            out = [min(range(1, k + 1), key=lambda j: abs(ends[j] - centre))]
        return out

    J = [[1]] + [block_indices_in(lo, hi) for lo, hi in intervals] + [[k]]
    w = []
    for i in range(1, m_t + 2):
        mid = 0.5 * (max(J[i - 1]) + min(J[i]))
        w.append(int(np.clip(round(mid), 1, k)))
    estimates = [phi[wi - 1] for wi in w]

    final = []
    seg_estimates = [estimates[0]]
    for ci, (lo, hi) in enumerate(intervals):
        lo_c = max(lo, design.q)
        hi_c = min(hi, design.T)
        rows = design.window_rows(lo_c + 1, hi_c)  # responses y_{t+1}, t in [lo_c, hi_c-1]
        Xw = design.X[rows]
        Yw = design.Y[rows]
        M = Xw.shape[0]
        if M < 2:
            continue
        left_cost = np.sum((Yw - Xw @ estimates[ci]) ** 2, axis=1)
        right_cost = np.sum((Yw - Xw @ estimates[ci + 1]) ** 2, axis=1)
        pre_left = np.concatenate([[0.0], np.cumsum(left_cost)])
        suf_right = np.concatenate([np.cumsum(right_cost[::-1])[::-1], [0.0]])
        # offset i splits the predictor times; the reported break is the
        # first response governed by the right model: r = lo_c + i + 1
        idx = np.arange(1, M)
        costs = pre_left[idx] + suf_right[idx]
        best = int(np.argmin(costs))  # first minimum: smallest break on ties
        s = int(lo_c + idx[best] + 1)
        if final and s - final[-1] <= 1:
            continue
        final.append(s)
        seg_estimates.append(estimates[ci + 1])
    return final, seg_estimates


def refit_segments(data: TimeSeriesMatrix, final_points, config: TbssConfig,
                   design: Optional[_BlockDesign] = None,
                   lowrank: Optional[np.ndarray] = None):
    """Step 4: l1-penalized refit per trimmed segment.

    Removes an R_T-radius neighborhood around each change point and solves
    the block-diagonal lasso (equivalently one lasso per segment with the
    penalty rescaled by the segment share).
    """
    if design is None:
        design = _BlockDesign(data, config.q, _resolve_blocks(data, config))
    b_n = design.blocks.block_size
    R_T = config.refit_radius if config.refit_radius is not None else b_n
    if R_T < b_n:
        raise ConfigError("refit radius must be at least the block size")
    q, T = design.q, design.T
    pts = list(final_points)
    bounds = []
    for j in range(len(pts) + 1):
        lo = q if j == 0 else pts[j - 1] + R_T + 1
        hi = T if j == len(pts) else pts[j] - R_T - 1
        bounds.append((lo, hi))
    slices = [design.window_rows(lo, hi) for lo, hi in bounds]
    sizes = [sl.stop - sl.start for sl in slices]
    for j, size in enumerate(sizes):
        if size <= 0:
            raise SegmentTooShortError(
                f"segment {j + 1} empty after trimming radius {R_T}"
            )
    N_total = sum(sizes)
    rho = config.rho_T
    if rho is None:
        rho = float(np.sqrt(np.log(design.d) / N_total))
    Y_all = design.Y if lowrank is None else design.Y - design.X @ lowrank
    out = []
    for sl, size in zip(slices, sizes):
        lam_j = rho * N_total / size
        B = lasso_regression(
            design.X[sl], Y_all[sl], lam_j, tol=1e-4, max_iter=500
        )
        out.append(B)
    return out


def tbss_detect(data: TimeSeriesMatrix, config: TbssConfig) -> DetectionResult:
    """Run the full four-step detector and time it."""
    start = perf_counter()
    design = _BlockDesign(data, config.q, _resolve_blocks(data, config))
    step1 = block_fused_step(data, config, design=design)
    if len(step1.candidates) == 0:
        final = []
        mid = max(1, design.blocks.k_n // 2)
        estimates = [step1.phi[mid - 1]]
    else:
        a_n, screened, _ = select_an(data, config, step1.candidates, design)
        final, estimates = exhaustive_search(design, screened, a_n, step1)
    if config.refit:
        coefs = refit_segments(data, final, config, design,
                               lowrank=step1.lowrank)
    else:
        coefs = estimates
    sparse_mats = tuple(B.T.copy() for B in coefs)
    lowrank_mats = None
    if step1.lowrank is not None:
        Lt = step1.lowrank.T.copy()
        lowrank_mats = tuple(Lt for _ in range(len(final) + 1))
    elapsed = perf_counter() - start
    return DetectionResult(
        change_points=tuple(final),
        sparse_mats=sparse_mats,
        lag=config.q,
        lowrank_mats=lowrank_mats,
        elapsed_seconds=elapsed,
    )
