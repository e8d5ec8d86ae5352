"""Domain types and lag-stacking / block-partition utilities.

Time indices are 1-based throughout the public API (a series has times
1..T); arrays are stored 0-based internally.  A break point t is the first
time index governed by the new regime, i.e. segment j spans
t_{j-1} <= t < t_j.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import ConfigError


@dataclass(frozen=True)
class TimeSeriesMatrix:
    """T x p observation matrix; row t-1 holds the observation at time t."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 2:
            raise ConfigError("time series must be a 2-D (T x p) array")
        if v.shape[0] < 2 or v.shape[1] < 1:
            raise ConfigError(f"need T >= 2 and p >= 1, got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ConfigError("time series contains non-finite entries")
        object.__setattr__(self, "values", v)

    @property
    def T(self) -> int:
        return self.values.shape[0]

    @property
    def p(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class TransitionSet:
    """Ordered lag matrices of one stationary VAR(q) regime (each p x p)."""

    lags: tuple

    def __post_init__(self):
        mats = tuple(np.asarray(m, dtype=float) for m in self.lags)
        if len(mats) < 1:
            raise ConfigError("a transition set needs at least one lag matrix")
        p = mats[0].shape[0]
        for m in mats:
            if m.shape != (p, p):
                raise ConfigError(f"all lag matrices must be {p}x{p}, got {m.shape}")
        object.__setattr__(self, "lags", mats)

    @property
    def q(self) -> int:
        return len(self.lags)

    @property
    def p(self) -> int:
        return self.lags[0].shape[0]

    def stacked(self) -> np.ndarray:
        """p x (p*q) matrix (Phi^(1) ... Phi^(q)) side by side."""
        return np.hstack(self.lags)

    def scaled(self, c: float) -> "TransitionSet":
        return TransitionSet(tuple(c * m for m in self.lags))


@dataclass(frozen=True)
class PiecewiseVarModel:
    """Ground truth of a simulated piecewise-stationary VAR."""

    break_points: tuple
    segments: tuple
    noise_scales: tuple

    def __post_init__(self):
        bps = tuple(int(b) for b in self.break_points)
        segs = tuple(self.segments)
        scales = tuple(float(s) for s in self.noise_scales)
        if list(bps) != sorted(set(bps)):
            raise ConfigError("break points must be strictly increasing")
        if len(segs) != len(bps) + 1:
            raise ConfigError("segment count must equal break point count + 1")
        if len(scales) != len(segs):
            raise ConfigError("one noise scale per segment required")
        if any(s <= 0 for s in scales):
            raise ConfigError("noise scales must be positive")
        object.__setattr__(self, "break_points", bps)
        object.__setattr__(self, "segments", segs)
        object.__setattr__(self, "noise_scales", scales)

    @property
    def q(self) -> int:
        return max(s.q for s in self.segments)

    def segment_of(self, t: int) -> int:
        """0-based segment index containing time t (segment j: t_{j-1} <= t < t_j)."""
        return int(np.searchsorted(np.asarray(self.break_points), t, side="right"))


@dataclass(frozen=True)
class BlockPartition:
    """Equal-size blocks over [q, T+1); the final block holds the remainder."""

    endpoints: tuple
    block_size: int

    @property
    def k_n(self) -> int:
        return len(self.endpoints) - 1

    def block_of(self, t: int) -> int:
        """0-based block index whose half-open range contains time t."""
        ends = np.asarray(self.endpoints)
        if t < ends[0] or t >= ends[-1]:
            raise ConfigError(f"time {t} outside block range [{ends[0]}, {ends[-1]})")
        return int(np.searchsorted(ends, t, side="right")) - 1


GROUPING_KINDS = (
    "columnwise_separate",
    "columnwise_simultaneous",
    "rowwise_separate",
    "rowwise_simultaneous",
    "hierarchical_lag",
    "explicit_index",
)


@dataclass(frozen=True)
class Grouping:
    """Partition (or, for hierarchical_lag, nested overlapping cover) of the
    p*p*q transition coefficients.

    Flat layout is row-major over the p x (p*q) stacked matrix
    (Phi^(1) ... Phi^(q)): coefficient (i, j) of lag l (0-based) has flat
    index i*(p*q) + l*p + j.  ``explicit_index`` groups are given directly
    in that layout; any uncovered remainder forms one extra group.
    """

    kind: str
    groups: Optional[tuple] = None

    def __post_init__(self):
        if self.kind not in GROUPING_KINDS:
            raise ConfigError(f"unknown grouping kind {self.kind!r}")
        if self.kind == "explicit_index":
            if not self.groups:
                raise ConfigError("explicit_index grouping needs explicit groups")
            object.__setattr__(
                self, "groups", tuple(tuple(int(i) for i in g) for g in self.groups)
            )

    @property
    def overlapping(self) -> bool:
        return self.kind == "hierarchical_lag"

    def resolve(self, p: int, q: int) -> list:
        """Group index arrays over the flat p x (p*q) coefficient layout."""
        pq = p * q
        flat = np.arange(p * pq).reshape(p, pq)

        def col(l, j):
            return flat[:, l * p + j]

        def row(l, i):
            return flat[i, l * p : (l + 1) * p]

        if self.kind == "columnwise_separate":
            return [col(l, j) for l in range(q) for j in range(p)]
        if self.kind == "columnwise_simultaneous":
            return [
                np.concatenate([col(l, j) for l in range(q)]) for j in range(p)
            ]
        if self.kind == "rowwise_separate":
            return [row(l, i) for l in range(q) for i in range(p)]
        if self.kind == "rowwise_simultaneous":
            return [
                np.concatenate([row(l, i) for l in range(q)]) for i in range(p)
            ]
        if self.kind == "hierarchical_lag":
            # nested suffix groups per output row: lags l..q, l = 1..q
            return [
                np.concatenate([row(l, i) for l in range(start, q)])
                for i in range(p)
                for start in range(q)
            ]
        # explicit_index
        out = []
        seen = np.zeros(p * pq, dtype=bool)
        for g in self.groups:
            idx = np.asarray(g, dtype=int)
            if idx.size == 0 or idx.min() < 0 or idx.max() >= p * pq:
                raise ConfigError(
                    f"explicit group index out of range [0, {p * pq})"
                )
            if seen[idx].any():
                raise ConfigError("explicit_index groups must not overlap")
            seen[idx] = True
            out.append(idx)
        if not seen.all():
            rest = np.nonzero(~seen)[0]
            out.append(rest)
        return out


PENALTY_KINDS = ("sparse", "group_sparse", "fixed_lowrank_sparse", "lowrank_sparse")


@dataclass(frozen=True)
class PenaltySpec:
    """Which regularizer the detector uses, and its weights.

    ``lambda1`` weights the fused (difference) term, ``lambda2`` the
    value-sparsity term, ``mu`` the nuclear norm of the low-rank component
    (required for the two low-rank kinds).
    """

    kind: str
    lambda1: float = 0.0
    lambda2: float = 0.0
    mu: Optional[float] = None
    grouping: Optional[Grouping] = None

    def __post_init__(self):
        if self.kind not in PENALTY_KINDS:
            raise ConfigError(f"unknown penalty kind {self.kind!r}")
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ConfigError("penalty weights must be non-negative")
        if self.kind in ("fixed_lowrank_sparse", "lowrank_sparse"):
            if self.mu is None or self.mu < 0:
                raise ConfigError(f"penalty {self.kind!r} requires mu >= 0")
        if self.kind == "group_sparse" and self.grouping is None:
            raise ConfigError("group_sparse penalty requires a grouping")


@dataclass(frozen=True)
class DetectionResult:
    """Final change points and per-segment estimates of one detector run."""

    change_points: tuple
    sparse_mats: tuple
    lag: int
    lowrank_mats: Optional[tuple] = None
    elapsed_seconds: float = 0.0

    def __post_init__(self):
        cps = tuple(int(c) for c in self.change_points)
        if list(cps) != sorted(set(cps)):
            raise ConfigError("change points must be strictly increasing")
        if len(self.sparse_mats) != len(cps) + 1:
            raise ConfigError("need one sparse matrix per segment")
        if self.lowrank_mats is not None and len(self.lowrank_mats) != len(cps) + 1:
            raise ConfigError("need one low-rank matrix per segment")
        if self.elapsed_seconds < 0:
            raise ConfigError("elapsed time cannot be negative")
        object.__setattr__(self, "change_points", cps)
        object.__setattr__(self, "sparse_mats", tuple(self.sparse_mats))
        if self.lowrank_mats is not None:
            object.__setattr__(self, "lowrank_mats", tuple(self.lowrank_mats))


def stack_lag_rows(data: TimeSeriesMatrix, q: int) -> np.ndarray:
    """Lagged design: row for time l (1-based, l = q..T-1) is
    (y_l, y_{l-1}, ..., y_{l-q+1}); the aligned response is y_{l+1}.

    Returns a (T-q) x (p*q) matrix.
    """
    if q < 1:
        raise ConfigError(f"lag must be >= 1, got {q}")
    if q >= data.T:
        raise ConfigError(f"lag q={q} must be smaller than T={data.T}")
    v = data.values
    T = data.T
    cols = [v[q - 1 - d : T - 1 - d, :] for d in range(q)]
    return np.hstack(cols)


def lagged_responses(data: TimeSeriesMatrix, q: int) -> np.ndarray:
    """Responses aligned with :func:`stack_lag_rows`: y_{q+1}..y_T."""
    return data.values[q:, :]


def companion_matrix(ts: TransitionSet) -> np.ndarray:
    """pq x pq companion form of the VAR(q)."""
    p, q = ts.p, ts.q
    top = ts.stacked()
    if q == 1:
        return top
    lower = np.hstack([np.eye(p * (q - 1)), np.zeros((p * (q - 1), p))])
    return np.vstack([top, lower])


def companion_spectral_radius(ts: TransitionSet) -> float:
    """Largest eigenvalue modulus of the companion matrix."""
    return float(np.max(np.abs(np.linalg.eigvals(companion_matrix(ts)))))


def make_blocks(T: int, q: int, block_size: Optional[int] = None) -> BlockPartition:
    """Block partition of [q, T+1) into k_n = ceil(n / b_n) blocks, n = T-q+1.

    The first k_n - 1 blocks have size b_n; the final block takes whatever
    remains (possibly shorter).  Default b_n = floor(sqrt(n)).
    """
    n = T - q + 1
    if n < 2:
        raise ConfigError(f"too few usable time points: T={T}, q={q}")
    if block_size is None:
        block_size = int(np.floor(np.sqrt(n)))
    else:
        block_size = int(block_size)
        if block_size < 2 or block_size > n / 2:
            raise ConfigError(
                f"block size must lie in [2, n/2] = [2, {n / 2:g}], got {block_size}"
            )
    k_n = int(np.ceil(n / block_size))
    ends = [q + i * block_size for i in range(k_n)]
    ends.append(T + 1)
    return BlockPartition(endpoints=tuple(ends), block_size=block_size)
