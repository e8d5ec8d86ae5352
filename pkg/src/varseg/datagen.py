"""Synthetic piecewise-stationary VAR data generation.

Transition structures: plain sparse patterns (off-diagonal / diagonal /
random), group-sparse fills over listed rows or columns, and low-rank plus
sparse combinations (with the low-rank part either fixed across segments or
time-varying).  Every segment is stabilized to the requested companion
spectral radius before the recursion runs.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .core import (
    PiecewiseVarModel,
    TimeSeriesMatrix,
    TransitionSet,
    companion_spectral_radius,
)
from .errors import ConfigError, NumericError

GENERATION_METHODS = (
    "sparse",
    "group_sparse",
    "fixed_lowrank_sparse",
    "lowrank_sparse",
)


@dataclass(frozen=True)
class SparsityPattern:
    kind: str = "off_diagonal"
    density: Optional[float] = None

    def __post_init__(self):
        if self.kind not in ("off_diagonal", "diagonal", "random"):
            raise ConfigError(f"unknown sparsity pattern {self.kind!r}")
        if self.kind == "random":
            if self.density is None or not (0 < self.density < 1):
                raise ConfigError("random pattern needs a density in (0, 1)")
        elif self.density is not None:
            raise ConfigError("density only applies to the random pattern")


@dataclass(frozen=True)
class GenerationSpec:
    """Everything needed to synthesize one piecewise VAR series."""

    T: int
    p: int
    break_points: tuple  # strictly increasing, last entry T+1
    method: str = "sparse"
    lags: int = 1
    lags_vector: Optional[tuple] = None
    pattern: SparsityPattern = SparsityPattern()
    signals: Optional[tuple] = None
    group_type: str = "columnwise"
    group_index: Optional[tuple] = None
    rank: Optional[tuple] = None
    singular_vals: Optional[tuple] = None
    info_ratio: Optional[tuple] = None
    spectral_radius: float = 0.9
    skip: int = 50
    seed: int = 1
    sigma: object = 1.0  # noise std, scalar or one per segment

    def __post_init__(self):
        if self.method not in GENERATION_METHODS:
            raise ConfigError(f"unknown generation method {self.method!r}")
        bps = tuple(int(b) for b in self.break_points)
        if len(bps) < 1 or bps[-1] != self.T + 1:
            raise ConfigError("break_points must end with T + 1")
        if list(bps) != sorted(set(bps)):
            raise ConfigError("break_points must be strictly increasing")
        object.__setattr__(self, "break_points", bps)
        if not (0 < self.spectral_radius < 1):
            raise ConfigError("spectral_radius must lie in (0, 1)")
        if self.skip < 0:
            raise ConfigError("skip must be non-negative")
        if self.lags_vector is not None:
            lv = tuple(int(v) for v in self.lags_vector)
            if len(lv) != self.n_segments or any(v < 1 for v in lv):
                raise ConfigError("lags_vector needs one positive lag per segment")
            object.__setattr__(self, "lags_vector", lv)
        if self.signals is not None:
            object.__setattr__(
                self, "signals", tuple(float(s) for s in self.signals)
            )
        if self.method in ("fixed_lowrank_sparse", "lowrank_sparse"):
            if self.q_max != 1:
                raise ConfigError("low-rank generation supports lag 1 only")
            if self.rank is None or len(self.rank) != self.n_segments:
                raise ConfigError("need one rank per segment")
            if self.singular_vals is None:
                raise ConfigError("need singular values for low-rank methods")
            if len(self.singular_vals) != max(self.rank):
                raise ConfigError(
                    "singular_vals length must equal the maximum rank"
                )
            if any(s <= 0 for s in self.singular_vals):
                raise ConfigError("singular values must be positive")
            if list(self.singular_vals) != sorted(self.singular_vals, reverse=True):
                raise ConfigError("singular values must be decreasing")
            if self.info_ratio is not None and len(self.info_ratio) != self.n_segments:
                raise ConfigError("need one information ratio per segment")
            if self.method == "fixed_lowrank_sparse" and len(set(self.rank)) != 1:
                raise ConfigError("fixed low-rank method needs a single rank")

    @property
    def n_segments(self) -> int:
        return len(self.break_points)

    @property
    def q_max(self) -> int:
        if self.lags_vector is not None:
            return max(self.lags_vector)
        return self.lags

    def segment_lags(self) -> tuple:
        if self.lags_vector is not None:
            return self.lags_vector
        return (self.lags,) * self.n_segments

    def segment_signal(self, seg: int, lag: int) -> float:
        """Signal magnitude for (segment, lag); flattened segment-major."""
        if self.signals is None:
            raise ConfigError("spec has no signal magnitudes")
        lags = self.segment_lags()
        offset = sum(lags[:seg]) + lag
        if offset >= len(self.signals):
            raise ConfigError("signals too short for segment/lag layout")
        return self.signals[offset]

    def noise_scales(self) -> tuple:
        if np.isscalar(self.sigma):
            return (float(self.sigma),) * self.n_segments
        scales = tuple(float(s) for s in self.sigma)
        if len(scales) != self.n_segments:
            raise ConfigError("need one noise scale per segment")
        return scales


def _pattern_matrix(spec: GenerationSpec, seg: int, lag: int, rng) -> np.ndarray:
    p = spec.p
    signal = spec.segment_signal(seg, lag)
    kind = spec.pattern.kind
    if kind == "off_diagonal":
        m = np.zeros((p, p))
        idx = np.arange(p - 1)
        m[idx, idx + 1] = signal
        return m
    if kind == "diagonal":
        return signal * np.eye(p)
    # random: every entry (self-loops included) independently nonzero
    mask = rng.random((p, p)) < spec.pattern.density
    return np.where(mask, signal, 0.0)


def gen_sparse_transitions(spec: GenerationSpec, rng=None) -> list:
    """One TransitionSet per segment; lags beyond a segment's own lag count
    are stored as zero matrices so all segments share the maximum lag."""
    if rng is None:
        rng = np.random.default_rng(spec.seed)
    q_max = spec.q_max
    out = []
    for seg, q_seg in enumerate(spec.segment_lags()):
        mats = []
        for lag in range(q_max):
            if lag < q_seg:
                mats.append(_pattern_matrix(spec, seg, lag, rng))
            else:
                mats.append(np.zeros((spec.p, spec.p)))
        out.append(TransitionSet(tuple(mats)))
    return out


def gen_group_sparse_transitions(spec: GenerationSpec, rng=None) -> list:
    """Fill the listed rows/columns densely with the segment-lag signal.

    ``group_index`` holds 0-based flat indices in [0, p*q): index f refers to
    row/column (f mod p) of lag (f div p), per ``group_type``.
    """
    if spec.group_index is None:
        idx = ()
    else:
        idx = tuple(int(i) for i in spec.group_index)
    p, q_max = spec.p, spec.q_max
    for f in idx:
        if f < 0 or f >= p * q_max:
            raise ConfigError(f"group index {f} outside [0, {p * q_max})")
    if spec.group_type not in ("columnwise", "rowwise"):
        raise ConfigError(f"unknown group type {spec.group_type!r}")
    out = []
    for seg, q_seg in enumerate(spec.segment_lags()):
        mats = [np.zeros((p, p)) for _ in range(q_max)]
        for f in idx:
            lag, which = divmod(f, p)
            if lag >= q_seg:
                continue
            signal = spec.segment_signal(seg, lag)
            if spec.group_type == "columnwise":
                mats[lag][:, which] = signal
            else:
                mats[lag][which, :] = signal
        out.append(TransitionSet(tuple(mats)))
    return out


def gen_lowrank_component(p: int, rank: int, singular_vals, rng=None) -> np.ndarray:
    """L = U diag(s_1..s_r) V^T with random orthonormal p x r frames."""
    if rank > p:
        raise ConfigError(f"rank {rank} exceeds dimension {p}")
    sv = np.asarray(singular_vals, dtype=float)[:rank]
    if sv.size < rank or np.any(sv <= 0):
        raise ConfigError("need rank positive singular values")
    if rng is None:
        rng = np.random.default_rng()
    U, _ = np.linalg.qr(rng.normal(size=(p, rank)))
    V, _ = np.linalg.qr(rng.normal(size=(p, rank)))
    return (U * sv) @ V.T


def apply_info_ratio(L: np.ndarray, S: np.ndarray, gamma: float) -> np.ndarray:
    """Rescale L so max|L| / max|S| equals gamma."""
    if gamma <= 0:
        raise ConfigError("information ratio must be positive")
    s_max = float(np.max(np.abs(S)))
    if s_max == 0:
        raise ConfigError("information ratio undefined: sparse component is zero")
    l_max = float(np.max(np.abs(L)))
    if l_max == 0:
        raise ConfigError("cannot rescale an all-zero low-rank component")
    return L * (gamma * s_max / l_max)


def stabilize(ts: TransitionSet, rho: float) -> TransitionSet:
    """Uniformly rescale the lag matrices (bisection on the common factor)
    until the companion spectral radius equals rho * (1 - 1e-6); a set that
    is already below rho is returned unchanged."""
    if not (0 < rho < 1):
        raise ConfigError("target spectral radius must lie in (0, 1)")
    radius = companion_spectral_radius(ts)
    if radius < rho:
        return ts
    target = rho * (1.0 - 1e-6)
    lo, hi = 0.0, 1.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        r = companion_spectral_radius(ts.scaled(mid))
        if abs(r - target) < 1e-10:
            lo = hi = mid
            break
        if r < target:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-15:
            break
    return ts.scaled(0.5 * (lo + hi))


def _stabilizing_factor(ts: TransitionSet, rho: float) -> float:
    """Common scale c <= 1 bringing the set to radius rho*(1-1e-6)."""
    if companion_spectral_radius(ts) < rho:
        return 1.0
    target = rho * (1.0 - 1e-6)
    lo, hi = 0.0, 1.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        r = companion_spectral_radius(ts.scaled(mid))
        if abs(r - target) < 1e-10:
            return mid
        if r < target:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-15:
            break
    return 0.5 * (lo + hi)


def build_transitions(spec: GenerationSpec, rng=None):
    """Stabilized per-segment transitions plus their low-rank / sparse parts.

    Returns (segments, lowrank_parts, sparse_parts); the component lists are
    None for the purely (group-)sparse methods.
    """
    if rng is None:
        rng = np.random.default_rng(spec.seed)
    m = spec.n_segments
    if spec.method == "sparse":
        segs = gen_sparse_transitions(spec, rng)
        return [stabilize(s, spec.spectral_radius) for s in segs], None, None
    if spec.method == "group_sparse":
        segs = gen_group_sparse_transitions(spec, rng)
        return [stabilize(s, spec.spectral_radius) for s in segs], None, None

    sparse_parts = [ts.lags[0] for ts in gen_sparse_transitions(spec, rng)]
    ratios = spec.info_ratio or (1.0,) * m
    if spec.method == "fixed_lowrank_sparse":
        # one shared component, scaled once against the first segment
        L = gen_lowrank_component(spec.p, spec.rank[0], spec.singular_vals, rng)
        L = apply_info_ratio(L, sparse_parts[0], ratios[0])
        combined = [TransitionSet((L + S,)) for S in sparse_parts]
        c = min(
            _stabilizing_factor(ts, spec.spectral_radius) for ts in combined
        )
        L = c * L
        sparse_parts = [c * S for S in sparse_parts]
        segs = [TransitionSet((L + S,)) for S in sparse_parts]
        return segs, [L for _ in range(m)], sparse_parts

    lowranks = []
    for j in range(m):
        L = gen_lowrank_component(spec.p, spec.rank[j], spec.singular_vals, rng)
        lowranks.append(apply_info_ratio(L, sparse_parts[j], ratios[j]))
    segs = []
    for j in range(m):
        c = _stabilizing_factor(
            TransitionSet((lowranks[j] + sparse_parts[j],)), spec.spectral_radius
        )
        lowranks[j] = c * lowranks[j]
        sparse_parts[j] = c * sparse_parts[j]
        segs.append(TransitionSet((lowranks[j] + sparse_parts[j],)))
    return segs, lowranks, sparse_parts


def simulate(spec: GenerationSpec, rng=None):
    """Generate the piecewise VAR recursion.

    Returns (series, noise, model): the last T points of a skip+T run started
    from zero history, the matching Gaussian noise rows, and the ground-truth
    model.
    """
    if rng is None:
        rng = np.random.default_rng(spec.seed)
    segments, _, _ = build_transitions(spec, rng)
    for ts in segments:
        if companion_spectral_radius(ts) >= spec.spectral_radius:
            raise NumericError("segment still unstable after stabilization")
    scales = spec.noise_scales()
    breaks = spec.break_points[:-1]
    model = PiecewiseVarModel(breaks, tuple(segments), scales)

    T, p, skip = spec.T, spec.p, spec.skip
    q = spec.q_max
    total = T + skip
    stacked = [ts.stacked() for ts in segments]  # p x (p*q) each
    bp = np.asarray(breaks)
    noise = rng.normal(size=(total, p))
    series = np.zeros((total, p))
    for row in range(total):
        t = row - skip + 1  # mapped 1-based time; burn-in maps to t <= 0
        seg = int(np.searchsorted(bp, t, side="right")) if t > 1 else 0
        eps = noise[row] * scales[seg]
        noise[row] = eps
        hist = np.zeros(p * q)
        for d in range(q):
            r = row - 1 - d
            if r >= 0:
                hist[d * p : (d + 1) * p] = series[r]
        series[row] = stacked[seg] @ hist + eps
    return (
        TimeSeriesMatrix(series[skip:]),
        noise[skip:],
        model,
    )
