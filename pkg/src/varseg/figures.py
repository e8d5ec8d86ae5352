"""Static SVG rendering of detection output.

Four displays: the series with change point lines ("cp"), per-segment
coefficient heatmaps ("param"), per-segment density bars ("density"), and
one directed Granger-network graph per segment ("granger").  Output is
plain SVG 1.1 text with fixed-precision coordinates, byte-identical across
invocations for the same inputs.
"""

from __future__ import annotations

import os
from typing import Optional

import numpy as np

from .core import DetectionResult, TimeSeriesMatrix
from .errors import ConfigError
from .io import _atomic_write

DISPLAY_KINDS = ("cp", "param", "density", "granger")
LAYOUTS = ("circle", "star", "nicely")

WIDTH, HEIGHT = 720, 480
MARGIN = 48


def _fmt(x: float) -> str:
    return f"{x:.3f}"


def _svg(body: str, width=WIDTH, height=HEIGHT) -> str:
    return (
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" '
        f'width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">\n{body}</svg>\n'
    )


_SERIES_COLORS = (
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
    "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf",
)


def _cp_svg(result: DetectionResult, data: TimeSeriesMatrix,
            cp_color: str) -> str:
    values = data.values
    T, p = values.shape
    lo, hi = float(values.min()), float(values.max())
    span = hi - lo or 1.0
    inner_w = WIDTH - 2 * MARGIN
    inner_h = HEIGHT - 2 * MARGIN

    def sx(t):
        return MARGIN + inner_w * (t - 1) / max(T - 1, 1)

    def sy(v):
        return HEIGHT - MARGIN - inner_h * (v - lo) / span

    parts = [
        f'<rect x="{MARGIN}" y="{MARGIN}" width="{inner_w}" '
        f'height="{inner_h}" fill="none" stroke="#333333"/>'
    ]
    for j in range(p):
        color = _SERIES_COLORS[j % len(_SERIES_COLORS)]
        pts = " ".join(
            f"{_fmt(sx(t + 1))},{_fmt(sy(values[t, j]))}" for t in range(T)
        )
        parts.append(
            f'<polyline points="{pts}" fill="none" stroke="{color}" '
            f'stroke-width="0.8" opacity="0.75"/>'
        )
    for cp in result.change_points:
        x = _fmt(sx(cp))
        parts.append(
            f'<line x1="{x}" y1="{MARGIN}" x2="{x}" y2="{HEIGHT - MARGIN}" '
            f'stroke="{cp_color}" stroke-width="1.5"/>'
        )
    return _svg("\n".join(parts) + "\n")


def _diverging_color(v: float, vmax: float) -> str:
    if vmax <= 0:
        return "#ffffff"
    z = max(-1.0, min(1.0, v / vmax))
    if z >= 0:
        r, g, b = 255, int(255 * (1 - z)), int(255 * (1 - z))
    else:
        r, g, b = int(255 * (1 + z)), int(255 * (1 + z)), 255
    return f"#{r:02x}{g:02x}{b:02x}"


def _param_svg(result: DetectionResult) -> str:
    mats = [np.asarray(m) for m in result.sparse_mats]
    if result.lowrank_mats is not None:
        mats = [m + np.asarray(L) for m, L in zip(mats, result.lowrank_mats)]
    n_seg = len(mats)
    rows, cols = mats[0].shape
    vmax = max(float(np.max(np.abs(m))) for m in mats) or 1.0
    gap = 24
    cell = min(
        (WIDTH - 2 * MARGIN - gap * (n_seg - 1)) / (n_seg * cols),
        (HEIGHT - 2 * MARGIN) / rows,
    )
    parts = []
    for s, m in enumerate(mats):
        x0 = MARGIN + s * (cols * cell + gap)
        y0 = MARGIN
        for i in range(rows):
            for j in range(cols):
                color = _diverging_color(float(m[i, j]), vmax)
                parts.append(
                    f'<rect x="{_fmt(x0 + j * cell)}" y="{_fmt(y0 + i * cell)}" '
                    f'width="{_fmt(cell)}" height="{_fmt(cell)}" '
                    f'fill="{color}"/>'
                )
        parts.append(
            f'<rect x="{_fmt(x0)}" y="{_fmt(y0)}" width="{_fmt(cols * cell)}" '
            f'height="{_fmt(rows * cell)}" fill="none" stroke="#333333"/>'
        )
    return _svg("\n".join(parts) + "\n")


def segment_densities(result: DetectionResult, threshold: float) -> list:
    """Fraction of sparse-component entries above the threshold, per segment."""
    out = []
    for m in result.sparse_mats:
        m = np.asarray(m)
        out.append(float(np.sum(np.abs(m) > threshold)) / m.size)
    return out


def _density_svg(result: DetectionResult, threshold: float) -> str:
    dens = segment_densities(result, threshold)
    n = len(dens)
    inner_w = WIDTH - 2 * MARGIN
    inner_h = HEIGHT - 2 * MARGIN
    bar_w = inner_w / (2 * n)
    parts = [
        f'<line x1="{MARGIN}" y1="{HEIGHT - MARGIN}" x2="{WIDTH - MARGIN}" '
        f'y2="{HEIGHT - MARGIN}" stroke="#333333"/>'
    ]
    top = max(max(dens), 1e-12)
    for i, d in enumerate(dens):
        h = inner_h * d / top
        x = MARGIN + inner_w * (2 * i + 0.5) / (2 * n)
        parts.append(
            f'<rect x="{_fmt(x)}" y="{_fmt(HEIGHT - MARGIN - h)}" '
            f'width="{_fmt(bar_w)}" height="{_fmt(h)}" fill="#4477aa"/>'
        )
        parts.append(
            f'<text x="{_fmt(x + bar_w / 2)}" y="{_fmt(HEIGHT - MARGIN + 16)}" '
            f'font-size="12" text-anchor="middle">seg {i + 1}: {d:.4f}</text>'
        )
    return _svg("\n".join(parts) + "\n")


def _adjacency(mat: np.ndarray, threshold: float) -> np.ndarray:
    """Directed edges i -> j when coefficient (j, i) of any lag exceeds the
    threshold (series i Granger-causes series j)."""
    p = mat.shape[0]
    q = mat.shape[1] // p
    adj = np.zeros((p, p), dtype=bool)
    for lag in range(q):
        block = mat[:, lag * p : (lag + 1) * p]
        adj |= np.abs(block).T > threshold
    return adj


def _layout_positions(adj: np.ndarray, layout: str, seed: int) -> np.ndarray:
    p = adj.shape[0]
    cx, cy = WIDTH / 2, HEIGHT / 2
    radius = min(WIDTH, HEIGHT) / 2 - MARGIN
    angles = 2 * np.pi * np.arange(p) / p
    ring = np.stack([cx + radius * np.cos(angles), cy + radius * np.sin(angles)], 1)
    if layout == "circle":
        return ring
    if layout == "star":
        deg = adj.sum(0) + adj.sum(1)
        hub = int(np.argmax(deg))
        pos = np.zeros((p, 2))
        others = [i for i in range(p) if i != hub]
        angles = 2 * np.pi * np.arange(len(others)) / max(len(others), 1)
        for k, i in enumerate(others):
            pos[i] = (cx + radius * np.cos(angles[k]), cy + radius * np.sin(angles[k]))
        pos[hub] = (cx, cy)
        return pos
    # "nicely": seeded force-directed iterations from a jittered ring
    rng = np.random.default_rng(seed)
    pos = ring + rng.normal(scale=radius / 10, size=(p, 2))
    k = radius / np.sqrt(p)
    for _ in range(60):
        disp = np.zeros((p, 2))
        diff = pos[:, None, :] - pos[None, :, :]
        dist = np.sqrt(np.sum(diff * diff, axis=2)) + 1e-9
        rep = k * k / dist
        np.fill_diagonal(rep, 0.0)
        disp += np.sum(diff / dist[..., None] * rep[..., None], axis=1)
        edges = np.argwhere(adj | adj.T)
        for i, j in edges:
            d = pos[i] - pos[j]
            dd = np.sqrt(d @ d) + 1e-9
            pull = dd * dd / k
            disp[i] -= d / dd * pull / 2
            disp[j] += d / dd * pull / 2
        mag = np.sqrt(np.sum(disp * disp, axis=1)) + 1e-9
        step = np.minimum(mag, 12.0)
        pos += disp / mag[:, None] * step[:, None]
        pos[:, 0] = np.clip(pos[:, 0], MARGIN, WIDTH - MARGIN)
        pos[:, 1] = np.clip(pos[:, 1], MARGIN, HEIGHT - MARGIN)
    return pos


def _granger_svg(mat: np.ndarray, threshold: float, layout: str,
                 seed: int) -> str:
    adj = _adjacency(mat, threshold)
    pos = _layout_positions(adj, layout, seed)
    p = adj.shape[0]
    parts = [
        '<defs><marker id="arrow" markerWidth="8" markerHeight="8" refX="7" '
        'refY="3" orient="auto"><path d="M0,0 L7,3 L0,6 z" fill="#555555"/>'
        "</marker></defs>"
    ]
    for i in range(p):
        for j in range(p):
            if not adj[i, j] or i == j:
                continue
            x1, y1 = pos[i]
            x2, y2 = pos[j]
            d = np.array([x2 - x1, y2 - y1])
            norm = np.sqrt(d @ d) + 1e-9
            trim = d / norm * 12.0
            parts.append(
                f'<line x1="{_fmt(x1 + trim[0])}" y1="{_fmt(y1 + trim[1])}" '
                f'x2="{_fmt(x2 - trim[0])}" y2="{_fmt(y2 - trim[1])}" '
                f'stroke="#555555" stroke-width="1" marker-end="url(#arrow)"/>'
            )
    for i in range(p):
        x, y = pos[i]
        parts.append(
            f'<circle cx="{_fmt(x)}" cy="{_fmt(y)}" r="10" fill="#ffcc66" '
            f'stroke="#333333"/>'
        )
        parts.append(
            f'<text x="{_fmt(x)}" y="{_fmt(y + 4)}" font-size="10" '
            f'text-anchor="middle">{i + 1}</text>'
        )
    return _svg("\n".join(parts) + "\n")


def render_figures(result: DetectionResult, data: Optional[TimeSeriesMatrix],
                   kind: str, path, threshold: float = 0.1,
                   layout: str = "circle", cp_color: str = "red",
                   seed: int = 0) -> list:
    """Write the requested display to ``path``; the granger display writes
    one file per segment (suffix _seg<k>).  Returns the written paths."""
    if kind not in DISPLAY_KINDS:
        raise ConfigError(f"unknown display kind {kind!r}")
    if threshold < 0:
        raise ConfigError("threshold must be non-negative")
    if layout not in LAYOUTS:
        raise ConfigError(f"unknown layout {layout!r}")
    if kind == "cp":
        if data is None:
            raise ConfigError("the cp display needs the time series data")
        _atomic_write(path, _cp_svg(result, data, cp_color))
        return [path]
    if kind == "param":
        _atomic_write(path, _param_svg(result))
        return [path]
    if kind == "density":
        _atomic_write(path, _density_svg(result, threshold))
        return [path]
    base, ext = os.path.splitext(str(path))
    ext = ext or ".svg"
    written = []
    for s, m in enumerate(result.sparse_mats):
        target = f"{base}_seg{s + 1}{ext}"
        _atomic_write(target, _granger_svg(np.asarray(m), threshold, layout,
                                           seed))
        written.append(target)
    return written
