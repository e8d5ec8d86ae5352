"""Detection metrics, the replication harness, and BIC lag selection."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, replace
from typing import Callable, Optional, Sequence, Union

import numpy as np

from .core import DetectionResult, PenaltySpec, PiecewiseVarModel, TimeSeriesMatrix
from .datagen import GenerationSpec, simulate
from .errors import ConfigError
from .lstsp import LstspConfig, lstsp_detect
from .tbss import TbssConfig, tbss_detect

DEFAULT_CRITICAL = 5       # L in the selection-rate success window
DEFAULT_THRESHOLD = 0.1    # |entry| cut for support recovery


@dataclass(frozen=True)
class SimulationSummary:
    cp_truth_fractions: tuple
    cp_means: tuple          # mean matched estimate, as fraction of T
    cp_stds: tuple
    selection_rates: tuple
    hausdorff_mean: float
    hausdorff_std: float
    hausdorff_median: float
    support_means: dict
    support_stds: dict
    failed_replicates: tuple
    mean_runtime: float

    def __post_init__(self):
        for r in self.selection_rates:
            if not (0.0 <= r <= 1.0):
                raise ConfigError("selection rates must lie in [0, 1]")
        mcc = self.support_means.get("MCC")
        if mcc is not None and not np.isnan(mcc) and not (-1.0 <= mcc <= 1.0):
            raise ConfigError("MCC must lie in [-1, 1]")
        if self.hausdorff_mean < 0:
            raise ConfigError("hausdorff distances are non-negative")


def success_window(truth: Sequence[int], T: int, j: int, L: int):
    """Asymmetric window around the j-th true change point (0-based)."""
    if L < 2:
        raise ConfigError("critical value L must be at least 2")
    pts = [0] + [int(t) for t in truth] + [T]
    t_j = pts[j + 1]
    lo = t_j - (t_j - pts[j]) / L
    hi = t_j + (pts[j + 2] - t_j) / L
    return lo, hi


def selection_rate(estimates, truth, T: int, L: int = DEFAULT_CRITICAL):
    """Per-true-CP fraction of replicates with an estimate in the window."""
    truth = [int(t) for t in truth]
    rates = []
    for j in range(len(truth)):
        lo, hi = success_window(truth, T, j, L)
        hits = 0
        for est in estimates:
            if any(lo <= e <= hi for e in est):
                hits += 1
        rates.append(hits / len(estimates) if estimates else 0.0)
    return tuple(rates)


def hausdorff(A, B) -> float:
    """Hausdorff distance between two finite index sets; +inf if exactly one
    side is empty (flagging convention), 0 if both are empty."""
    A = list(A)
    B = list(B)
    if not A and not B:
        return 0.0
    if not A or not B:
        return float("inf")
    d_ab = max(min(abs(a - b) for b in B) for a in A)
    d_ba = max(min(abs(a - b) for a in A) for b in B)
    return float(max(d_ab, d_ba))


def support_metrics(estimated, true, threshold: float = DEFAULT_THRESHOLD):
    """Entrywise support confusion pooled across segments.

    Estimated support is |entry| > threshold, true support is entry != 0.
    Returns (SEN, SPC, ACC, MCC); MCC is 0 when a marginal is empty.
    """
    tp = tn = fp = fn = 0
    for est, tru in zip(estimated, true):
        est = np.asarray(est)
        tru = np.asarray(tru)
        if est.shape != tru.shape:
            raise ConfigError("estimate and truth shapes differ")
        e = np.abs(est) > threshold
        t = tru != 0
        tp += int(np.sum(e & t))
        tn += int(np.sum(~e & ~t))
        fp += int(np.sum(e & ~t))
        fn += int(np.sum(~e & t))
    sen = tp / (tp + fn) if tp + fn else 0.0
    spc = tn / (tn + fp) if tn + fp else 0.0
    total = tp + tn + fp + fn
    acc = (tp + tn) / total if total else 0.0
    denom = (tp + fp) * (tp + fn) * (tn + fp) * (tn + fn)
    mcc = 0.0 if denom == 0 else (tp * tn - fp * fn) / np.sqrt(denom)
    return float(sen), float(spc), float(acc), float(mcc)


def _total_transition(result: DetectionResult, j: int) -> np.ndarray:
    total = np.asarray(result.sparse_mats[j], dtype=float)
    if result.lowrank_mats is not None:
        total = total + np.asarray(result.lowrank_mats[j], dtype=float)
    return total


def run_replications(
    nreps: int,
    gen_spec: GenerationSpec,
    detector: Union[str, Callable],
    detector_config=None,
    L: int = DEFAULT_CRITICAL,
    threshold: float = DEFAULT_THRESHOLD,
) -> SimulationSummary:
    """Generate, detect, and score ``nreps`` replicates.

    Replicate i uses seed gen_spec.seed + i.  ``detector`` is "tbss",
    "lstsp", or a callable mapping a TimeSeriesMatrix to a DetectionResult.
    Replicates whose detected count mismatches the truth are listed as
    failed and excluded from the per-CP location statistics (they still
    count in the selection-rate denominators).
    """
    if nreps < 1:
        raise ConfigError("need at least one replicate")
    if detector == "tbss":
        detect = lambda d: tbss_detect(d, detector_config)
    elif detector == "lstsp":
        detect = lambda d: lstsp_detect(d, detector_config)
    elif callable(detector):
        detect = detector
    else:
        raise ConfigError(f"unknown detector {detector!r}")

    truth = None
    T = gen_spec.T
    all_estimates = []
    matched = []
    hausdorffs = []
    supports = []
    failed = []
    runtimes = []
    for i in range(nreps):
        spec_i = replace(gen_spec, seed=gen_spec.seed + i)
        series, _, model = simulate(spec_i)
        truth = model.break_points
        try:
            result = detect(series)
        except Exception as exc:  # scored as a failed replicate
            warnings.warn(f"replicate {i} failed: {exc}")
            failed.append(i)
            all_estimates.append(())
            hausdorffs.append(float("inf"))
            continue
        cps = result.change_points
        all_estimates.append(cps)
        runtimes.append(result.elapsed_seconds)
        hausdorffs.append(hausdorff(cps, truth))
        est_total = [_total_transition(result, j) for j in range(len(cps) + 1)]
        if len(cps) == len(truth):
            matched.append(cps)
            true_total = [ts.stacked() for ts in model.segments]
            supports.append(support_metrics(est_total, true_total, threshold))
        else:
            failed.append(i)

    rates = selection_rate(all_estimates, truth, T, L)
    if matched:
        arr = np.asarray(matched, dtype=float) / T
        cp_means = tuple(arr.mean(axis=0))
        cp_stds = tuple(arr.std(axis=0, ddof=0))
    else:
        cp_means = (float("nan"),) * len(truth)
        cp_stds = (float("nan"),) * len(truth)
    h = np.asarray(hausdorffs, dtype=float)
    names = ("SEN", "SPC", "ACC", "MCC")
    if supports:
        sup = np.asarray(supports, dtype=float)
        support_means = dict(zip(names, map(float, sup.mean(axis=0))))
        support_stds = dict(zip(names, map(float, sup.std(axis=0, ddof=0))))
    else:
        support_means = {k: float("nan") for k in names}
        support_stds = {k: float("nan") for k in names}
    return SimulationSummary(
        cp_truth_fractions=tuple(t / T for t in truth),
        cp_means=cp_means,
        cp_stds=cp_stds,
        selection_rates=rates,
        hausdorff_mean=float(h.mean()),
        hausdorff_std=float(h.std(ddof=0)),
        hausdorff_median=float(np.median(h)),
        support_means=support_means,
        support_stds=support_stds,
        failed_replicates=tuple(failed),
        mean_runtime=float(np.mean(runtimes)) if runtimes else float("nan"),
    )


def var_residuals(values: np.ndarray, coef: np.ndarray, d: int) -> np.ndarray:
    """One-step residuals y_t - sum_l Phi^(l) y_{t-l} on a segment array."""
    n, p = values.shape
    out = np.empty((n - d, p))
    for t in range(d, n):
        pred = np.zeros(p)
        for lag in range(d):
            pred += coef[:, lag * p : (lag + 1) * p] @ values[t - 1 - lag]
        out[t - d] = values[t] - pred
    return out


def bic_lag_select(data: TimeSeriesMatrix, max_lag: int,
                   config: Optional[TbssConfig] = None):
    """Choose the VAR order by detecting change points at each candidate lag
    and scoring per-segment residual covariances.

    BIC_j = log det(Sigma_j) + d_j log(N_j)/N_j, summed over the detected
    segments; the lag with the smallest total wins.
    """
    if not (1 <= max_lag <= 8):
        raise ConfigError("max lag must lie in [1, 8]")
    values = data.values
    T, p = values.shape
    best = None
    for d in range(1, max_lag + 1):
        if config is None:
            cfg = TbssConfig(penalty=PenaltySpec("sparse"), q=d, refit=True)
        else:
            cfg = replace(config, q=d)
        try:
            result = tbss_detect(data, cfg)
        except Exception as exc:
            warnings.warn(f"lag {d} skipped: detection failed ({exc})")
            continue
        bounds = [1] + list(result.change_points) + [T + 1]
        total = 0.0
        usable = True
        for j in range(len(bounds) - 1):
            seg = values[bounds[j] - 1 : bounds[j + 1] - 1]
            n_j = seg.shape[0]
            if n_j < d + p + 1:
                warnings.warn(f"lag {d}: segment {j + 1} too short, skipped")
                usable = False
                break
            resid = var_residuals(seg, np.asarray(result.sparse_mats[j]), d)
            sigma = resid.T @ resid / (n_j - d)
            sign, logdet = np.linalg.slogdet(sigma)
            if sign <= 0:
                usable = False
                break
            d_j = int(np.sum(np.asarray(result.sparse_mats[j]) != 0))
            total += logdet + d_j * np.log(n_j) / n_j
        if not usable:
            continue
        if best is None or total < best[0]:
            best = (total, d)
    if best is None:
        raise ConfigError("no usable lag among the candidates")
    return best[1]
