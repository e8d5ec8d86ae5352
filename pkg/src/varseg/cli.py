"""Command line interface: simulate, detect, evaluate, select-lag, plot.

Flags may come from a flat key=value config file (--config); explicit flags
override file entries.  Every run prints the sha256 digest of its manifest.
Exit codes: 0 success, 2 usage or configuration error, 1 runtime error.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict

import numpy as np

from .core import Grouping, PenaltySpec, TimeSeriesMatrix
from .datagen import GenerationSpec, SparsityPattern, simulate
from .errors import ConfigError, DataFormatError, VarsegError
from .evalsuite import bic_lag_select, run_replications
from .figures import render_figures
from .io import (
    RunManifest,
    load_csv,
    load_result,
    make_manifest,
    save_csv,
    save_result,
    _atomic_write,
)
from .lstsp import LstspConfig, lstsp_detect
from .tbss import TbssConfig, tbss_detect

PENALTY_NAMES = {
    "sparse": "sparse",
    "group": "group_sparse",
    "fls": "fixed_lowrank_sparse",
    "ls": "lowrank_sparse",
}


def _ints(text):
    return tuple(int(v) for v in str(text).split(",") if v != "")


def _floats(text):
    return tuple(float(v) for v in str(text).split(",") if v != "")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="varseg",
        description=(
            "Multiple change point detection for piecewise-stationary VAR "
            "series with sparse, group sparse, or low-rank plus sparse "
            "transition matrices."
        ),
    )
    sub = parser.add_subparsers(dest="command")

    def add_common(p):
        p.add_argument("--config", help="flat key=value config file")
        p.add_argument("--seed", type=int, default=1)

    def add_generation(p):
        p.add_argument("--nob", "-T", type=int, help="number of observations")
        p.add_argument("--p", type=int, help="series dimension")
        p.add_argument("--lags", type=int, default=1)
        p.add_argument("--lags-vector", type=_ints)
        p.add_argument("--breaks", type=_ints,
                       help="change points, e.g. 1333,2666 (T+1 appended)")
        p.add_argument("--method", default="sparse",
                       choices=sorted(PENALTY_NAMES))
        p.add_argument("--pattern", default="off_diagonal",
                       choices=("off_diagonal", "diagonal", "random"))
        p.add_argument("--density", type=float)
        p.add_argument("--signals", type=_floats)
        p.add_argument("--group-type", default="columnwise",
                       choices=("columnwise", "rowwise"))
        p.add_argument("--group-index", type=_ints)
        p.add_argument("--rank", type=_ints)
        p.add_argument("--singular-vals", type=_floats)
        p.add_argument("--info-ratio", type=_floats)
        p.add_argument("--spectral-radius", type=float, default=0.9)
        p.add_argument("--skip", type=int, default=50)
        p.add_argument("--sigma", type=_floats, default=(1.0,))

    def add_detection(p):
        p.add_argument("--algo", default="tbss", choices=("tbss", "lstsp"))
        p.add_argument("--penalty", default="sparse",
                       choices=sorted(PENALTY_NAMES))
        p.add_argument("--lag", "-q", type=int, default=1)
        p.add_argument("--block-size", type=int)
        p.add_argument("--lambda1", type=_floats,
                       help="explicit weight(s); pair for lstsp")
        p.add_argument("--lambda2", type=_floats)
        p.add_argument("--lambda1-grid", type=_floats)
        p.add_argument("--lambda2-grid", type=_floats)
        p.add_argument("--mu", type=float, help="nuclear weight (tbss fls)")
        p.add_argument("--an-grid", type=_ints)
        p.add_argument("--use-bic", action="store_true",
                       help="BIC-gated omega selection")
        p.add_argument("--tol", type=float)
        p.add_argument("--max-iter", type=int)
        p.add_argument("--refit", action="store_true")
        p.add_argument("--refit-radius", type=int)
        p.add_argument("--rho", type=float, help="refit l1 weight")
        p.add_argument("--group-kind", default="columnwise_separate",
                       choices=("columnwise_separate", "columnwise_simultaneous",
                                "rowwise_separate", "rowwise_simultaneous",
                                "hierarchical_lag"))
        # lstsp specific
        p.add_argument("--mu1", type=_floats)
        p.add_argument("--mu2", type=_floats)
        p.add_argument("--lambda3", type=_floats)
        p.add_argument("--mu3", type=_floats)
        p.add_argument("--omega", type=float)
        p.add_argument("--omega-constant", type=float,
                       help="omega = C log(n) log(p)")
        p.add_argument("--window", type=int, help="rolling window length h")
        p.add_argument("--step", type=int, help="rolling step size")
        p.add_argument("--scan-skip", type=int, default=5,
                       help="responses trimmed at window ends")
        p.add_argument("--cv", action="store_true")

    p_sim = sub.add_parser("simulate", help="generate synthetic data")
    add_common(p_sim)
    add_generation(p_sim)
    p_sim.add_argument("--out", required=True, help="output CSV path")
    p_sim.add_argument("--truth-out", help="ground-truth JSON path")

    p_det = sub.add_parser("detect", help="detect change points in a CSV")
    add_common(p_det)
    add_detection(p_det)
    p_det.add_argument("input", help="input CSV file")
    p_det.add_argument("--out", required=True, help="result JSON path")

    p_eval = sub.add_parser("evaluate", help="replicated simulation study")
    add_common(p_eval)
    add_generation(p_eval)
    add_detection(p_eval)
    p_eval.add_argument("--nreps", type=int, default=5)
    p_eval.add_argument("--critical", type=int, default=5)
    p_eval.add_argument("--threshold", type=float, default=0.1)
    p_eval.add_argument("--out", help="summary JSON path")

    p_lag = sub.add_parser("select-lag", help="BIC lag selection")
    add_common(p_lag)
    add_detection(p_lag)
    p_lag.add_argument("input", help="input CSV file")
    p_lag.add_argument("--max-lag", type=int, default=4)

    p_plot = sub.add_parser("plot", help="render SVG figures from a result")
    add_common(p_plot)
    p_plot.add_argument("result", help="result JSON file")
    p_plot.add_argument("--data", help="input CSV (needed for cp display)")
    p_plot.add_argument("--display", default="cp",
                        choices=("cp", "param", "density", "granger"))
    p_plot.add_argument("--threshold", type=float, default=0.1)
    p_plot.add_argument("--layout", default="circle",
                        choices=("circle", "star", "nicely"))
    p_plot.add_argument("--cp-color", default="red")
    p_plot.add_argument("--out", required=True, help="output SVG path")
    return parser


def _apply_config_file(args: argparse.Namespace, parser: argparse.ArgumentParser,
                       argv) -> argparse.Namespace:
    """Fill args from the flat key=value file; explicit flags win."""
    if not getattr(args, "config", None):
        return args
    entries = {}
    with open(args.config, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError(
                    f"{args.config}:{lineno}: expected key=value, got {line!r}"
                )
            key, value = line.split("=", 1)
            entries[key.strip().replace("-", "_")] = value.strip()
    explicit = set()
    for tok in argv:
        if tok.startswith("--"):
            explicit.add(tok[2:].split("=", 1)[0].replace("-", "_"))
    # converters come from the subcommand's own argument declarations
    sub_actions = parser._subparsers._group_actions[0]
    subparser = sub_actions.choices[args.command]
    converters = {}
    flags = set()
    for action in subparser._actions:
        if isinstance(action, argparse._StoreTrueAction):
            flags.add(action.dest)
        elif action.type is not None:
            converters[action.dest] = action.type
    for key, value in entries.items():
        if key in explicit or not hasattr(args, key):
            continue
        if key in flags:
            setattr(args, key, value.lower() in ("1", "true", "yes"))
        elif key in converters:
            setattr(args, key, converters[key](value))
        else:
            setattr(args, key, value)
    return args


def _generation_spec(args) -> GenerationSpec:
    if args.nob is None or args.p is None or args.breaks is None:
        raise ConfigError("simulate needs --nob, --p, and --breaks")
    breaks = tuple(args.breaks)
    if not breaks or breaks[-1] != args.nob + 1:
        breaks = breaks + (args.nob + 1,)
    pattern = SparsityPattern(
        args.pattern, args.density if args.pattern == "random" else None
    )
    sigma = args.sigma[0] if len(args.sigma) == 1 else tuple(args.sigma)
    return GenerationSpec(
        T=args.nob,
        p=args.p,
        break_points=breaks,
        method=PENALTY_NAMES[args.method],
        lags=args.lags,
        lags_vector=args.lags_vector,
        pattern=pattern,
        signals=args.signals,
        group_type=args.group_type,
        group_index=args.group_index,
        rank=args.rank,
        singular_vals=args.singular_vals,
        info_ratio=args.info_ratio,
        spectral_radius=args.spectral_radius,
        skip=args.skip,
        seed=args.seed,
        sigma=sigma,
    )


def _tbss_config(args) -> TbssConfig:
    kind = PENALTY_NAMES[args.penalty]
    grouping = Grouping(args.group_kind) if kind == "group_sparse" else None
    lam1 = args.lambda1[0] if args.lambda1 else 0.0
    lam2 = args.lambda2[0] if args.lambda2 else 0.0
    penalty = PenaltySpec(kind, lambda1=lam1, lambda2=lam2,
                          mu=args.mu if kind == "fixed_lowrank_sparse" else None,
                          grouping=grouping)
    return TbssConfig(
        penalty=penalty,
        q=args.lag,
        block_size=args.block_size,
        lambda1_grid=args.lambda1_grid,
        lambda2_grid=args.lambda2_grid,
        an_grid=args.an_grid,
        use_bic_for_omega=args.use_bic,
        tol=args.tol if args.tol is not None else 1e-2,
        max_iter=args.max_iter if args.max_iter is not None else 50,
        refit=args.refit,
        refit_radius=args.refit_radius,
        rho_T=args.rho,
    )


def _lstsp_config(args) -> LstspConfig:
    return LstspConfig(
        lambda1=args.lambda1,
        mu1=args.mu1,
        lambda2=args.lambda2,
        mu2=args.mu2,
        lambda3=args.lambda3,
        mu3=args.mu3,
        omega=args.omega,
        omega_constant=args.omega_constant,
        h=args.window,
        step=args.step,
        skip=args.scan_skip,
        tol=args.tol if args.tol is not None else 1e-4,
        max_iter=args.max_iter if args.max_iter is not None else 100,
        cv=args.cv,
        refit_radius=args.refit_radius,
    )


def _config_snapshot(args) -> dict:
    skip = {"config", "command"}
    out = {}
    for key, value in vars(args).items():
        if key in skip:
            continue
        if isinstance(value, tuple):
            value = list(value)
        out[key] = value
    return out


def _print_manifest(manifest: RunManifest):
    print(f"manifest sha256: {manifest.digest()}")


def _cmd_simulate(args) -> int:
    spec = _generation_spec(args)
    series, noise, model = simulate(spec)
    save_csv(series, args.out)
    if args.truth_out:
        truth = {
            "schema_version": 1,
            "break_points": list(model.break_points),
            "lag": model.q,
            "segments": [ts.stacked().tolist() for ts in model.segments],
            "noise_scales": list(model.noise_scales),
        }
        _atomic_write(args.truth_out, json.dumps(truth, indent=2) + "\n")
    manifest = make_manifest("simulate", _config_snapshot(args),
                             input_path=None, seed=args.seed)
    _print_manifest(manifest)
    print(f"wrote {series.T}x{series.p} series to {args.out}")
    return 0


def _cmd_detect(args) -> int:
    data = load_csv(args.input)
    if args.algo == "tbss":
        result = tbss_detect(data, _tbss_config(args))
    else:
        result = lstsp_detect(data, _lstsp_config(args))
    manifest = make_manifest("detect", _config_snapshot(args),
                             input_path=args.input, seed=args.seed)
    save_result(result, args.out, manifest)
    _print_manifest(manifest)
    cps = " ".join(str(c) for c in result.change_points)
    print(f"Estimated change points are: {cps}" if cps else
          "Estimated change points are: (none)")
    return 0


def _summary_table(summary) -> str:
    width = 70
    lines = []

    def rule(title):
        pad = width - len(title) - 2
        left = pad // 2
        lines.append("=" * left + f" {title} " + "=" * (pad - left))

    rule("Selection rate")
    lines.append(f"{'':>2} {'Truth':>9} {'Mean':>9} {'Std':>7} {'Selection rate':>15}")
    for i, (t, m, s, r) in enumerate(
        zip(summary.cp_truth_fractions, summary.cp_means, summary.cp_stds,
            summary.selection_rates), start=1
    ):
        lines.append(f"{i:>2} {t:>9.5f} {m:>9.4f} {s:>7.4f} {r:>15.2f}")
    rule("Hausdorff distance")
    lines.append(f"{'Mean':>9} {'Std':>9} {'Median':>9}")
    lines.append(
        f"{summary.hausdorff_mean:>9.3f} {summary.hausdorff_std:>9.3f} "
        f"{summary.hausdorff_median:>9.3f}"
    )
    rule("Statistical Measurement")
    names = ("SEN", "SPC", "ACC", "MCC")
    lines.append("     " + " ".join(f"{n:>8}" for n in names))
    lines.append("Mean " + " ".join(
        f"{summary.support_means[n]:>8.4f}" for n in names))
    lines.append("Std  " + " ".join(
        f"{summary.support_stds[n]:>8.4f}" for n in names))
    failed = ", ".join(str(i) for i in summary.failed_replicates) or "NULL"
    lines.append(f"Incorrect estimation replication: {failed}")
    rule("Computational Time")
    lines.append(f"Averaged running time: {summary.mean_runtime:.3f} seconds")
    lines.append("=" * width)
    return "\n".join(lines)


def _cmd_evaluate(args) -> int:
    spec = _generation_spec(args)
    if args.algo == "tbss":
        config = _tbss_config(args)
    else:
        config = _lstsp_config(args)
    summary = run_replications(
        args.nreps, spec, args.algo, config,
        L=args.critical, threshold=args.threshold,
    )
    manifest = make_manifest("evaluate", _config_snapshot(args),
                             input_path=None, seed=args.seed)
    if args.out:
        doc = {
            "schema_version": 1,
            "summary": {
                "cp_truth_fractions": list(summary.cp_truth_fractions),
                "cp_means": list(summary.cp_means),
                "cp_stds": list(summary.cp_stds),
                "selection_rates": list(summary.selection_rates),
                "hausdorff": {
                    "mean": summary.hausdorff_mean,
                    "std": summary.hausdorff_std,
                    "median": summary.hausdorff_median,
                },
                "support_means": summary.support_means,
                "support_stds": summary.support_stds,
                "failed_replicates": list(summary.failed_replicates),
                "mean_runtime": summary.mean_runtime,
            },
            "manifest": asdict(manifest),
        }
        _atomic_write(args.out, json.dumps(doc, indent=2) + "\n")
    _print_manifest(manifest)
    print(_summary_table(summary))
    return 0


def _cmd_select_lag(args) -> int:
    data = load_csv(args.input)
    config = _tbss_config(args)
    lag = bic_lag_select(data, args.max_lag, config)
    manifest = make_manifest("select-lag", _config_snapshot(args),
                             input_path=args.input, seed=args.seed)
    _print_manifest(manifest)
    print(lag)
    return 0


def _cmd_plot(args) -> int:
    result = load_result(args.result)
    data = load_csv(args.data) if args.data else None
    written = render_figures(
        result, data, args.display, args.out,
        threshold=args.threshold, layout=args.layout,
        cp_color=args.cp_color, seed=args.seed,
    )
    manifest = make_manifest("plot", _config_snapshot(args),
                             input_path=args.result, seed=args.seed)
    _print_manifest(manifest)
    for path in written:
        print(f"wrote {path}")
    return 0


COMMANDS = {
    "simulate": _cmd_simulate,
    "detect": _cmd_detect,
    "evaluate": _cmd_evaluate,
    "select-lag": _cmd_select_lag,
    "plot": _cmd_plot,
}


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = _build_parser()
    if not argv:
        parser.print_usage(sys.stderr)
        return 2
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.command is None:
        parser.print_usage(sys.stderr)
        return 2
    try:
        args = _apply_config_file(args, parser, argv)
        return COMMANDS[args.command](args)
    except (ConfigError, DataFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except VarsegError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
