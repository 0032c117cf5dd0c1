"""Command-line entry point.

Dispatches the experiments, echoes the fully resolved configuration, and
writes one CSV (plot-ready rows) plus one JSON summary per run.  Outputs are
reproducible: the CSV bytes depend only on the config document, the seed, and
the code, never on the worker count or on timestamps.

Exit codes: 0 success; 1 tolerance failure under --strict; 2 configuration
error; 3 I/O error; 4 non-finite value in results; 5 degenerate fit.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from dataclasses import asdict, dataclass
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .config import EXPERIMENT_KINDS, ConfigError, ExperimentSetup, config_digest, parse_config
from .experiments import (
    ErrorReport,
    StabilityReport,
    converge,
    consistency,
    flow_increment,
    local_slopes,
    regularity,
    stability,
)
from .noise import compute_beta, hs_norm_partial

__all__ = ["main", "RunManifest"]

CSV_COLUMNS = ("h", "N", "mse", "rms", "stderr", "local_slope")

EXIT_OK = 0
EXIT_TOLERANCE = 1
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_NONFINITE = 4
EXIT_DEGENERATE = 5


@dataclass
class RunManifest:
    """Provenance block carried verbatim in every JSON summary."""

    config_digest: str
    seed: int
    tool_version: str
    started: str
    finished: str
    experiment_kind: str


def _utcnow() -> str:
    return datetime.now(timezone.utc).isoformat()


def _fmt(value) -> str:
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return repr(float(value))


def _jsonable(value):
    """Plain JSON types; non-finite floats become null so summaries stay
    parseable everywhere."""
    if isinstance(value, dict):
        return {k: _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return [_jsonable(v) for v in value.tolist()]
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        v = float(value)
        return v if math.isfinite(v) else None
    return value


def _order_rows(report: ErrorReport) -> list[tuple]:
    rms = report.rms
    slopes = report.local_slopes
    return [
        (report.step_sizes[i], int(report.step_counts[i]), report.mse[i],
         rms[i], report.standard_errors[i], slopes[i])
        for i in range(len(report.step_sizes))
    ]


def _order_results(report: ErrorReport, tolerance: float) -> tuple[dict, bool]:
    fitted = report.fitted_order
    passed = fitted is not None and abs(fitted - report.predicted_order) <= tolerance
    results = {
        "fitted_order_rms": fitted,
        "fitted_order_mean_square": report.fitted_order_mean_square,
        "fit_r2": report.fit_r2,
        "predicted_order_rms": report.predicted_order,
        "predicted_order_mean_square": 2.0 * report.predicted_order,
        "beta_expected": report.beta_expected,
        "samples": report.samples,
        "oracle_resolution": report.oracle_resolution,
        "mse": report.mse,
        "standard_errors": report.standard_errors,
        "flags": list(report.flags),
    }
    return results, passed


def _stability_rows(report: StabilityReport) -> list[tuple]:
    rms = np.sqrt(report.ratios)
    slopes = local_slopes(report.step_sizes, rms)
    return [
        (report.step_sizes[i], int(report.step_counts[i]), report.ratios[i],
         rms[i], report.standard_errors[i], slopes[i])
        for i in range(len(report.step_counts))
    ]


def _run_converge(setup: ExperimentSetup, workers: int):
    report = converge(setup.scheme, setup.step_counts, setup.samples, setup.seed,
                      reference_multiple=setup.reference_multiple, workers=workers)
    results, passed = _order_results(report, setup.order_tolerance)
    return report, _order_rows(report), results, passed


def _run_consistency(setup: ExperimentSetup, workers: int):
    report = consistency(setup.scheme, setup.step_sizes, setup.samples, setup.seed,
                         substeps=setup.consistency_substeps, workers=workers)
    results, passed = _order_results(report, setup.order_tolerance)
    return report, _order_rows(report), results, passed


def _run_flow_increment(setup: ExperimentSetup, workers: int):
    report = flow_increment(setup.scheme, setup.s_values, setup.samples, setup.seed,
                            workers=workers)
    # the stated scaling is on the mean-square moment, so the pass margin is
    # applied to the doubled slope
    fitted_ms = report.fitted_order_mean_square
    passed = fitted_ms is not None and abs(fitted_ms - 1.0) <= setup.order_tolerance
    results, _ = _order_results(report, setup.order_tolerance)
    return report, _order_rows(report), results, passed


def _run_stability(setup: ExperimentSetup, workers: int):
    report = stability(setup.scheme, setup.perturbation_scale, setup.step_counts,
                       setup.samples, setup.seed, workers=workers)
    passed = report.within_ceiling()
    results = {
        "ratios": report.ratios,
        "standard_errors": report.standard_errors,
        "max_ratio": report.max_ratio,
        "ceiling": report.ceiling,
        "drift_lipschitz": report.drift_lipschitz,
        "diffusion_lipschitz": report.diffusion_lipschitz,
        "perturbation_scale": report.perturbation_scale,
        "samples": report.samples,
    }
    return report, _stability_rows(report), results, passed


def _run_regularity(setup: ExperimentSetup, workers: int):
    report = regularity(setup.scheme, setup.alpha, setup.samples, setup.seed,
                        reference_multiple=setup.reference_multiple,
                        doubling=setup.regularity_doubling, workers=workers)
    passed = math.isfinite(report.sup_norm)
    if report.relative_change is not None:
        passed = passed and report.relative_change <= setup.regularity_tolerance
    rows = [
        (report.times[i], i, report.norms[i] ** 2, report.norms[i], 0.0, 0.0)
        for i in range(len(report.times))
    ]
    results = {
        "alpha": report.alpha,
        "sup_norm": report.sup_norm,
        "sup_norm_doubled": report.sup_norm_doubled,
        "relative_change": report.relative_change,
        "mode_count": report.mode_count,
        "oracle_resolution": report.oracle_resolution,
        "samples": report.samples,
    }
    return report, rows, results, passed


def _run_beta(setup: ExperimentSetup, workers: int):
    del workers
    cfg = setup.scheme
    index = compute_beta(cfg.covariance, cfg.operator)
    modes_list, norms = [], []
    m = 16
    while m <= setup.partial_sum_modes:
        modes_list.append(m)
        norms.append(hs_norm_partial(cfg.covariance, cfg.operator, index.beta, m))
        m *= 2
    hs = [1.0 / m for m in modes_list]
    slopes = local_slopes(hs, norms) if all(v > 0 for v in norms) else [0.0] * len(hs)
    rows = [
        (hs[i], modes_list[i], norms[i] ** 2, norms[i], 0.0, slopes[i])
        for i in range(len(modes_list))
    ]
    results = {
        "beta": index.beta,
        "certified": index.certified,
        "trace_class": cfg.covariance.is_trace_class,
        "partial_sum_modes": modes_list,
        "partial_sums": norms,
    }
    return index, rows, results, True


_RUNNERS = {
    "converge": _run_converge,
    "consistency": _run_consistency,
    "stability": _run_stability,
    "flow-increment": _run_flow_increment,
    "regularity": _run_regularity,
    "beta": _run_beta,
}


def _load_document(path: Path) -> dict:
    text = path.read_text(encoding="utf-8")
    doc = yaml.safe_load(text)
    if doc is None:
        doc = {}
    if not isinstance(doc, dict):
        raise ConfigError("<document>", "configuration must be a mapping")
    return doc


def _write_csv(path: Path, rows: list[tuple]) -> None:
    lines = [",".join(CSV_COLUMNS)]
    for row in rows:
        lines.append(",".join(_fmt(v) for v in row))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def _check_finite(rows: list[tuple]) -> str | None:
    for i, row in enumerate(rows):
        for name, value in zip(CSV_COLUMNS, row):
            if not math.isfinite(float(value)):
                return f"non-finite value in row {i}, column {name}"
    return None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="splitpde",
        description="Splitting-scheme experiments for stochastic evolution "
                    "equations on (0,1)",
    )
    sub = parser.add_subparsers(dest="experiment", required=True)
    for kind in EXPERIMENT_KINDS:
        p = sub.add_parser(kind, help=f"run the {kind} experiment")
        p.add_argument("--config", required=True, type=Path,
                       help="YAML or JSON configuration document")
        p.add_argument("--out", required=True, type=Path,
                       help="output directory for the CSV and JSON reports")
        p.add_argument("--seed", type=int, default=None,
                       help="override the config seed")
        p.add_argument("--workers", type=int, default=1,
                       help="worker processes (results are worker-count independent)")
        p.add_argument("--strict", action="store_true",
                       help="exit nonzero when the tolerance check fails")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.workers < 1:
        print("error: --workers must be at least 1", file=sys.stderr)
        return EXIT_CONFIG

    try:
        doc = _load_document(args.config)
    except OSError as exc:
        print(f"error: cannot read config: {exc}", file=sys.stderr)
        return EXIT_IO
    except yaml.YAMLError as exc:
        print(f"error: malformed config document: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    try:
        setup = parse_config(doc, args.experiment, seed_override=args.seed)
    except ConfigError as exc:
        print(f"error: configuration: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    started = _utcnow()
    report, rows, results, passed = _RUNNERS[args.experiment](setup, args.workers)
    finished = _utcnow()

    problem = _check_finite(rows)
    if problem is not None:
        print(f"error: {problem}", file=sys.stderr)
        return EXIT_NONFINITE

    manifest = RunManifest(
        config_digest=config_digest(setup.resolved),
        seed=setup.seed,
        tool_version=__version__,
        started=started,
        finished=finished,
        experiment_kind=args.experiment,
    )
    summary = {
        "experiment": args.experiment,
        "manifest": asdict(manifest),
        "resolved_config": setup.resolved,
        "results": _jsonable(results),
        "pass": bool(passed),
    }

    try:
        args.out.mkdir(parents=True, exist_ok=True)
        csv_path = args.out / f"{args.experiment}.csv"
        json_path = args.out / f"{args.experiment}.json"
        _write_csv(csv_path, rows)
        json_path.write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n",
                             encoding="utf-8")
    except OSError as exc:
        print(f"error: cannot write outputs: {exc}", file=sys.stderr)
        return EXIT_IO

    degenerate = isinstance(report, ErrorReport) and report.degenerate
    fitted = getattr(report, "fitted_order", None)
    note = f"fitted RMS order {fitted:.4f}" if fitted is not None else "no order fit"
    print(f"{args.experiment}: {note}; pass={passed} -> {csv_path}")

    if degenerate:
        print("error: degenerate fit: errors vanish at machine level",
              file=sys.stderr)
        return EXIT_DEGENERATE
    if args.strict and not passed:
        print("error: tolerance check failed under --strict", file=sys.stderr)
        return EXIT_TOLERANCE
    return EXIT_OK


if __name__ == "__main__":
    raise SystemExit(main())
