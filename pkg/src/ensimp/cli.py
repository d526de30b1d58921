"""Command-line front end: score, importance, simulate, decompose-check, subset-variance.

Every command is deterministic given its flags and inputs; repeated runs
produce byte-identical output files. Validation and I/O problems exit
nonzero with a diagnostic on stderr.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys

import numpy as np

from . import dataio
from .dataio import NaPolicy, ScorePanel, apply_na_policy, model_mean_scores
from .decomposition import ErrorVector, ambiguity_check, phi_decomposed, phi_direct
from .importance import (
    Algorithm,
    WeightScheme,
    compute_importance,
    importance_by_subset_size,
    rank_models,
)
from .scoring import Metric, ValidationError, positive_score
from .simulation import (
    Grid,
    SimulationSpec,
    run_sweep,
    setting_a_point,
    setting_a_prob,
    setting_b_dispersion,
    write_sweep_csv,
)

WORKERS_ENV = "ENSIMP_WORKERS"

SUBSET_VARIANCE_HEADER = ("model", "subset_size", "mean", "variance", "n_subsets")


def _resolve_workers(requested: int | None) -> int:
    if requested is not None:
        if requested < 1:
            raise ValidationError("worker count must be >= 1")
        return requested
    env = os.environ.get(WORKERS_ENV)
    if env:
        try:
            value = int(env)
        except ValueError:
            raise ValidationError(f"{WORKERS_ENV} must be an integer, got {env!r}") from None
        if value < 1:
            raise ValidationError(f"{WORKERS_ENV} must be >= 1, got {value}")
        return value
    return os.cpu_count() or 1


def _read_inputs(args) -> tuple[list[dataio.ForecastRecord], dict, dataio.ReadReport]:
    records, report = dataio.read_forecasts(args.forecasts)
    truth = dataio.read_truth(args.truth)
    return records, truth, report


def _print_report(report: dataio.ReadReport) -> None:
    for line in report.invalid:
        print(f"invalid record: {line}", file=sys.stderr)
    for line in report.warnings:
        print(f"warning: {line}", file=sys.stderr)
    for line in report.excluded_tasks:
        print(f"excluded task: {line}", file=sys.stderr)


def _score_cells(records, truth, metric: Metric):
    """Positively oriented score per (model, task) for tasks with truth."""
    cells: dict = {}
    excluded: list[str] = []
    models: set[str] = set()
    tasks: set = set()
    for rec in sorted(records, key=lambda r: (r.model, r.task)):
        obs = truth.get((rec.task.location, rec.task.target_end_date))
        if obs is None:
            excluded.append(f"{rec.task}: no truth value")
            continue
        models.add(rec.model)
        tasks.add(rec.task)
        cells[(rec.model, rec.task)] = positive_score(metric, rec.forecast, obs).value
    panel = ScorePanel(tuple(models), tuple(tasks), cells)
    return panel, excluded


def _task_fields(task) -> dict:
    return {
        "forecast_date": task.forecast_date,
        "location": task.location,
        "horizon": task.horizon,
        "target_end_date": task.target_end_date,
    }


def _summary_rows(metric_values: dict[str, dict[str, float | int]], counts, n_tasks):
    """Long rows (model, metric, value) sorted by model id then metric name."""
    rows = []
    for model in sorted(metric_values):
        for name in sorted(metric_values[model]):
            rows.append(
                {
                    "model": model,
                    "metric": name,
                    "value": metric_values[model][name],
                    "n_predictions": counts[model],
                    "pct_submitted": 100.0 * counts[model] / n_tasks,
                }
            )
    return rows


def cmd_score(args) -> int:
    metric = Metric(args.metric)
    records, truth, report = _read_inputs(args)
    _print_report(report)
    panel, excluded = _score_cells(records, truth, metric)
    for line in excluded:
        print(f"excluded task: {line}", file=sys.stderr)
    filled = apply_na_policy(panel, NaPolicy(args.na))
    means = model_mean_scores(filled)
    counts = {m: panel.present_count(m) for m in panel.models}
    label = f"neg_{metric.value}"

    summary = {m: {label: means[m]} for m in means}
    rows = _summary_rows(summary, counts, len(panel.tasks))
    for model in panel.models:
        for task in panel.tasks:
            value = panel.cell(model, task)
            if value is None:
                continue
            row = {"model": model, "metric": f"{label}_task", "value": value}
            row.update(_task_fields(task))
            rows.append(row)
    note = None
    if metric is Metric.SPE:
        note = "spe scores the 0.5-level quantile (predictive median) as the point estimate"
    dataio.write_results(rows, args.output, args.format, note=note)
    return 0


def _importance_rows(result, score_means, score_counts, n_tasks, metric: Metric):
    label = f"neg_{metric.value}"
    phi_label = f"phi_{result.algorithm.value}"
    score_rank = rank_models(score_means)
    phi_rank = rank_models(dict(result.overall))
    summary: dict[str, dict[str, float | int]] = {}
    for model in result.per_task.models:
        entry: dict[str, float | int] = {}
        if model in score_means:
            entry[label] = score_means[model]
            entry[f"{label}_rank"] = score_rank[model]
        if model in result.overall:
            entry[phi_label] = result.overall[model]
            entry["phi_rank"] = phi_rank[model]
        summary[model] = entry
    rows = _summary_rows(summary, score_counts, n_tasks)
    for model in result.per_task.models:
        for task in result.per_task.tasks:
            value = result.per_task.cell(model, task)
            if value is None:
                continue
            row = {"model": model, "metric": "phi_task", "value": value}
            row.update(_task_fields(task))
            rows.append(row)
    return rows


def cmd_importance(args) -> int:
    metric = Metric(args.metric)
    algorithm = Algorithm(args.algorithm)
    scheme = WeightScheme(args.weights)
    policy = NaPolicy(args.na)
    workers = _resolve_workers(args.workers)

    records, truth, report = _read_inputs(args)
    _print_report(report)
    pools, join_report = dataio.build_task_pools(records, truth)
    _print_report(join_report)
    if not pools:
        raise ValidationError("no scoreable tasks after joining forecasts with truth")

    result = compute_importance(
        pools, metric, algorithm, scheme=scheme, na_policy=policy, n_workers=workers
    )
    # The summary table carries both algorithms when the subset sweep already
    # ran; the rank columns always follow the algorithm that was asked for.
    extra = {}
    if algorithm is Algorithm.LASOMO:
        lomo = compute_importance(
            pools, metric, Algorithm.LOMO, na_policy=policy, n_workers=workers
        )
        extra["phi_lomo"] = dict(lomo.overall)

    kept = {tp.task for tp in pools}
    cells = {}
    models = set()
    for tp in pools:
        for model in tp.pool.model_ids:
            models.add(model)
            cells[(model, tp.task)] = positive_score(
                metric, tp.pool.forecast_for(model), tp.truth
            ).value
    score_panel = ScorePanel(tuple(models), tuple(kept), cells)
    score_means = model_mean_scores(apply_na_policy(score_panel, policy))
    counts = {m: score_panel.present_count(m) for m in score_panel.models}

    rows = _importance_rows(result, score_means, counts, len(score_panel.tasks), metric)
    if extra:
        more = _summary_rows(
            {m: {"phi_lomo": v} for m, v in extra["phi_lomo"].items()},
            counts,
            len(score_panel.tasks),
        )
        rows = _merge_summary_rows(rows, more)
    dataio.write_results(rows, args.output, args.format)
    return 0


def _merge_summary_rows(rows, more):
    """Insert extra summary rows keeping (model, metric-name) sorted order."""
    summary = [r for r in rows if r.get("forecast_date") is None] + more
    per_task = [r for r in rows if r.get("forecast_date") is not None]
    summary.sort(key=lambda r: (r["model"], r["metric"]))
    return summary + per_task


def cmd_simulate(args) -> int:
    base = {
        "a-point": setting_a_point,
        "a-prob": setting_a_prob,
        "b": setting_b_dispersion,
    }[args.scenario]()
    grid = base.sweep
    if args.grid_start is not None or args.grid_end is not None or args.grid_step is not None:
        grid = Grid(
            base.sweep.start if args.grid_start is None else args.grid_start,
            base.sweep.end if args.grid_end is None else args.grid_end,
            base.sweep.step if args.grid_step is None else args.grid_step,
        )
    spec = SimulationSpec(
        scenario=base.scenario,
        fixed_components=base.fixed_components,
        sweep=grid,
        replicates=args.replicates,
        seed=args.seed,
    )
    result = run_sweep(spec, n_workers=_resolve_workers(args.workers))
    write_sweep_csv(result, args.output)
    return 0


def cmd_decompose_check(args) -> int:
    rng = np.random.default_rng(args.seed)
    max_identity = 0.0
    max_ambiguity = 0.0
    worst_identity = None
    worst_ambiguity = None
    for k in range(args.instances):
        n = int(rng.integers(2, 9))
        errors = ErrorVector(tuple(rng.standard_normal(n)))
        i = int(rng.integers(n))
        direct = phi_direct(errors, i)
        decomposed = phi_decomposed(errors, i)
        resid = abs(direct - decomposed) / max(1.0, abs(direct))
        if resid > max_identity:
            max_identity, worst_identity = resid, f"instance {k} (n={n}, model {i})"
        raw = rng.random(n) + 1e-3
        weights = tuple(raw / raw.sum())
        resid = abs(ambiguity_check(errors, weights, i))
        if resid > max_ambiguity:
            max_ambiguity, worst_ambiguity = resid, f"instance {k} (n={n}, model {i})"
    if args.inject_fault:
        max_identity += 1e-6
        worst_identity = "injected fault"
    print(f"instances: {args.instances}  seed: {args.seed}")
    print(f"max relative residual, direct vs decomposed: {max_identity:.6e} at {worst_identity}")
    print(f"max ambiguity reconstruction residual: {max_ambiguity:.6e} at {worst_ambiguity}")
    ok = max_identity < 1e-9 and max_ambiguity < 1e-9
    print("PASS" if ok else "FAIL: residual above 1e-9")
    return 0 if ok else 1


def cmd_subset_variance(args) -> int:
    metric = Metric(args.metric)
    scheme = WeightScheme(args.weights)
    policy = NaPolicy(args.na)
    workers = _resolve_workers(args.workers)

    records, truth, report = _read_inputs(args)
    _print_report(report)
    pools, join_report = dataio.build_task_pools(records, truth)
    _print_report(join_report)
    if not pools:
        raise ValidationError("no scoreable tasks after joining forecasts with truth")

    result = compute_importance(
        pools, metric, Algorithm.LASOMO, scheme=scheme, na_policy=policy, n_workers=workers
    )

    # Per-task mean over sizes; under permutation weights this equals the
    # per-task LASOMO value, so its policy-filled average matches overall phi.
    mos_cells = {}
    for tp in sorted(pools, key=lambda t: t.task):
        for model in tp.pool.model_ids:
            stats = importance_by_subset_size(tp, metric, model)
            means = [stats[r].mean for r in sorted(stats)]
            mos_cells[(model, tp.task)] = math.fsum(means) / len(means)
    mos_panel = ScorePanel(result.per_task.models, result.per_task.tasks, mos_cells)
    mos = model_mean_scores(apply_na_policy(mos_panel, policy))

    rows = []
    for model in result.per_task.models:
        stats = result.by_subset_size.get(model, {})
        for r in sorted(stats):
            st = stats[r]
            rows.append((model, str(r), st.mean, st.variance, st.count))
        if model in mos:
            rows.append((model, "mean_over_sizes", mos[model], None, None))
        if model in result.overall:
            rows.append((model, "lasomo", result.overall[model], None, None))

    _write_subset_variance(rows, args.output, args.format)
    return 0


def _write_subset_variance(rows, output: str, fmt: str) -> None:
    if fmt == "json":
        payload = [
            {
                "model": m,
                "subset_size": size,
                "mean": mean,
                **({"variance": var} if var is not None else {}),
                **({"n_subsets": n} if n is not None else {}),
            }
            for m, size, mean, var, n in rows
        ]
        text = json.dumps(payload, indent=2) + "\n"
    else:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(SUBSET_VARIANCE_HEADER)
        for m, size, mean, var, n in rows:
            writer.writerow(
                (
                    m,
                    size,
                    dataio.format_float(mean),
                    "" if var is None else dataio.format_float(var),
                    "" if n is None else n,
                )
            )
        text = buf.getvalue()
    if output == "-":
        sys.stdout.write(text)
    else:
        with open(output, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)


def _add_io_flags(p, needs_data=True):
    if needs_data:
        p.add_argument("--forecasts", required=True, help="forecast CSV path")
        p.add_argument("--truth", required=True, help="truth CSV path")
    p.add_argument("--output", default="-", help="output path, or - for stdout")
    p.add_argument("--format", choices=("csv", "json"), default="csv")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ensimp",
        description="Score quantile forecasts and measure per-model ensemble importance.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("score", help="score forecasts against truth")
    _add_io_flags(p)
    p.add_argument("--metric", choices=("wis", "spe"), default="wis")
    p.add_argument("--na", choices=("drop", "worst", "mean"), default="drop")
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("importance", help="per-model importance and rankings")
    _add_io_flags(p)
    p.add_argument("--metric", choices=("wis", "spe"), default="wis")
    p.add_argument("--algorithm", choices=("lomo", "lasomo"), default="lasomo")
    p.add_argument("--weights", choices=("permutation", "equal"), default="permutation")
    p.add_argument("--na", choices=("drop", "worst", "mean"), default="worst")
    p.add_argument("--workers", type=int, default=None)
    p.set_defaults(func=cmd_importance)

    p = sub.add_parser("simulate", help="run a bias/dispersion sweep")
    p.add_argument("--scenario", choices=("a-point", "a-prob", "b"), required=True)
    p.add_argument("--grid-start", type=float, default=None)
    p.add_argument("--grid-end", type=float, default=None)
    p.add_argument("--grid-step", type=float, default=None)
    p.add_argument("--replicates", type=int, default=1000)
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--output", default="-", help="output path, or - for stdout")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("decompose-check", help="verify the point-forecast identities")
    p.add_argument("--instances", type=int, default=1000)
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--inject-fault", action="store_true", help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_decompose_check)

    p = sub.add_parser("subset-variance", help="per-subset-size importance diagnostics")
    _add_io_flags(p)
    p.add_argument("--metric", choices=("wis", "spe"), default="wis")
    p.add_argument("--weights", choices=("permutation", "equal"), default="permutation")
    p.add_argument("--na", choices=("drop", "worst", "mean"), default="worst")
    p.add_argument("--workers", type=int, default=None)
    p.set_defaults(func=cmd_subset_variance)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: cannot access {exc.filename or 'file'}: {exc.strerror}", file=sys.stderr)
        return 1


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
