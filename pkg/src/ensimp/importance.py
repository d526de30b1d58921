"""Per-model importance metrics for equal-weight mean ensembles.

Two algorithms quantify how much a component model contributes to ensemble
accuracy on a task:

* LOMO (leave one model out): the change in the ensemble's positively
  oriented score when the model is dropped from the full pool.
* LASOMO (leave all subsets of models out): a Shapley-style weighted average
  of the model's marginal contribution over every non-empty coalition of the
  other models. The empty coalition is excluded because an ensemble of zero
  models makes no prediction, so the permutation weights are
  ``s!(n-s-1)! / ((n-1)! * (n-1)) == 1 / ((n-1) * C(n-1, s))``.

Subsets are enumerated by bitmask over the pool's canonical (sorted) model
ordering, each subset's ensemble score is computed once and shared across
all per-model sweeps, and weighted terms accumulate in ascending bitmask
order, so results are reproducible bit for bit across runs, worker counts,
and the batched panel path.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum
from fractions import Fraction
from functools import lru_cache
from typing import Mapping, Sequence

import numpy as np

from .dataio import (
    NaPolicy,
    ScorePanel,
    TaskKey,
    TaskPool,
    apply_na_policy,
    model_mean_scores,
)
from .ensembling import mean_point_ensemble, mean_quantile_ensemble
from .scoring import Metric, ValidationError, positive_score, wis_batch

__all__ = [
    "Algorithm",
    "CapacityError",
    "ImportanceResult",
    "MAX_EXACT_MODELS",
    "SizeStat",
    "TaskPool",
    "WeightScheme",
    "compute_importance",
    "importance_by_subset_size",
    "lasomo_all",
    "lasomo_task",
    "lomo_all",
    "lomo_task",
    "overall_importance",
    "rank_models",
    "shapley_weight",
    "shapley_weight_exact",
]

# 2**20 subset ensembles per task is the practical ceiling for exact
# enumeration; beyond that the computation refuses rather than sampling.
MAX_EXACT_MODELS = 20

# Panel evaluation batches same-shaped tasks to keep array work coarse.
# Batch sizes are derived from these bounds so the subset-sum table and the
# scorer's temporaries stay within a fixed float64 budget at any pool size.
_BATCH_TASKS = 128
_BATCH_ELEMENTS = 1 << 22
_SCORE_BLOCK_ELEMENTS = 1 << 21


def _tasks_per_batch(n_models: int, row_elements: int) -> int:
    by_memory = _BATCH_ELEMENTS // ((1 << n_models) * row_elements)
    return max(1, min(_BATCH_TASKS, by_memory))


class CapacityError(ValidationError):
    """Exact subset enumeration refused because the pool is too large."""


class WeightScheme(Enum):
    """How LASOMO weights the coalitions a model can join.

    ``permutation`` uses the modified Shapley weights (size-dependent);
    ``equal`` gives every admissible subset the same weight.
    """

    PERMUTATION = "permutation"
    EQUAL = "equal"


class Algorithm(Enum):
    LOMO = "lomo"
    LASOMO = "lasomo"


def _check_capacity(n: int) -> None:
    if n > MAX_EXACT_MODELS:
        raise CapacityError(
            f"pool of {n} models exceeds the exact-enumeration cap of "
            f"{MAX_EXACT_MODELS}; use the lomo algorithm instead"
        )


def _check_size_args(n: int, s: int) -> None:
    if n < 2:
        raise ValidationError(f"need at least 2 models, got {n}")
    _check_capacity(n)
    if not 1 <= s <= n - 1:
        raise ValidationError(
            f"subset size {s} outside [1, {n - 1}] (the empty coalition is excluded)"
        )


def shapley_weight_exact(n: int, s: int) -> Fraction:
    """Exact coalition weight for a subset of size ``s`` among ``n`` models.

    Exact rational arithmetic keeps the normalization identity
    ``sum over all admissible subsets == 1`` free of rounding for every
    supported ``n``.
    """
    _check_size_args(n, s)
    return Fraction(1, (n - 1) * math.comb(n - 1, s))


def shapley_weight(n: int, s: int) -> float:
    """Coalition weight ``s!(n-s-1)!/((n-1)!(n-1))`` as a float."""
    return float(shapley_weight_exact(n, s))


def equal_weight_exact(n: int, s: int) -> Fraction:
    """Uniform weight over the ``2**(n-1) - 1`` admissible subsets."""
    _check_size_args(n, s)
    return Fraction(1, 2 ** (n - 1) - 1)


@lru_cache(maxsize=None)
def _size_weights(n: int, scheme: WeightScheme) -> np.ndarray:
    """Weight per subset size, indexed by ``s``; slot 0 is unused."""
    exact = shapley_weight_exact if scheme is WeightScheme.PERMUTATION else equal_weight_exact
    out = np.zeros(n, dtype=np.float64)
    for s in range(1, n):
        out[s] = float(exact(n, s))
    out.setflags(write=False)
    return out


@lru_cache(maxsize=None)
def _popcounts(n: int) -> np.ndarray:
    sizes = np.zeros(1 << n, dtype=np.int64)
    for i in range(n):
        sizes[1 << i : 2 << i] = sizes[: 1 << i] + 1
    sizes.setflags(write=False)
    return sizes


@lru_cache(maxsize=None)
def _model_sweep(n: int, i: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Ascending masks without bit ``i``, the same masks with it, subset sizes."""
    masks = np.arange(1, 1 << n, dtype=np.int64)
    bit = 1 << i
    without = masks[(masks & bit) == 0]
    with_i = without | bit
    sizes = _popcounts(n)[without]
    for arr in (without, with_i, sizes):
        arr.setflags(write=False)
    return without, with_i, sizes


def _ascending_sum(values: np.ndarray) -> float:
    # accumulate is sequential by definition, unlike the blocked reduction
    # numpy uses for long contiguous axes; this pins the canonical
    # left-to-right summation order (the batched path reduces along its
    # outer axis, which is sequential as well).
    return float(np.add.accumulate(values)[-1])


def _subset_sums(values: np.ndarray) -> np.ndarray:
    """Member-value sums for every bitmask, built one bit at a time.

    Adding models in ascending bit order makes each subset's sum the plain
    left-to-right sum of its members in canonical order, bit for bit.
    ``values`` may carry trailing batch axes; the mask axis comes first in
    the result.
    """
    n = values.shape[0]
    out = np.zeros((1 << n,) + values.shape[1:], dtype=np.float64)
    for i in range(n):
        out[1 << i : 2 << i] = out[: 1 << i] + values[i]
    return out


def _pos_scores_from_values(
    values: np.ndarray, is_quantile: bool, levels, metric: Metric, y
) -> np.ndarray:
    """Positively oriented ensemble score for every non-empty subset.

    ``values`` holds member values with the member axis first, optionally
    followed by a task batch axis (and the level axis for quantile pools);
    ``y`` is a scalar or one observation per batched task. The result is
    indexed by bitmask over canonical member order; index 0 (the empty
    coalition) is NaN and must never be read.
    """
    if metric is Metric.WIS and not is_quantile:
        raise ValidationError("WIS requires quantile forecasts")
    n = values.shape[0]
    sums = _subset_sums(values)
    sizes = _popcounts(n)
    y = np.asarray(y, dtype=np.float64)
    out_shape = sums.shape[1:-1] if is_quantile else sums.shape[1:]
    scores = np.full((1 << n,) + out_shape, np.nan, dtype=np.float64)
    if is_quantile and metric is Metric.SPE:
        # SPE on quantile pools scores the predictive median.
        k = levels.index_of(0.5)
        sums = sums[..., k]
        is_quantile = False
    row_elements = int(np.prod(sums.shape[1:], dtype=np.int64)) or 1
    block = max(1, _SCORE_BLOCK_ELEMENTS // row_elements)
    for start in range(1, 1 << n, block):
        stop = min(start + block, 1 << n)
        if is_quantile:
            sz = sizes[start:stop].reshape((-1,) + (1,) * (sums.ndim - 1))
            ens = sums[start:stop] / sz
            scores[start:stop] = -wis_batch(ens, levels, y)
        else:
            sz = sizes[start:stop].reshape((-1,) + (1,) * y.ndim)
            ens = sums[start:stop] / sz
            scores[start:stop] = -((y - ens) ** 2)
    return scores


def _subset_pos_scores(pool, metric: Metric, y) -> np.ndarray:
    return _pos_scores_from_values(
        pool.values_matrix(),
        pool.is_quantile,
        pool.levels if pool.is_quantile else None,
        metric,
        y,
    )


def _pool_index(task_pool: TaskPool, model_id: str) -> int:
    try:
        return task_pool.pool.model_ids.index(model_id)
    except ValueError:
        raise ValidationError(f"model {model_id!r} not in the task's pool") from None


def lomo_task(task_pool: TaskPool, metric: Metric, model_id: str) -> float:
    """Importance of one model as the score drop when it leaves the full pool."""
    pool = task_pool.pool
    _pool_index(task_pool, model_id)
    if len(pool) < 2:
        raise ValidationError("cannot leave out the only model in the pool")
    combine = mean_quantile_ensemble if pool.is_quantile else mean_point_ensemble
    rest = [m for m in pool.model_ids if m != model_id]
    full = positive_score(metric, combine(pool, pool.model_ids), task_pool.truth).value
    loo = positive_score(metric, combine(pool, rest), task_pool.truth).value
    return full - loo


def lomo_all(task_pool: TaskPool, metric: Metric) -> np.ndarray:
    """LOMO importance for every pool member, in canonical member order."""
    pool = task_pool.pool
    if len(pool) < 2:
        raise ValidationError("cannot leave out the only model in the pool")
    combine = mean_quantile_ensemble if pool.is_quantile else mean_point_ensemble
    full = positive_score(metric, combine(pool, pool.model_ids), task_pool.truth).value
    out = np.empty(len(pool), dtype=np.float64)
    for i, model_id in enumerate(pool.model_ids):
        rest = [m for m in pool.model_ids if m != model_id]
        loo = positive_score(metric, combine(pool, rest), task_pool.truth).value
        out[i] = full - loo
    return out


def lasomo_all(
    task_pool: TaskPool,
    metric: Metric,
    scheme: WeightScheme = WeightScheme.PERMUTATION,
    memoize: bool = True,
) -> np.ndarray:
    """LASOMO importance for every pool member, in canonical member order.

    With ``memoize`` (the default) each subset's ensemble score is computed
    once and shared across the per-model sweeps; disabling it recomputes the
    scores for every model through the identical code path, which is useful
    only to demonstrate that the cache does not change results.
    """
    pool = task_pool.pool
    n = len(pool)
    if n < 2:
        raise ValidationError("need at least 2 models for importance")
    _check_capacity(n)
    weights = _size_weights(n, scheme)
    y = task_pool.truth.value
    scores = _subset_pos_scores(pool, metric, y) if memoize else None
    out = np.empty(n, dtype=np.float64)
    for i in range(n):
        per_model = scores if memoize else _subset_pos_scores(pool, metric, y)
        without, with_i, sizes = _model_sweep(n, i)
        diffs = per_model[with_i] - per_model[without]
        out[i] = _ascending_sum(weights[sizes] * diffs)
    return out


def lasomo_task(
    task_pool: TaskPool,
    metric: Metric,
    model_id: str,
    scheme: WeightScheme = WeightScheme.PERMUTATION,
) -> float:
    """LASOMO importance of one model for one task."""
    i = _pool_index(task_pool, model_id)
    return float(lasomo_all(task_pool, metric, scheme)[i])


@dataclass(frozen=True)
class SizeStat:
    """Mean and population variance of marginal contributions at one ensemble size."""

    mean: float
    variance: float
    count: int


def importance_by_subset_size(
    task_pool: TaskPool, metric: Metric, model_id: str
) -> dict[int, SizeStat]:
    """Marginal contributions of one model grouped by ensemble size r = |S| + 1.

    The unweighted mean over r of the per-size means equals the
    permutation-weight LASOMO value: each size contributes C(n-1, r-1)
    subsets whose common weight is 1/((n-1) C(n-1, r-1)).
    """
    pool = task_pool.pool
    n = len(pool)
    i = _pool_index(task_pool, model_id)
    if n < 2:
        raise ValidationError("need at least 2 models for importance")
    _check_capacity(n)
    scores = _subset_pos_scores(pool, metric, task_pool.truth.value)
    without, with_i, sizes = _model_sweep(n, i)
    diffs = scores[with_i] - scores[without]
    r_of = sizes + 1
    stats: dict[int, SizeStat] = {}
    for r in range(2, n + 1):
        vals = diffs[r_of == r]
        mean = float(np.add.reduce(vals)) / len(vals)
        var = float(np.add.reduce((vals - mean) ** 2)) / len(vals)
        stats[r] = SizeStat(mean, var, len(vals))
    return stats


def overall_importance(panel: ScorePanel) -> dict[str, float]:
    """Average per-task importance into a per-model value.

    Tasks iterate in sorted key order; a model whose panel row has no scored
    task is reported by omission, never as zero.
    """
    return model_mean_scores(panel)


def rank_models(values: Mapping[str, float]) -> dict[str, int]:
    """Rank models by positively oriented value, 1 = best, ties by model id."""
    order = sorted(values, key=lambda m: (-values[m], m))
    return {m: i + 1 for i, m in enumerate(order)}


@dataclass(frozen=True)
class ImportanceResult:
    """Per-task and overall importance for a panel of tasks.

    ``per_task`` keeps the raw matrix with a missing cell wherever a model
    did not forecast a task; ``overall`` averages after the NA policy has
    been applied. ``by_subset_size`` pools marginal contributions across all
    (task, subset) pairs and is populated for LASOMO only.
    """

    algorithm: Algorithm
    weight_scheme: WeightScheme | None
    metric: Metric
    na_policy: NaPolicy
    per_task: ScorePanel
    overall: Mapping[str, float]
    by_subset_size: Mapping[str, Mapping[int, SizeStat]] | None


@lru_cache(maxsize=None)
def _size_onehot(n: int, i: int) -> np.ndarray:
    """Row r selects the sweep positions whose ensemble size |S|+1 equals r."""
    _, _, sizes = _model_sweep(n, i)
    onehot = np.zeros((n + 1, sizes.shape[0]), dtype=np.float64)
    onehot[sizes + 1, np.arange(sizes.shape[0])] = 1.0
    onehot.setflags(write=False)
    return onehot


def _lasomo_batch(tps: Sequence[TaskPool], metric: Metric, scheme: WeightScheme):
    """LASOMO for a batch of tasks sharing one pool signature.

    Returns per-model importance values (n, T) plus per-model, per-size
    moment sums (sum and sum of squares of marginal contributions) for the
    pooled subset-size diagnostics.
    """
    pool0 = tps[0].pool
    n = len(pool0)
    is_quantile = pool0.is_quantile
    levels = pool0.levels if is_quantile else None
    # (n, T) or (n, T, K): member axis first so subset sums broadcast.
    stacked = np.stack([tp.pool.values_matrix() for tp in tps], axis=1)
    y = np.asarray([tp.truth.value for tp in tps], dtype=np.float64)
    scores = _pos_scores_from_values(stacked, is_quantile, levels, metric, y)
    weights = _size_weights(n, scheme)
    phi = np.empty((n, len(tps)), dtype=np.float64)
    mom_sum = np.empty((n, n + 1), dtype=np.float64)
    mom_sq = np.empty((n, n + 1), dtype=np.float64)
    for i in range(n):
        without, with_i, sizes = _model_sweep(n, i)
        diffs = scores[with_i] - scores[without]
        phi[i] = np.add.reduce(weights[sizes][:, None] * diffs, axis=0)
        onehot = _size_onehot(n, i)
        mom_sum[i] = np.add.reduce(onehot @ diffs, axis=1)
        mom_sq[i] = np.add.reduce(onehot @ (diffs * diffs), axis=1)
    return phi, mom_sum, mom_sq


def _lomo_batch(tps: Sequence[TaskPool], metric: Metric):
    phi = np.empty((len(tps[0].pool), len(tps)), dtype=np.float64)
    for t, tp in enumerate(tps):
        phi[:, t] = lomo_all(tp, metric)
    return phi, None, None


def compute_importance(
    task_pools: Sequence[TaskPool],
    metric: Metric,
    algorithm: Algorithm,
    scheme: WeightScheme = WeightScheme.PERMUTATION,
    na_policy: NaPolicy = NaPolicy.DROP,
    n_workers: int | None = None,
) -> ImportanceResult:
    """Compute importance for every (model, task) cell of a task collection.

    Tasks sharing a pool signature are evaluated in fixed-size batches;
    batches run in parallel when ``n_workers`` allows and are reduced in
    sorted task order, so the output is invariant to the worker count.
    """
    if not task_pools:
        raise ValidationError("no task pools to score")
    pools = sorted(task_pools, key=lambda tp: tp.task)
    seen: set[TaskKey] = set()
    for tp in pools:
        if tp.task in seen:
            raise ValidationError(f"duplicate task {tp.task}")
        seen.add(tp.task)
        if len(tp.pool) < 2:
            raise ValidationError(f"task {tp.task} has fewer than 2 models")
        if algorithm is Algorithm.LASOMO:
            _check_capacity(len(tp.pool))

    groups: dict[tuple, list[TaskPool]] = {}
    for tp in pools:
        pl = tp.pool
        sig = (pl.model_ids, pl.is_quantile, pl.levels.levels if pl.is_quantile else None)
        groups.setdefault(sig, []).append(tp)

    jobs: list[list[TaskPool]] = []
    for sig in sorted(groups, key=lambda s: s[0]):
        chunk = groups[sig]
        if algorithm is Algorithm.LASOMO:
            row_elements = len(sig[2]) if sig[1] else 1
            per_batch = _tasks_per_batch(len(sig[0]), row_elements)
        else:
            per_batch = _BATCH_TASKS
        for k in range(0, len(chunk), per_batch):
            jobs.append(chunk[k : k + per_batch])

    def run(job: list[TaskPool]):
        if algorithm is Algorithm.LASOMO:
            return job, _lasomo_batch(job, metric, scheme)
        return job, _lomo_batch(job, metric)

    if n_workers is not None and n_workers > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=n_workers) as ex:
            outputs = list(ex.map(run, jobs))
    else:
        outputs = [run(job) for job in jobs]

    cells: dict[tuple[str, TaskKey], float] = {}
    moments: dict[tuple[str, int], list[tuple[int, float, float]]] = {}
    for job, (phi, mom_sum, mom_sq) in outputs:
        ids = job[0].pool.model_ids
        n = len(ids)
        for t, tp in enumerate(job):
            for i, model in enumerate(ids):
                cells[(model, tp.task)] = float(phi[i, t])
        if mom_sum is not None:
            for i, model in enumerate(ids):
                for r in range(2, n + 1):
                    count = math.comb(n - 1, r - 1) * len(job)
                    moments.setdefault((model, r), []).append(
                        (count, float(mom_sum[i, r]), float(mom_sq[i, r]))
                    )

    models = tuple(sorted({m for m, _ in cells}))
    tasks = tuple(tp.task for tp in pools)
    panel = ScorePanel(models, tasks, cells)
    overall = model_mean_scores(apply_na_policy(panel, na_policy))

    by_size = None
    if algorithm is Algorithm.LASOMO:
        by_size = {m: {} for m in models}
        for (model, r) in sorted(moments):
            parts = moments[(model, r)]
            count = sum(c for c, _, _ in parts)
            mean = math.fsum(s for _, s, _ in parts) / count
            second = math.fsum(q for _, _, q in parts) / count
            by_size[model][r] = SizeStat(mean, max(second - mean**2, 0.0), count)

    return ImportanceResult(
        algorithm=algorithm,
        weight_scheme=scheme if algorithm is Algorithm.LASOMO else None,
        metric=metric,
        na_policy=na_policy,
        per_task=panel,
        overall=overall,
        by_subset_size=by_size,
    )
