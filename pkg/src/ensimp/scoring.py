"""Proper scoring rules for point and quantile forecasts.

Raw WIS and SPE are error measures (lower is better). Everything downstream
of this module works with positively oriented scores (larger is better), so
the orientation flip happens exactly once, in :func:`positive_score`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Sequence

import numpy as np

__all__ = [
    "CANONICAL_LEVELS",
    "Metric",
    "Observation",
    "PointForecast",
    "QuantileForecast",
    "QuantileLevels",
    "Score",
    "ValidationError",
    "mean_score",
    "positive_score",
    "spe",
    "wis",
    "wis_batch",
]


class ValidationError(ValueError):
    """Raised when an input violates a documented invariant."""


def _require_finite(value: float, what: str) -> float:
    value = float(value)
    if not math.isfinite(value):
        raise ValidationError(f"{what} must be finite, got {value!r}")
    return value


@dataclass(frozen=True)
class QuantileLevels:
    """Strictly increasing quantile levels, each in the open interval (0, 1)."""

    levels: tuple[float, ...]

    def __post_init__(self) -> None:
        levels = tuple(float(p) for p in self.levels)
        if not levels:
            raise ValidationError("quantile level set must be non-empty")
        for p in levels:
            if not math.isfinite(p) or not 0.0 < p < 1.0:
                raise ValidationError(f"quantile level {p!r} outside open interval (0, 1)")
        for a, b in zip(levels, levels[1:]):
            if not a < b:
                raise ValidationError(f"quantile levels must be strictly increasing, got {a} before {b}")
        object.__setattr__(self, "levels", levels)

    def __len__(self) -> int:
        return len(self.levels)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.levels, dtype=np.float64)

    def index_of(self, level: float) -> int:
        """Index of an exactly matching level, or a validation error."""
        try:
            return self.levels.index(float(level))
        except ValueError:
            raise ValidationError(f"level {level} not among the forecast's quantile levels") from None


# The 23 levels used by the COVID-19 Forecast Hub submission format.
CANONICAL_LEVELS = QuantileLevels(
    (0.01, 0.025, 0.05, 0.10, 0.15, 0.20, 0.25, 0.30, 0.35, 0.40, 0.45, 0.50,
     0.55, 0.60, 0.65, 0.70, 0.75, 0.80, 0.85, 0.90, 0.95, 0.975, 0.99)
)


@dataclass(frozen=True)
class QuantileForecast:
    """A predictive distribution given as paired (level, value) quantiles."""

    levels: QuantileLevels
    values: tuple[float, ...]

    def __post_init__(self) -> None:
        values = tuple(_require_finite(v, "quantile value") for v in self.values)
        if len(values) != len(self.levels):
            raise ValidationError(
                f"got {len(values)} quantile values for {len(self.levels)} levels"
            )
        for k, (a, b) in enumerate(zip(values, values[1:])):
            if a > b:
                raise ValidationError(
                    "quantile values must be non-decreasing in level; "
                    f"value {a} at level {self.levels.levels[k]} exceeds {b} at level {self.levels.levels[k + 1]}"
                )
        object.__setattr__(self, "values", values)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.values, dtype=np.float64)

    @property
    def median(self) -> float:
        """The 0.5-level quantile value; requires 0.5 among the levels."""
        return self.values[self.levels.index_of(0.5)]


@dataclass(frozen=True)
class PointForecast:
    """A single predicted value."""

    value: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "value", _require_finite(self.value, "point forecast"))


@dataclass(frozen=True)
class Observation:
    """An observed outcome."""

    value: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "value", _require_finite(self.value, "observation"))


@dataclass(frozen=True)
class Score:
    """A positively oriented score: larger means a better forecast."""

    value: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "value", _require_finite(self.value, "score"))


class Metric(Enum):
    WIS = "wis"
    SPE = "spe"


def spe(forecast: PointForecast, obs: Observation) -> float:
    """Squared prediction error (y - yhat)^2. Raw error, lower is better."""
    return (obs.value - forecast.value) ** 2


def wis_batch(values: np.ndarray, levels: QuantileLevels, y: float | np.ndarray) -> np.ndarray:
    """Weighted interval score of quantile rows against observations.

    ``values`` holds predictive quantiles along its last axis (one entry per
    level); ``y`` must broadcast against ``values`` without its last axis.
    All WIS evaluations in the package route through this function so that
    scalar and batched calls share one floating-point code path.
    """
    values = np.asarray(values, dtype=np.float64)
    tau = levels.as_array()
    if values.shape[-1] != tau.shape[0]:
        raise ValidationError(
            f"quantile axis of length {values.shape[-1]} does not match {tau.shape[0]} levels"
        )
    yb = np.asarray(y, dtype=np.float64)[..., None]
    indicator = (yb <= values).astype(np.float64)
    terms = 2.0 * (indicator - tau) * (values - yb)
    # accumulate pins a strict left-to-right level sum, independent of the
    # blocked reduction numpy would pick for long contiguous axes.
    return np.add.accumulate(terms, axis=-1)[..., -1] / len(levels)


def wis(forecast: QuantileForecast, obs: Observation) -> float:
    """Weighted interval score, averaged over the forecast's quantile levels.

    The score is ``(1/K) * sum_k 2 * (1[y <= q_k] - tau_k) * (q_k - y)``,
    with the indicator closed at equality. Raw error, lower is better.
    """
    row = forecast.as_array()[None, :]
    return float(wis_batch(row, forecast.levels, obs.value)[0])


def positive_score(
    metric: Metric, forecast: QuantileForecast | PointForecast, obs: Observation
) -> Score:
    """Score a forecast and flip to positive orientation (-WIS or -SPE).

    SPE accepts a quantile forecast by scoring its predictive median as the
    point estimate; WIS requires a quantile forecast.
    """
    if metric is Metric.WIS:
        if not isinstance(forecast, QuantileForecast):
            raise ValidationError("WIS requires a quantile forecast")
        return Score(-wis(forecast, obs))
    if metric is Metric.SPE:
        if isinstance(forecast, QuantileForecast):
            forecast = PointForecast(forecast.median)
        return Score(-spe(forecast, obs))
    raise ValidationError(f"unknown metric {metric!r}")


def mean_score(scores: Sequence[Score]) -> Score:
    """Arithmetic mean of scores.

    Uses exact (fsum) accumulation, so the result does not depend on the
    order in which the caller sorted the scores; callers still pass tasks in
    sorted-key order for reproducible reports.
    """
    if not scores:
        raise ValidationError("cannot average an empty list of scores")
    return Score(math.fsum(s.value for s in scores) / len(scores))
