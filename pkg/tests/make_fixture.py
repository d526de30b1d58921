"""Regenerate the bundled forecast/truth fixture (tests/fixtures/).

Three models forecast weekly values at two locations and two horizons, with
two deliberate gaps for the NA-policy paths. Quantile values are snapped to
multiples of 1/32 so every member sum in the fixture is exact in binary
floating point; that keeps the recorded oracle outputs stable down to the
last bit. The snapping preserves monotonicity (rounding a sorted sequence
to a fixed grid keeps it non-decreasing).

Run: python3 tests/make_fixture.py
"""

from __future__ import annotations

import csv
from datetime import date, timedelta
from pathlib import Path

from ensimp.scoring import CANONICAL_LEVELS
from ensimp.simulation import normal_quantile

FIXTURES = Path(__file__).parent / "fixtures"

MODELS = ("alder", "birch", "cedar")
FORECAST_DATES = (date(2021, 11, 6), date(2021, 11, 13))
LOCATIONS = ("25", "48")
HORIZONS = (1, 2)

# Per-location level and trend of the signal being forecast.
BASE = {"25": 120.0, "48": 260.0}
TREND = {"25": 6.0, "48": -10.0}

# (offset from the signal center, dispersion scale):
# alder sits low and narrow, birch is near the truth, cedar high and wide.
STYLE = {
    "alder": (-14.0, 0.72),
    "birch": (2.0, 1.0),
    "cedar": (19.0, 1.55),
}

# cedar skipped these two tasks.
GAPS = {
    ("cedar", date(2021, 11, 6), "48", 2),
    ("cedar", date(2021, 11, 13), "25", 2),
}


def snap(value: float) -> float:
    return round(value * 32.0) / 32.0


def truth_value(loc: str, end: date) -> float:
    # Horizons overlap across forecast dates, so truth is keyed by target
    # end date: one observed value per (location, week ending).
    steps = (end - FORECAST_DATES[0]).days // 7
    wobble = {1: 3.0, 2: -5.0, 3: 8.0}[steps]
    return snap(BASE[loc] + TREND[loc] * steps + wobble)


def main() -> None:
    FIXTURES.mkdir(exist_ok=True)
    z = [normal_quantile(p) for p in CANONICAL_LEVELS.levels]

    with open(FIXTURES / "forecasts.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("model", "forecast_date", "location", "horizon",
                    "target_end_date", "quantile_level", "value"))
        for model in MODELS:
            offset, scale = STYLE[model]
            for week, fd in enumerate(FORECAST_DATES):
                for loc in LOCATIONS:
                    for h in HORIZONS:
                        if (model, fd, loc, h) in GAPS:
                            continue
                        center = BASE[loc] + TREND[loc] * (week + h) + offset
                        spread = scale * (9.0 + 4.0 * h)
                        end = fd + timedelta(days=7 * h)
                        for p, zk in zip(CANONICAL_LEVELS.levels, z):
                            w.writerow((model, fd.isoformat(), loc, h,
                                        end.isoformat(), p, snap(center + spread * zk)))

    with open(FIXTURES / "truth.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("location", "target_end_date", "value"))
        seen = set()
        for fd in FORECAST_DATES:
            for loc in LOCATIONS:
                for h in HORIZONS:
                    end = fd + timedelta(days=7 * h)
                    if (loc, end) in seen:
                        continue
                    seen.add((loc, end))
                    w.writerow((loc, end.isoformat(), truth_value(loc, end)))


if __name__ == "__main__":
    main()
