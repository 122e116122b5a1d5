"""Metrics over training logs: smoothing, success streaks, convergence
speed, and per-region importance maps.

All functions are pure over their inputs and safe to run per sweep in
parallel.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .regions import REGIONS, regions_of

SMOOTH_WINDOW = 50
SCORE_TAIL_FRACTION = 0.1


def moving_average(series, window: int = SMOOTH_WINDOW) -> np.ndarray:
    """Trailing mean with partial windows at the start; length preserved.

    out[i] = mean(series[max(0, i-window+1) .. i])
    """
    if window < 1:
        raise ValueError("window must be >= 1")
    values = np.asarray(series, dtype=np.float64)
    if values.size == 0 or window == 1:
        return values.copy()
    csum = np.cumsum(values)
    out = np.empty_like(values)
    n = values.size
    w = min(window, n)
    out[:w] = csum[:w] / np.arange(1, w + 1)
    if n > w:
        out[w:] = (csum[w:] - csum[:-w]) / w
    return out


def consecutive_successes(episode_records) -> dict:
    """Mean success streak (goals completed) per epoch, keyed by the epoch
    in which each episode ended."""
    byepoch = {}
    for rec in episode_records:
        byepoch.setdefault(int(rec["epoch"]), []).append(float(rec["goals_completed"]))
    return {ep: float(np.mean(v)) for ep, v in sorted(byepoch.items())}


@dataclass(frozen=True)
class ConvergenceResult:
    speedup: float
    fraction_of_training: float
    reached: bool
    target_level: float
    epoch: int | None  # 1-based first epoch at/above the target, None if never
    baseline_epoch: int


def convergence_speed(curve, baseline_curve) -> ConvergenceResult:
    """How early `curve` reaches the baseline's final (smoothed) level.

    Both inputs are smoothed series. Epochs are 1-based. When the curve
    never reaches the level, the speedup is the lower bound
    baseline_epoch/len(curve) with reached=False.
    """
    curve = np.asarray(curve, dtype=np.float64)
    baseline = np.asarray(baseline_curve, dtype=np.float64)
    if curve.size == 0 or baseline.size == 0:
        raise ValueError("curves must be non-empty")
    level = float(baseline[-1])
    base_hits = np.where(baseline >= level)[0]
    e_base = int(base_hits[0]) + 1
    hits = np.where(curve >= level)[0]
    if hits.size:
        e_cfg = int(hits[0]) + 1
        return ConvergenceResult(
            speedup=e_base / e_cfg,
            fraction_of_training=e_cfg / curve.size,
            reached=True,
            target_level=level,
            epoch=e_cfg,
            baseline_epoch=e_base,
        )
    return ConvergenceResult(
        speedup=e_base / curve.size,
        fraction_of_training=1.0,
        reached=False,
        target_level=level,
        epoch=None,
        baseline_epoch=e_base,
    )


def run_score(consecutive_success_curve, window: int = SMOOTH_WINDOW,
              tail_fraction: float = SCORE_TAIL_FRACTION) -> float:
    """Scalar score of one run: mean of the smoothed streak curve over the
    final tail_fraction of epochs."""
    values = np.asarray(consecutive_success_curve, dtype=np.float64)
    if values.size == 0:
        raise ValueError("empty curve")
    sm = moving_average(values, window)
    tail = max(1, math.ceil(tail_fraction * sm.size))
    return float(sm[-tail:].mean())


@dataclass(frozen=True)
class RegionImportanceMap:
    raw: dict  # Region -> mean score over configurations containing it
    normalized: dict  # Region -> [0, 1]
    range_ratio: float  # (max - min) / min of the raw scores
    degenerate: bool = False

    def rows(self):
        """(region, raw, normalized) in canonical order for the regions
        present in the map."""
        for r in REGIONS:
            if r in self.raw:
                yield r, self.raw[r], self.normalized[r]


def region_importance(config_scores, regions=None) -> RegionImportanceMap:
    """Aggregate per-configuration scores into per-region importance.

    config_scores: iterable of (mask, score) pairs; a region's raw score is
    the mean over all configurations containing it, then min-max normalized
    to [0, 1]. A zero-range map normalizes to all 0.5 and is flagged
    degenerate. Raises if any requested region appears in no configuration.
    """
    wanted = tuple(regions) if regions is not None else REGIONS
    sums = {r: 0.0 for r in wanted}
    counts = {r: 0 for r in wanted}
    for mask, score in config_scores:
        for r in regions_of(int(mask)):
            if r in sums:
                sums[r] += float(score)
                counts[r] += 1
    missing = [r.name for r in wanted if counts[r] == 0]
    if missing:
        raise ValueError(f"regions absent from every configuration: {', '.join(missing)}")
    raw = {r: sums[r] / counts[r] for r in wanted}
    vals = np.array([raw[r] for r in wanted])
    lo, hi = float(vals.min()), float(vals.max())
    if hi - lo < 1e-15:
        normalized = {r: 0.5 for r in wanted}
        ratio = 0.0 if lo != 0 else float("nan")
        return RegionImportanceMap(raw, normalized, ratio, degenerate=True)
    normalized = {r: (raw[r] - lo) / (hi - lo) for r in wanted}
    range_ratio = (hi - lo) / lo if lo != 0 else float("inf")
    return RegionImportanceMap(raw, normalized, float(range_ratio))


@dataclass
class RunSummary:
    """One training run folded to the analysis scalars."""

    label: str
    seed: int
    mask: int
    final_streak: float  # final smoothed consecutive successes
    score: float  # tail-mean smoothed streak
    epochs: int
    smoothed: np.ndarray = field(repr=False, default=None)


def summarize_run(label, seed, mask, streak_curve, window: int = SMOOTH_WINDOW) -> RunSummary:
    sm = moving_average(streak_curve, window)
    return RunSummary(
        label=label,
        seed=int(seed),
        mask=int(mask),
        final_streak=float(sm[-1]) if sm.size else float("nan"),
        score=run_score(streak_curve, window),
        epochs=int(sm.size),
        smoothed=sm,
    )


def aggregate_by_config(runs) -> dict:
    """label -> dict with seed-averaged score/final and the mean smoothed
    curve (truncated to the shortest seed run)."""
    groups = {}
    for r in runs:
        groups.setdefault(r.label, []).append(r)
    out = {}
    for label, rs in groups.items():
        m = min(x.smoothed.size for x in rs)
        out[label] = {
            "label": label,
            "mask": rs[0].mask,
            "seeds": sorted(x.seed for x in rs),
            "score": float(np.mean([x.score for x in rs])),
            "final_streak": float(np.mean([x.final_streak for x in rs])),
            "curve": np.mean([x.smoothed[:m] for x in rs], axis=0),
        }
    return out
