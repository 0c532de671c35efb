"""Core training and analysis pipeline.

Two forests share the RSS feature space: the position model maps a
fingerprint to (lat, lon), and the accuracy model maps the same fingerprint
to the expected positioning error in meters (the dynamic accuracy estimate,
DAE). The accuracy model's training targets are the position model's true
errors on a training partition the position model never saw, which keeps
those targets honest.

Per-record bookkeeping:
  error_pos  = haversine(truth, estimate)        meters
  dae        = accuracy-model prediction, clamped at 0
  error_dae  = |error_pos - dae|                 meters
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import geo
from .data import Dataset, DatasetSplit, repartition
from .learn import ForestModel, ForestParams, fit_extratrees
from .rng import derive_seed

DEFAULT_PORTIONS = tuple(round(0.05 * i, 2) for i in range(1, 21))
DEFAULT_SWEEP_FRACTIONS = tuple(round(0.1 * i, 1) for i in range(1, 10))


@dataclass(frozen=True)
class EstimateRecord:
    """Per-message evaluation bundle."""

    id: int
    truth: geo.LatLon
    estimate: geo.LatLon
    error_pos: float
    dae: float
    error_dae: float

    def __post_init__(self) -> None:
        if self.error_pos < 0 or self.dae < 0:
            raise ValueError("error_pos and dae must be non-negative")
        if self.error_dae != abs(self.error_pos - self.dae):
            raise ValueError("error_dae must equal |error_pos - dae| exactly")


@dataclass(frozen=True)
class EvalSummary:
    """Aggregate error statistics over one evaluation set, in meters."""

    pos_mean: float
    pos_median: float
    dae_err_mean: float
    dae_err_median: float

    def to_dict(self) -> dict:
        return {
            "pos_mean_m": self.pos_mean,
            "pos_median_m": self.pos_median,
            "dae_err_mean_m": self.dae_err_mean,
            "dae_err_median_m": self.dae_err_median,
        }


@dataclass(frozen=True)
class SweepRow:
    """Validation performance of both models for one training repartition."""

    fraction_dae: float
    pos_mean: float
    pos_median: float
    dae_err_mean: float
    dae_err_median: float


@dataclass(frozen=True)
class SelectionPoint:
    portion: float
    mean_error: float
    median_error: float
    dae_threshold: float


@dataclass(frozen=True)
class SelectionCurve:
    """Error statistics of the lowest-DAE portion of an evaluation set."""

    points: list[SelectionPoint]

    def at(self, portion: float) -> SelectionPoint:
        for p in self.points:
            if math.isclose(p.portion, portion):
                return p
        raise KeyError(f"portion {portion} not in curve")


def check_partition(split: DatasetSplit, n_records: int) -> None:
    """Entry guard: the four index sets must partition the record range."""
    split.validate_partition(n_records)


def position_error(truth: geo.LatLon, estimate: geo.LatLon) -> float:
    """Positioning error in meters: haversine(ground truth, estimate)."""
    return geo.haversine(truth, estimate)


def train_position_model(dataset: Dataset, train_idx: np.ndarray,
                         params: ForestParams = ForestParams(), seed: int = 0,
                         n_jobs: int = 1) -> ForestModel:
    """Fit the RSS -> (lat, lon) forest on the given records."""
    idx = np.asarray(train_idx)
    if idx.size == 0:
        raise ValueError("position-model training partition is empty")
    targets = np.column_stack([dataset.lats[idx], dataset.lons[idx]])
    return fit_extratrees(dataset.rss[idx], targets, params=params, seed=seed, n_jobs=n_jobs)


def build_dae_targets(pos_model: ForestModel, dataset: Dataset,
                      target_idx: np.ndarray, pos_train_idx: np.ndarray) -> np.ndarray:
    """True position-model errors on records the position model never saw.

    These are the accuracy model's regression targets. Any overlap between
    the position model's training indices and ``target_idx`` would leak
    optimistic errors into the targets, so it is a hard error.
    """
    target_idx = np.asarray(target_idx)
    overlap = np.intersect1d(np.asarray(pos_train_idx), target_idx)
    if overlap.size:
        raise ValueError(
            f"{overlap.size} records are in both the position-model training set "
            "and the accuracy-target set; the partitions must be disjoint"
        )
    est = pos_model.predict(dataset.rss[target_idx])
    return geo.haversine_arrays(dataset.lats[target_idx], dataset.lons[target_idx],
                                est[:, 0], est[:, 1])


def train_dae_model(dataset: Dataset, train_idx: np.ndarray, targets: np.ndarray,
                    params: ForestParams = ForestParams(), seed: int = 0,
                    n_jobs: int = 1) -> ForestModel:
    """Fit the RSS -> expected-error forest (same features as the position model)."""
    idx = np.asarray(train_idx)
    if idx.size == 0:
        raise ValueError("accuracy-model training partition is empty")
    targets = np.asarray(targets, dtype=np.float64)
    if targets.shape != (idx.size,):
        raise ValueError("targets must be one error per training record")
    return fit_extratrees(dataset.rss[idx], targets, params=params, seed=seed, n_jobs=n_jobs)


def evaluate(pos_model: ForestModel, dae_model: ForestModel, dataset: Dataset,
             eval_idx: np.ndarray) -> tuple[list[EstimateRecord], EvalSummary]:
    """Score both models on an evaluation set.

    Negative accuracy predictions are clamped to 0 before the error
    arithmetic. Medians of even-sized sets are the midpoint of the two
    central values.
    """
    idx = np.asarray(eval_idx)
    if idx.size == 0:
        raise ValueError("evaluation set is empty")
    est = pos_model.predict(dataset.rss[idx])
    errors = geo.haversine_arrays(dataset.lats[idx], dataset.lons[idx], est[:, 0], est[:, 1])
    dae = np.clip(dae_model.predict(dataset.rss[idx]).ravel(), 0.0, None)
    err_dae = np.abs(errors - dae)
    records = [
        EstimateRecord(
            id=int(i),
            truth=dataset.truth(int(i)),
            estimate=geo.LatLon(float(est[j, 0]), float(est[j, 1])),
            error_pos=float(errors[j]),
            dae=float(dae[j]),
            error_dae=float(err_dae[j]),
        )
        for j, i in enumerate(idx)
    ]
    summary = EvalSummary(
        pos_mean=float(np.mean(errors)),
        pos_median=float(np.median(errors)),
        dae_err_mean=float(np.mean(err_dae)),
        dae_err_median=float(np.median(err_dae)),
    )
    return records, summary


def repartition_sweep(dataset: Dataset, train_pool: np.ndarray, val_idx: np.ndarray,
                      fractions=DEFAULT_SWEEP_FRACTIONS,
                      params: ForestParams = ForestParams(), seed: int = 0,
                      n_jobs: int = 1) -> list[SweepRow]:
    """Train both models for each pool repartition and score the same validation set.

    Every grid point derives its own child seeds from (seed, fraction), so
    rows are independent and the sweep is reproducible regardless of
    evaluation order.
    """
    fractions = tuple(fractions)
    if not fractions:
        raise ValueError("sweep fraction grid is empty")
    if any(not 0.0 < f < 1.0 for f in fractions):
        raise ValueError("sweep fractions must lie strictly inside (0, 1)")
    rows = []
    for f in fractions:
        label = format(f, ".10g")
        pos_idx, dae_idx = repartition(train_pool, f, derive_seed(seed, "repartition", label))
        pos_model = train_position_model(dataset, pos_idx, params,
                                         derive_seed(seed, "forest-pos", label), n_jobs)
        targets = build_dae_targets(pos_model, dataset, dae_idx, pos_idx)
        dae_model = train_dae_model(dataset, dae_idx, targets, params,
                                    derive_seed(seed, "forest-dae", label), n_jobs)
        _, summary = evaluate(pos_model, dae_model, dataset, val_idx)
        rows.append(SweepRow(
            fraction_dae=f,
            pos_mean=summary.pos_mean,
            pos_median=summary.pos_median,
            dae_err_mean=summary.dae_err_mean,
            dae_err_median=summary.dae_err_median,
        ))
    return rows


def selection_curve(records: list[EstimateRecord],
                    portions=DEFAULT_PORTIONS) -> SelectionCurve:
    """Positioning-error statistics of the most-confident record prefixes.

    Records are sorted by ascending accuracy estimate (ties by record id);
    each portion p covers the first ceil(p * N) records. The stored
    threshold is the estimate of the last included record.
    """
    if not records:
        raise ValueError("selection needs at least one record")
    portions = tuple(portions)
    if not portions or any(not 0.0 < p <= 1.0 for p in portions):
        raise ValueError("portions must lie in (0, 1]")
    if list(portions) != sorted(set(portions)):
        raise ValueError("portions must be strictly increasing")
    daes = np.array([r.dae for r in records])
    ids = np.array([r.id for r in records])
    errors = np.array([r.error_pos for r in records])
    order = np.lexsort((ids, daes))
    sorted_errors = errors[order]
    sorted_daes = daes[order]
    n = len(records)
    points = []
    for p in portions:
        k = math.ceil(p * n)
        points.append(SelectionPoint(
            portion=p,
            mean_error=float(np.mean(sorted_errors[:k])),
            median_error=float(np.median(sorted_errors[:k])),
            dae_threshold=float(sorted_daes[k - 1]),
        ))
    return SelectionCurve(points=points)


def dae_threshold(records: list[EstimateRecord], percentile: float | None = None,
                  hard: float | None = None) -> float:
    """Accuracy-estimate cutoff for online selection.

    Either a percentile of the reference records' estimates (linear
    interpolation) or a hard meter value passed through unchanged.
    """
    if (percentile is None) == (hard is None):
        raise ValueError("exactly one of percentile or hard must be given")
    if hard is not None:
        return float(hard)
    if not records:
        raise ValueError("reference record set is empty")
    if not 0.0 < percentile <= 100.0:
        raise ValueError(f"percentile must be in (0, 100], got {percentile}")
    daes = np.array([r.dae for r in records])
    return float(np.percentile(daes, percentile))


# ---------------------------------------------------------------------------
# Plot-ready artifact writers.

def write_estimates_csv(records: list[EstimateRecord], path: str | Path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "truth_lat", "truth_lon", "est_lat", "est_lon",
                         "error_pos_m", "dae_m", "error_dae_m"])
        for r in records:
            writer.writerow([r.id, repr(r.truth.lat), repr(r.truth.lon),
                             repr(r.estimate.lat), repr(r.estimate.lon),
                             repr(r.error_pos), repr(r.dae), repr(r.error_dae)])


def read_estimates_csv(path: str | Path) -> list[EstimateRecord]:
    records = []
    with Path(path).open(newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            records.append(EstimateRecord(
                id=int(row["id"]),
                truth=geo.LatLon(float(row["truth_lat"]), float(row["truth_lon"])),
                estimate=geo.LatLon(float(row["est_lat"]), float(row["est_lon"])),
                error_pos=float(row["error_pos_m"]),
                dae=float(row["dae_m"]),
                error_dae=float(row["error_dae_m"]),
            ))
    return records


def write_sweep_csv(rows: list[SweepRow], path: str | Path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["fraction_dae", "pos_mean_m", "pos_median_m",
                         "dae_err_mean_m", "dae_err_median_m"])
        for r in rows:
            writer.writerow([repr(r.fraction_dae), repr(r.pos_mean), repr(r.pos_median),
                             repr(r.dae_err_mean), repr(r.dae_err_median)])


def write_selection_csv(curve: SelectionCurve, path: str | Path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["portion", "mean_error_m", "median_error_m", "dae_threshold_m"])
        for p in curve.points:
            writer.writerow([repr(p.portion), repr(p.mean_error), repr(p.median_error),
                             repr(p.dae_threshold)])


def write_summary_json(summary: dict, path: str | Path) -> None:
    """Deterministic JSON: sorted keys, no timestamps, trailing newline."""
    with Path(path).open("w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
