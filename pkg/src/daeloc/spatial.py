"""Spatial analysis: k-means over ground-truth locations and per-cluster
error/density statistics.

Clustering runs in a local planar projection (meters) centered on the
centroid of the input points, with k-means++ initialization and Lloyd
iterations until the centers move less than 0.1 m. Evaluated records are
mapped to clusters by the label of their ground-truth location.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import geo
from .data import Dataset
from .pipeline import EstimateRecord
from .rng import derive_seed

KMEANS_TOL_M = 0.1
KMEANS_MAX_ITER = 300
KMEANS_RESTARTS = 10
PAIRWISE_EXACT_LIMIT = 2000


@dataclass
class ClusterAssignment:
    """k-means result: centers (as coordinates), a label per point, and the
    inertia trace used by convergence checks."""

    k: int
    centers: list[geo.LatLon]
    labels: np.ndarray
    inertia: float
    inertia_history: list[float]
    origin: geo.LatLon


def _lloyd(points: np.ndarray, k: int, rng: np.random.Generator, tol_m: float,
           max_iter: int) -> tuple[np.ndarray, np.ndarray, float, list[float]]:
    """One k-means++ initialization followed by Lloyd iterations."""
    n = len(points)
    centers = np.empty((k, 2))
    centers[0] = points[rng.integers(n)]
    d2 = ((points - centers[0]) ** 2).sum(axis=1)
    for j in range(1, k):
        centers[j] = points[rng.choice(n, p=d2 / d2.sum())]
        d2 = np.minimum(d2, ((points - centers[j]) ** 2).sum(axis=1))

    inertia_history: list[float] = []
    for _ in range(max_iter):
        dist2 = ((points[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        labels = dist2.argmin(axis=1).astype(np.int32)
        point_d2 = dist2[np.arange(n), labels]
        inertia_history.append(float(point_d2.sum()))

        new_centers = centers.copy()
        counts = np.bincount(labels, minlength=k)
        for dim in range(2):
            sums = np.bincount(labels, weights=points[:, dim], minlength=k)
            new_centers[counts > 0, dim] = sums[counts > 0] / counts[counts > 0]
        # Re-seed each empty cluster with the currently farthest point.
        farthest_pool = point_d2.copy()
        for c in np.flatnonzero(counts == 0):
            far = int(np.argmax(farthest_pool))
            new_centers[c] = points[far]
            farthest_pool[far] = -1.0

        shift = np.sqrt(((new_centers - centers) ** 2).sum(axis=1)).max()
        centers = new_centers
        if shift < tol_m:
            break

    # Final assignment against the converged centers; the returned centers
    # are the exact member means of that assignment.
    dist2 = ((points[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
    labels = dist2.argmin(axis=1).astype(np.int32)
    inertia = float(dist2[np.arange(n), labels].sum())
    inertia_history.append(inertia)
    counts = np.bincount(labels, minlength=k)
    for dim in range(2):
        sums = np.bincount(labels, weights=points[:, dim], minlength=k)
        centers[counts > 0, dim] = sums[counts > 0] / counts[counts > 0]
    return labels, centers, inertia, inertia_history


def kmeans(lats, lons, k: int, seed: int = 0, *, tol_m: float = KMEANS_TOL_M,
           max_iter: int = KMEANS_MAX_ITER,
           restarts: int = KMEANS_RESTARTS) -> ClusterAssignment:
    """Cluster coordinates into ``k`` groups in projected meter space.

    Each restart is a k-means++ initialization followed by Lloyd iterations
    until the largest center shift drops below ``tol_m``; empty clusters are
    re-seeded with the point farthest from its current center. The restart
    with the lowest inertia wins. Deterministic under ``seed``; ``k`` may
    not exceed the number of distinct coordinates.
    """
    lats = np.asarray(lats, dtype=np.float64)
    lons = np.asarray(lons, dtype=np.float64)
    if lats.ndim != 1 or lats.shape != lons.shape or lats.size == 0:
        raise ValueError("lats/lons must be equal-length non-empty vectors")
    if k < 1:
        raise ValueError("k must be >= 1")
    if restarts < 1:
        raise ValueError("restarts must be >= 1")
    n_distinct = len(np.unique(np.column_stack([lats, lons]), axis=0))
    if k > n_distinct:
        raise ValueError(f"k={k} exceeds the {n_distinct} distinct points")

    origin = geo.LatLon(float(lats.mean()), float(lons.mean()))
    x, y = geo.project_local_arrays(lats, lons, origin)
    points = np.column_stack([x, y])

    best = None
    for r in range(restarts):
        rng = np.random.default_rng(derive_seed(seed, "kmeans-restart", r))
        run = _lloyd(points, k, rng, tol_m, max_iter)
        if best is None or run[2] < best[2]:
            best = run
    labels, centers, inertia, inertia_history = best

    center_coords = [geo.unproject_local(float(cx), float(cy), origin) for cx, cy in centers]
    return ClusterAssignment(k=k, centers=center_coords, labels=labels,
                             inertia=inertia, inertia_history=inertia_history,
                             origin=origin)


def mean_pairwise_distance(lats, lons, *, max_points: int = PAIRWISE_EXACT_LIMIT,
                           seed: int = 0) -> float:
    """Mean haversine distance over all unordered point pairs, in meters.

    Exact up to ``max_points`` points; larger inputs are reduced to a seeded
    subsample of that size first. A single point has distance 0.
    """
    lats = np.asarray(lats, dtype=np.float64)
    lons = np.asarray(lons, dtype=np.float64)
    if lats.size == 0:
        raise ValueError("mean pairwise distance of an empty point set is undefined")
    if lats.size == 1:
        return 0.0
    if lats.size > max_points:
        pick = np.random.default_rng(seed).choice(lats.size, size=max_points, replace=False)
        lats, lons = lats[pick], lons[pick]
    iu, ju = np.triu_indices(lats.size, k=1)
    d = geo.haversine_arrays(lats[iu], lons[iu], lats[ju], lons[ju])
    return float(d.mean())


def pearson(x, y) -> float:
    """Sample Pearson correlation coefficient.

    Raises on length mismatch, fewer than two points, or zero variance in
    either input (the coefficient is undefined there, never NaN).
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("x and y must be equal-length vectors")
    if x.size < 2:
        raise ValueError("correlation needs at least two points")
    xd = x - x.mean()
    yd = y - y.mean()
    sxx = float((xd * xd).sum())
    syy = float((yd * yd).sum())
    if sxx == 0.0 or syy == 0.0:
        raise ValueError("correlation undefined: zero variance input")
    return float((xd * yd).sum() / np.sqrt(sxx * syy))


@dataclass
class ClusterStats:
    """Statistics for one cluster; error fields are None when no evaluated
    record fell into the cluster."""

    cluster: int
    count: int
    pos_mean: float | None
    pos_median: float | None
    mean_pair_dist: float
    selected_count: int
    selected_mean: float | None
    selected_median: float | None


@dataclass
class ClusterReport:
    clusters: list[ClusterStats]
    corr_pos_mean_vs_pair_dist: float | None
    corr_pos_mean_vs_count: float | None
    corr_selected_mean_vs_count: float | None
    pooled_selected_count: int
    pooled_selected_mean: float | None
    pooled_selected_median: float | None


def _safe_pearson(x: list[float], y: list[float]) -> float | None:
    try:
        return pearson(np.array(x), np.array(y))
    except ValueError:
        return None


def cluster_report(dataset: Dataset, assignment: ClusterAssignment,
                   records: list[EstimateRecord], *, seed: int = 0) -> ClusterReport:
    """Per-cluster error and density statistics plus their correlations.

    Every evaluated record contributes to the cluster of its ground-truth
    location. The density metric (mean pairwise distance) is computed over
    all dataset points carrying the cluster's label. Per-cluster selection
    keeps records whose accuracy estimate is strictly below the cluster's
    median estimate; ties are excluded for determinism.
    """
    if len(assignment.labels) != dataset.n_records:
        raise ValueError("assignment labels do not cover the dataset")
    by_cluster: dict[int, list[EstimateRecord]] = {c: [] for c in range(assignment.k)}
    for r in records:
        if not 0 <= r.id < dataset.n_records:
            raise ValueError(f"record id {r.id} is not a row of the clustered dataset")
        by_cluster[int(assignment.labels[r.id])].append(r)

    stats: list[ClusterStats] = []
    pooled_selected: list[float] = []
    for c in range(assignment.k):
        members = np.flatnonzero(assignment.labels == c)
        pair_dist = mean_pairwise_distance(
            dataset.lats[members], dataset.lons[members],
            seed=derive_seed(seed, "pairdist", c),
        ) if members.size else 0.0
        recs = by_cluster[c]
        if recs:
            errors = np.array([r.error_pos for r in recs])
            daes = np.array([r.dae for r in recs])
            med_dae = float(np.median(daes))
            selected = errors[daes < med_dae]
            pooled_selected.extend(selected.tolist())
            stats.append(ClusterStats(
                cluster=c,
                count=len(recs),
                pos_mean=float(errors.mean()),
                pos_median=float(np.median(errors)),
                mean_pair_dist=pair_dist,
                selected_count=int(selected.size),
                selected_mean=float(selected.mean()) if selected.size else None,
                selected_median=float(np.median(selected)) if selected.size else None,
            ))
        else:
            stats.append(ClusterStats(
                cluster=c, count=0, pos_mean=None, pos_median=None,
                mean_pair_dist=pair_dist, selected_count=0,
                selected_mean=None, selected_median=None,
            ))

    populated = [s for s in stats if s.count > 0]
    with_selection = [s for s in populated if s.selected_mean is not None]
    pooled = np.array(pooled_selected)
    return ClusterReport(
        clusters=stats,
        corr_pos_mean_vs_pair_dist=_safe_pearson(
            [s.pos_mean for s in populated], [s.mean_pair_dist for s in populated]),
        corr_pos_mean_vs_count=_safe_pearson(
            [s.pos_mean for s in populated], [float(s.count) for s in populated]),
        corr_selected_mean_vs_count=_safe_pearson(
            [s.selected_mean for s in with_selection],
            [float(s.count) for s in with_selection]),
        pooled_selected_count=int(pooled.size),
        pooled_selected_mean=float(pooled.mean()) if pooled.size else None,
        pooled_selected_median=float(np.median(pooled)) if pooled.size else None,
    )


# ---------------------------------------------------------------------------
# Artifact writers.

def write_cluster_report_csv(report: ClusterReport, path: str | Path) -> None:
    def cell(v):
        return "" if v is None else repr(v)

    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["cluster", "count", "pos_mean_m", "pos_median_m",
                         "mean_pair_dist_m", "selected_count",
                         "selected_mean_m", "selected_median_m"])
        for s in report.clusters:
            writer.writerow([s.cluster, s.count, cell(s.pos_mean), cell(s.pos_median),
                             repr(s.mean_pair_dist), s.selected_count,
                             cell(s.selected_mean), cell(s.selected_median)])


def write_centers_csv(assignment: ClusterAssignment, path: str | Path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["cluster", "lat", "lon"])
        for c, center in enumerate(assignment.centers):
            writer.writerow([c, repr(center.lat), repr(center.lon)])


def write_correlations_json(report: ClusterReport, path: str | Path) -> None:
    payload = {
        "corr_pos_mean_vs_pair_dist": report.corr_pos_mean_vs_pair_dist,
        "corr_pos_mean_vs_count": report.corr_pos_mean_vs_count,
        "corr_selected_mean_vs_count": report.corr_selected_mean_vs_count,
        "pooled_selected_count": report.pooled_selected_count,
        "pooled_selected_mean_m": report.pooled_selected_mean,
        "pooled_selected_median_m": report.pooled_selected_median,
    }
    with Path(path).open("w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
