"""Reproducible end-to-end experiment runs.

A run is fully described by a :class:`RunConfig` plus its mandatory seed:
load (or generate) the dataset, filter by receiving-gateway count, split
70/15/15, repartition the training pool, train both forests, evaluate the
validation and test sets, and derive the selection curve and the spatial
cluster report. All child seeds are derived from the top-level seed with
fixed component labels, so equal (config, seed, dataset) runs produce
byte-identical artifacts.

Seed derivation labels: "synth", "split", "repartition", "forest-pos",
"forest-dae", "kmeans", "cluster-report", and per-fraction labels inside
the sweep.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import (CsvSchema, DEFAULT_SCHEMA, Dataset, DatasetSplit, filter_min_gateways,
                   ingest, split as split_dataset)
from .learn import ForestModel, ForestParams
from .pipeline import (DEFAULT_PORTIONS, EstimateRecord, EvalSummary, SelectionCurve,
                       SweepRow, build_dae_targets, check_partition, evaluate,
                       repartition_sweep, selection_curve, train_dae_model,
                       train_position_model, write_estimates_csv, write_selection_csv,
                       write_summary_json, write_sweep_csv)
from .rng import derive_seed
from .spatial import (ClusterAssignment, ClusterReport, cluster_report, kmeans,
                      write_centers_csv, write_cluster_report_csv,
                      write_correlations_json)
from .synth import DEFAULT_SCENARIO, ScenarioConfig, generate

MANIFEST_FORMAT = "daeloc-manifest"
MANIFEST_VERSION = 1


@dataclass
class RunConfig:
    """Everything a run needs; ``seed`` is mandatory (no implicit entropy).

    ``out`` and ``jobs`` are execution knobs and are excluded from the
    config hash: they change where and how fast artifacts appear, never
    their contents.
    """

    dataset: str | None = None
    schema: str | None = None
    synth: str | None = None
    sentinel: float = -200.0
    min_rx: int = 3
    fractions: tuple[float, float, float] = (0.70, 0.15, 0.15)
    seed: int | None = None
    fraction_dae: float = 0.5
    sweep: tuple[float, ...] | None = None
    trees: int = 100
    max_features: int | None = None
    min_samples_split: int = 2
    min_samples_leaf: int = 1
    portions: tuple[float, ...] = DEFAULT_PORTIONS
    k: int = 20
    out: str = "daeloc_out"
    jobs: int = 1

    def validate(self, require_seed: bool = True) -> None:
        if require_seed and self.seed is None:
            raise ValueError("seed is mandatory; pass --seed or set it in the config file")
        if (self.dataset is None) == (self.synth is None):
            raise ValueError("exactly one of dataset or synth must be given")
        if self.dataset is not None and not Path(self.dataset).exists():
            raise ValueError(f"dataset file not found: {self.dataset}")
        if self.schema is not None and not Path(self.schema).exists():
            raise ValueError(f"schema file not found: {self.schema}")
        if self.synth is not None and self.synth != "default" and not Path(self.synth).exists():
            raise ValueError(f"synth scenario must be 'default' or a JSON file: {self.synth}")
        if self.min_rx < 1:
            raise ValueError("min_rx must be >= 1")
        if not 0.0 <= self.fraction_dae <= 1.0:
            raise ValueError("fraction_dae must be in [0, 1]")
        # Model/grid parameters are re-validated by the modules they feed.

    def forest_params(self) -> ForestParams:
        return ForestParams(n_trees=self.trees, max_features=self.max_features,
                            min_samples_split=self.min_samples_split,
                            min_samples_leaf=self.min_samples_leaf)

    def canonical_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d.pop("out")
        d.pop("jobs")
        for key in ("fractions", "portions", "sweep"):
            if d[key] is not None:
                d[key] = list(d[key])
        return d

    def config_hash(self) -> str:
        text = json.dumps(self.canonical_dict(), sort_keys=True)
        return hashlib.sha256(text.encode("utf-8")).hexdigest()


def load_scenario(name_or_path: str) -> ScenarioConfig:
    """Resolve a synth scenario: the literal name ``default`` or a JSON file
    of :class:`ScenarioConfig` field overrides."""
    if name_or_path == "default":
        return DEFAULT_SCENARIO
    raw = json.loads(Path(name_or_path).read_text(encoding="utf-8"))
    return ScenarioConfig(**{**dataclasses.asdict(DEFAULT_SCENARIO), **raw})


def load_schema(cfg: RunConfig) -> CsvSchema:
    if cfg.schema is not None:
        return CsvSchema.from_file(cfg.schema)
    if cfg.sentinel != DEFAULT_SCHEMA.sentinel:
        return dataclasses.replace(DEFAULT_SCHEMA, sentinel=cfg.sentinel)
    return DEFAULT_SCHEMA


@dataclass
class LoadedData:
    dataset: Dataset          # post-filter
    source: str
    ingested_records: int     # parsed rows before the gateway filter
    rejected_rows: int


def load_dataset(cfg: RunConfig) -> LoadedData:
    """Materialize the run's dataset (CSV ingest or synthetic) and filter it."""
    if cfg.synth is not None:
        scenario = load_scenario(cfg.synth)
        raw = generate(scenario, derive_seed(cfg.seed, "synth"))
        source = f"synth:{cfg.synth}"
        rejected = 0
    else:
        result = ingest(cfg.dataset, load_schema(cfg))
        raw = result.dataset
        source = str(cfg.dataset)
        rejected = result.n_rejected
    filtered = filter_min_gateways(raw, cfg.min_rx)
    return LoadedData(dataset=filtered, source=source,
                      ingested_records=raw.n_records, rejected_rows=rejected)


@dataclass
class RunResult:
    data: LoadedData
    split: DatasetSplit
    pos_model: ForestModel
    dae_model: ForestModel
    val_records: list[EstimateRecord]
    val_summary: EvalSummary
    test_records: list[EstimateRecord]
    test_summary: EvalSummary
    curve: SelectionCurve
    assignment: ClusterAssignment
    clusters: ClusterReport
    sweep_rows: list[SweepRow] | None

    def summary_dict(self, cfg: RunConfig) -> dict:
        sel_full = {
            "portions": [p.portion for p in self.curve.points],
            "mean_m": [p.mean_error for p in self.curve.points],
            "median_m": [p.median_error for p in self.curve.points],
            "dae_threshold_m": [p.dae_threshold for p in self.curve.points],
        }
        summary: dict = {
            "seed": cfg.seed,
            "counts": {
                "ingested": self.data.ingested_records,
                "filtered": self.data.dataset.n_records,
                "train_pos": int(len(self.split.train_pos)),
                "train_dae": int(len(self.split.train_dae)),
                "validation": int(len(self.split.validation)),
                "test": int(len(self.split.test)),
            },
            "validation": self.val_summary.to_dict(),
            "test": self.test_summary.to_dict(),
            "selection": sel_full,
            "clusters": {
                "k": self.assignment.k,
                "corr_pos_mean_vs_pair_dist": self.clusters.corr_pos_mean_vs_pair_dist,
                "corr_pos_mean_vs_count": self.clusters.corr_pos_mean_vs_count,
                "corr_selected_mean_vs_count": self.clusters.corr_selected_mean_vs_count,
                "pooled_selected_count": self.clusters.pooled_selected_count,
                "pooled_selected_mean_m": self.clusters.pooled_selected_mean,
                "pooled_selected_median_m": self.clusters.pooled_selected_median,
            },
        }
        half = [p for p in self.curve.points if abs(p.portion - 0.5) < 1e-9]
        if half:
            point = half[0]
            summary["selection_at_half"] = {
                "mean_m": point.mean_error,
                "median_m": point.median_error,
                "dae_threshold_m": point.dae_threshold,
                "mean_improvement": 1.0 - point.mean_error / self.val_summary.pos_mean,
                "median_improvement": 1.0 - point.median_error / self.val_summary.pos_median,
            }
        if self.sweep_rows is not None:
            summary["sweep"] = {
                "fraction_dae": [r.fraction_dae for r in self.sweep_rows],
                "pos_mean_m": [r.pos_mean for r in self.sweep_rows],
                "pos_median_m": [r.pos_median for r in self.sweep_rows],
                "dae_err_mean_m": [r.dae_err_mean for r in self.sweep_rows],
                "dae_err_median_m": [r.dae_err_median for r in self.sweep_rows],
            }
        return summary


def run_full(cfg: RunConfig) -> RunResult:
    """Execute the whole pipeline for a validated config."""
    cfg.validate()
    data = load_dataset(cfg)
    dataset = data.dataset
    base = split_dataset(dataset, cfg.fractions, derive_seed(cfg.seed, "split"))
    parts = base.with_repartition(cfg.fraction_dae, derive_seed(cfg.seed, "repartition"))
    check_partition(parts, dataset.n_records)

    params = cfg.forest_params()
    pos_model = train_position_model(dataset, parts.train_pos, params,
                                     derive_seed(cfg.seed, "forest-pos"), cfg.jobs)
    targets = build_dae_targets(pos_model, dataset, parts.train_dae, parts.train_pos)
    dae_model = train_dae_model(dataset, parts.train_dae, targets, params,
                                derive_seed(cfg.seed, "forest-dae"), cfg.jobs)
    val_records, val_summary = evaluate(pos_model, dae_model, dataset, parts.validation)
    test_records, test_summary = evaluate(pos_model, dae_model, dataset, parts.test)
    curve = selection_curve(val_records, cfg.portions)
    assignment = kmeans(dataset.lats, dataset.lons, cfg.k, derive_seed(cfg.seed, "kmeans"))
    clusters = cluster_report(dataset, assignment, val_records,
                              seed=derive_seed(cfg.seed, "cluster-report"))
    sweep_rows = None
    if cfg.sweep:
        sweep_rows = repartition_sweep(dataset, parts.train_pool, parts.validation,
                                       cfg.sweep, params, cfg.seed, cfg.jobs)
    return RunResult(data=data, split=parts, pos_model=pos_model, dae_model=dae_model,
                     val_records=val_records, val_summary=val_summary,
                     test_records=test_records, test_summary=test_summary,
                     curve=curve, assignment=assignment, clusters=clusters,
                     sweep_rows=sweep_rows)


def split_payload(parts: DatasetSplit, dataset: Dataset) -> dict:
    return {
        "seed": parts.seed,
        "n_records": dataset.n_records,
        "dataset_sha256": dataset.content_hash(),
        "train_pos": [int(i) for i in parts.train_pos],
        "train_dae": [int(i) for i in parts.train_dae],
        "validation": [int(i) for i in parts.validation],
        "test": [int(i) for i in parts.test],
    }


def load_split(path: str | Path, dataset: Dataset) -> DatasetSplit:
    """Read a split.json back, refusing to pair it with a different dataset."""
    raw = json.loads(Path(path).read_text(encoding="utf-8"))
    if raw["dataset_sha256"] != dataset.content_hash():
        raise ValueError("split.json was produced from a different dataset (hash mismatch)")
    return DatasetSplit(
        train_pos=np.array(raw["train_pos"], dtype=np.int64),
        train_dae=np.array(raw["train_dae"], dtype=np.int64),
        validation=np.array(raw["validation"], dtype=np.int64),
        test=np.array(raw["test"], dtype=np.int64),
        seed=raw["seed"],
    )


def manifest_dict(cfg: RunConfig, data: LoadedData, artifacts: list[str]) -> dict:
    return {
        "format": MANIFEST_FORMAT,
        "version": MANIFEST_VERSION,
        "config": cfg.canonical_dict(),
        "config_sha256": cfg.config_hash(),
        "seed": cfg.seed,
        "dataset": {
            "source": data.source,
            "ingested_records": data.ingested_records,
            "rejected_rows": data.rejected_rows,
            "records": data.dataset.n_records,
            "gateway_count": data.dataset.gateway_count,
            "sha256": data.dataset.content_hash(),
        },
        "artifacts": sorted(artifacts),
    }


def write_run_artifacts(cfg: RunConfig, result: RunResult) -> list[Path]:
    """Write the full artifact bundle; on failure, remove partial outputs."""
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []

    def emit(name: str, writer) -> None:
        path = out / name
        writer(path)
        written.append(path)

    try:
        emit("summary.json", lambda p: write_summary_json(result.summary_dict(cfg), p))
        emit("estimates.csv", lambda p: write_estimates_csv(result.val_records, p))
        emit("selection.csv", lambda p: write_selection_csv(result.curve, p))
        emit("clusters.csv", lambda p: write_cluster_report_csv(result.clusters, p))
        emit("centers.csv", lambda p: write_centers_csv(result.assignment, p))
        emit("correlations.json", lambda p: write_correlations_json(result.clusters, p))
        emit("split.json", lambda p: write_summary_json(
            split_payload(result.split, result.data.dataset), p))
        if result.sweep_rows is not None:
            emit("sweep.csv", lambda p: write_sweep_csv(result.sweep_rows, p))
        names = [p.name for p in written] + ["manifest.json"]
        emit("manifest.json", lambda p: write_summary_json(
            manifest_dict(cfg, result.data, names), p))
    except BaseException:
        for path in written:
            path.unlink(missing_ok=True)
        raise
    return written
