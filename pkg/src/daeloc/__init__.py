"""RSS-fingerprint positioning with dynamic accuracy estimation.

Trains a position model (RSS vector -> lat/lon) and an accuracy model
(RSS vector -> expected positioning error in meters) on LPWAN fingerprint
datasets, and provides the surrounding analyses: training-pool repartition
trade-offs, confidence-gated estimate selection, and spatial cluster
error/density statistics.
"""

from .data import (CsvSchema, Dataset, DatasetSplit, Fingerprint, filter_min_gateways,
                   ingest, repartition, split, write_csv)
from .geo import EARTH_RADIUS_M, LatLon, PlanarPoint, haversine, project_local
from .learn import (ForestModel, ForestParams, fit_extratrees, fit_knn, load_forest,
                    predict, predict_knn, save_forest)
from .pipeline import (EstimateRecord, EvalSummary, SelectionCurve, SweepRow,
                       build_dae_targets, dae_threshold, evaluate, position_error,
                       repartition_sweep, selection_curve, train_dae_model,
                       train_position_model)
from .spatial import (ClusterAssignment, ClusterReport, cluster_report, kmeans,
                      mean_pairwise_distance, pearson)
from .synth import DEFAULT_SCENARIO, ScenarioConfig, generate, perfect_dae_oracle

__version__ = "0.1.0"
