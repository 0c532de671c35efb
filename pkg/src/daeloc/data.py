"""Dataset ingestion, gateway-count filtering, and deterministic splitting.

A dataset is an ordered collection of uplink fingerprints: one RSS value per
known gateway (with a sentinel marking gateways that did not receive the
message) plus the ground-truth coordinates of the transmitter. Records are
identified by their row ordinal, and the source-file row order is canonical;
shuffling happens only inside :func:`split` under an explicit seed.
"""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .geo import LatLon

DEFAULT_SENTINEL = -200.0

RSS_MIN_DBM = -200.0
RSS_MAX_DBM = 0.0


@dataclass(frozen=True)
class CsvSchema:
    """Column mapping for fingerprint CSV files.

    Exactly one of ``rss_prefix`` (all header columns starting with the
    prefix, in header order) or ``rss_columns`` (an explicit ordered list)
    selects the RSS columns.
    """

    lat: str
    lon: str
    rss_prefix: str | None = None
    rss_columns: tuple[str, ...] | None = None
    sentinel: float = DEFAULT_SENTINEL

    def __post_init__(self) -> None:
        if (self.rss_prefix is None) == (self.rss_columns is None):
            raise ValueError("exactly one of rss_prefix or rss_columns must be set")
        if self.rss_columns is not None and len(self.rss_columns) == 0:
            raise ValueError("explicit rss_columns list must not be empty")

    def resolve_rss_columns(self, header: list[str]) -> list[str]:
        """RSS column names for a concrete file header, in feature order."""
        if self.rss_columns is not None:
            missing = [c for c in self.rss_columns if c not in header]
            if missing:
                raise ValueError(f"rss columns missing from header: {missing}")
            return list(self.rss_columns)
        cols = [c for c in header if c.startswith(self.rss_prefix)]
        if not cols:
            raise ValueError(f"no header column starts with rss prefix {self.rss_prefix!r}")
        return cols

    @classmethod
    def from_file(cls, path: str | Path) -> "CsvSchema":
        """Load a schema from a JSON object or ``key=value`` lines.

        Recognized keys: ``lat``, ``lon``, ``rss_prefix``, ``rss_columns``
        (JSON list, or comma-separated in the key=value form), ``sentinel``.
        """
        text = Path(path).read_text(encoding="utf-8").strip()
        if text.startswith("{"):
            raw = json.loads(text)
        else:
            raw = {}
            for line_no, line in enumerate(text.splitlines(), start=1):
                line = line.strip()
                if not line or line.startswith("#"):
                    continue
                if "=" not in line:
                    raise ValueError(f"{path}:{line_no}: expected key=value, got {line!r}")
                key, value = line.split("=", 1)
                raw[key.strip()] = value.strip()
            if "rss_columns" in raw:
                raw["rss_columns"] = [c.strip() for c in raw["rss_columns"].split(",")]
        kwargs: dict = {"lat": raw["lat"], "lon": raw["lon"]}
        if raw.get("rss_prefix"):
            kwargs["rss_prefix"] = raw["rss_prefix"]
        if raw.get("rss_columns"):
            kwargs["rss_columns"] = tuple(raw["rss_columns"])
        if "sentinel" in raw:
            kwargs["sentinel"] = float(raw["sentinel"])
        return cls(**kwargs)


# Canonical schema used for synthetic fixtures and round-trip tests.
DEFAULT_SCHEMA = CsvSchema(lat="lat", lon="lon", rss_prefix="rss_")


@dataclass(frozen=True, eq=False)
class Fingerprint:
    """One uplink message: RSS vector over gateways plus ground truth."""

    id: int
    rss: np.ndarray
    truth: LatLon


class Dataset:
    """Immutable, ordered fingerprint collection with a fixed gateway count.

    Internally column-oriented: an ``(n, gateway_count)`` RSS matrix plus
    ground-truth latitude/longitude vectors. Record ids are row ordinals.
    """

    def __init__(self, rss: np.ndarray, lats: np.ndarray, lons: np.ndarray,
                 sentinel: float = DEFAULT_SENTINEL):
        rss = np.asarray(rss, dtype=np.float64)
        lats = np.asarray(lats, dtype=np.float64)
        lons = np.asarray(lons, dtype=np.float64)
        if rss.ndim != 2:
            raise ValueError("rss must be a 2-D matrix (records x gateways)")
        if rss.shape[1] < 1:
            raise ValueError("gateway count must be >= 1")
        n = rss.shape[0]
        if lats.shape != (n,) or lons.shape != (n,):
            raise ValueError("lats/lons must be 1-D with one entry per record")
        if n:
            if not np.isfinite(rss).all():
                raise ValueError("rss values must be finite")
            received = rss != sentinel
            bad = received & ((rss < RSS_MIN_DBM) | (rss > RSS_MAX_DBM))
            if bad.any():
                raise ValueError(
                    f"non-sentinel RSS values must lie in [{RSS_MIN_DBM}, {RSS_MAX_DBM}] dBm"
                )
            if not np.isfinite(lats).all() or not np.isfinite(lons).all():
                raise ValueError("coordinates must be finite")
            if (np.abs(lats) > 90.0).any() or (np.abs(lons) > 180.0).any():
                raise ValueError("coordinates out of range")
        for a in (rss, lats, lons):
            a.setflags(write=False)
        self.rss = rss
        self.lats = lats
        self.lons = lons
        self.sentinel = float(sentinel)

    @property
    def n_records(self) -> int:
        return self.rss.shape[0]

    @property
    def gateway_count(self) -> int:
        return self.rss.shape[1]

    def __len__(self) -> int:
        return self.n_records

    def __getitem__(self, i: int) -> Fingerprint:
        return Fingerprint(id=i, rss=self.rss[i],
                           truth=LatLon(float(self.lats[i]), float(self.lons[i])))

    def truth(self, i: int) -> LatLon:
        return LatLon(float(self.lats[i]), float(self.lons[i]))

    def receiving_counts(self) -> np.ndarray:
        """Number of non-sentinel RSS entries per record."""
        return (self.rss != self.sentinel).sum(axis=1)

    def content_hash(self) -> str:
        """SHA-256 over the raw record arrays and the sentinel."""
        h = hashlib.sha256()
        h.update(np.float64(self.sentinel).tobytes())
        h.update(np.int64(self.gateway_count).tobytes())
        h.update(np.ascontiguousarray(self.rss).tobytes())
        h.update(np.ascontiguousarray(self.lats).tobytes())
        h.update(np.ascontiguousarray(self.lons).tobytes())
        return h.hexdigest()


@dataclass
class IngestResult:
    """Parsed dataset plus diagnostics for rejected rows."""

    dataset: Dataset
    rejected: list[tuple[int, str]] = field(default_factory=list)

    @property
    def n_rejected(self) -> int:
        return len(self.rejected)


def ingest(path: str | Path, schema: CsvSchema) -> IngestResult:
    """Read a fingerprint CSV into a :class:`Dataset`.

    One fingerprint per row, row order preserved. Malformed rows (missing or
    non-numeric cells, out-of-range values) are rejected with a per-row
    diagnostic instead of aborting the whole file.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"dataset file not found: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: empty file, expected a header row") from None
        header = [c.strip() for c in header]
        for col in (schema.lat, schema.lon):
            if col not in header:
                raise ValueError(f"{path}: mapped column {col!r} not in header")
        rss_cols = schema.resolve_rss_columns(header)
        lat_i = header.index(schema.lat)
        lon_i = header.index(schema.lon)
        rss_i = [header.index(c) for c in rss_cols]
        width = len(header)

        rss_rows: list[list[float]] = []
        lat_vals: list[float] = []
        lon_vals: list[float] = []
        rejected: list[tuple[int, str]] = []
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != width:
                rejected.append((line_no, f"expected {width} cells, got {len(row)}"))
                continue
            try:
                lat = float(row[lat_i])
                lon = float(row[lon_i])
                rss = [float(row[i]) for i in rss_i]
            except ValueError as exc:
                rejected.append((line_no, f"non-numeric cell: {exc}"))
                continue
            if not (-90.0 <= lat <= 90.0 and -180.0 <= lon <= 180.0):
                rejected.append((line_no, f"coordinates out of range: ({lat}, {lon})"))
                continue
            bad = [v for v in rss if v != schema.sentinel and not (RSS_MIN_DBM <= v <= RSS_MAX_DBM)]
            if bad:
                rejected.append((line_no, f"RSS out of range: {bad[:3]}"))
                continue
            lat_vals.append(lat)
            lon_vals.append(lon)
            rss_rows.append(rss)

    n = len(rss_rows)
    rss_arr = np.array(rss_rows, dtype=np.float64) if n else np.empty((0, len(rss_cols)))
    dataset = Dataset(rss_arr, np.array(lat_vals), np.array(lon_vals), sentinel=schema.sentinel)
    return IngestResult(dataset=dataset, rejected=rejected)


def write_csv(dataset: Dataset, path: str | Path, schema: CsvSchema = DEFAULT_SCHEMA) -> None:
    """Write a dataset with the same schema :func:`ingest` reads.

    Floats are emitted with ``repr`` so an ingest/write/ingest round trip
    preserves every finite value bit-exactly.
    """
    if schema.rss_columns is not None:
        if len(schema.rss_columns) != dataset.gateway_count:
            raise ValueError("schema rss_columns length does not match gateway count")
        rss_cols = list(schema.rss_columns)
    else:
        rss_cols = [f"{schema.rss_prefix}{g}" for g in range(dataset.gateway_count)]
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow([schema.lat, schema.lon, *rss_cols])
        for i in range(dataset.n_records):
            writer.writerow([
                repr(float(dataset.lats[i])),
                repr(float(dataset.lons[i])),
                *(repr(float(v)) for v in dataset.rss[i]),
            ])


def filter_min_gateways(dataset: Dataset, min_rx: int) -> Dataset:
    """Keep only records received by at least ``min_rx`` gateways.

    Order is preserved; record ids are re-assigned as row ordinals of the
    filtered dataset. Idempotent: filtering twice equals filtering once.
    """
    if min_rx < 1:
        raise ValueError("min_rx must be >= 1")
    keep = dataset.receiving_counts() >= min_rx
    return Dataset(dataset.rss[keep], dataset.lats[keep], dataset.lons[keep],
                   sentinel=dataset.sentinel)


@dataclass(frozen=True)
class DatasetSplit:
    """Disjoint index sets partitioning a dataset.

    ``train_pos`` and ``train_dae`` are the two halves of the training pool
    (position model and error-estimation model respectively). Fresh output
    of :func:`split` carries the whole pool in ``train_pos`` with an empty
    ``train_dae``; :meth:`with_repartition` divides it.
    """

    train_pos: np.ndarray
    train_dae: np.ndarray
    validation: np.ndarray
    test: np.ndarray
    seed: int

    def __post_init__(self) -> None:
        sets = [self.train_pos, self.train_dae, self.validation, self.test]
        total = sum(len(s) for s in sets)
        combined = np.concatenate([np.asarray(s) for s in sets]) if total else np.array([], dtype=np.int64)
        if len(np.unique(combined)) != total:
            raise ValueError("split index sets must be pairwise disjoint")

    @property
    def train_pool(self) -> np.ndarray:
        """All training indices regardless of repartition, ascending."""
        return np.sort(np.concatenate([self.train_pos, self.train_dae]))

    @property
    def n_total(self) -> int:
        return len(self.train_pos) + len(self.train_dae) + len(self.validation) + len(self.test)

    def validate_partition(self, n_records: int) -> None:
        """Check the four sets exactly cover ``range(n_records)``."""
        combined = np.concatenate([self.train_pos, self.train_dae, self.validation, self.test])
        if self.n_total != n_records or not np.array_equal(np.sort(combined), np.arange(n_records)):
            raise ValueError("split does not partition the record index range")

    def with_repartition(self, fraction_dae: float, seed: int) -> "DatasetSplit":
        """Divide the training pool between the two training tasks."""
        pos_idx, dae_idx = repartition(self.train_pool, fraction_dae, seed)
        return DatasetSplit(train_pos=pos_idx, train_dae=dae_idx,
                            validation=self.validation, test=self.test, seed=self.seed)


def split(dataset: Dataset, fractions: tuple[float, float, float] = (0.70, 0.15, 0.15),
          seed: int = 0) -> DatasetSplit:
    """Deterministically partition record indices into train pool / validation / test.

    A seeded shuffle followed by contiguous slicing. Validation and test
    sizes are ``round(fraction * n)``; the training pool absorbs the
    remainder. Each returned index set is sorted ascending.
    """
    if len(fractions) != 3:
        raise ValueError("fractions must be (train, validation, test)")
    if any(f < 0 for f in fractions) or abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError(f"fractions must be non-negative and sum to 1, got {fractions}")
    n = dataset.n_records
    if n < 10:
        raise ValueError(f"dataset too small to split: {n} records (need >= 10)")
    n_val = round(fractions[1] * n)
    n_test = round(fractions[2] * n)
    n_train = n - n_val - n_test
    if min(n_train, n_val, n_test) < 0:
        raise ValueError("rounded split sizes are inconsistent")
    perm = np.random.default_rng(seed).permutation(n)
    pool = np.sort(perm[:n_train])
    val = np.sort(perm[n_train:n_train + n_val])
    test = np.sort(perm[n_train + n_val:])
    empty = np.array([], dtype=pool.dtype)
    return DatasetSplit(train_pos=pool, train_dae=empty, validation=val, test=test, seed=seed)


def repartition(train_pool: np.ndarray, fraction_dae: float,
                seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Split the training pool between the position and error-estimation tasks.

    ``fraction_dae`` of the pool (rounded) goes to the error-estimation
    model; the remainder trains the position model. Deterministic under
    ``seed``; the two sets are disjoint and exhaustive over the pool.
    """
    if not 0.0 <= fraction_dae <= 1.0:
        raise ValueError(f"fraction_dae must be in [0, 1], got {fraction_dae}")
    pool = np.asarray(train_pool)
    n_dae = round(fraction_dae * len(pool))
    perm = np.random.default_rng(seed).permutation(len(pool))
    dae_idx = np.sort(pool[perm[:n_dae]])
    pos_idx = np.sort(pool[perm[n_dae:]])
    return pos_idx, dae_idx
