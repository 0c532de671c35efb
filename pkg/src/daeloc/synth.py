"""Seeded synthetic LPWAN fingerprint generator.

Produces desk-scale datasets with the same shape as the real urban
collections: gateways on a grid or scattered uniformly, transmitter
locations drawn from a uniform or hotspot-mixture density, and RSS values
from a log-distance path-loss model with Gaussian shadowing. Receptions
below the detection threshold are replaced by the sentinel, so the
minimum-gateways filter has realistic work to do.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, asdict

import numpy as np

from .data import Dataset, DEFAULT_SENTINEL
from .geo import haversine_arrays
from .pipeline import EstimateRecord


@dataclass(frozen=True)
class ScenarioConfig:
    """Bounds, radio model, and sampling density for one synthetic scenario."""

    lat_south: float = 51.1700
    lat_north: float = 51.1880
    lon_west: float = 4.3800
    lon_east: float = 4.4087
    n_gateways: int = 9
    gateway_layout: str = "grid"            # "grid" | "uniform"
    n_messages: int = 3000
    density: str = "hotspot"                # "uniform" | "hotspot"
    n_hotspots: int = 3
    hotspot_sigma_m: float = 150.0
    hotspot_fraction: float = 0.85
    p0_dbm: float = -40.0                   # RSS at the reference distance
    path_loss_exponent: float = 2.7
    d0_m: float = 10.0
    shadowing_sigma_db: float = 6.0
    detection_threshold_dbm: float = -95.0
    sentinel: float = DEFAULT_SENTINEL

    def __post_init__(self) -> None:
        if not (self.lat_south < self.lat_north and self.lon_west < self.lon_east):
            raise ValueError("area bounds are degenerate")
        if self.n_gateways < 1:
            raise ValueError("need at least one gateway")
        if self.n_messages < 1:
            raise ValueError("need at least one message")
        if self.gateway_layout not in ("grid", "uniform"):
            raise ValueError(f"unknown gateway layout {self.gateway_layout!r}")
        if self.density not in ("uniform", "hotspot"):
            raise ValueError(f"unknown density profile {self.density!r}")
        if self.shadowing_sigma_db < 0:
            raise ValueError("shadowing sigma must be >= 0")
        if self.detection_threshold_dbm <= self.sentinel:
            raise ValueError("detection threshold must lie above the sentinel")
        if self.density == "hotspot":
            if self.n_hotspots < 1 or not 0.0 < self.hotspot_fraction <= 1.0:
                raise ValueError("hotspot mixture needs n_hotspots >= 1 and fraction in (0, 1]")
        if self.d0_m <= 0 or self.path_loss_exponent <= 0:
            raise ValueError("path-loss reference distance and exponent must be positive")

    def to_dict(self) -> dict:
        return asdict(self)


DEFAULT_SCENARIO = ScenarioConfig()


def _gateway_positions(cfg: ScenarioConfig, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    if cfg.gateway_layout == "uniform":
        lats = rng.uniform(cfg.lat_south, cfg.lat_north, cfg.n_gateways)
        lons = rng.uniform(cfg.lon_west, cfg.lon_east, cfg.n_gateways)
        return lats, lons
    # Grid: first n cells of the smallest square lattice, half-cell margin.
    side = math.ceil(math.sqrt(cfg.n_gateways))
    ticks = (np.arange(side) + 0.5) / side
    gl, gt = np.meshgrid(ticks, ticks)
    lats = cfg.lat_south + gt.ravel()[:cfg.n_gateways] * (cfg.lat_north - cfg.lat_south)
    lons = cfg.lon_west + gl.ravel()[:cfg.n_gateways] * (cfg.lon_east - cfg.lon_west)
    return lats, lons


def _truth_locations(cfg: ScenarioConfig, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    n = cfg.n_messages
    if cfg.density == "uniform":
        lats = rng.uniform(cfg.lat_south, cfg.lat_north, n)
        lons = rng.uniform(cfg.lon_west, cfg.lon_east, n)
        return lats, lons
    # Hotspot mixture: equal-weight Gaussian blobs inside an inner margin
    # plus a uniform background over the whole area.
    margin = 0.15
    lat_span = cfg.lat_north - cfg.lat_south
    lon_span = cfg.lon_east - cfg.lon_west
    hot_lats = rng.uniform(cfg.lat_south + margin * lat_span,
                           cfg.lat_north - margin * lat_span, cfg.n_hotspots)
    hot_lons = rng.uniform(cfg.lon_west + margin * lon_span,
                           cfg.lon_east - margin * lon_span, cfg.n_hotspots)
    # Degrees of one sigma, north/south exact, east/west scaled by latitude.
    mid_lat = 0.5 * (cfg.lat_south + cfg.lat_north)
    sigma_lat = cfg.hotspot_sigma_m / 111_195.0
    sigma_lon = sigma_lat / math.cos(math.radians(mid_lat))

    in_hotspot = rng.random(n) < cfg.hotspot_fraction
    component = rng.integers(0, cfg.n_hotspots, n)
    noise_lat = rng.normal(0.0, sigma_lat, n)
    noise_lon = rng.normal(0.0, sigma_lon, n)
    uni_lats = rng.uniform(cfg.lat_south, cfg.lat_north, n)
    uni_lons = rng.uniform(cfg.lon_west, cfg.lon_east, n)

    lats = np.where(in_hotspot, hot_lats[component] + noise_lat, uni_lats)
    lons = np.where(in_hotspot, hot_lons[component] + noise_lon, uni_lons)
    np.clip(lats, cfg.lat_south, cfg.lat_north, out=lats)
    np.clip(lons, cfg.lon_west, cfg.lon_east, out=lons)
    return lats, lons


def rss_noiseless(cfg: ScenarioConfig, distances_m: np.ndarray) -> np.ndarray:
    """Log-distance path-loss RSS without shadowing, in dBm.

    Flat at ``p0_dbm`` up to the reference distance, then strictly
    decreasing with log-distance.
    """
    d = np.maximum(np.asarray(distances_m, dtype=np.float64), cfg.d0_m)
    return cfg.p0_dbm - 10.0 * cfg.path_loss_exponent * np.log10(d / cfg.d0_m)


def generate(cfg: ScenarioConfig, seed: int) -> Dataset:
    """Generate a seeded synthetic dataset for the scenario.

    Draw order is fixed (gateways, hotspot centers, locations, shadowing),
    so identical (cfg, seed) produce identical datasets.
    """
    rng = np.random.default_rng(seed)
    gw_lats, gw_lons = _gateway_positions(cfg, rng)
    lats, lons = _truth_locations(cfg, rng)
    dist = haversine_arrays(lats[:, None], lons[:, None], gw_lats[None, :], gw_lons[None, :])
    rss = rss_noiseless(cfg, dist)
    if cfg.shadowing_sigma_db > 0:
        rss = rss + rng.normal(0.0, cfg.shadowing_sigma_db, rss.shape)
    np.clip(rss, None, 0.0, out=rss)
    rss[rss < cfg.detection_threshold_dbm] = cfg.sentinel
    return Dataset(rss, lats, lons, sentinel=cfg.sentinel)


def perfect_dae_oracle(records: list[EstimateRecord]) -> list[EstimateRecord]:
    """Copy records with the accuracy estimate set to the true position error.

    Upper-bound baseline for selection analyses: its estimate error is 0 and
    its ordering of records is exactly the ordering by true error.
    """
    return [
        EstimateRecord(
            id=r.id,
            truth=r.truth,
            estimate=r.estimate,
            error_pos=r.error_pos,
            dae=r.error_pos,
            error_dae=0.0,
        )
        for r in records
    ]
