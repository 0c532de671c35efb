import math

import numpy as np
import pytest

from daeloc import geo
from daeloc.data import Dataset, split
from daeloc.learn import ForestParams, fit_extratrees
from daeloc.pipeline import (EstimateRecord, build_dae_targets, check_partition,
                             dae_threshold, evaluate, position_error,
                             read_estimates_csv, repartition_sweep, selection_curve,
                             train_dae_model, train_position_model,
                             write_estimates_csv)
from daeloc.synth import ScenarioConfig, generate


def make_records(daes, errors, ids=None):
    ids = ids if ids is not None else range(len(daes))
    origin = geo.LatLon(51.2, 4.4)
    return [
        EstimateRecord(id=int(i), truth=origin, estimate=origin,
                       error_pos=float(e), dae=float(d), error_dae=abs(float(e) - float(d)))
        for i, d, e in zip(ids, daes, errors)
    ]


@pytest.fixture(scope="module")
def small_pipeline():
    """A trained pipeline on a small scenario, shared within this module."""
    cfg = ScenarioConfig(n_messages=600)
    ds = generate(cfg, seed=5)
    parts = split(ds, seed=6).with_repartition(0.5, seed=7)
    params = ForestParams(n_trees=25)
    pos_model = train_position_model(ds, parts.train_pos, params, seed=8)
    targets = build_dae_targets(pos_model, ds, parts.train_dae, parts.train_pos)
    dae_model = train_dae_model(ds, parts.train_dae, targets, params, seed=9)
    return ds, parts, pos_model, dae_model


class TestPositionError:
    def test_zero_for_identical(self):
        p = geo.LatLon(51.2, 4.4)
        assert position_error(p, p) == 0.0

    def test_equatorial_antipodes(self):
        d = position_error(geo.LatLon(0, 0), geo.LatLon(0, 180))
        assert d == pytest.approx(math.pi * geo.EARTH_RADIUS_M, rel=1e-12)

    def test_equals_haversine(self):
        a, b = geo.LatLon(51.2194, 4.4025), geo.LatLon(51.2300, 4.4100)
        assert position_error(a, b) == geo.haversine(a, b)


class TestEstimateRecord:
    def test_arithmetic_identity(self):
        r = make_records([120.0], [150.0])[0]
        assert r.error_dae == 30.0

    def test_rejects_broken_identity(self):
        origin = geo.LatLon(51.2, 4.4)
        with pytest.raises(ValueError):
            EstimateRecord(id=0, truth=origin, estimate=origin,
                           error_pos=150.0, dae=120.0, error_dae=29.0)

    def test_rejects_negative_fields(self):
        origin = geo.LatLon(51.2, 4.4)
        with pytest.raises(ValueError):
            EstimateRecord(id=0, truth=origin, estimate=origin,
                           error_pos=-1.0, dae=0.0, error_dae=1.0)


class TestDaeTargets:
    def test_single_row_position_model(self):
        rng = np.random.default_rng(0)
        rss = rng.uniform(-120, -60, (10, 3))
        lats = rng.uniform(51.15, 51.25, 10)
        lons = rng.uniform(4.35, 4.45, 10)
        ds = Dataset(rss, lats, lons)
        pos_model = train_position_model(ds, np.array([0]), ForestParams(n_trees=3), seed=1)
        targets = build_dae_targets(pos_model, ds, np.arange(1, 10), np.array([0]))
        anchor = ds.truth(0)
        expect = [geo.haversine(ds.truth(i), anchor) for i in range(1, 10)]
        assert np.allclose(targets, expect, rtol=1e-12)

    def test_coincident_truth_gives_zero_target(self):
        rss = np.array([[-80.0], [-90.0]])
        ds = Dataset(rss, np.array([51.2, 51.2]), np.array([4.4, 4.4]))
        pos_model = train_position_model(ds, np.array([0]), ForestParams(n_trees=2), seed=0)
        targets = build_dae_targets(pos_model, ds, np.array([1]), np.array([0]))
        assert targets[0] == 0.0

    def test_overlap_is_hard_error(self, small_pipeline):
        ds, parts, pos_model, _ = small_pipeline
        mixed = np.concatenate([parts.train_dae[:5], parts.train_pos[:1]])
        with pytest.raises(ValueError, match="disjoint"):
            build_dae_targets(pos_model, ds, mixed, parts.train_pos)

    def test_targets_match_independent_recomputation(self, small_pipeline):
        ds, parts, pos_model, _ = small_pipeline
        idx = parts.train_dae[:100]
        targets = build_dae_targets(pos_model, ds, idx, parts.train_pos)
        # Element-wise recomputation through the scalar path.
        est = pos_model.predict(ds.rss[idx])
        for j, i in enumerate(idx):
            d = geo.haversine(ds.truth(int(i)), geo.LatLon(est[j, 0], est[j, 1]))
            assert targets[j] == d


class TestEvaluate:
    def test_records_and_summary(self, small_pipeline):
        ds, parts, pos_model, dae_model = small_pipeline
        records, summary = evaluate(pos_model, dae_model, ds, parts.validation)
        assert len(records) == len(parts.validation)
        errors = np.array([r.error_pos for r in records])
        assert summary.pos_mean == pytest.approx(errors.mean())
        assert summary.pos_median == pytest.approx(np.median(errors))
        for r in records:
            assert r.error_dae == abs(r.error_pos - r.dae)
            assert r.dae >= 0.0

    def test_negative_predictions_clamped(self):
        rng = np.random.default_rng(3)
        rss = rng.uniform(-120, -60, (30, 2))
        ds = Dataset(rss, rng.uniform(51.15, 51.25, 30), rng.uniform(4.35, 4.45, 30))
        pos_model = train_position_model(ds, np.arange(10), ForestParams(n_trees=3), seed=4)
        # An accuracy model fitted on negative targets must still emit
        # non-negative estimates after clamping.
        neg_model = fit_extratrees(ds.rss[10:20], np.full(10, -25.0),
                                   ForestParams(n_trees=3), seed=5)
        records, _ = evaluate(pos_model, neg_model, ds, np.arange(20, 30))
        assert all(r.dae == 0.0 for r in records)

    def test_empty_eval_set_rejected(self, small_pipeline):
        ds, parts, pos_model, dae_model = small_pipeline
        with pytest.raises(ValueError):
            evaluate(pos_model, dae_model, ds, np.array([], dtype=int))

    def test_estimates_csv_roundtrip(self, small_pipeline, tmp_path):
        ds, parts, pos_model, dae_model = small_pipeline
        records, _ = evaluate(pos_model, dae_model, ds, parts.validation[:40])
        path = tmp_path / "estimates.csv"
        write_estimates_csv(records, path)
        back = read_estimates_csv(path)
        assert back == records


class TestSelectionCurve:
    def test_full_portion_reproduces_full_stats(self):
        rng = np.random.default_rng(5)
        records = make_records(rng.uniform(0, 300, 101), rng.uniform(0, 500, 101))
        curve = selection_curve(records)
        errors = np.array([r.error_pos for r in records])
        last = curve.at(1.0)
        assert last.mean_error == errors.mean()
        assert last.median_error == np.median(errors)

    def test_perfect_oracle_equals_sorted_prefix_stats(self):
        rng = np.random.default_rng(6)
        errors = rng.uniform(0, 500, 97)
        records = make_records(errors, errors)  # dae == error_pos
        curve = selection_curve(records)
        ordered = np.sort(errors)
        for point in curve.points:
            k = math.ceil(point.portion * len(errors))
            assert point.mean_error == np.mean(ordered[:k])
            assert point.median_error == np.median(ordered[:k])
            assert point.dae_threshold == ordered[k - 1]

    def test_prefix_consistency_general_ordering(self):
        # Each curve point must equal the mean of exactly the records whose
        # (dae, id) order puts them in the prefix, recomputed independently.
        rng = np.random.default_rng(8)
        daes = rng.uniform(0, 300, 83)
        errors = rng.uniform(0, 500, 83)
        records = make_records(daes, errors)
        curve = selection_curve(records)
        ranked = sorted(records, key=lambda r: (r.dae, r.id))
        for point in curve.points:
            k = math.ceil(point.portion * len(records))
            included = [r.error_pos for r in ranked[:k]]
            assert point.mean_error == np.mean(included)
            assert point.dae_threshold == ranked[k - 1].dae

    def test_ties_break_by_record_id(self):
        records = make_records([10.0, 10.0, 5.0], [100.0, 200.0, 300.0], ids=[2, 1, 0])
        curve = selection_curve(records, portions=(1 / 3, 2 / 3, 1.0))
        # Sorted order: id0 (dae 5), then ids 1 and 2 share dae 10.
        assert curve.points[0].mean_error == 300.0
        assert curve.points[1].mean_error == pytest.approx((300.0 + 200.0) / 2)

    def test_even_prefix_median_is_midpoint(self):
        records = make_records([1.0, 2.0, 3.0, 4.0], [10.0, 20.0, 40.0, 80.0])
        curve = selection_curve(records, portions=(0.5, 1.0))
        assert curve.points[0].median_error == 15.0
        assert curve.points[1].median_error == 30.0

    def test_validates_input(self):
        with pytest.raises(ValueError):
            selection_curve([])
        records = make_records([1.0], [1.0])
        with pytest.raises(ValueError):
            selection_curve(records, portions=(0.0, 0.5))
        with pytest.raises(ValueError):
            selection_curve(records, portions=(0.5, 0.5))


class TestDaeThreshold:
    def test_hard_value_passthrough(self):
        assert dae_threshold([], hard=100.0) == 100.0

    def test_percentile_100_is_max(self):
        records = make_records([10.0, 20.0, 30.0], [0.0, 0.0, 0.0])
        assert dae_threshold(records, percentile=100.0) == 30.0

    def test_percentile_matches_sort_oracle(self):
        rng = np.random.default_rng(7)
        daes = rng.uniform(0, 400, 1000)
        records = make_records(daes, daes)
        for p in (10.0, 50.0, 90.0):
            got = dae_threshold(records, percentile=p)
            # Independent linear-interpolation oracle over the sorted values.
            ordered = np.sort(daes)
            rank = (p / 100.0) * (len(ordered) - 1)
            lo = math.floor(rank)
            frac = rank - lo
            expect = ordered[lo] * (1 - frac) + ordered[min(lo + 1, len(ordered) - 1)] * frac
            assert got == pytest.approx(expect, rel=1e-12)

    def test_validates_arguments(self):
        records = make_records([1.0], [1.0])
        with pytest.raises(ValueError):
            dae_threshold(records)
        with pytest.raises(ValueError):
            dae_threshold(records, percentile=50.0, hard=10.0)
        with pytest.raises(ValueError):
            dae_threshold([], percentile=50.0)
        with pytest.raises(ValueError):
            dae_threshold(records, percentile=0.0)


class TestSweep:
    def test_sweep_trend_on_synthetic(self):
        cfg = ScenarioConfig(n_messages=500)
        ds = generate(cfg, seed=11)
        parts = split(ds, seed=12)
        rows = repartition_sweep(ds, parts.train_pool, parts.validation,
                                 params=ForestParams(n_trees=15), seed=13)
        assert [r.fraction_dae for r in rows] == [round(0.1 * i, 1) for i in range(1, 10)]
        # More data for the accuracy task means less for positioning: the
        # position error should rise with fraction_dae, modulo noise.
        pos_means = [r.pos_mean for r in rows]
        assert pos_means[-1] > pos_means[0]
        drops = [pos_means[i] - pos_means[i + 1] for i in range(len(pos_means) - 1)]
        assert max(drops) < 0.25 * np.mean(pos_means)

    def test_sweep_is_deterministic(self):
        cfg = ScenarioConfig(n_messages=300)
        ds = generate(cfg, seed=14)
        parts = split(ds, seed=15)
        kwargs = dict(fractions=(0.3, 0.7), params=ForestParams(n_trees=5), seed=16)
        a = repartition_sweep(ds, parts.train_pool, parts.validation, **kwargs)
        b = repartition_sweep(ds, parts.train_pool, parts.validation, **kwargs)
        assert a == b

    def test_validates_grid(self, small_pipeline):
        ds, parts, _, _ = small_pipeline
        with pytest.raises(ValueError):
            repartition_sweep(ds, parts.train_pool, parts.validation, fractions=())
        with pytest.raises(ValueError):
            repartition_sweep(ds, parts.train_pool, parts.validation, fractions=(0.0, 0.5))


class TestPartitionGuard:
    def test_valid_partition_passes(self, small_pipeline):
        ds, parts, _, _ = small_pipeline
        check_partition(parts, ds.n_records)

    def test_incomplete_partition_rejected(self, small_pipeline):
        ds, parts, _, _ = small_pipeline
        broken = type(parts)(train_pos=parts.train_pos[:-1], train_dae=parts.train_dae,
                             validation=parts.validation, test=parts.test, seed=parts.seed)
        with pytest.raises(ValueError):
            check_partition(broken, ds.n_records)
