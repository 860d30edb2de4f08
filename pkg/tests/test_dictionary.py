"""
Unit tests for the dictionary service
"""
import numpy as np
import pytest

from mrvf.core.error_handlers import EntryError, LengthMismatch, StepTooCoarse, ValidationError
from mrvf.models.models import Dictionary, PhysicsParams
from mrvf.services import dictionary

SO2_RANGE = (0.35, 0.90)
T2_RANGE = (45.0, 110.0)


def star_discrepancy(points, grid=64):
    """Brute-force estimate over anchored boxes [0, a) x [0, b) on a grid"""
    corners = np.arange(1, grid + 1) / grid
    inside_x = points[:, 0][None, :] < corners[:, None]
    inside_y = points[:, 1][None, :] < corners[:, None]
    counts = inside_x.astype(np.int64) @ inside_y.T.astype(np.int64)
    return float(np.max(np.abs(counts / len(points) - np.outer(corners, corners))))


class TestSobol:
    """Scrambled Sobol sampling"""

    def test_within_ranges(self):
        points = dictionary.sobol_scrambled(500, [SO2_RANGE, T2_RANGE], seed=1)
        assert points.shape == (500, 2)
        assert np.all((points[:, 0] >= 0.35) & (points[:, 0] <= 0.90))
        assert np.all((points[:, 1] >= 45.0) & (points[:, 1] <= 110.0))

    def test_deterministic(self):
        first = dictionary.sobol_scrambled(64, [SO2_RANGE, T2_RANGE], seed=3)
        second = dictionary.sobol_scrambled(64, [SO2_RANGE, T2_RANGE], seed=3)
        other = dictionary.sobol_scrambled(64, [SO2_RANGE, T2_RANGE], seed=4)
        assert np.array_equal(first, second)
        assert not np.array_equal(first, other)

    def test_distinct_points(self):
        points = dictionary.sobol_scrambled(4096, [(0.0, 1.0), (0.0, 1.0)], seed=0)
        assert len(np.unique(points, axis=0)) == 4096

    def test_split_draws_concatenate(self):
        whole = dictionary.sobol_scrambled(10, [SO2_RANGE, T2_RANGE], seed=5)
        head = dictionary.sobol_scrambled(4, [SO2_RANGE, T2_RANGE], seed=5)
        tail = dictionary.sobol_scrambled(6, [SO2_RANGE, T2_RANGE], seed=5, start_index=4)
        assert np.array_equal(np.vstack([head, tail]), whole)

    def test_lower_discrepancy_than_random(self):
        sobol = dictionary.sobol_scrambled(1024, [(0.0, 1.0), (0.0, 1.0)], seed=0)
        random = [star_discrepancy(np.random.default_rng(seed).random((1024, 2))) for seed in range(20)]
        assert star_discrepancy(sobol) < np.median(random)

    def test_invalid_arguments(self):
        with pytest.raises(ValidationError):
            dictionary.sobol_scrambled(0, [SO2_RANGE], seed=0)
        with pytest.raises(ValidationError):
            dictionary.sobol_scrambled(4, [(0.9, 0.35)], seed=0)


class TestBuild:
    """Fingerprint dictionaries over geometry collections"""

    def test_one_entry_per_geometry(self, small_geometries, physics_params, short_sequence):
        built = dictionary.build_dictionary(small_geometries, SO2_RANGE, T2_RANGE, physics_params,
                                            short_sequence, seed=11)
        pairs = dictionary.sobol_scrambled(4, [SO2_RANGE, T2_RANGE], seed=11)
        assert built.n_entries == 4
        assert built.signal_length == 16
        assert np.array_equal(built.column('bvf'), [g.bvf for g in small_geometries])
        assert np.array_equal(built.column('r'), [g.mean_radius for g in small_geometries])
        assert np.array_equal(built.params[:, 2:], pairs)
        assert np.allclose(np.linalg.norm(built.signals.astype(np.float64), axis=1), 1.0, atol=1e-6)

    def test_meta(self, small_geometries, physics_params, short_sequence):
        built = dictionary.build_dictionary(small_geometries, SO2_RANGE, T2_RANGE, physics_params,
                                            short_sequence, seed=11, extra_meta={'config_hash': 'abc'})
        assert built.meta['sampling.seed'] == '11'
        assert built.meta['sampling.start_index'] == '0'
        assert built.meta['sampling.so2_range'] == '0.35,0.9'
        assert built.meta['geometry.provenance'] == 'Cylinders3D:4'
        assert built.meta['config_hash'] == 'abc'
        assert built.meta['sequence.n_echoes'] == '8'
        assert dictionary.geometry_refs(built) == ['g0', 'g1', 'g2', 'g3']

    def test_split_build_equals_single_build(self, small_geometries, physics_params, short_sequence):
        whole = dictionary.build_dictionary(small_geometries, SO2_RANGE, T2_RANGE, physics_params,
                                            short_sequence, seed=2)
        head = dictionary.build_dictionary(small_geometries[:2], SO2_RANGE, T2_RANGE, physics_params,
                                           short_sequence, seed=2)
        tail = dictionary.build_dictionary(small_geometries[2:], SO2_RANGE, T2_RANGE, physics_params,
                                           short_sequence, seed=2, start_index=2)
        merged = dictionary.merge_dictionaries([head, tail])
        assert np.array_equal(merged.params, whole.params)
        assert np.array_equal(merged.signals, whole.signals)
        assert merged.meta == whole.meta

    def test_rebuild_from_meta(self, small_geometries, physics_params, short_sequence):
        built = dictionary.build_dictionary(small_geometries, SO2_RANGE, T2_RANGE, physics_params,
                                            short_sequence, seed=8)
        rebuilt = dictionary.rebuild_from_meta(built.meta, small_geometries)
        assert np.array_equal(rebuilt.params, built.params)
        assert np.max(np.abs(rebuilt.signals - built.signals)) <= 1e-9

    def test_failing_entry_reports_global_index(self, small_geometries, short_sequence):
        coarse = PhysicsParams(dt=1.0, dchi_deoxy=1e-4)
        with pytest.raises(EntryError) as excinfo:
            dictionary.build_dictionary(small_geometries[:1], SO2_RANGE, T2_RANGE, coarse,
                                        short_sequence, seed=0, start_index=5)
        assert excinfo.value.index == 5
        assert isinstance(excinfo.value.error, StepTooCoarse)

    def test_no_geometry(self, physics_params, short_sequence):
        with pytest.raises(ValidationError):
            dictionary.build_dictionary([], SO2_RANGE, T2_RANGE, physics_params, short_sequence, seed=0)

    def test_merge_length_mismatch(self):
        first = Dictionary(params=np.zeros((1, 4)), signals=np.ones((1, 4)))
        second = Dictionary(params=np.zeros((1, 4)), signals=np.ones((1, 6)))
        with pytest.raises(LengthMismatch):
            dictionary.merge_dictionaries([first, second])


class TestCoverage:
    """Parameter-space histograms"""

    def test_counts_sum_to_entries(self):
        params = np.column_stack([
            np.full(1024, 0.05), np.full(1024, 5.0),
            dictionary.sobol_scrambled(1024, [SO2_RANGE, T2_RANGE], seed=0),
        ])
        built = Dictionary(params=params, signals=np.ones((1024, 2)))
        report = dictionary.coverage_report(built)
        for counts, edges in report.histograms.values():
            assert counts.sum() == 1024
            assert len(edges) == 12
        assert np.all(report.histograms['so2'][0] > 0)
        assert report.joint['so2_t2'][0].sum() == 1024
        assert len(report.to_frame()) == 44

    def test_single_entry(self):
        built = Dictionary(params=np.array([[0.05, 5.0, 0.6, 80.0]]), signals=np.ones((1, 2)))
        report = dictionary.coverage_report(built)
        for counts, _ in report.histograms.values():
            assert np.count_nonzero(counts) == 1


class TestPersistence:
    """save/load through MRVD"""

    def test_round_trip(self, surrogate_dictionary, tmp_path):
        path = tmp_path / 'dict.mrvd'
        dictionary.save_dictionary(surrogate_dictionary, path)
        loaded = dictionary.load_dictionary(path)
        assert np.array_equal(loaded.params, surrogate_dictionary.params)
        assert np.array_equal(loaded.signals, surrogate_dictionary.signals)
        assert loaded.meta['format.version'] == dictionary.FORMAT_VERSION
        assert loaded.meta['sampling.seed'] == '7'
