"""
Unit tests for noise, metrics, statistics and the bias experiment
"""
import math

import numpy as np
import pytest

from config.pipeline import from_values
from mrvf.core.error_handlers import (
    DegenerateSample, DimensionError, EmptyRoi, LengthMismatch, ValidationError,
)
from mrvf.models.models import ArmResult, Fingerprint, Method, NoiseSpec, ParamMaps, VascularParams
from mrvf.services import evaluation

RANGES = {'bvf': (0.01, 0.10), 'r': (2.0, 10.0), 'so2': (0.35, 0.90), 't2': (45.0, 110.0)}


def flat_fingerprint(length=64):
    values = np.full(length, 1.0 / math.sqrt(length))
    return Fingerprint(values=values, meta={'so2': '0.6'})


class TestNoise:
    """Gaussian noise injection"""

    def test_infinite_snr_is_a_copy(self):
        fingerprint = flat_fingerprint()
        noisy = evaluation.add_noise(fingerprint, NoiseSpec(snr=math.inf, seed=3))
        assert np.array_equal(noisy.values, fingerprint.values)
        assert noisy.values is not fingerprint.values
        assert noisy.meta == fingerprint.meta

    def test_deterministic_per_seed(self):
        fingerprint = flat_fingerprint()
        first = evaluation.add_noise(fingerprint, NoiseSpec(snr=20.0, seed=1))
        second = evaluation.add_noise(fingerprint, NoiseSpec(snr=20.0, seed=1))
        other = evaluation.add_noise(fingerprint, NoiseSpec(snr=20.0, seed=2))
        assert np.array_equal(first.values, second.values)
        assert not np.array_equal(first.values, other.values)

    def test_renormalized_and_changed(self):
        fingerprint = flat_fingerprint()
        noisy = evaluation.add_noise(fingerprint, NoiseSpec(snr=50.0, seed=0))
        assert np.linalg.norm(noisy.values) == pytest.approx(1.0, abs=1e-12)
        assert not np.array_equal(noisy.values, fingerprint.values)
        assert noisy.meta['noise.snr'] == '50.0'
        assert noisy.meta['noise.seed'] == '0'
        assert noisy.meta['so2'] == '0.6'

    def test_noise_level(self):
        values = np.full(10000, 0.01)
        perturbed = evaluation.perturb(Fingerprint(values=values), NoiseSpec(snr=10.0, seed=4))
        assert np.std(perturbed - values) == pytest.approx(0.001, rel=0.05)
        assert abs(np.mean(perturbed - values)) < 1e-4

    def test_invalid_snr(self):
        with pytest.raises(ValidationError):
            NoiseSpec(snr=0.0)


class TestRecoveryMetrics:
    """MAE, RMSE and bias"""

    def test_values(self):
        truth = np.array([[0.05, 5.0, 0.6, 80.0], [0.05, 5.0, 0.6, 80.0]])
        est = np.array([[0.06, 5.0, 0.5, 82.0], [0.04, 5.0, 0.8, 84.0]])
        report = evaluation.recovery_metrics(truth, est, method='dbm')
        assert report.n == 2
        assert report.mae['bvf'] == pytest.approx(0.01)
        assert report.bias['bvf'] == pytest.approx(0.0, abs=1e-15)
        assert report.mae['r'] == 0.0
        assert report.mae['so2'] == pytest.approx(0.15)
        assert report.bias['so2'] == pytest.approx(0.05)
        assert report.rmse['so2'] == pytest.approx(math.sqrt((0.01 + 0.04) / 2))
        assert report.bias['t2'] == pytest.approx(3.0)
        assert list(report.to_frame('a:b')['parameter']) == ['bvf', 'r', 'so2', 't2']

    def test_accepts_vascular_params(self):
        truth = [VascularParams(0.05, 5.0, 0.6, 80.0)]
        est = [VascularParams(0.05, 6.0, 0.6, 80.0)]
        assert evaluation.recovery_metrics(truth, est).mae['r'] == pytest.approx(1.0)

    def test_length_mismatch(self):
        with pytest.raises(LengthMismatch):
            evaluation.recovery_metrics(np.zeros((2, 4)), np.zeros((3, 4)))

    def test_empty(self):
        with pytest.raises(ValidationError):
            evaluation.recovery_metrics(np.zeros((0, 4)), np.zeros((0, 4)))


class TestWelch:
    """Unequal-variance t-tests"""

    def test_identical_samples(self):
        assert evaluation.welch_ttest([1.0, 2.0, 3.0], [1.0, 2.0, 3.0]) == (0.0, 1.0)

    def test_known_value(self):
        t, p = evaluation.welch_ttest([1, 2, 3, 4, 5], [2, 3, 4, 5, 6])
        assert t == pytest.approx(-1.0)
        assert p == pytest.approx(0.3466, abs=0.002)

    def test_symmetric(self):
        rng = np.random.default_rng(0)
        a, b = rng.normal(0, 1, 30), rng.normal(0.5, 2, 40)
        t_ab, p_ab = evaluation.welch_ttest(a, b)
        t_ba, p_ba = evaluation.welch_ttest(b, a)
        assert t_ab == pytest.approx(-t_ba)
        assert p_ab == pytest.approx(p_ba)

    def test_degenerate(self):
        with pytest.raises(DegenerateSample):
            evaluation.welch_ttest([1.0, 1.0, 1.0], [2.0, 2.0])

    def test_too_few_values(self):
        with pytest.raises(ValidationError):
            evaluation.welch_ttest([1.0], [1.0, 2.0])

    def test_crossed(self):
        samples = {
            'a': [1.0, 2.0, 3.0, 4.0, 5.0],
            'b': [11.0, 12.0, 13.0, 14.0, 15.0],
            'c': [7.0, 7.0, 7.0],
            'd': [7.0, 7.0],
        }
        table = evaluation.crossed_ttests(samples, alpha=0.05, parameter='so2')
        assert len(table) == 6
        assert list(table.columns) == ['parameter', 'a', 'b', 't', 'p', 'significant']
        ab = table[(table['a'] == 'a') & (table['b'] == 'b')].iloc[0]
        assert bool(ab['significant'])
        cd = table[(table['a'] == 'c') & (table['b'] == 'd')].iloc[0]
        assert math.isnan(cd['p'])
        assert not bool(cd['significant'])


class TestRoiStats:
    """Region-of-interest summaries"""

    @pytest.fixture
    def maps(self):
        values = np.zeros((2, 2, 1, 4))
        values[..., 0] = [[[0.02], [0.04]], [[0.06], [0.08]]]
        values[..., 1] = 5.0
        values[..., 2] = [[[0.5], [0.7]], [[0.9], [0.1]]]
        values[..., 3] = 60.0
        return ParamMaps.from_stacked(values, Method.DBM)

    def test_values(self, maps):
        roi = np.array([[[1], [1]], [[0], [0]]], dtype=np.uint8)
        result = evaluation.roi_stats(maps, roi, label='tumor')
        assert result.n == 2
        assert result.mean['bvf'] == pytest.approx(0.03)
        assert result.std['bvf'] == pytest.approx(0.01)
        assert result.mean['so2'] == pytest.approx(0.6)
        assert result.std['r'] == 0.0
        assert set(result.to_frame()['roi']) == {'tumor'}

    def test_empty_roi(self, maps):
        with pytest.raises(EmptyRoi):
            evaluation.roi_stats(maps, np.zeros((2, 2, 1), dtype=np.uint8))

    def test_dims_mismatch(self, maps):
        with pytest.raises(DimensionError):
            evaluation.roi_stats(maps, np.ones((2, 2, 2), dtype=np.uint8))


class TestBiasTable:
    """Cross-geometry bias rows"""

    def test_columns_and_diagonal_flag(self):
        truth = np.tile([0.05, 5.0, 0.6, 80.0], (3, 1))
        matched = ArmResult('cylinders3d', 'cylinders3d', 'dbm', truth, truth + [0.001, 0.1, 0.01, 1.0])
        crossed = ArmResult('cylinders3d', 'disks2d', 'dbm', truth, truth + [0.002, -0.05, 0.05, -2.0])
        table = evaluation.bias_table([matched, crossed], RANGES)
        assert len(table) == 8
        assert list(table.columns) == ['generator', 'dictionary', 'method', 'parameter', 'n', 'bias',
                                       'abs_bias', 'range_fraction', 'diagonal_smaller']
        rows = table.set_index(['dictionary', 'parameter'])
        assert rows.loc[('cylinders3d', 'so2'), 'diagonal_smaller'] == ''
        assert rows.loc[('disks2d', 'so2'), 'diagonal_smaller'] == 'true'
        assert rows.loc[('disks2d', 'r'), 'diagonal_smaller'] == 'false'
        assert rows.loc[('disks2d', 't2'), 'abs_bias'] == pytest.approx(2.0)
        assert rows.loc[('disks2d', 'so2'), 'range_fraction'] == pytest.approx(0.05 / 0.55)


def eval_config(**overrides):
    values = {
        'geometry.model': 'disks2d',
        'geometry.dims': '32,32,1',
        'geometry.spacing': '2.0',
        'geometry.bvf_range': '0.02,0.08',
        'geometry.r_range': '2.0,4.0',
        'sampling.so2_range': '0.35,0.90',
        'sampling.t2_range': '45,110',
        'sequence.n_echoes': '8',
        'sequence.se_time': '20',
        'reconstruction.method': 'dbm',
        'eval.arms': 'disks2d:disks2d',
        'eval.dictionary_size': '64',
        'eval.snr': '100',
    }
    values.update(overrides)
    return from_values(values)


class TestCrossModelBias:
    """Bias experiment driver"""

    def test_needs_enough_test_voxels(self):
        with pytest.raises(ValidationError):
            evaluation.cross_model_bias(49, 0, eval_config())

    @pytest.mark.slow
    def test_small_run(self):
        config = eval_config()
        table, arms = evaluation.cross_model_bias(50, 0, config)
        assert len(arms) == 1
        arm = arms[0]
        assert arm.label == 'disks2d:disks2d'
        assert len(arm.truth) == len(arm.estimates) == 50 - arm.skipped
        assert len(table) == 4
        assert set(table['parameter']) == {'bvf', 'r', 'so2', 't2'}
        assert np.all(table['range_fraction'] >= 0)

    @pytest.mark.slow
    def test_crossed_geometry_has_larger_so2_bias(self):
        config = eval_config(**{
            'geometry.model': 'cylinders3d',
            'geometry.dims': '48,48,48',
            'geometry.bvf_range': '0.01,0.10',
            'geometry.r_range': '2,8',
            'eval.arms': 'cylinders3d:cylinders3d,cylinders3d:disks2d',
            'eval.dictionary_size': '200',
            'eval.snr': '40',
        })
        table, _ = evaluation.cross_model_bias(100, 0, config, n_jobs=0)
        so2 = table[table['parameter'] == 'so2'].set_index('dictionary')
        assert so2.loc['disks2d', 'abs_bias'] > so2.loc['cylinders3d', 'abs_bias']
        assert so2.loc['disks2d', 'diagonal_smaller'] == 'true'

    @pytest.mark.slow
    def test_identical_families_are_unbiased(self):
        config = eval_config(**{
            'geometry.model': 'cylinders3d',
            'geometry.dims': '48,48,48',
            'geometry.bvf_range': '0.01,0.10',
            'geometry.r_range': '2,8',
            'eval.arms': 'cylinders3d:cylinders3d',
            'eval.dictionary_size': '400',
            'eval.snr': 'inf',
        })
        table, arms = evaluation.cross_model_bias(200, 0, config, n_jobs=0)
        assert arms[0].generator == arms[0].dictionary == 'cylinders3d'
        assert list(table['parameter']) == ['bvf', 'r', 'so2', 't2']
        assert np.all(table['range_fraction'] < 0.01)
