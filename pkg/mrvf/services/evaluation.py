"""
Evaluation service
Noise injection, recovery metrics, ROI statistics, Welch t-tests and the
cross-geometry bias experiment.
"""
import itertools
import logging
import math
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from scipy import stats

from config.settings import Config
from mrvf.core.error_handlers import (
    DegenerateSample, DimensionError, EmptyRoi, LengthMismatch, ValidationError, ZeroSignal,
)
from mrvf.core.worker_pool import WorkerPool
from mrvf.models.models import (
    ArmResult, Fingerprint, Lattice3D, Method, NoiseSpec, PARAM_NAMES, ParamMaps, RecoveryReport, RoiStats,
    VascularParams, VoxelGeometry,
)
from mrvf.services import dictionary as dictionary_service
from mrvf.services import reconstruction
from mrvf.services.geometry import generate_matched
from mrvf.services.physics import simulate_fingerprint
from mrvf.utils.utils import derive_seed

logger = logging.getLogger(__name__)

MIN_BIAS_TEST_VOXELS = 50

# random streams of the bias experiment, combined with the master seed
_DICT_TARGETS, _DICT_GEOMETRY, _DICT_SAMPLING, _TEST_TARGETS, _TEST_GEOMETRY, _TEST_SAMPLING, _NOISE = range(1, 8)


# ----------------------------------------------------------------------- noise

def perturb(fp: Fingerprint, spec: NoiseSpec) -> np.ndarray:
    """Fingerprint plus Gaussian noise of std values[0] / snr, before renormalization"""
    values = np.asarray(fp.values, dtype=np.float64)
    if math.isinf(spec.snr):
        return values.copy()
    rng = np.random.default_rng(spec.seed)
    return values + rng.normal(0.0, values[0] / spec.snr, size=values.shape)


def add_noise(fp: Fingerprint, spec: NoiseSpec) -> Fingerprint:
    """
    Add zero-mean Gaussian noise and renormalize to unit L2

    The reference amplitude is the first pre-contrast sample; on a
    normalized fingerprint this equals first echo / snr before
    normalization. snr = inf returns an unchanged copy.
    """
    if math.isinf(spec.snr):
        return Fingerprint(values=np.array(fp.values, copy=True), meta=dict(fp.meta))
    noisy = perturb(fp, spec)
    norm = float(np.linalg.norm(noisy))
    if norm == 0.0:
        raise ZeroSignal('noisy fingerprint has zero norm')
    meta = dict(fp.meta)
    meta.update({'noise.snr': repr(float(spec.snr)), 'noise.seed': str(spec.seed)})
    return Fingerprint(values=noisy / norm, meta=meta)


# --------------------------------------------------------------------- metrics

def _as_table(values: Union[np.ndarray, Sequence[VascularParams]]) -> np.ndarray:
    if isinstance(values, np.ndarray):
        return np.asarray(values, dtype=np.float64).reshape(-1, len(PARAM_NAMES))
    return np.array([v.as_array() for v in values], dtype=np.float64).reshape(-1, len(PARAM_NAMES))


def recovery_metrics(truth, est, method: str = '') -> RecoveryReport:
    """
    Per-parameter MAE, RMSE and signed bias (estimate - truth)

    Raises:
        LengthMismatch: lists of different length
    """
    truth, est = _as_table(truth), _as_table(est)
    if len(truth) != len(est):
        raise LengthMismatch(f'{len(truth)} truths vs {len(est)} estimates')
    if len(truth) == 0:
        raise ValidationError({'truth': 'at least one pair is required'})
    errors = est - truth
    mae = np.mean(np.abs(errors), axis=0)
    rmse = np.sqrt(np.mean(errors * errors, axis=0))
    bias = np.mean(errors, axis=0)
    return RecoveryReport(
        method=method, n=len(truth),
        mae=dict(zip(PARAM_NAMES, mae.tolist())),
        rmse=dict(zip(PARAM_NAMES, rmse.tolist())),
        bias=dict(zip(PARAM_NAMES, bias.tolist())),
    )


def welch_ttest(a, b) -> Tuple[float, float]:
    """
    Two-sided unequal-variance t-test

    Returns:
        (t statistic, p value)

    Raises:
        DegenerateSample: both samples without spread
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if len(a) < 2 or len(b) < 2:
        raise ValidationError({'sample': 'both samples need at least 2 values'})
    if np.ptp(a) == 0 and np.ptp(b) == 0:
        raise DegenerateSample('both samples have zero variance')
    if np.array_equal(a, b):
        return 0.0, 1.0
    result = stats.ttest_ind(a, b, equal_var=False)
    return float(result.statistic), float(result.pvalue)


def crossed_ttests(samples: Mapping[str, Sequence[float]], alpha: float = Config.SIGNIFICANCE,
                   parameter: str = '') -> pd.DataFrame:
    """
    Welch test for every pair of labelled samples, flagged at p < alpha

    Pairs where both samples lack spread get t = p = nan and are not
    significant.
    """
    rows = []
    for first, second in itertools.combinations(samples, 2):
        try:
            t, p = welch_ttest(samples[first], samples[second])
        except DegenerateSample:
            logger.warning(f'{parameter or "sample"}: {first} vs {second} has no spread, test skipped')
            t, p = math.nan, math.nan
        rows.append({'parameter': parameter, 'a': first, 'b': second, 't': t, 'p': p,
                     'significant': bool(p < alpha)})
    return pd.DataFrame(rows, columns=['parameter', 'a', 'b', 't', 'p', 'significant'])


def roi_stats(maps: ParamMaps, roi: Union[Lattice3D, np.ndarray], label: str = 'roi') -> RoiStats:
    """
    Mean and population standard deviation of each map inside a mask

    Raises:
        DimensionError: roi and maps differ in dims
        EmptyRoi: roi selects no voxel
    """
    mask = roi.mask if isinstance(roi, Lattice3D) else np.asarray(roi)
    if tuple(mask.shape) != tuple(maps.dims):
        raise DimensionError(f'roi dims {tuple(mask.shape)} vs map dims {maps.dims}')
    selected = mask.astype(bool)
    n = int(np.count_nonzero(selected))
    if n == 0:
        raise EmptyRoi(f'roi {label} is empty')
    mean, std = {}, {}
    for name in PARAM_NAMES:
        values = np.asarray(getattr(maps, name), dtype=np.float64)[selected]
        mean[name] = float(np.mean(values))
        std[name] = float(np.std(values))
    return RoiStats(label=label, n=n, mean=mean, std=std)


# ------------------------------------------------------------- bias experiment

def _family_dims(family: str, dims: Sequence[int]) -> Tuple[int, int, int]:
    dims = tuple(int(d) for d in dims)
    return (dims[0], dims[1], 1) if family == 'disks2d' else dims


def _simulate_test_voxel(geom: VoxelGeometry, so2: float, t2: float, physics, sequence,
                         snr: float, noise_seed: int) -> np.ndarray:
    fingerprint = simulate_fingerprint(geom, so2, t2, physics, sequence)
    return add_noise(fingerprint, NoiseSpec(snr=snr, seed=noise_seed)).values


def matched_targets(n: int, bvf_range, r_range, seed: int) -> np.ndarray:
    """(BVf, R) coverage targets shared by every family"""
    return dictionary_service.sobol_scrambled(n, [bvf_range, r_range], seed)


def build_family_dictionary(family: str, config, seed: int, pool: Optional[Sequence[VoxelGeometry]] = None,
                            n_jobs: Optional[int] = 1):
    """Dictionary of one geometry family at the shared coverage targets"""
    block = config.eval
    targets = matched_targets(block.dictionary_size, config.geometry.bvf_range, config.geometry.r_range,
                              derive_seed(seed, _DICT_TARGETS))
    geoms, skipped = generate_matched(family, targets, _family_dims(family, block.dims), block.spacing,
                                      derive_seed(seed, _DICT_GEOMETRY), pool=pool)
    if not geoms:
        raise ValidationError({'eval.dictionary_size': f'no feasible {family} geometry at the configured ranges'})
    for index, geom in enumerate(geoms):
        geom.name = geom.name or f'{family}_{index:05d}'
    built = dictionary_service.build_dictionary(
        geoms, config.sampling.so2_range, config.sampling.t2_range, config.physics, config.sequence,
        seed=derive_seed(seed, _DICT_SAMPLING), n_jobs=n_jobs,
    )
    built.meta['geometry.family'] = family
    built.meta['geometry.skipped'] = str(skipped)
    logger.info(f'{family} dictionary: {built.n_entries} entries ({skipped} infeasible targets skipped)')
    return built


def simulate_test_set(family: str, n: int, config, seed: int, snr: float,
                      pool: Optional[Sequence[VoxelGeometry]] = None,
                      n_jobs: Optional[int] = 1) -> Tuple[np.ndarray, np.ndarray, int]:
    """
    Noisy test fingerprints of one family with off-grid (SO2, T2)

    Returns:
        (truth table (m, 4), fingerprints (m, L), skipped targets)
    """
    block = config.eval
    targets = matched_targets(n, config.geometry.bvf_range, config.geometry.r_range,
                              derive_seed(seed, _TEST_TARGETS))
    geoms, skipped = generate_matched(family, targets, _family_dims(family, block.dims), block.spacing,
                                      derive_seed(seed, _TEST_GEOMETRY), pool=pool)
    if not geoms:
        raise ValidationError({'eval.n_test': f'no feasible {family} test geometry at the configured ranges'})
    pairs = dictionary_service.sobol_scrambled(len(geoms), [config.sampling.so2_range, config.sampling.t2_range],
                                               derive_seed(seed, _TEST_SAMPLING))
    noise_seed = derive_seed(seed, _NOISE)
    jobs = [
        (geom, float(so2), float(t2), config.physics, config.sequence, snr, derive_seed(noise_seed, i))
        for i, (geom, (so2, t2)) in enumerate(zip(geoms, pairs))
    ]
    fingerprints = np.vstack(WorkerPool(n_jobs).starmap(_simulate_test_voxel, jobs))
    truth = np.array([[g.bvf, g.mean_radius, so2, t2] for g, (so2, t2) in zip(geoms, pairs)])
    return truth, fingerprints, skipped


def estimate(signals: np.ndarray, method: Method, resource, clips=None) -> np.ndarray:
    """(m, 4) estimates of a signal batch"""
    if Method(method) is Method.DBM:
        return resource.params[reconstruction.match_dbm_batch(signals, resource)]
    return reconstruction.predict_dbl_batch(resource, signals, clips)


def bias_table(arms: Sequence[ArmResult], ranges: Mapping[str, Tuple[float, float]]) -> pd.DataFrame:
    """
    Signed and absolute bias per parameter and arm

    Off-diagonal rows (generator != dictionary) carry diagonal_smaller:
    whether the generator's matched arm has the smaller |bias|.
    """
    diagonal = {arm.generator: arm.bias for arm in arms if arm.generator == arm.dictionary}
    rows = []
    for arm in arms:
        bias = arm.bias
        for name in PARAM_NAMES:
            lo, hi = ranges[name]
            if arm.generator == arm.dictionary or arm.generator not in diagonal:
                smaller = ''
            else:
                smaller = str(abs(diagonal[arm.generator][name]) < abs(bias[name])).lower()
            rows.append({
                'generator': arm.generator, 'dictionary': arm.dictionary, 'method': arm.method,
                'parameter': name, 'n': len(arm.truth), 'bias': bias[name], 'abs_bias': abs(bias[name]),
                'range_fraction': abs(bias[name]) / (hi - lo), 'diagonal_smaller': smaller,
            })
    columns = ['generator', 'dictionary', 'method', 'parameter', 'n', 'bias', 'abs_bias',
               'range_fraction', 'diagonal_smaller']
    return pd.DataFrame(rows, columns=columns)


def parameter_ranges(config) -> Dict[str, Tuple[float, float]]:
    return {
        'bvf': tuple(config.geometry.bvf_range),
        'r': tuple(config.geometry.r_range),
        'so2': tuple(config.sampling.so2_range),
        't2': tuple(config.sampling.t2_range),
    }


def cross_model_bias(n: int, seed: int, config, method: Optional[Method] = None,
                     pools: Optional[Mapping[str, Sequence[VoxelGeometry]]] = None,
                     n_jobs: Optional[int] = 1) -> Tuple[pd.DataFrame, List[ArmResult]]:
    """
    Reconstruct family-A test voxels with dictionaries of families A and B

    Every family's dictionary uses the same (BVf, R) targets and (SO2, T2)
    Sobol stream, so coverage is matched; test voxels use separate
    streams and are noised at config.eval.snr.

    Args:
        n: test voxels per generator family (>= 50)
        seed: master seed
        config: PipelineConfig
        method: estimator, default config.reconstruction.method
        pools: realistic voxel pools for the masks family

    Returns:
        (bias table, per-arm results)
    """
    if int(n) < MIN_BIAS_TEST_VOXELS:
        raise ValidationError({'eval.n_test': f'must be >= {MIN_BIAS_TEST_VOXELS}, got {n}'})
    method = Method(method or config.reconstruction.method)
    pools = pools or {}
    arms_config = list(config.eval.arms)

    resources = {}
    for family in sorted({family for _, family in arms_config}):
        built = build_family_dictionary(family, config, seed, pool=pools.get(family), n_jobs=n_jobs)
        if method is Method.DBL:
            resources[family] = reconstruction.train_dbl(built, k=None, seed=seed)
        else:
            resources[family] = built

    test_sets = {}
    for family in sorted({family for family, _ in arms_config}):
        test_sets[family] = simulate_test_set(family, n, config, seed, config.eval.snr,
                                              pool=pools.get(family), n_jobs=n_jobs)

    arms = []
    for generator, dictionary_family in arms_config:
        truth, signals, skipped = test_sets[generator]
        estimates = estimate(signals, method, resources[dictionary_family], config.reconstruction.clips)
        arms.append(ArmResult(generator=generator, dictionary=dictionary_family, method=method.value,
                              truth=truth, estimates=estimates, skipped=skipped))
        logger.info(f'Arm {generator}:{dictionary_family}: so2 bias {arms[-1].bias["so2"]:+.4f}')

    return bias_table(arms, parameter_ranges(config)), arms
