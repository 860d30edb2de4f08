"""
Dictionary service
Quasi-random (SO2, T2) sampling, batched fingerprint simulation over a
geometry collection, persistence and coverage reporting.
"""
import logging
import time
import warnings
from collections import Counter
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.stats import qmc

from mrvf.core import storage
from mrvf.core.error_handlers import EntryError, LengthMismatch, ValidationError
from mrvf.core.logging_config import get_sim_logger, log_simulation
from mrvf.core.worker_pool import WorkerPool
from mrvf.models.models import (
    CoverageReport, Dictionary, PARAM_NAMES, PhysicsParams, SequenceSpec, VoxelGeometry,
)
from mrvf.services.physics import simulate_fingerprint
from mrvf.utils.utils import format_range

logger = logging.getLogger(__name__)

FORMAT_VERSION = str(storage.MRVD_VERSION)


def sobol_scrambled(n: int, ranges: Sequence[Tuple[float, float]], seed: int,
                    start_index: int = 0) -> np.ndarray:
    """
    Scrambled Sobol points mapped affinely into per-dimension ranges

    Args:
        n: number of points
        ranges: (lo, hi) per dimension
        seed: scrambling seed
        start_index: skip this many points of the sequence first, so that
            split draws concatenate to the single draw

    Returns:
        (n, d) array
    """
    if int(n) < 1:
        raise ValidationError({'n': 'must be >= 1'})
    lo = np.array([r[0] for r in ranges], dtype=np.float64)
    hi = np.array([r[1] for r in ranges], dtype=np.float64)
    if np.any(lo >= hi):
        raise ValidationError({'ranges': 'lo must be < hi in every dimension'})

    sampler = qmc.Sobol(d=len(ranges), scramble=True, seed=seed)
    if start_index:
        sampler.fast_forward(int(start_index))
    with warnings.catch_warnings():
        # balance-property warning for n not a power of two
        warnings.simplefilter('ignore', UserWarning)
        unit = sampler.random(int(n))
    return qmc.scale(unit, lo, hi)


def _simulate_entry(index: int, geom: VoxelGeometry, so2: float, t2: float, p: PhysicsParams,
                    seq: SequenceSpec, workers: Optional[int]) -> Tuple[np.ndarray, float]:
    started = time.perf_counter()
    try:
        fingerprint = simulate_fingerprint(geom, so2, t2, p, seq, workers=workers)
    except Exception as e:
        raise EntryError(index, e) from e
    return fingerprint.values.astype(np.float32), time.perf_counter() - started


def dictionary_meta(geoms: Sequence[VoxelGeometry], so2_range, t2_range, p: PhysicsParams,
                    seq: SequenceSpec, seed: int, start_index: int = 0) -> Dict[str, str]:
    """Metadata that, with the geometries, fully determines a build"""
    provenance = Counter(g.provenance.value for g in geoms)
    meta = {
        'format.version': FORMAT_VERSION,
        'sampling.so2_range': format_range(so2_range),
        'sampling.t2_range': format_range(t2_range),
        'sampling.seed': str(int(seed)),
        'sampling.start_index': str(int(start_index)),
        'geometry.provenance': ','.join(f'{name}:{count}' for name, count in sorted(provenance.items())),
        'geometry.refs': ','.join(g.name for g in geoms),
    }
    meta.update(p.to_meta())
    meta.update(seq.to_meta())
    return meta


def build_dictionary(geoms: Sequence[VoxelGeometry], so2_range, t2_range, p: PhysicsParams,
                     seq: SequenceSpec, seed: int, start_index: int = 0, n_jobs: Optional[int] = 1,
                     fft_workers: Optional[int] = None,
                     extra_meta: Optional[Dict[str, str]] = None) -> Dictionary:
    """
    Simulate one fingerprint per geometry

    Entry i (global index start_index + i) gets the i-th scrambled Sobol
    (so2, t2) pair and parameters (geom.bvf, geom.mean_radius, so2, t2).

    Raises:
        EntryError: first failing entry, with its global index
    """
    if not geoms:
        raise ValidationError({'geometries': 'at least one geometry is required'})

    pairs = sobol_scrambled(len(geoms), [so2_range, t2_range], seed, start_index=start_index)
    jobs = [
        (start_index + i, geom, float(so2), float(t2), p, seq, fft_workers)
        for i, (geom, (so2, t2)) in enumerate(zip(geoms, pairs))
    ]

    pool = WorkerPool(n_jobs)
    logger.info(f'Building {len(jobs)} entries with {pool.n_jobs} workers')
    started = time.perf_counter()
    results = pool.starmap(_simulate_entry, jobs)

    sim_logger = get_sim_logger()
    for (index, _, so2, t2, *_), (_, seconds) in zip(jobs, results):
        log_simulation(sim_logger, index, so2, t2, seconds)

    params = np.array([[g.bvf, g.mean_radius, so2, t2] for g, (so2, t2) in zip(geoms, pairs)])
    signals = np.vstack([values for values, _ in results])
    meta = dictionary_meta(geoms, so2_range, t2_range, p, seq, seed, start_index)
    meta.update(extra_meta or {})
    logger.info(f'Built {len(jobs)} entries in {time.perf_counter() - started:.1f} s')
    return Dictionary(params=params, signals=signals, meta=meta)


def merge_dictionaries(parts: Sequence[Dictionary]) -> Dictionary:
    """Concatenate split builds in order; meta of the first part, start index 0"""
    if not parts:
        raise ValidationError({'parts': 'nothing to merge'})
    lengths = {part.signal_length for part in parts}
    if len(lengths) != 1:
        raise LengthMismatch(f'signal lengths differ across parts: {sorted(lengths)}')
    provenance = Counter()
    for part in parts:
        for item in filter(None, part.meta.get('geometry.provenance', '').split(',')):
            name, count = item.rsplit(':', 1)
            provenance[name] += int(count)
    meta = dict(parts[0].meta)
    meta['sampling.start_index'] = '0'
    meta['geometry.refs'] = ','.join(part.meta.get('geometry.refs', '') for part in parts)
    meta['geometry.provenance'] = ','.join(f'{name}:{count}' for name, count in sorted(provenance.items()))
    return Dictionary(
        params=np.vstack([part.params for part in parts]),
        signals=np.vstack([part.signals for part in parts]),
        meta=meta,
    )


def physics_from_meta(meta: Dict[str, str]) -> PhysicsParams:
    return PhysicsParams.from_meta(meta)


def sequence_from_meta(meta: Dict[str, str]) -> SequenceSpec:
    return SequenceSpec.from_meta(meta)


def rebuild_from_meta(meta: Dict[str, str], geoms: Sequence[VoxelGeometry],
                      n_jobs: Optional[int] = 1) -> Dictionary:
    """Regenerate a dictionary from its stored meta and geometries"""
    so2_range = tuple(float(v) for v in meta['sampling.so2_range'].split(','))
    t2_range = tuple(float(v) for v in meta['sampling.t2_range'].split(','))
    extra = {key: value for key, value in meta.items() if key == 'config_hash'}
    return build_dictionary(
        geoms, so2_range, t2_range, physics_from_meta(meta), sequence_from_meta(meta),
        seed=int(meta['sampling.seed']), start_index=int(meta.get('sampling.start_index', 0)),
        n_jobs=n_jobs, extra_meta=extra,
    )


def coverage_report(dictionary: Dictionary, n_bins: int = 11) -> CoverageReport:
    """Per-parameter histograms plus (bvf, r) and (so2, t2) occupancy grids"""
    if dictionary.n_entries == 0:
        raise ValidationError({'dictionary': 'is empty'})
    histograms = {}
    for name in PARAM_NAMES:
        counts, edges = np.histogram(dictionary.column(name), bins=n_bins)
        histograms[name] = (counts, edges)
    joint = {}
    for first, second in (('bvf', 'r'), ('so2', 't2')):
        counts, x_edges, y_edges = np.histogram2d(
            dictionary.column(first), dictionary.column(second), bins=n_bins
        )
        joint[f'{first}_{second}'] = (counts.astype(np.int64), x_edges, y_edges)
    return CoverageReport(n_entries=dictionary.n_entries, histograms=histograms, joint=joint)


def save_dictionary(dictionary: Dictionary, path) -> None:
    dictionary.meta.setdefault('format.version', FORMAT_VERSION)
    storage.write_mrvd(dictionary, path)


def load_dictionary(path) -> Dictionary:
    return storage.read_mrvd(path)


def geometry_refs(dictionary: Dictionary) -> List[str]:
    refs = dictionary.meta.get('geometry.refs', '')
    return refs.split(',') if refs else []
