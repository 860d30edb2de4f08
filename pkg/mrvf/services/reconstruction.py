"""
Reconstruction service
Dictionary-based matching (DBM), training and inversion of the locally
affine mixture regression (DBL), and voxelwise parameter maps.
"""
import logging
import os
from typing import List, Optional, Tuple, Union

import numpy as np
from scipy.special import logsumexp
from scipy.stats import multivariate_normal
from sklearn.cluster import KMeans

from config.settings import Config
from mrvf.core import storage
from mrvf.core.error_handlers import (
    ConvergenceError, DegenerateComponent, DimensionError, FormatError, LengthMismatch, ValidationError,
    VoxelError, ZeroSignal,
)
from mrvf.core.logging_config import get_sim_logger, log_training_iteration
from mrvf.core.worker_pool import WorkerPool
from mrvf.models.models import (
    ClipRules, Dictionary, Fingerprint, Method, PARAM_NAMES, ParamMaps, RegressionModel, VascularParams,
)

logger = logging.getLogger(__name__)

# inner products closer than this to the maximum count as ties
TIE_ATOL = 1e-12
# max score-matrix elements per DBM chunk
_CHUNK_ELEMENTS = 2 ** 24
_LOG_2PI = np.log(2.0 * np.pi)


def default_component_count(n_entries: int) -> int:
    """min(50, max(1, n // 500))"""
    return min(Config.MAX_COMPONENTS, max(1, int(n_entries) // Config.ENTRIES_PER_COMPONENT))


# ------------------------------------------------------------------------- DBM

def _normalize_rows(signals: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(signals, axis=1, keepdims=True)
    if np.any(norms == 0):
        raise ZeroSignal('fingerprint with zero norm')
    return signals / norms


def match_dbm_batch(signals: np.ndarray, dictionary: Dictionary) -> np.ndarray:
    """
    Best-matching entry index per row (maximal inner product, lowest index on ties)

    Args:
        signals: (m, L) fingerprints, any positive scale
        dictionary: dictionary whose rows are compared after float64 renormalization

    Returns:
        (m,) int64 entry indices
    """
    signals = np.atleast_2d(np.asarray(signals, dtype=np.float64))
    if signals.shape[1] != dictionary.signal_length:
        raise LengthMismatch(
            f'fingerprint length {signals.shape[1]} vs dictionary signal length {dictionary.signal_length}'
        )
    atoms = _normalize_rows(dictionary.signals.astype(np.float64))
    normalized = _normalize_rows(signals)

    chunk = max(1, _CHUNK_ELEMENTS // max(1, dictionary.n_entries))
    indices = np.empty(len(normalized), dtype=np.int64)
    for start in range(0, len(normalized), chunk):
        scores = normalized[start:start + chunk] @ atoms.T
        best = scores.max(axis=1, keepdims=True)
        indices[start:start + chunk] = np.argmax(scores >= best - TIE_ATOL, axis=1)
    return indices


def match_dbm(fp: Union[Fingerprint, np.ndarray], dictionary: Dictionary) -> VascularParams:
    """Parameters of the dictionary entry best matching one fingerprint"""
    values = fp.values if isinstance(fp, Fingerprint) else np.asarray(fp)
    if values.ndim != 1:
        raise LengthMismatch(f'expected one fingerprint, got shape {values.shape}')
    index = match_dbm_batch(values[None, :], dictionary)[0]
    return dictionary.entry(int(index))


# ------------------------------------------------------------------------- DBL

def _clamp_covariance(cov: np.ndarray, floor: float) -> np.ndarray:
    cov = 0.5 * (cov + cov.T)
    eigenvalues, eigenvectors = np.linalg.eigh(cov)
    if eigenvalues.min() >= floor:
        return cov
    eigenvalues = np.maximum(eigenvalues, floor)
    return (eigenvectors * eigenvalues) @ eigenvectors.T


def _initial_responsibilities(x: np.ndarray, k: int, seed: int) -> np.ndarray:
    """Hard k-means assignment on z-scored parameters"""
    n = x.shape[0]
    if k == 1:
        return np.ones((n, 1))
    scale = x.std(axis=0)
    scale[scale == 0] = 1.0
    labels = KMeans(n_clusters=k, random_state=seed, n_init=10).fit_predict((x - x.mean(axis=0)) / scale)
    responsibilities = np.zeros((n, k))
    responsibilities[np.arange(n), labels] = 1.0
    return responsibilities


def _m_step(x: np.ndarray, y: np.ndarray, responsibilities: np.ndarray, floor: float):
    n, dim_l = x.shape
    dim_d = y.shape[1]
    k = responsibilities.shape[1]
    priors = np.empty(k)
    c = np.empty((k, dim_l))
    gamma = np.empty((k, dim_l, dim_l))
    a = np.empty((k, dim_d, dim_l))
    b = np.empty((k, dim_d))
    sigma = np.empty((k, dim_d))

    for j in range(k):
        weights = responsibilities[:, j]
        mass = weights.sum()
        priors[j] = mass / n
        c[j] = weights @ x / mass
        x_centered = x - c[j]
        gamma[j] = _clamp_covariance((weights[:, None] * x_centered).T @ x_centered / mass, floor)

        y_mean = weights @ y / mass
        root = np.sqrt(weights)[:, None]
        coef, *_ = np.linalg.lstsq(root * x_centered, root * (y - y_mean), rcond=None)
        a[j] = coef.T
        b[j] = y_mean - a[j] @ c[j]

        residual = y - x @ a[j].T - b[j]
        sigma[j] = np.maximum(weights @ (residual * residual) / mass, floor)
    return priors, c, gamma, a, b, sigma


def _log_joint(x: np.ndarray, y: np.ndarray, priors, c, gamma, a, b, sigma) -> np.ndarray:
    """(n, k) log pi_k + log N(x; c_k, Gamma_k) + log N(y; A_k x + b_k, diag Sigma_k)"""
    n = x.shape[0]
    k = priors.shape[0]
    log_p = np.empty((n, k))
    for j in range(k):
        residual = y - x @ a[j].T - b[j]
        log_signal = -0.5 * (np.sum(np.log(sigma[j])) + y.shape[1] * _LOG_2PI
                             + np.sum(residual * residual / sigma[j], axis=1))
        log_params = multivariate_normal.logpdf(x, mean=c[j], cov=gamma[j])
        log_p[:, j] = np.log(priors[j]) + log_params + log_signal
    return log_p


def _prune(responsibilities: np.ndarray, n: int) -> Tuple[np.ndarray, int]:
    """Drop components whose responsibility mass fell below 1 / (10 n)"""
    masses = responsibilities.sum(axis=0) / n
    keep = masses >= 1.0 / (10.0 * n)
    if not np.any(keep):
        raise DegenerateComponent('every mixture component lost its responsibility mass')
    pruned = int(np.count_nonzero(~keep))
    if pruned:
        responsibilities = responsibilities[:, keep]
        responsibilities /= responsibilities.sum(axis=1, keepdims=True)
    return responsibilities, pruned


def train_dbl(dictionary: Dictionary, k: Optional[int] = None, seed: int = 0,
              max_iter: int = Config.EM_MAX_ITER, tol: float = Config.EM_TOL,
              floor: float = Config.COVARIANCE_FLOOR) -> RegressionModel:
    """
    Fit the k-component locally affine mixture (parameters -> signals) by EM

    Signals are standardized per sample first. Responsibilities start from
    a seeded k-means on the parameters; EM stops when the relative
    log-likelihood gain drops below tol or after max_iter iterations.
    The log-likelihood must not decrease between iterations; the check
    restarts after a prune.
    Components whose mass falls below 1 / (10 n) are pruned and reported
    in the model meta.

    Raises:
        ValidationError: fewer than 10 k entries
        DegenerateComponent: no component left
        ConvergenceError: log-likelihood decreased between iterations
    """
    n = dictionary.n_entries
    k = default_component_count(n) if k is None else int(k)
    if k < 1 or n < 10 * k:
        raise ValidationError({'reconstruction.k': f'k = {k} needs at least {10 * k} entries, dictionary has {n}'})

    x = dictionary.params.astype(np.float64)
    y_raw = dictionary.signals.astype(np.float64)
    signal_mean = y_raw.mean(axis=0)
    signal_std = y_raw.std(axis=0)
    signal_std[signal_std == 0] = 1.0
    y = (y_raw - signal_mean) / signal_std

    sim_logger = get_sim_logger()
    responsibilities, pruned_total = _prune(_initial_responsibilities(x, k, seed), n)
    log_likelihoods: List[float] = []
    reference: Optional[float] = None
    iteration = 0

    while iteration < max_iter:
        iteration += 1
        blocks = _m_step(x, y, responsibilities, floor)
        log_p = _log_joint(x, y, *blocks)
        log_norm = logsumexp(log_p, axis=1, keepdims=True)
        log_likelihood = float(np.sum(log_norm))
        responsibilities = np.exp(log_p - log_norm)
        log_training_iteration(sim_logger, iteration, log_likelihood, responsibilities.shape[1])
        log_likelihoods.append(log_likelihood)

        drop_allowed = Config.EM_MONOTONE_RTOL * max(1.0, abs(reference)) if reference is not None else 0.0
        if reference is not None and log_likelihood < reference - drop_allowed:
            raise ConvergenceError(f'EM log-likelihood decreased at iteration {iteration}: '
                                   f'{reference:.6f} -> {log_likelihood:.6f}')
        previous, reference = reference, log_likelihood

        responsibilities, pruned = _prune(responsibilities, n)
        if pruned:
            pruned_total += pruned
            reference = None
            logger.warning(f'Pruned {pruned} degenerate component(s) at iteration {iteration}')
            continue
        if previous is not None and (log_likelihood - previous) < tol * abs(previous):
            break

    priors, c, gamma, a, b, sigma = _m_step(x, y, responsibilities, floor)
    priors = priors / priors.sum()
    meta = {
        'k_requested': str(k),
        'k': str(len(priors)),
        'pruned': str(pruned_total),
        'iterations': str(iteration),
        'log_likelihood': repr(log_likelihoods[-1]),
        'seed': str(int(seed)),
        'n_entries': str(n),
    }
    for key in ('config_hash', 'sampling.seed'):
        if key in dictionary.meta:
            meta[key] = dictionary.meta[key]
    logger.info(f'EM finished after {iteration} iterations: log-likelihood {log_likelihoods[-1]:.4f}, '
                f'k = {len(priors)} ({pruned_total} pruned)')
    return RegressionModel(priors=priors, c=c, gamma=gamma, a=a, b=b, sigma=sigma,
                           signal_mean=signal_mean, signal_std=signal_std, meta=meta,
                           log_likelihoods=log_likelihoods)


def predict_dbl_batch(model: RegressionModel, signals: np.ndarray,
                      clips: Optional[ClipRules] = None) -> np.ndarray:
    """
    Posterior mean of the parameters for each row of signals

    Each component yields a Gaussian posterior
        S_k = (Gamma_k^-1 + A_k^T Sigma_k^-1 A_k)^-1
        m_k = S_k (A_k^T Sigma_k^-1 (y - b_k) + Gamma_k^-1 c_k)
    weighted by its evidence N(y; A_k c_k + b_k, Sigma_k + A_k Gamma_k A_k^T).
    Clipping is applied last, when clips are given.
    """
    signals = np.atleast_2d(np.asarray(signals, dtype=np.float64))
    if signals.shape[1] != model.signal_dim:
        raise LengthMismatch(f'fingerprint length {signals.shape[1]} vs model signal length {model.signal_dim}')
    y = (signals - model.signal_mean) / model.signal_std
    m, dim_d = y.shape

    log_weights = np.empty((m, model.k))
    means = np.empty((model.k, m, model.param_dim))
    for j in range(model.k):
        a, b, c, gamma = model.a[j], model.b[j], model.c[j], model.gamma[j]
        sigma_inv = 1.0 / model.sigma[j]
        gamma_inv = np.linalg.inv(gamma)
        precision = gamma_inv + a.T @ (sigma_inv[:, None] * a)
        posterior_cov = np.linalg.inv(precision)

        projected = (y - b) * sigma_inv @ a
        means[j] = (projected + gamma_inv @ c) @ posterior_cov.T

        residual = y - (a @ c + b)
        u = residual * sigma_inv @ a
        quad = np.sum(residual * residual * sigma_inv, axis=1) - np.einsum('ij,jk,ik->i', u, posterior_cov, u)
        _, logdet_gamma = np.linalg.slogdet(gamma)
        _, logdet_posterior = np.linalg.slogdet(posterior_cov)
        logdet = np.sum(np.log(model.sigma[j])) + logdet_gamma - logdet_posterior
        log_weights[:, j] = np.log(model.priors[j]) - 0.5 * (dim_d * _LOG_2PI + logdet + quad)

    weights = np.exp(log_weights - logsumexp(log_weights, axis=1, keepdims=True))
    estimates = np.einsum('mk,kml->ml', weights, means)
    return clips.apply(estimates) if clips is not None else estimates


def predict_dbl(model: RegressionModel, fp: Union[Fingerprint, np.ndarray],
                clips: Optional[ClipRules] = None) -> VascularParams:
    values = fp.values if isinstance(fp, Fingerprint) else np.asarray(fp)
    clips = clips if clips is not None else ClipRules()
    return VascularParams.from_array(predict_dbl_batch(model, values[None, :], clips)[0])


# ------------------------------------------------------------------------ maps

def _check_voxels(flat: np.ndarray, dims: Tuple[int, ...]) -> None:
    finite = np.all(np.isfinite(flat), axis=1)
    nonzero = np.any(flat != 0, axis=1)
    bad = np.flatnonzero(~(finite & nonzero))
    if len(bad):
        index = int(bad[0])
        error = ZeroSignal('zero fingerprint') if finite[index] else FormatError('non-finite fingerprint')
        raise VoxelError(np.unravel_index(index, dims), error)


def reconstruct_map(volume: np.ndarray, method: Method, resource: Union[Dictionary, RegressionModel],
                    clips: Optional[ClipRules] = None, n_jobs: Optional[int] = 1) -> ParamMaps:
    """
    Voxelwise estimation over an (nx, ny, nz, L) fingerprint volume

    DBM maps hold dictionary parameters verbatim; DBL maps are clipped.

    Raises:
        VoxelError: first failing voxel, with its coordinates
    """
    volume = np.asarray(volume)
    if volume.ndim != 4:
        raise DimensionError(f'fingerprint volume must be (nx, ny, nz, L), got shape {volume.shape}')
    dims, length = volume.shape[:3], volume.shape[3]
    method = Method(method)
    if method is Method.DBM and not isinstance(resource, Dictionary):
        raise ValidationError({'--method': 'dbm needs a dictionary'})
    if method is Method.DBL and not isinstance(resource, RegressionModel):
        raise ValidationError({'--method': 'dbl needs a trained model'})
    expected = resource.signal_length if method is Method.DBM else resource.signal_dim
    if length != expected:
        raise LengthMismatch(f'fingerprint length {length} vs {method.value} resource length {expected}')

    flat = volume.reshape(-1, length).astype(np.float64)
    _check_voxels(flat, dims)

    chunk = max(1, _CHUNK_ELEMENTS // max(1, length * 64))
    chunks = [flat[start:start + chunk] for start in range(0, len(flat), chunk)]
    pool = WorkerPool(n_jobs, backend='threading')
    if method is Method.DBM:
        indices = np.concatenate(pool.map(lambda part: match_dbm_batch(part, resource), chunks))
        estimates = resource.params[indices]
    else:
        clips = clips if clips is not None else ClipRules()
        estimates = np.vstack(pool.map(lambda part: predict_dbl_batch(resource, part, clips), chunks))

    logger.info(f'Reconstructed {len(flat)} voxels with {method.value}')
    return ParamMaps.from_stacked(estimates.reshape(*dims, len(PARAM_NAMES)), method)


# ----------------------------------------------------------------- persistence

def save_model(model: RegressionModel, path) -> None:
    storage.write_mrvm(model, path)


def load_model(path) -> RegressionModel:
    return storage.read_mrvm(path)


def write_maps(maps: ParamMaps, spacing, out_dir) -> List[str]:
    """bvf.vxf, r.vxf, so2.vxf, t2.vxf in out_dir"""
    os.makedirs(out_dir, exist_ok=True)
    paths = []
    for name in PARAM_NAMES:
        path = os.path.join(out_dir, f'{name}.vxf')
        storage.write_vxf(getattr(maps, name), spacing, path)
        paths.append(path)
    return paths


def read_map(path) -> np.ndarray:
    values, _ = storage.read_vxf(path)
    return values


def read_fingerprint_volume(path) -> np.ndarray:
    """VXS1 volume, or an MRVD dictionary read as an (n, 1, 1) volume of its signals"""
    magic = storage.sniff_magic(path)
    if magic == storage.VXS_MAGIC:
        return storage.read_vxs(path)
    if magic == storage.MRVD_MAGIC:
        signals = storage.read_mrvd(path).signals
        return signals.reshape(signals.shape[0], 1, 1, signals.shape[1])
    raise FormatError(f'{path}: not a fingerprint volume (magic {magic!r})')


def write_fingerprint_volume(volume: np.ndarray, path) -> None:
    storage.write_vxs(volume, path)
