"""
eval command: self-recovery, cross-geometry bias and t-test reports
"""
import logging
import math
import os
from typing import Callable, Dict, List

import numpy as np
import pandas as pd

from config.settings import Config
from mrvf.commands.common import add_common_arguments, check_config_hash, hash_comment, load_config, require_file
from mrvf.core.error_handlers import EXIT_OK, StageError, ValidationError, create_error_response
from mrvf.core.logging_config import log_error
from mrvf.models.models import ArmResult, Fingerprint, Method, NoiseSpec, PARAM_NAMES
from mrvf.services import dictionary as dictionary_service
from mrvf.services import evaluation, reconstruction
from mrvf.services.geometry import load_realistic_pool
from mrvf.utils.utils import derive_seed, write_tsv

logger = logging.getLogger(__name__)

RECOVERY_NAME = 'recovery.tsv'
BIAS_NAME = 'bias.tsv'
TTEST_NAME = 'ttest.tsv'
STATUS_NAME = 'status.tsv'

# noise stream of the self-recovery arm
_SELF_NOISE = 2 ** 31 + 1


def init_command(subparsers):
    parser = subparsers.add_parser('eval', help='run the evaluation reports')
    add_common_arguments(parser)
    parser.add_argument('--out', required=True, help='output directory')
    parser.set_defaults(func=cmd_eval)


def _run_stage(name: str, func: Callable, status: List[Dict]):
    try:
        result = func()
    except Exception as e:
        log_error(logger, e, {'stage': name})
        response = create_error_response(e)
        status.append({'stage': name, 'status': 'failed', 'error': response['error'],
                       'message': response['message']})
        raise StageError(name, e) from e
    status.append({'stage': name, 'status': 'ok', 'error': '', 'message': ''})
    return result


def load_artifacts(config) -> Dict[Method, object]:
    """
    Evaluation dictionary, plus the DBL model when one is configured

    Raises:
        ValidationError: an artifact written under another configuration
    """
    built = dictionary_service.load_dictionary(config.eval.dictionary)
    check_config_hash(built.meta, config, 'eval.dictionary')
    resources = {Method.DBM: built}
    if config.eval.model and os.path.isfile(config.eval.model):
        model = reconstruction.load_model(config.eval.model)
        check_config_hash(model.meta, config, 'eval.model')
        resources[Method.DBL] = model
    return resources


def self_recovery(config, resources: Dict[Method, object]) -> pd.DataFrame:
    """
    Recovery of the evaluation dictionary from its own signals

    Rows: noiseless ('self') and noisy at eval.snr ('self-noisy') arms for
    each available method.
    """
    built = resources[Method.DBM]
    signals = built.signals.astype(np.float64)
    arms = {'self': signals}
    if not math.isinf(config.eval.snr):
        noise_seed = derive_seed(config.seed, _SELF_NOISE)
        arms['self-noisy'] = np.vstack([
            evaluation.add_noise(Fingerprint(values=row),
                                 NoiseSpec(snr=config.eval.snr, seed=derive_seed(noise_seed, i))).values
            for i, row in enumerate(signals)
        ])

    frames = []
    for method, resource in resources.items():
        for arm, batch in arms.items():
            estimates = evaluation.estimate(batch, method, resource, config.reconstruction.clips)
            report = evaluation.recovery_metrics(built.params, estimates, method=method.value)
            frames.append(report.to_frame(arm=arm))
    return pd.concat(frames, ignore_index=True)


def arm_recovery(arms: List[ArmResult]) -> pd.DataFrame:
    frames = [
        evaluation.recovery_metrics(arm.truth, arm.estimates, method=arm.method).to_frame(arm=arm.label)
        for arm in arms
    ]
    return pd.concat(frames, ignore_index=True)


def arm_ttests(arms: List[ArmResult], alpha: float) -> pd.DataFrame:
    """Welch tests of the per-voxel estimation errors between every pair of arms"""
    frames = []
    for index, name in enumerate(PARAM_NAMES):
        samples = {arm.label: arm.estimates[:, index] - arm.truth[:, index] for arm in arms}
        frames.append(evaluation.crossed_ttests(samples, alpha=alpha, parameter=name))
    return pd.concat(frames, ignore_index=True)


def realistic_pools(config) -> Dict:
    families = {family for arm in config.eval.arms for family in arm}
    if 'masks' not in families:
        return {}
    pool = load_realistic_pool(config.geometry.mask_dir, config.geometry.voxel_um, config.eval.spacing,
                               config.geometry.erosion_iterations)
    return {'masks': pool}


def cmd_eval(args) -> int:
    config = load_config(args, required_paths=('eval.dictionary',))
    if config.reconstruction.method is Method.DBL:
        require_file(config.eval.model, 'eval.model')

    if config.eval.n_test < evaluation.MIN_BIAS_TEST_VOXELS:
        raise ValidationError({'eval.n_test': f'must be >= {evaluation.MIN_BIAS_TEST_VOXELS}'})
    if os.path.exists(args.out) and not os.path.isdir(args.out):
        raise ValidationError({'--out': f"'{args.out}' is not a directory"})
    resources = load_artifacts(config)
    os.makedirs(args.out, exist_ok=True)

    comments = [hash_comment(config)]
    status: List[Dict] = []
    try:
        recovery = _run_stage('self-recovery', lambda: self_recovery(config, resources), status)

        def bias_stage():
            pools = realistic_pools(config)
            return evaluation.cross_model_bias(config.eval.n_test, config.seed, config, pools=pools,
                                               n_jobs=args.threads)

        table, arms = _run_stage('cross-model-bias', bias_stage, status)
        recovery = pd.concat([recovery, arm_recovery(arms)], ignore_index=True)
        write_tsv(recovery, os.path.join(args.out, RECOVERY_NAME), comments)
        write_tsv(table, os.path.join(args.out, BIAS_NAME), comments)

        ttests = _run_stage('ttest', lambda: arm_ttests(arms, alpha=Config.SIGNIFICANCE), status)
        write_tsv(ttests, os.path.join(args.out, TTEST_NAME), comments)
    finally:
        write_tsv(pd.DataFrame(status, columns=['stage', 'status', 'error', 'message']),
                  os.path.join(args.out, STATUS_NAME), comments)

    for _, row in table[table['parameter'] == 'so2'].iterrows():
        logger.info(f"{row['generator']} with {row['dictionary']} dictionary: so2 bias {float(row['bias']):+.4f}")
    return EXIT_OK
