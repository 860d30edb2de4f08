"""
Shared plumbing of the command modules
"""
import logging
import os
from typing import Dict, Iterable, Optional

from config.pipeline import PipelineConfig, load_pipeline_config
from mrvf.core.error_handlers import ValidationError
from mrvf.utils.validators import Validator, validate_or_error

logger = logging.getLogger(__name__)


def add_common_arguments(parser):
    """--config, --seed, --threads and --quiet, accepted by every command"""
    parser.add_argument('--config', required=True, help='pipeline configuration file (key=value)')
    parser.add_argument('--seed', type=int, default=None, help='master seed, overrides sampling.seed')
    parser.add_argument('--threads', type=int, default=None,
                        help='worker count, 0 = all cores (default: MRVF_THREADS)')
    parser.add_argument('--quiet', action='store_true', help='console logging at WARNING and above')


def load_config(args, required_paths: Iterable[str] = ()) -> PipelineConfig:
    if args.threads is not None:
        validate_or_error(Validator.validate_integer, str(args.threads), minimum=0, key='--threads')
    config = load_pipeline_config(args.config, seed=args.seed, required_paths=required_paths)
    logger.info(f'Config {config.source} (hash {config.config_hash[:12]}, seed {config.seed})')
    return config


def require_file(path: Optional[str], flag: str) -> str:
    if not path:
        raise ValidationError({flag: 'is required'})
    if not os.path.isfile(path):
        raise ValidationError({flag: f"file '{path}' does not exist"})
    return path


def require_writable_parent(path: str, flag: str) -> None:
    parent = os.path.dirname(os.path.abspath(path))
    if os.path.exists(parent) and not os.path.isdir(parent):
        raise ValidationError({flag: f"'{parent}' is not a directory"})
    if os.path.isdir(path):
        raise ValidationError({flag: f"'{path}' is a directory"})


def check_config_hash(meta: Dict[str, str], config: PipelineConfig, flag: str) -> None:
    """
    Reject artifacts written under another configuration

    Raises:
        ValidationError: missing or different config_hash
    """
    stored = meta.get('config_hash')
    if stored is None:
        raise ValidationError({flag: 'artifact carries no config_hash'})
    if stored != config.config_hash:
        raise ValidationError({
            flag: f'artifact config hash {stored[:12]} differs from this config ({config.config_hash[:12]})'
        })


def hash_comment(config: PipelineConfig) -> str:
    return f'config_hash={config.config_hash}'
