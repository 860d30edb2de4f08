"""
train command: fit the DBL regression model on a dictionary
"""
import logging
import os

from mrvf.commands.common import (
    add_common_arguments, check_config_hash, load_config, require_file, require_writable_parent,
)
from mrvf.core.error_handlers import EXIT_OK, ValidationError
from mrvf.services import dictionary as dictionary_service
from mrvf.services import reconstruction
from mrvf.utils.validators import Validator, validate_or_error

logger = logging.getLogger(__name__)


def init_command(subparsers):
    parser = subparsers.add_parser('train', help='train the DBL model on a dictionary')
    add_common_arguments(parser)
    parser.add_argument('--dict', required=True, dest='dictionary', help='MRVD dictionary')
    parser.add_argument('--out', required=True, help='output .mrvm model file')
    parser.add_argument('--k', type=int, default=None,
                        help='mixture components (default: reconstruction.k, else min(50, n // 500))')
    parser.set_defaults(func=cmd_train)


def cmd_train(args) -> int:
    config = load_config(args)
    require_file(args.dictionary, '--dict')
    require_writable_parent(args.out, '--out')
    if args.k is not None:
        validate_or_error(Validator.validate_integer, str(args.k), minimum=1, key='--k')

    built = dictionary_service.load_dictionary(args.dictionary)
    check_config_hash(built.meta, config, '--dict')
    k = args.k if args.k is not None else config.reconstruction.k
    if k is not None and built.n_entries < 10 * k:
        raise ValidationError({'--k': f'k = {k} needs at least {10 * k} entries, dictionary has {built.n_entries}'})

    model = reconstruction.train_dbl(built, k=k, seed=config.seed)
    os.makedirs(os.path.dirname(os.path.abspath(args.out)), exist_ok=True)
    reconstruction.save_model(model, args.out)
    logger.info(f'Model {args.out}: k = {model.k} (requested {model.meta["k_requested"]}, '
                f'{model.meta["pruned"]} pruned), final log-likelihood {model.log_likelihoods[-1]:.6f}')
    return EXIT_OK
