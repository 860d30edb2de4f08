"""
reconstruct command: parameter maps from a fingerprint volume
"""
import logging
import os

import numpy as np

from mrvf.commands.common import (
    add_common_arguments, check_config_hash, hash_comment, load_config, require_file,
)
from mrvf.core.error_handlers import EXIT_OK, ValidationError
from mrvf.models.models import Method, ParamMaps
from mrvf.services import dictionary as dictionary_service
from mrvf.services import reconstruction
from mrvf.services.evaluation import roi_stats
from mrvf.utils.utils import write_tsv

logger = logging.getLogger(__name__)

SUMMARY_NAME = 'summary.tsv'


def init_command(subparsers):
    parser = subparsers.add_parser('reconstruct', help='estimate bvf/r/so2/t2 maps from fingerprints')
    add_common_arguments(parser)
    parser.add_argument('--input', required=True, help='VXS1 fingerprint volume or MRVD dictionary')
    parser.add_argument('--dict', dest='dictionary', default=None, help='MRVD dictionary (dbm)')
    parser.add_argument('--model', default=None, help='MRVM model (dbl)')
    parser.add_argument('--method', choices=[m.value for m in Method], default=None,
                        help='estimator (default: reconstruction.method)')
    parser.add_argument('--out', required=True, help='output directory')
    parser.set_defaults(func=cmd_reconstruct)


def cmd_reconstruct(args) -> int:
    config = load_config(args)
    method = Method(args.method) if args.method else config.reconstruction.method
    require_file(args.input, '--input')
    if os.path.exists(args.out) and not os.path.isdir(args.out):
        raise ValidationError({'--out': f"'{args.out}' is not a directory"})

    if method is Method.DBM:
        require_file(args.dictionary, '--dict')
        resource = dictionary_service.load_dictionary(args.dictionary)
        check_config_hash(resource.meta, config, '--dict')
    else:
        require_file(args.model, '--model')
        resource = reconstruction.load_model(args.model)
        check_config_hash(resource.meta, config, '--model')

    volume = reconstruction.read_fingerprint_volume(args.input)
    maps = reconstruction.reconstruct_map(volume, method, resource, config.reconstruction.clips,
                                          n_jobs=args.threads)

    reconstruction.write_maps(maps, config.geometry.voxel_um, args.out)
    # summary of the stored f32 maps
    stored = ParamMaps.from_stacked(maps.stacked().astype(np.float32), method)
    summary = roi_stats(stored, np.ones(stored.dims, dtype=np.uint8), label='volume')
    write_tsv(summary.to_frame(), os.path.join(args.out, SUMMARY_NAME),
              comments=[hash_comment(config), f'method={method.value}'])
    logger.info(f'Wrote {method.value} maps of {summary.n} voxels to {args.out}')
    return EXIT_OK
