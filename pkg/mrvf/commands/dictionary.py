"""
build-dict command: simulate one fingerprint per manifest voxel
"""
import logging
import os
import time
from typing import List

from mrvf.commands.common import (
    add_common_arguments, check_config_hash, hash_comment, load_config, require_file, require_writable_parent,
)
from mrvf.core.error_handlers import EXIT_OK, FormatError, ValidationError
from mrvf.models.models import Provenance, VoxelGeometry
from mrvf.services import dictionary as dictionary_service
from mrvf.services.geometry import compute_bvf, ingest_mask
from mrvf.utils.utils import read_tsv, write_tsv

logger = logging.getLogger(__name__)

_BVF_ATOL = 1e-12


def init_command(subparsers):
    parser = subparsers.add_parser('build-dict', help='build an MRVD dictionary from a voxel manifest')
    add_common_arguments(parser)
    parser.add_argument('--manifest', required=True, help='manifest.tsv written by gen-voxels')
    parser.add_argument('--out', required=True, help='output .mrvd file')
    parser.add_argument('--coverage', default=None, help='optional coverage histogram TSV')
    parser.set_defaults(func=cmd_build_dict)


def read_manifest(path: str, config) -> List[VoxelGeometry]:
    """
    Geometries listed in a manifest, checked against their masks

    Raises:
        ValidationError: manifest written under another configuration
        FormatError: manifest and masks disagree
    """
    frame, comments = read_tsv(path)
    check_config_hash(comments, config, '--manifest')
    missing = [column for column in ('file', 'bvf', 'mean_radius', 'provenance', 'seed') if column not in frame]
    if missing:
        raise FormatError(f'{path}: missing manifest columns {missing}')

    base_dir = os.path.dirname(os.path.abspath(path))
    geoms = []
    for row in frame.itertuples(index=False):
        lattice = ingest_mask(os.path.join(base_dir, row.file))
        bvf = float(row.bvf)
        if abs(compute_bvf(lattice) - bvf) > _BVF_ATOL:
            raise FormatError(f'{row.file}: manifest bvf {bvf} does not match the mask ({compute_bvf(lattice)})')
        geoms.append(VoxelGeometry(
            lattice=lattice, bvf=bvf, mean_radius=float(row.mean_radius),
            provenance=Provenance(row.provenance), seed=int(row.seed), name=row.file,
        ))
    return geoms


def cmd_build_dict(args) -> int:
    config = load_config(args)
    require_file(args.manifest, '--manifest')
    require_writable_parent(args.out, '--out')
    if args.coverage:
        require_writable_parent(args.coverage, '--coverage')

    geoms = read_manifest(args.manifest, config)
    if not geoms:
        raise ValidationError({'--manifest': 'lists no voxel'})
    if config.sampling.n is not None:
        geoms = geoms[:config.sampling.n]

    started = time.perf_counter()
    built = dictionary_service.build_dictionary(
        geoms, config.sampling.so2_range, config.sampling.t2_range, config.physics, config.sequence,
        seed=config.seed, n_jobs=args.threads, extra_meta={'config_hash': config.config_hash},
    )
    os.makedirs(os.path.dirname(os.path.abspath(args.out)), exist_ok=True)
    dictionary_service.save_dictionary(built, args.out)
    if args.coverage:
        coverage = dictionary_service.coverage_report(built)
        write_tsv(coverage.to_frame(), args.coverage, comments=[hash_comment(config)])
    seconds = time.perf_counter() - started

    logger.info(f'Dictionary {args.out}: {built.n_entries} entries, signal length {built.signal_length}, '
                f'{seconds:.1f} s ({seconds / built.n_entries:.2f} s per entry)')
    if not args.quiet:
        print(f'{built.n_entries} entries in {seconds:.1f} s')
    return EXIT_OK

