"""
gen-voxels command: synthetic or realistic voxel masks plus their manifest
"""
import logging
import os
from typing import List

import pandas as pd

from mrvf.commands.common import add_common_arguments, hash_comment, load_config
from mrvf.core.error_handlers import EXIT_OK, EntryError, ValidationError
from mrvf.core.worker_pool import WorkerPool
from mrvf.models.models import VoxelGeometry
from mrvf.services import geometry
from mrvf.services.dictionary import sobol_scrambled
from mrvf.utils.utils import derive_seed, write_tsv

logger = logging.getLogger(__name__)

MANIFEST_NAME = 'manifest.tsv'
MANIFEST_COLUMNS = ['file', 'bvf', 'mean_radius', 'provenance', 'seed']

# stream of the (bvf, R) targets; voxel i uses derive_seed(seed, i)
_TARGET_STREAM = 2 ** 31


def init_command(subparsers):
    parser = subparsers.add_parser('gen-voxels', help='generate voxel masks and a manifest')
    add_common_arguments(parser)
    parser.add_argument('--out', required=True, help='output directory')
    parser.set_defaults(func=cmd_gen_voxels)


def _generate_voxel(index: int, family: str, bvf: float, radius: float, dims, spacing, seed: int) -> VoxelGeometry:
    try:
        geom = geometry.generate_geometry(family, bvf, radius, dims, spacing, seed)
    except Exception as e:
        raise EntryError(index, e) from e
    geom.name = f'voxel_{index:04d}'
    return geom


def generate_voxels(config, n_jobs=1) -> List[VoxelGeometry]:
    """Geometries described by the geometry block of a config"""
    block = config.geometry
    if block.model == 'masks':
        return geometry.load_realistic_pool(block.mask_dir, block.voxel_um, block.spacing,
                                            block.erosion_iterations)

    targets = sobol_scrambled(block.n, [block.bvf_range, block.r_range], derive_seed(config.seed, _TARGET_STREAM))
    jobs = [
        (index, block.model, float(bvf), float(radius), block.dims, block.spacing, derive_seed(config.seed, index))
        for index, (bvf, radius) in enumerate(targets)
    ]
    return WorkerPool(n_jobs).starmap(_generate_voxel, jobs)


def write_voxels(geoms: List[VoxelGeometry], out_dir: str, config) -> str:
    """One VXM1 file per geometry plus manifest.tsv; returns the manifest path"""
    os.makedirs(out_dir, exist_ok=True)
    rows = []
    for index, geom in enumerate(geoms):
        file_name = f'voxel_{index:04d}.vxm'
        geometry.write_mask(geom.lattice, os.path.join(out_dir, file_name))
        rows.append({
            'file': file_name, 'bvf': geom.bvf, 'mean_radius': geom.mean_radius,
            'provenance': geom.provenance.value, 'seed': int(geom.seed),
        })
    manifest = os.path.join(out_dir, MANIFEST_NAME)
    write_tsv(pd.DataFrame(rows, columns=MANIFEST_COLUMNS), manifest, comments=[hash_comment(config)])
    return manifest


def cmd_gen_voxels(args) -> int:
    config = load_config(args)
    if os.path.exists(args.out) and not os.path.isdir(args.out):
        raise ValidationError({'--out': f"'{args.out}' is not a directory"})

    geoms = generate_voxels(config, n_jobs=args.threads)
    if not geoms:
        raise ValidationError({'geometry.mask_dir': 'no non-empty voxel found'})
    manifest = write_voxels(geoms, args.out, config)
    logger.info(f'Wrote {len(geoms)} {config.geometry.model} voxels and {manifest}')
    return EXIT_OK
