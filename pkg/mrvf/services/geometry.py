"""
Voxel geometry service
Builds, ingests, transforms and characterizes the binary vessel lattices
that define each virtual MRI voxel.
"""
import logging
import math
import os
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy import ndimage

from config.settings import Config
from mrvf.core import storage
from mrvf.core.error_handlers import DimensionError, EmptyMask, InfeasibleGeometry, ValidationError
from mrvf.models.models import CylinderSpec, Lattice3D, Provenance, VoxelGeometry
from mrvf.utils.utils import derive_seed

logger = logging.getLogger(__name__)

FAMILIES = ('disks2d', 'cylinders3d', 'masks')


def _triple(value) -> Tuple[float, float, float]:
    if np.isscalar(value):
        return (float(value),) * 3
    values = tuple(float(v) for v in value)
    if len(values) != 3:
        raise DimensionError(f'expected a scalar or a triple, got {value!r}')
    return values


# ------------------------------------------------------------ characterization

def compute_bvf(lattice: Lattice3D) -> float:
    """Occupied cells over total cells"""
    return lattice.occupied / lattice.n_cells


def compute_mean_radius(lattice: Lattice3D) -> float:
    """
    Mean vessel radius in um, weighted by centreline length

    Euclidean distance from each vessel cell to the nearest non-vessel
    cell (outside the lattice counts as non-vessel) is taken at the medial
    cells, vessel cells whose distance is >= that of every neighbour.
    Every vessel cell inherits the local radius r of its nearest medial
    cell. A tube of radius r holds about r^2 cells per unit length, so
    cells are weighted by 1 / r^2 and the result is
    sum(1 / r) / sum(1 / r^2): every unit of centreline (every disk, in
    2-D) counts once, however many cells it covers.
    Singleton axes are dropped, so single-slice lattices are measured in-plane.

    Raises:
        EmptyMask: no occupied cell
    """
    if lattice.occupied == 0:
        raise EmptyMask('mean radius requested on an empty lattice')

    axes = [axis for axis, n in enumerate(lattice.dims) if n > 1] or [0, 1, 2]
    mask = lattice.mask.reshape([lattice.dims[axis] for axis in axes]).astype(bool)
    spacing = [lattice.spacing[axis] for axis in axes]

    padded = np.pad(mask, 1, mode='constant', constant_values=False)
    distance = ndimage.distance_transform_edt(padded, sampling=spacing)
    distance = distance[tuple(slice(1, -1) for _ in axes)]

    neighbourhood_max = ndimage.maximum_filter(distance, size=3, mode='constant', cval=0.0)
    medial = mask & (distance >= neighbourhood_max)

    nearest = ndimage.distance_transform_edt(~medial, sampling=spacing,
                                             return_distances=False, return_indices=True)
    local_radius = distance[tuple(nearest)][mask]
    return float(np.sum(1.0 / local_radius) / np.sum(1.0 / local_radius ** 2))


def characterize(lattice: Lattice3D, provenance: Provenance, seed: int = 0, name: str = '') -> VoxelGeometry:
    """Wrap a lattice with its BVf and mean radius"""
    bvf = compute_bvf(lattice)
    radius = compute_mean_radius(lattice) if lattice.occupied else 0.0
    return VoxelGeometry(lattice=lattice, bvf=bvf, mean_radius=radius,
                         provenance=provenance, seed=seed, name=name)


# ------------------------------------------------------------------- rasterizers

def _cell_centers(n: int, spacing: float) -> np.ndarray:
    return (np.arange(n, dtype=np.float64) + 0.5) * spacing


def _minimum_image(coords: np.ndarray, origin: float, period: float) -> np.ndarray:
    return np.mod(coords - origin + period / 2.0, period) - period / 2.0


def rasterize_disks(centers: Sequence[Sequence[float]], radius: float,
                    dims: Tuple[int, int], spacing: float) -> np.ndarray:
    """
    Rasterize disks of one radius on an (nx, ny) grid with periodic wrap

    Returns:
        uint8 mask shaped (nx, ny, 1); a cell is inside when its center lies
        within radius of a disk center (minimum image)
    """
    nx, ny = int(dims[0]), int(dims[1])
    period_x, period_y = nx * spacing, ny * spacing
    xs, ys = _cell_centers(nx, spacing), _cell_centers(ny, spacing)
    mask = np.zeros((nx, ny), dtype=bool)
    for cx, cy in centers:
        dx = _minimum_image(xs, cx, period_x)[:, None]
        dy = _minimum_image(ys, cy, period_y)[None, :]
        mask |= dx * dx + dy * dy <= radius * radius
    return mask.astype(np.uint8).reshape(nx, ny, 1)


def rasterize_cylinders(specs: Sequence[CylinderSpec], dims: Tuple[int, int, int],
                        spacing) -> np.ndarray:
    """
    Rasterize straight cylinders with periodic wrap

    The displacement of each cell center to the axis point is wrapped to
    its minimum image per component; the cell is inside when the distance
    of that displacement to the axis line is <= radius.

    Returns:
        uint8 mask shaped dims
    """
    dims = tuple(int(d) for d in dims)
    spacing = _triple(spacing)
    periods = [n * s for n, s in zip(dims, spacing)]
    centers = [_cell_centers(n, s) for n, s in zip(dims, spacing)]
    mask = np.zeros(dims, dtype=bool)

    for spec in specs:
        ux, uy, uz = spec.direction
        dx = _minimum_image(centers[0], spec.axis_point[0], periods[0])[:, None, None]
        dy = _minimum_image(centers[1], spec.axis_point[1], periods[1])[None, :, None]
        dz = _minimum_image(centers[2], spec.axis_point[2], periods[2])[None, None, :]
        along = dx * ux + dy * uy + dz * uz
        perpendicular_sq = dx * dx + dy * dy + dz * dz - along * along
        mask |= perpendicular_sq <= spec.radius * spec.radius
    return mask.astype(np.uint8)


def sample_directions(n: int, rng: np.random.Generator) -> np.ndarray:
    """n isotropic unit vectors (normalized standard normal draws)"""
    vectors = rng.standard_normal((int(n), 3))
    return vectors / np.linalg.norm(vectors, axis=1, keepdims=True)


# -------------------------------------------------------------------- generators

def _check_target(target_bvf: float, radius: float, key: str) -> None:
    errors = {}
    if not 0.0 < target_bvf < 1.0:
        errors['target_bvf'] = 'must lie in (0, 1)'
    if not radius > 0:
        errors[key] = 'must be > 0'
    if errors:
        raise ValidationError(errors)


def generate_disks_2d(target_bvf: float, radius: float, dims: Sequence[int], spacing: float,
                      seed: int, bvf_tolerance: float = Config.BVF_TOLERANCE,
                      max_attempts: int = Config.MAX_PLACEMENT_ATTEMPTS) -> VoxelGeometry:
    """
    Place non-overlapping disks of one radius until BVf reaches the target

    Args:
        target_bvf: blood volume fraction to reach, in (0, 1)
        radius: disk radius (um)
        dims: (nx, ny) or (nx, ny, 1)
        spacing: in-plane cell size (um)
        seed: random stream seed
        bvf_tolerance: candidates overshooting the target by more than
            this count as failed attempts, unless a single disk covers
            more than bvf_tolerance of the domain: then the disk that
            crosses the target is kept
        max_attempts: consecutive failures before giving up

    Raises:
        InfeasibleGeometry: a single disk cannot fit, or placement stalls
    """
    _check_target(target_bvf, radius, 'radius')
    dims = tuple(int(d) for d in dims)
    if len(dims) == 3:
        if dims[2] != 1:
            raise DimensionError(f'disk lattices have a single slice, got nz = {dims[2]}')
        dims = dims[:2]
    nx, ny = dims
    spacing = float(spacing)
    extent = np.array([nx * spacing, ny * spacing])

    if math.pi * radius ** 2 >= extent[0] * extent[1] or 2.0 * radius > extent.min():
        raise InfeasibleGeometry(
            f'disk of radius {radius} um does not fit a {extent[0]:.1f} x {extent[1]:.1f} um domain'
        )

    single = math.pi * radius ** 2 / float(extent[0] * extent[1])
    overshoot_limit = target_bvf + bvf_tolerance if single <= bvf_tolerance else 1.0

    rng = np.random.default_rng(seed)
    centers = np.empty((0, 2))
    mask = np.zeros((nx, ny, 1), dtype=np.uint8)
    occupied = 0
    n_cells = nx * ny
    failures = 0

    while occupied / n_cells < target_bvf:
        if failures >= max_attempts:
            raise InfeasibleGeometry(
                f'{max_attempts} consecutive disk placements failed at bvf {occupied / n_cells:.4f} '
                f'(target {target_bvf}, radius {radius} um)'
            )
        center = rng.uniform(0.0, 1.0, size=2) * extent

        if len(centers):
            delta = np.mod(centers - center + extent / 2.0, extent) - extent / 2.0
            if np.any(np.einsum('ij,ij->i', delta, delta) <= (2.0 * radius) ** 2):
                failures += 1
                continue

        disk = rasterize_disks([center], radius, dims, spacing)
        added = int(np.count_nonzero(disk))
        if added == 0 or (occupied + added) / n_cells > overshoot_limit:
            failures += 1
            continue

        mask |= disk
        occupied += added
        centers = np.vstack([centers, center])
        failures = 0

    if occupied / n_cells > target_bvf + bvf_tolerance:
        logger.info(f'Disk bvf {occupied / n_cells:.4f} overshoots target {target_bvf}: one disk of radius '
                    f'{radius} um covers {single:.4f} of the domain')
    lattice = Lattice3D(dims=(nx, ny, 1), spacing=(spacing,) * 3, mask=mask)
    logger.debug(f'Placed {len(centers)} disks (r={radius} um), bvf {occupied / n_cells:.4f}')
    return characterize(lattice, Provenance.DISKS_2D, seed=seed)


def _place_cylinders(target_bvf: float, scale: float, dims: Tuple[int, int, int], spacing,
                     seed: int, shape: float, bvf_tolerance: float,
                     max_attempts: int) -> Tuple[np.ndarray, List[CylinderSpec]]:
    """
    One packing pass with gamma radii of mean scale

    A drawn radius is kept across up to Config.RADIUS_RETRIES overlap
    failures, so that crowding does not favour thin cylinders; it is
    redrawn after a placement, an overshoot, or when it cannot fit.
    """
    extent = np.array([n * s for n, s in zip(dims, spacing)])
    rng = np.random.default_rng(seed)
    mask = np.zeros(dims, dtype=np.uint8)
    occupied = 0
    n_cells = int(np.prod(dims))
    placed: List[CylinderSpec] = []
    failures = 0
    radius: Optional[float] = None
    retries = 0

    while occupied / n_cells < target_bvf:
        if failures >= max_attempts:
            raise InfeasibleGeometry(
                f'{max_attempts} consecutive cylinder placements failed at bvf {occupied / n_cells:.4f} '
                f'(target {target_bvf}, radius scale {scale:.3f} um)'
            )
        if radius is None or retries >= Config.RADIUS_RETRIES:
            radius = float(rng.gamma(shape, scale / shape))
            retries = 0
        direction = sample_directions(1, rng)[0]
        point = rng.uniform(0.0, 1.0, size=3) * extent
        if 2.0 * radius >= extent.min():
            failures += 1
            radius = None
            continue

        spec = CylinderSpec(axis_point=tuple(point), direction=tuple(direction), radius=radius)
        cylinder = rasterize_cylinders([spec], dims, spacing)
        added = int(np.count_nonzero(cylinder))
        if added == 0 or (occupied + added) / n_cells > target_bvf + bvf_tolerance:
            failures += 1
            radius = None
            continue
        if np.any(cylinder & mask):
            failures += 1
            retries += 1
            continue

        mask |= cylinder
        occupied += added
        placed.append(spec)
        failures = 0
        radius = None

    return mask, placed


def generate_cylinders_3d(target_bvf: float, target_mean_radius: float, dims: Sequence[int],
                          spacing, seed: int, shape: float = Config.GAMMA_SHAPE,
                          bvf_tolerance: float = Config.BVF_TOLERANCE,
                          max_attempts: int = Config.MAX_PLACEMENT_ATTEMPTS,
                          radius_tolerance: float = Config.RADIUS_TOLERANCE,
                          rounds: int = Config.RADIUS_CALIBRATION_ROUNDS) -> VoxelGeometry:
    """
    Place isotropically oriented, non-overlapping cylinders until BVf reaches the target

    Radii are drawn from a gamma distribution with the given shape; axis
    points are uniform in the domain. The measured mean radius
    (compute_mean_radius) is steered to target_mean_radius: when a pass
    misses by more than radius_tolerance (relative), the gamma mean is
    rescaled by target / measured and the pass is redrawn on a stream
    derived from (seed, pass), up to rounds passes. The closest pass is
    returned.

    Raises:
        InfeasibleGeometry: target radius too large for the domain, or the first pass stalls
    """
    _check_target(target_bvf, target_mean_radius, 'target_mean_radius')
    dims = tuple(int(d) for d in dims)
    spacing = _triple(spacing)
    extent = np.array([n * s for n, s in zip(dims, spacing)])

    if 2.0 * target_mean_radius >= extent.min():
        raise InfeasibleGeometry(
            f'mean radius {target_mean_radius} um does not fit a domain of min extent {extent.min():.1f} um'
        )

    best: Optional[VoxelGeometry] = None
    best_miss = math.inf
    scale = target_mean_radius
    for index in range(max(1, int(rounds))):
        pass_seed = seed if index == 0 else derive_seed(seed, index)
        try:
            mask, placed = _place_cylinders(target_bvf, scale, dims, spacing, pass_seed,
                                            shape, bvf_tolerance, max_attempts)
        except InfeasibleGeometry:
            if best is None:
                raise
            logger.debug(f'Cylinder pass {index} stalled at radius scale {scale:.3f} um')
            break

        geom = characterize(Lattice3D(dims=dims, spacing=spacing, mask=mask), Provenance.CYLINDERS_3D, seed=seed)
        miss = abs(geom.mean_radius / target_mean_radius - 1.0)
        logger.debug(f'Cylinder pass {index}: {len(placed)} cylinders, bvf {geom.bvf:.4f}, '
                     f'mean radius {geom.mean_radius:.3f} um (target {target_mean_radius} um)')
        if miss < best_miss:
            best, best_miss = geom, miss
        if miss <= radius_tolerance:
            break

        # bounded step per pass
        scale *= float(np.clip(target_mean_radius / geom.mean_radius, 0.67, 1.5))
        if 2.0 * scale >= extent.min():
            break

    if best_miss > radius_tolerance:
        logger.warning(f'Mean radius {best.mean_radius:.3f} um misses target {target_mean_radius} um '
                       f'by {100.0 * best_miss:.1f}% (seed {seed})')
    return best


def generate_geometry(family: str, bvf: float, radius: float, dims: Sequence[int], spacing,
                      seed: int) -> VoxelGeometry:
    """Dispatch to the synthetic generator of a family"""
    if family == 'disks2d':
        spacing = _triple(spacing)[0]
        return generate_disks_2d(bvf, radius, tuple(dims)[:2], spacing, seed)
    if family == 'cylinders3d':
        return generate_cylinders_3d(bvf, radius, dims, spacing, seed)
    raise ValidationError({'geometry.model': f"'{family}' has no synthetic generator"})


def generate_matched(family: str, targets: np.ndarray, dims: Sequence[int], spacing, seed: int,
                     pool: Optional[Sequence[VoxelGeometry]] = None) -> Tuple[List[VoxelGeometry], int]:
    """
    Geometries of one family at given (bvf, radius) targets

    Synthetic families are generated per target with a seed derived from
    (seed, target index); infeasible combinations are skipped and counted.
    The masks family picks, for each target, the pool voxel nearest in
    range-normalized (bvf, radius).

    Returns:
        (geometries, skipped count)
    """
    targets = np.asarray(targets, dtype=np.float64).reshape(-1, 2)
    if family == 'masks':
        if not pool:
            raise ValidationError({'geometry.mask_dir': 'masks family needs a non-empty voxel pool'})
        table = np.array([[g.bvf, g.mean_radius] for g in pool])
        scale = np.ptp(table, axis=0)
        scale[scale == 0] = 1.0
        picks = [int(np.argmin(np.sum(((table - t) / scale) ** 2, axis=1))) for t in targets]
        return [pool[i] for i in picks], 0

    geometries, skipped = [], 0
    for index, (bvf, radius) in enumerate(targets):
        try:
            geometries.append(generate_geometry(family, bvf, radius, dims, spacing, derive_seed(seed, index)))
        except InfeasibleGeometry as e:
            skipped += 1
            logger.debug(f'{family} target #{index} skipped: {e}')
    if skipped:
        logger.info(f'{family}: {skipped} of {len(targets)} (bvf, R) targets infeasible, skipped')
    return geometries, skipped


# -------------------------------------------------------------------- masks I/O

def ingest_mask(path) -> Lattice3D:
    """Read a VXM1 mask file"""
    return storage.read_vxm(path)


def write_mask(lattice: Lattice3D, path) -> None:
    storage.write_vxm(lattice, path)


# -------------------------------------------------------------- transformations

def chop(volume: Lattice3D, voxel_dims_um) -> List[Lattice3D]:
    """
    Tile a volume into non-overlapping sub-lattices of a physical size

    Border remainders are discarded. Tiles are ordered z outer, x inner.

    Raises:
        DimensionError: a voxel dimension exceeds the volume
    """
    voxel_dims_um = _triple(voxel_dims_um)
    cells, counts = [], []
    for axis, (n, s, size) in enumerate(zip(volume.dims, volume.spacing, voxel_dims_um)):
        extent = n * s
        if size > extent * (1.0 + 1e-9) or size <= 0:
            raise DimensionError(f'voxel size {size} um on axis {axis} exceeds the volume extent {extent} um')
        per_voxel = max(1, int(round(size / s)))
        cells.append(per_voxel)
        counts.append(min(int(math.floor(extent / size + 1e-9)), n // per_voxel))

    tiles = []
    for k in range(counts[2]):
        for j in range(counts[1]):
            for i in range(counts[0]):
                block = volume.mask[
                    i * cells[0]:(i + 1) * cells[0],
                    j * cells[1]:(j + 1) * cells[1],
                    k * cells[2]:(k + 1) * cells[2],
                ]
                tiles.append(Lattice3D(dims=block.shape, spacing=volume.spacing, mask=block.copy()))
    return tiles


def rescale(lattice: Lattice3D, new_spacing) -> Lattice3D:
    """Nearest-neighbour resampling that preserves the physical extent"""
    new_spacing = _triple(new_spacing)
    if min(new_spacing) <= 0:
        raise ValidationError({'spacing': 'must be > 0'})
    if new_spacing == lattice.spacing:
        return Lattice3D(dims=lattice.dims, spacing=lattice.spacing, mask=lattice.mask.copy())

    indices = []
    for n, old, new in zip(lattice.dims, lattice.spacing, new_spacing):
        new_n = max(1, int(round(n * old / new)))
        source = np.floor((np.arange(new_n) + 0.5) * new / old).astype(np.int64)
        indices.append(np.clip(source, 0, n - 1))
    mask = lattice.mask[np.ix_(*indices)]
    return Lattice3D(dims=mask.shape, spacing=new_spacing, mask=mask)


def erode(lattice: Lattice3D, iterations: int) -> Lattice3D:
    """
    6-connected binary erosion, `iterations` times

    Outside the lattice counts as vessel, so vessels cut by a voxel face
    are not eroded from the cut.
    """
    if int(iterations) < 1:
        raise ValidationError({'iterations': 'must be >= 1'})
    if lattice.occupied == 0:
        return Lattice3D(dims=lattice.dims, spacing=lattice.spacing, mask=lattice.mask.copy())
    structure = ndimage.generate_binary_structure(3, 1)
    eroded = ndimage.binary_erosion(lattice.mask.astype(bool), structure=structure,
                                    iterations=int(iterations), border_value=1)
    return Lattice3D(dims=lattice.dims, spacing=lattice.spacing, mask=eroded.astype(np.uint8))


def augment_by_erosion(geometries: Sequence[VoxelGeometry], max_iterations: int) -> List[VoxelGeometry]:
    """
    Input geometries followed by their eroded copies (1..max_iterations)

    Erosion shifts voxels toward lower BVf and R, filling gaps of the
    (BVf, R) distribution. Copies that erode to nothing are dropped.
    """
    augmented = list(geometries)
    for geometry in geometries:
        for iteration in range(1, int(max_iterations) + 1):
            eroded = erode(geometry.lattice, iteration)
            if eroded.occupied == 0:
                break
            name = f'{geometry.name}_e{iteration}' if geometry.name else f'e{iteration}'
            augmented.append(characterize(eroded, Provenance.ERODED, seed=geometry.seed, name=name))
    logger.info(f'Erosion augmentation: {len(geometries)} voxels -> {len(augmented)}')
    return augmented


def prepare_realistic_voxels(volume: Lattice3D, voxel_um, spacing, erosion_iterations: int = 0,
                             name: str = 'mask') -> List[VoxelGeometry]:
    """
    Chop a segmented volume into MRI-sized voxels, rescale and characterize them

    Voxels without any vessel cell are dropped.
    """
    geometries = []
    empty = 0
    for index, tile in enumerate(chop(volume, voxel_um)):
        tile = rescale(tile, spacing)
        if tile.occupied == 0:
            empty += 1
            continue
        geometries.append(characterize(tile, Provenance.REALISTIC, name=f'{name}_{index:04d}'))
    if empty:
        logger.info(f'{name}: dropped {empty} empty voxels after chopping')
    if erosion_iterations:
        geometries = augment_by_erosion(geometries, erosion_iterations)
    return geometries


def load_realistic_pool(mask_dir: str, voxel_um, spacing, erosion_iterations: int = 0) -> List[VoxelGeometry]:
    """
    Realistic voxels of every VXM1 volume in a directory, in file-name order

    Raises:
        ValidationError: directory holds no .vxm file
    """
    names = sorted(name for name in os.listdir(mask_dir) if name.endswith('.vxm'))
    if not names:
        raise ValidationError({'geometry.mask_dir': f"no .vxm file in '{mask_dir}'"})
    pool = []
    for name in names:
        volume = ingest_mask(os.path.join(mask_dir, name))
        pool.extend(prepare_realistic_voxels(volume, voxel_um, spacing, erosion_iterations,
                                             name=os.path.splitext(name)[0]))
    logger.info(f'Loaded {len(pool)} realistic voxels from {len(names)} volumes')
    return pool
