"""
Binary storage for the MRvF toolkit
Readers and writers for masks (VXM1), float maps (VXF1), fingerprint
volumes (VXS1), dictionaries (MRVD) and regression models (MRVM).
All integers and floats are little-endian.
"""
import logging
import struct
from typing import Dict, Tuple

import numpy as np

from mrvf.core.error_handlers import DimensionError, FormatError, VersionError
from mrvf.models.models import Dictionary, Lattice3D, RegressionModel

logger = logging.getLogger(__name__)

VXM_MAGIC = b'VXM1'
VXF_MAGIC = b'VXF1'
VXS_MAGIC = b'VXS1'
MRVD_MAGIC = b'MRVD'
MRVM_MAGIC = b'MRVM'

MRVD_VERSION = 1
MRVM_VERSION = 1

_GRID_HEADER = struct.Struct('<4s3I3f')          # magic, nx, ny, nz, sx, sy, sz
_VXS_HEADER = struct.Struct('<4s4I')             # magic, nx, ny, nz, signal_length
_MRVD_HEADER = struct.Struct('<4sIQII')          # magic, version, n, signal_length, meta_length
_MRVM_HEADER = struct.Struct('<4sIIIII')         # magic, version, k, L, D, meta_length


def _read_bytes(path) -> bytes:
    with open(path, 'rb') as handle:
        return handle.read()


def _check_magic(data: bytes, magic: bytes, path) -> None:
    if len(data) < len(magic) or data[:len(magic)] != magic:
        raise FormatError(f'{path}: bad magic, expected {magic.decode()}')


def _unpack_header(header: struct.Struct, data: bytes, path) -> tuple:
    if len(data) < header.size:
        raise FormatError(f'{path}: truncated header ({len(data)} bytes)')
    return header.unpack_from(data, 0)


def _payload(data: bytes, offset: int, count: int, dtype: str, path, what: str) -> np.ndarray:
    itemsize = np.dtype(dtype).itemsize
    needed = offset + count * itemsize
    if len(data) < needed:
        raise FormatError(f'{path}: truncated {what}, need {needed} bytes, file has {len(data)}')
    return np.frombuffer(data, dtype=dtype, count=count, offset=offset)


def encode_meta(meta: Dict[str, str]) -> bytes:
    """key=value lines, sorted by key"""
    lines = []
    for key in sorted(meta):
        value = str(meta[key])
        if '=' in key or '\n' in key or '\n' in value:
            raise FormatError(f'meta entry {key!r} cannot be encoded')
        lines.append(f'{key}={value}')
    return ('\n'.join(lines) + ('\n' if lines else '')).encode('utf-8')


def decode_meta(raw: bytes, path='') -> Dict[str, str]:
    try:
        text = raw.decode('utf-8')
    except UnicodeDecodeError as e:
        raise FormatError(f'{path}: meta block is not UTF-8') from e
    meta = {}
    for line in text.splitlines():
        if not line:
            continue
        if '=' not in line:
            raise FormatError(f'{path}: malformed meta line {line!r}')
        key, value = line.split('=', 1)
        meta[key] = value
    return meta


# ---------------------------------------------------------------- grids

def write_vxm(lattice: Lattice3D, path) -> None:
    """Write a binary mask, payload x-fastest"""
    header = _GRID_HEADER.pack(VXM_MAGIC, *lattice.dims, *lattice.spacing)
    payload = np.ascontiguousarray(lattice.mask.ravel(order='F'), dtype=np.uint8)
    with open(path, 'wb') as handle:
        handle.write(header)
        handle.write(payload.tobytes())


def _read_grid_header(data: bytes, magic: bytes, path):
    _check_magic(data, magic, path)
    _, nx, ny, nz, sx, sy, sz = _unpack_header(_GRID_HEADER, data, path)
    if min(nx, ny, nz) == 0:
        raise DimensionError(f'{path}: zero dimension in header ({nx}, {ny}, {nz})')
    return (nx, ny, nz), (float(sx), float(sy), float(sz))


def read_vxm(path) -> Lattice3D:
    data = _read_bytes(path)
    dims, spacing = _read_grid_header(data, VXM_MAGIC, path)
    count = dims[0] * dims[1] * dims[2]
    if len(data) != _GRID_HEADER.size + count:
        raise FormatError(
            f'{path}: payload has {len(data) - _GRID_HEADER.size} bytes, header declares {count}'
        )
    flat = _payload(data, _GRID_HEADER.size, count, 'u1', path, 'mask payload')
    if np.any(flat > 1):
        raise FormatError(f'{path}: mask payload contains values other than 0 and 1')
    mask = flat.reshape(dims, order='F')
    return Lattice3D(dims=dims, spacing=spacing, mask=mask)


def write_vxf(values: np.ndarray, spacing, path) -> None:
    """Write a float volume with the VXM1 header layout and an f32 payload"""
    values = np.asarray(values)
    if values.ndim != 3:
        raise DimensionError(f'float map must be 3-D, got shape {values.shape}')
    header = _GRID_HEADER.pack(VXF_MAGIC, *values.shape, *spacing)
    payload = np.asarray(values.ravel(order='F'), dtype='<f4')
    with open(path, 'wb') as handle:
        handle.write(header)
        handle.write(payload.tobytes())


def read_vxf(path) -> Tuple[np.ndarray, Tuple[float, float, float]]:
    data = _read_bytes(path)
    dims, spacing = _read_grid_header(data, VXF_MAGIC, path)
    count = dims[0] * dims[1] * dims[2]
    flat = _payload(data, _GRID_HEADER.size, count, '<f4', path, 'map payload')
    return flat.reshape(dims, order='F').astype(np.float32), spacing


def write_vxs(volume: np.ndarray, path) -> None:
    """Write an (nx, ny, nz, L) fingerprint volume"""
    volume = np.asarray(volume)
    if volume.ndim != 4:
        raise DimensionError(f'fingerprint volume must be 4-D, got shape {volume.shape}')
    nx, ny, nz, length = volume.shape
    header = _VXS_HEADER.pack(VXS_MAGIC, nx, ny, nz, length)
    # voxels x-fastest, samples contiguous per voxel
    ordered = np.transpose(volume, (2, 1, 0, 3)).astype('<f4')
    with open(path, 'wb') as handle:
        handle.write(header)
        handle.write(np.ascontiguousarray(ordered).tobytes())


def read_vxs(path) -> np.ndarray:
    data = _read_bytes(path)
    _check_magic(data, VXS_MAGIC, path)
    _, nx, ny, nz, length = _unpack_header(_VXS_HEADER, data, path)
    if min(nx, ny, nz, length) == 0:
        raise DimensionError(f'{path}: zero dimension in header')
    flat = _payload(data, _VXS_HEADER.size, nx * ny * nz * length, '<f4', path, 'signal payload')
    return np.transpose(flat.reshape(nz, ny, nx, length), (2, 1, 0, 3)).astype(np.float32)


def sniff_magic(path) -> bytes:
    with open(path, 'rb') as handle:
        return handle.read(4)


# ---------------------------------------------------------- dictionaries

def write_mrvd(dictionary: Dictionary, path) -> None:
    meta = encode_meta(dictionary.meta)
    header = _MRVD_HEADER.pack(
        MRVD_MAGIC, MRVD_VERSION, dictionary.n_entries, dictionary.signal_length, len(meta)
    )
    with open(path, 'wb') as handle:
        handle.write(header)
        handle.write(meta)
        handle.write(np.asarray(dictionary.params, dtype='<f8').tobytes())
        handle.write(np.asarray(dictionary.signals, dtype='<f4').tobytes())
    logger.debug(f'Wrote dictionary with {dictionary.n_entries} entries to {path}')


def read_mrvd(path) -> Dictionary:
    data = _read_bytes(path)
    _check_magic(data, MRVD_MAGIC, path)
    _, version, n_entries, length, meta_length = _unpack_header(_MRVD_HEADER, data, path)
    if version > MRVD_VERSION:
        raise VersionError(f'{path}: dictionary version {version} is newer than supported {MRVD_VERSION}')
    if version < 1:
        raise FormatError(f'{path}: invalid dictionary version {version}')

    offset = _MRVD_HEADER.size
    expected = offset + meta_length + n_entries * 4 * 8 + n_entries * length * 4
    if len(data) != expected:
        raise FormatError(f'{path}: file has {len(data)} bytes, header implies {expected}')

    meta = decode_meta(data[offset:offset + meta_length], path)
    offset += meta_length
    params = _payload(data, offset, n_entries * 4, '<f8', path, 'parameter table')
    offset += n_entries * 4 * 8
    signals = _payload(data, offset, n_entries * length, '<f4', path, 'signal matrix')
    return Dictionary(
        params=params.reshape(n_entries, 4).astype(np.float64),
        signals=signals.reshape(n_entries, length).astype(np.float32),
        meta=meta,
    )


# ---------------------------------------------------------------- models

def write_mrvm(model: RegressionModel, path) -> None:
    meta = encode_meta(model.meta)
    header = _MRVM_HEADER.pack(
        MRVM_MAGIC, MRVM_VERSION, model.k, model.param_dim, model.signal_dim, len(meta)
    )
    blocks = [model.signal_mean, model.signal_std]
    for k in range(model.k):
        blocks.extend([
            model.priors[k:k + 1], model.c[k], model.gamma[k], model.a[k], model.b[k], model.sigma[k],
        ])
    with open(path, 'wb') as handle:
        handle.write(header)
        handle.write(meta)
        for block in blocks:
            handle.write(np.ascontiguousarray(block, dtype='<f8').tobytes())


def read_mrvm(path) -> RegressionModel:
    data = _read_bytes(path)
    _check_magic(data, MRVM_MAGIC, path)
    _, version, k, dim_l, dim_d, meta_length = _unpack_header(_MRVM_HEADER, data, path)
    if version > MRVM_VERSION:
        raise VersionError(f'{path}: model version {version} is newer than supported {MRVM_VERSION}')
    if version < 1 or k < 1:
        raise FormatError(f'{path}: invalid model header (version {version}, k {k})')

    per_component = 1 + dim_l + dim_l * dim_l + dim_d * dim_l + dim_d + dim_d
    offset = _MRVM_HEADER.size
    expected = offset + meta_length + 8 * (2 * dim_d + k * per_component)
    if len(data) != expected:
        raise FormatError(f'{path}: file has {len(data)} bytes, header implies {expected}')

    meta = decode_meta(data[offset:offset + meta_length], path)
    offset += meta_length
    values = _payload(data, offset, 2 * dim_d + k * per_component, '<f8', path, 'model blocks')
    values = values.astype(np.float64)

    cursor = 0

    def take(count):
        nonlocal cursor
        block = values[cursor:cursor + count]
        cursor += count
        return block

    signal_mean = take(dim_d).copy()
    signal_std = take(dim_d).copy()
    priors, c, gamma, a, b, sigma = [], [], [], [], [], []
    for _ in range(k):
        priors.append(take(1)[0])
        c.append(take(dim_l))
        gamma.append(take(dim_l * dim_l).reshape(dim_l, dim_l))
        a.append(take(dim_d * dim_l).reshape(dim_d, dim_l))
        b.append(take(dim_d))
        sigma.append(take(dim_d))

    return RegressionModel(
        priors=np.array(priors), c=np.array(c), gamma=np.array(gamma), a=np.array(a),
        b=np.array(b), sigma=np.array(sigma), signal_mean=signal_mean, signal_std=signal_std,
        meta=meta,
    )
