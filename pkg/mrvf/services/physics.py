"""
Physics service
Susceptibility map -> magnetostatic field offset -> GESFIDSE magnetization
evolution -> echo magnitudes -> pre/post-contrast fingerprint.

Units: lengths in um, times in ms (converted to s where combined with
gamma or the diffusion coefficient), fields in Tesla.
"""
import logging
import math
from typing import Dict, Optional, Tuple

import numpy as np
from scipy import fft

from config.settings import Config, get_config
from mrvf.core.error_handlers import LengthMismatch, StepTooCoarse, ValidationError, ZeroSignal
from mrvf.models.models import (
    FieldMap, Fingerprint, PhysicsParams, SequenceSpec, SignalTrace, SusceptibilityMap, VoxelGeometry,
)

logger = logging.getLogger(__name__)

AXES = {'x': 0, 'y': 1, 'z': 2}
_EVENT_ATOL = 1e-9


def susceptibility_from_geometry(geom: VoxelGeometry, so2: float, with_contrast: bool,
                                 p: PhysicsParams) -> SusceptibilityMap:
    """Vessel cells get dchi_deoxy * hct * (1 - so2) (+ dchi_uspio with contrast)"""
    if not 0.0 <= so2 <= 1.0:
        raise ValidationError({'so2': f'must lie in [0, 1], got {so2}'})
    offset = p.dchi_deoxy * p.hct * (1.0 - so2)
    if with_contrast:
        offset += p.dchi_uspio
    lattice = geom.lattice
    values = lattice.mask.astype(np.float64) * offset
    return SusceptibilityMap(dims=lattice.dims, spacing=lattice.spacing, values=values)


def wave_numbers(dims, spacing) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Angular wave numbers (rad/um) per axis, broadcastable to dims"""
    ks = []
    for axis, (n, s) in enumerate(zip(dims, spacing)):
        k = 2.0 * np.pi * fft.fftfreq(int(n), d=float(s))
        shape = [1, 1, 1]
        shape[axis] = int(n)
        ks.append(k.reshape(shape))
    return tuple(ks)


def default_b0_axis(dims) -> str:
    """z, except for single-slice lattices where B0 lies in-plane along y"""
    return 'y' if int(dims[2]) == 1 else 'z'


def solve_field(chi: SusceptibilityMap, b0: float, b0_axis: Optional[str] = None,
                workers: Optional[int] = None) -> FieldMap:
    """
    Fourier-domain dipole convolution

    dB = b0 * IFT[ FT[chi] * (1/3 - k_b0^2 / |k|^2) ] with the k = 0
    coefficient set to zero (periodic boundaries, zero-mean field).
    """
    dims = tuple(chi.dims)
    b0_axis = b0_axis or default_b0_axis(dims)
    if b0_axis not in AXES:
        raise ValidationError({'b0_axis': f"must be one of x, y, z, got '{b0_axis}'"})
    if dims[AXES[b0_axis]] < 2:
        raise ValidationError({'b0_axis': f'axis {b0_axis} has a single cell'})
    workers = workers or get_config().FFT_WORKERS

    kx, ky, kz = wave_numbers(dims, chi.spacing)
    k_sq = kx ** 2 + ky ** 2 + kz ** 2
    k_axis = (kx, ky, kz)[AXES[b0_axis]]
    with np.errstate(divide='ignore', invalid='ignore'):
        kernel = 1.0 / 3.0 - k_axis ** 2 / k_sq
    kernel[0, 0, 0] = 0.0

    spectrum = fft.fftn(chi.values, workers=workers)
    spectrum *= kernel
    values = b0 * fft.ifftn(spectrum, workers=workers).real
    return FieldMap(dims=dims, spacing=tuple(chi.spacing), values=values)


def _event_grid(seq: SequenceSpec) -> Tuple[np.ndarray, np.ndarray]:
    """Sorted event instants (echoes, refocus, spin echo) and the echo instants"""
    echoes = seq.echo_times()
    events = np.unique(np.concatenate([echoes, [seq.refocus_time, seq.se_time]]))
    return events, echoes


def simulate_gesfidse(geom: VoxelGeometry, field: FieldMap, t2: float, p: PhysicsParams,
                      seq: SequenceSpec, workers: Optional[int] = None) -> SignalTrace:
    """
    Evolve the complex transverse magnetization of the lattice

    Each interval between consecutive events is split into equal steps of
    at most p.dt. A step multiplies by exp(-i gamma dB h) exp(-h / t2) and
    applies diffusion as exp(-D |k|^2 h) in Fourier space. The lattice is
    conjugated at the refocusing instant; |mean| is recorded at every echo
    and at the spin-echo time.

    Raises:
        StepTooCoarse: gamma * max|dB| * dt exceeds the phase limit
    """
    if not t2 > 0:
        raise ValidationError({'t2': 'must be > 0'})
    if tuple(field.dims) != tuple(geom.lattice.dims):
        raise LengthMismatch(f'field dims {field.dims} vs lattice dims {geom.lattice.dims}')
    workers = workers or get_config().FFT_WORKERS

    omega = p.gamma * field.values
    max_phase = float(np.max(np.abs(omega))) * p.dt * 1e-3
    if max_phase > Config.MAX_PHASE_PER_STEP:
        raise StepTooCoarse(
            f'gamma*max|dB|*dt = {max_phase:.3f} rad exceeds {Config.MAX_PHASE_PER_STEP} rad; reduce physics.dt'
        )

    diffusing = p.diffusion > 0
    if diffusing:
        kx, ky, kz = wave_numbers(field.dims, field.spacing)
        k_sq = kx ** 2 + ky ** 2 + kz ** 2

    propagators: Dict[float, Tuple[np.ndarray, Optional[np.ndarray]]] = {}

    def propagator(h: float):
        if h not in propagators:
            h_s = h * 1e-3
            precession = np.exp(-1j * omega * h_s) * math.exp(-h / t2)
            diffusion = np.exp(-p.diffusion * k_sq * h_s) if diffusing else None
            propagators[h] = (precession, diffusion)
        return propagators[h]

    events, echoes = _event_grid(seq)
    magnetization = np.ones(field.dims, dtype=np.complex128)
    recorded = []
    spin_echo = None
    now = 0.0

    for instant in events:
        interval = instant - now
        n_steps = max(1, math.ceil(interval / p.dt - _EVENT_ATOL))
        precession, diffusion = propagator(interval / n_steps)
        for _ in range(n_steps):
            magnetization *= precession
            if diffusion is not None:
                spectrum = fft.fftn(magnetization, workers=workers, overwrite_x=True)
                spectrum *= diffusion
                magnetization = fft.ifftn(spectrum, workers=workers, overwrite_x=True)
        now = instant

        if abs(instant - seq.refocus_time) <= _EVENT_ATOL:
            np.conjugate(magnetization, out=magnetization)
        magnitude = float(np.abs(magnetization.mean()))
        if np.any(np.abs(echoes - instant) <= _EVENT_ATOL):
            recorded.append(magnitude)
        if abs(instant - seq.se_time) <= _EVENT_ATOL:
            spin_echo = magnitude

    return SignalTrace(times=echoes.copy(), magnitudes=np.array(recorded), spin_echo=spin_echo)


def make_fingerprint(pre: SignalTrace, post: SignalTrace, meta: Optional[Dict[str, str]] = None) -> Fingerprint:
    """
    Concatenate pre then post magnitudes and normalize to unit L2

    Raises:
        LengthMismatch: traces on different echo grids
        ZeroSignal: concatenation has zero norm
    """
    if len(pre.magnitudes) != len(post.magnitudes) or not np.array_equal(pre.times, post.times):
        raise LengthMismatch(f'pre has {len(pre.magnitudes)} echoes, post has {len(post.magnitudes)}')
    values = np.concatenate([pre.magnitudes, post.magnitudes]).astype(np.float64)
    norm = float(np.linalg.norm(values))
    if norm == 0.0:
        raise ZeroSignal('pre/post concatenation has zero norm')
    return Fingerprint(values=values / norm, meta=dict(meta or {}))


def simulate_fingerprint(geom: VoxelGeometry, so2: float, t2: float, p: PhysicsParams,
                         seq: SequenceSpec, workers: Optional[int] = None) -> Fingerprint:
    """Pre- and post-contrast simulation of one voxel, concatenated"""
    traces = []
    for with_contrast in (False, True):
        chi = susceptibility_from_geometry(geom, so2, with_contrast, p)
        field = solve_field(chi, p.b0, workers=workers)
        traces.append(simulate_gesfidse(geom, field, t2, p, seq, workers=workers))
    meta = {'so2': repr(float(so2)), 't2': repr(float(t2)), 'geometry': geom.name}
    return make_fingerprint(traces[0], traces[1], meta=meta)
