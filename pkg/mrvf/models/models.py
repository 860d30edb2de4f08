"""
Domain types for the MRvF toolkit
Lattices, geometries, physics/sequence parameters, signals, dictionaries
and regression models shared by every service
"""
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Optional, Tuple

import numpy as np
import pandas as pd

from config.settings import Config
from mrvf.core.error_handlers import DimensionError, LengthMismatch, ValidationError

PARAM_NAMES = ('bvf', 'r', 'so2', 't2')


class Provenance(Enum):
    """Origin of a voxel geometry"""
    DISKS_2D = 'Disks2D'
    CYLINDERS_3D = 'Cylinders3D'
    REALISTIC = 'RealisticMask'
    ERODED = 'Eroded'


class Method(Enum):
    """Parameter estimation method"""
    DBM = 'dbm'
    DBL = 'dbl'


@dataclass
class Lattice3D:
    """Binary vessel occupancy on a regular grid, mask indexed [x, y, z]"""
    dims: Tuple[int, int, int]
    spacing: Tuple[float, float, float]
    mask: np.ndarray

    def __post_init__(self):
        self.dims = tuple(int(d) for d in self.dims)
        self.spacing = tuple(float(s) for s in self.spacing)
        if len(self.dims) != 3 or len(self.spacing) != 3:
            raise DimensionError('dims and spacing must be triples')
        if min(self.dims) < 1:
            raise DimensionError(f'dims must be >= 1, got {self.dims}')
        if min(self.spacing) <= 0:
            raise DimensionError(f'spacing must be > 0, got {self.spacing}')
        mask = np.asarray(self.mask)
        if mask.size != self.n_cells:
            raise DimensionError(f'mask has {mask.size} cells, dims {self.dims} need {self.n_cells}')
        self.mask = np.ascontiguousarray(mask.reshape(self.dims), dtype=np.uint8)

    @property
    def n_cells(self) -> int:
        return self.dims[0] * self.dims[1] * self.dims[2]

    @property
    def extent(self) -> Tuple[float, float, float]:
        """Physical size in um per axis"""
        return tuple(n * s for n, s in zip(self.dims, self.spacing))

    @property
    def occupied(self) -> int:
        return int(np.count_nonzero(self.mask))

    def same_as(self, other: 'Lattice3D') -> bool:
        return (self.dims == other.dims and self.spacing == other.spacing
                and np.array_equal(self.mask, other.mask))


@dataclass
class VoxelGeometry:
    """A lattice with its characterization"""
    lattice: Lattice3D
    bvf: float
    mean_radius: float
    provenance: Provenance
    seed: int = 0
    name: str = ''

    def __post_init__(self):
        if not 0.0 <= self.bvf <= 1.0:
            raise ValidationError(f'bvf must lie in [0, 1], got {self.bvf}')
        if self.mean_radius < 0:
            raise ValidationError(f'mean_radius must be >= 0, got {self.mean_radius}')
        if (self.mean_radius == 0) != (self.bvf == 0):
            raise ValidationError('mean_radius must be 0 exactly when bvf is 0')


@dataclass
class CylinderSpec:
    """Straight vessel: axis point (um), unit direction, radius (um)"""
    axis_point: Tuple[float, float, float]
    direction: Tuple[float, float, float]
    radius: float

    def __post_init__(self):
        self.axis_point = tuple(float(v) for v in self.axis_point)
        self.direction = tuple(float(v) for v in self.direction)
        norm = math.sqrt(sum(v * v for v in self.direction))
        if abs(norm - 1.0) > 1e-9:
            raise ValidationError(f'direction must be a unit vector, |d| = {norm}')
        if self.radius <= 0:
            raise ValidationError(f'radius must be > 0, got {self.radius}')


@dataclass
class PhysicsParams:
    """Magnetostatic constants and propagation settings of one simulation"""
    b0: float = Config.DEFAULT_B0
    gamma: float = Config.DEFAULT_GAMMA
    hct: float = Config.DEFAULT_HCT
    dchi_deoxy: float = Config.DEFAULT_DCHI_DEOXY
    dchi_uspio: float = Config.DEFAULT_DCHI_USPIO
    diffusion: float = Config.DEFAULT_DIFFUSION
    dt: float = Config.DEFAULT_DT

    def __post_init__(self):
        errors = {}
        if self.b0 <= 0:
            errors['physics.b0'] = 'must be > 0'
        if not 0.0 <= self.hct <= 1.0:
            errors['physics.hct'] = 'must lie in [0, 1]'
        if self.diffusion < 0:
            errors['physics.diffusion'] = 'must be >= 0'
        if not 0.0 < self.dt <= 1.0:
            errors['physics.dt'] = 'must lie in (0, 1] ms'
        if errors:
            raise ValidationError(errors)

    def to_meta(self) -> Dict[str, str]:
        return {f'physics.{key}': repr(float(getattr(self, key))) for key in self.__dataclass_fields__}

    @classmethod
    def from_meta(cls, meta: Dict[str, str]) -> 'PhysicsParams':
        return cls(**{key: float(meta[f'physics.{key}']) for key in cls.__dataclass_fields__})


@dataclass
class SequenceSpec:
    """GESFIDSE timing: echoes at i * delta_te, ideal 180 deg pulse at se_time / 2"""
    tr: float = Config.DEFAULT_TR
    n_echoes: int = Config.DEFAULT_N_ECHOES
    delta_te: float = Config.DEFAULT_DELTA_TE
    se_time: float = Config.DEFAULT_SE_TIME

    def __post_init__(self):
        self.n_echoes = int(self.n_echoes)
        errors = {}
        if self.n_echoes < 1:
            errors['sequence.n_echoes'] = 'must be >= 1'
        if self.delta_te <= 0:
            errors['sequence.delta_te'] = 'must be > 0'
        if self.se_time <= 0:
            errors['sequence.se_time'] = 'must be > 0'
        if not errors:
            echoes = self.echo_times()
            if np.any(np.isclose(echoes, self.refocus_time, rtol=0.0, atol=1e-9)):
                errors['sequence.se_time'] = 'an echo coincides with the refocusing pulse'
        if errors:
            raise ValidationError(errors)

    @property
    def refocus_time(self) -> float:
        return self.se_time / 2.0

    def echo_times(self) -> np.ndarray:
        return self.delta_te * np.arange(1, self.n_echoes + 1, dtype=np.float64)

    @property
    def horizon(self) -> float:
        return max(float(self.echo_times()[-1]), self.se_time)

    def to_meta(self) -> Dict[str, str]:
        return {
            'sequence.tr': repr(float(self.tr)),
            'sequence.n_echoes': str(self.n_echoes),
            'sequence.delta_te': repr(float(self.delta_te)),
            'sequence.se_time': repr(float(self.se_time)),
        }

    @classmethod
    def from_meta(cls, meta: Dict[str, str]) -> 'SequenceSpec':
        return cls(
            tr=float(meta['sequence.tr']),
            n_echoes=int(meta['sequence.n_echoes']),
            delta_te=float(meta['sequence.delta_te']),
            se_time=float(meta['sequence.se_time']),
        )


@dataclass
class SusceptibilityMap:
    dims: Tuple[int, int, int]
    spacing: Tuple[float, float, float]
    values: np.ndarray


@dataclass
class FieldMap:
    """Field offset in Tesla per cell, spatial mean zero"""
    dims: Tuple[int, int, int]
    spacing: Tuple[float, float, float]
    values: np.ndarray


@dataclass
class SignalTrace:
    """Magnitude of the lattice-mean magnetization at the echo times"""
    times: np.ndarray
    magnitudes: np.ndarray
    spin_echo: Optional[float] = None

    def __post_init__(self):
        if len(self.times) != len(self.magnitudes):
            raise LengthMismatch(f'{len(self.times)} times vs {len(self.magnitudes)} magnitudes')


@dataclass
class Fingerprint:
    """Unit-norm concatenation of pre- and post-contrast echo magnitudes"""
    values: np.ndarray
    meta: Dict[str, str] = field(default_factory=dict)

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.values))

    def __len__(self):
        return len(self.values)


@dataclass
class VascularParams:
    bvf: float
    r: float
    so2: float
    t2: float

    def as_array(self) -> np.ndarray:
        return np.array([self.bvf, self.r, self.so2, self.t2], dtype=np.float64)

    @classmethod
    def from_array(cls, values) -> 'VascularParams':
        bvf, r, so2, t2 = (float(v) for v in values)
        return cls(bvf=bvf, r=r, so2=so2, t2=t2)

    def is_physical(self) -> bool:
        return 0.0 <= self.bvf <= 1.0 and self.r >= 0 and 0.0 <= self.so2 <= 1.0 and self.t2 > 0


@dataclass
class Dictionary:
    """Parameter table (n x 4: bvf, r, so2, t2) with its fingerprint matrix"""
    params: np.ndarray
    signals: np.ndarray
    meta: Dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        self.params = np.ascontiguousarray(self.params, dtype=np.float64).reshape(-1, len(PARAM_NAMES))
        self.signals = np.ascontiguousarray(self.signals, dtype=np.float32)
        if self.signals.ndim != 2 or self.signals.shape[0] != self.params.shape[0]:
            raise LengthMismatch(
                f'{self.params.shape[0]} parameter rows vs signal matrix {self.signals.shape}'
            )

    @property
    def n_entries(self) -> int:
        return self.params.shape[0]

    @property
    def signal_length(self) -> int:
        return self.signals.shape[1]

    def entry(self, index: int) -> VascularParams:
        return VascularParams.from_array(self.params[index])

    def column(self, name: str) -> np.ndarray:
        return self.params[:, PARAM_NAMES.index(name)]


@dataclass
class ClipRules:
    """Per-parameter (lo, hi) bounds, hi None means unbounded"""
    bounds: Dict[str, Tuple[float, Optional[float]]] = field(
        default_factory=lambda: dict(Config.DEFAULT_CLIPS)
    )

    def __post_init__(self):
        for name, (lo, hi) in self.bounds.items():
            if name not in PARAM_NAMES:
                raise ValidationError({f'reconstruction.clip.{name}': 'unknown parameter'})
            if lo is not None and hi is not None and not lo < hi:
                raise ValidationError({f'reconstruction.clip.{name}': 'lo must be < hi'})

    def apply(self, estimates: np.ndarray) -> np.ndarray:
        """Clip an (..., 4) estimate array column by column"""
        clipped = np.array(estimates, dtype=np.float64, copy=True)
        for name, (lo, hi) in self.bounds.items():
            column = PARAM_NAMES.index(name)
            clipped[..., column] = np.clip(clipped[..., column], lo, hi)
        return clipped

    def satisfied(self, estimates: np.ndarray) -> bool:
        estimates = np.asarray(estimates)
        for name, (lo, hi) in self.bounds.items():
            column = estimates[..., PARAM_NAMES.index(name)]
            if lo is not None and np.any(column < lo):
                return False
            if hi is not None and np.any(column > hi):
                return False
        return True


@dataclass
class RegressionModel:
    """
    Mixture of locally affine maps, parameters -> standardized signals

    Component arrays are stacked on the first axis: priors (k,), c (k, L),
    gamma (k, L, L), a (k, D, L), b (k, D), sigma (k, D) diagonal variances.
    """
    priors: np.ndarray
    c: np.ndarray
    gamma: np.ndarray
    a: np.ndarray
    b: np.ndarray
    sigma: np.ndarray
    signal_mean: np.ndarray
    signal_std: np.ndarray
    meta: Dict[str, str] = field(default_factory=dict)
    log_likelihoods: List[float] = field(default_factory=list)

    @property
    def k(self) -> int:
        return int(self.priors.shape[0])

    @property
    def param_dim(self) -> int:
        return int(self.c.shape[1])

    @property
    def signal_dim(self) -> int:
        return int(self.b.shape[1])

    def forward_maps(self) -> List[Tuple[np.ndarray, np.ndarray]]:
        """Per-component (A, b) in raw signal units"""
        maps = []
        for a_k, b_k in zip(self.a, self.b):
            maps.append((self.signal_std[:, None] * a_k, self.signal_std * b_k + self.signal_mean))
        return maps


@dataclass
class ParamMaps:
    """Four parameter volumes sharing the fingerprint volume dims"""
    bvf: np.ndarray
    r: np.ndarray
    so2: np.ndarray
    t2: np.ndarray
    method: Method

    @property
    def dims(self) -> Tuple[int, ...]:
        return tuple(self.bvf.shape)

    def stacked(self) -> np.ndarray:
        """(..., 4) array in PARAM_NAMES order"""
        return np.stack([self.bvf, self.r, self.so2, self.t2], axis=-1)

    @classmethod
    def from_stacked(cls, values: np.ndarray, method: Method) -> 'ParamMaps':
        return cls(*(np.ascontiguousarray(values[..., i]) for i in range(len(PARAM_NAMES))), method=method)


@dataclass
class NoiseSpec:
    snr: float
    seed: int = 0

    def __post_init__(self):
        if not self.snr > 0:
            raise ValidationError({'eval.snr': 'must be > 0'})


@dataclass
class RecoveryReport:
    """Per-parameter error summary of one estimation method"""
    method: str
    n: int
    mae: Dict[str, float]
    rmse: Dict[str, float]
    bias: Dict[str, float]

    def to_frame(self, arm: str = '') -> pd.DataFrame:
        """One row per parameter"""
        return pd.DataFrame({
            'arm': [arm] * len(PARAM_NAMES),
            'method': [self.method] * len(PARAM_NAMES),
            'parameter': list(PARAM_NAMES),
            'n': [self.n] * len(PARAM_NAMES),
            'mae': [float(self.mae[name]) for name in PARAM_NAMES],
            'rmse': [float(self.rmse[name]) for name in PARAM_NAMES],
            'bias': [float(self.bias[name]) for name in PARAM_NAMES],
        })


@dataclass
class RoiStats:
    label: str
    n: int
    mean: Dict[str, float]
    std: Dict[str, float]

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({
            'roi': [self.label] * len(PARAM_NAMES),
            'parameter': list(PARAM_NAMES),
            'n': [self.n] * len(PARAM_NAMES),
            'mean': [float(self.mean[name]) for name in PARAM_NAMES],
            'std': [float(self.std[name]) for name in PARAM_NAMES],
        })


@dataclass
class CoverageReport:
    """Parameter-space coverage histograms of a dictionary"""
    n_entries: int
    histograms: Dict[str, Tuple[np.ndarray, np.ndarray]]
    joint: Dict[str, Tuple[np.ndarray, np.ndarray, np.ndarray]]

    def to_frame(self) -> pd.DataFrame:
        """Long table: parameter, bin, lo, hi, count"""
        rows = []
        for name, (counts, edges) in self.histograms.items():
            for index, count in enumerate(counts):
                rows.append({
                    'parameter': name, 'bin': index, 'lo': float(edges[index]),
                    'hi': float(edges[index + 1]), 'count': int(count),
                })
        return pd.DataFrame(rows, columns=['parameter', 'bin', 'lo', 'hi', 'count'])


@dataclass
class ArmResult:
    """Truth and estimates of one (generator family, dictionary family) arm"""
    generator: str
    dictionary: str
    method: str
    truth: np.ndarray
    estimates: np.ndarray
    skipped: int = 0

    @property
    def label(self) -> str:
        return f'{self.generator}:{self.dictionary}'

    @property
    def bias(self) -> Dict[str, float]:
        errors = self.estimates - self.truth
        return {name: float(np.mean(errors[:, i])) for i, name in enumerate(PARAM_NAMES)}
