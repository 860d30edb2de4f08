"""
Pipeline configuration file for the MRvF toolkit
Flat UTF-8 key=value file with dotted section prefixes (physics.b0=4.7).
Every command loads it through load_pipeline_config, which validates the
whole file before anything is written.
"""
import logging
import os
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Tuple

from config.settings import Config
from mrvf.core.error_handlers import ValidationError
from mrvf.models.models import ClipRules, Method, PARAM_NAMES, PhysicsParams, SequenceSpec
from mrvf.utils.utils import config_hash, format_float
from mrvf.utils.validators import SCHEMA, Validator

logger = logging.getLogger(__name__)


@dataclass
class GeometryBlock:
    model: str
    dims: Tuple[int, int, int]
    spacing: Tuple[float, float, float]
    n: int
    bvf_range: Tuple[float, float]
    r_range: Tuple[float, float]
    mask_dir: Optional[str] = None
    voxel_um: Tuple[float, float, float] = Config.DEFAULT_VOXEL_UM
    erosion_iterations: int = 0


@dataclass
class SamplingBlock:
    so2_range: Tuple[float, float]
    t2_range: Tuple[float, float]
    seed: int
    n: Optional[int] = None


@dataclass
class ReconstructionBlock:
    method: Method
    clips: ClipRules
    k: Optional[int] = None


@dataclass
class EvalBlock:
    snr: float
    n_test: int
    arms: List[Tuple[str, str]]
    dictionary_size: int
    dims: Tuple[int, int, int]
    spacing: Tuple[float, float, float]
    dictionary: Optional[str] = None
    model: Optional[str] = None


@dataclass
class PipelineConfig:
    """Validated pipeline configuration with its canonical values"""
    physics: PhysicsParams
    sequence: SequenceSpec
    geometry: GeometryBlock
    sampling: SamplingBlock
    reconstruction: ReconstructionBlock
    eval: EvalBlock
    values: Dict[str, str] = field(default_factory=dict)
    source: str = ''

    @property
    def config_hash(self) -> str:
        return config_hash(self.values)

    @property
    def seed(self) -> int:
        return self.sampling.seed


def parse_config_text(text: str, source: str = '<config>') -> Dict[str, str]:
    """
    Parse key=value lines; '#' starts a comment line, blank lines are skipped

    Raises:
        ValidationError: malformed lines or duplicate keys, all reported at once
    """
    raw = {}
    errors = {}
    for number, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith('#'):
            continue
        if '=' not in stripped:
            errors[f'line {number}'] = f'expected key=value, got {stripped!r}'
            continue
        key, value = (part.strip() for part in stripped.split('=', 1))
        if not key:
            errors[f'line {number}'] = 'empty key'
        elif key in raw:
            errors[key] = f'duplicate key (line {number})'
        else:
            raw[key] = value
    if errors:
        raise ValidationError(errors)
    return raw


def load_pipeline_config(path: str, seed: Optional[int] = None,
                         required_paths: Iterable[str] = ()) -> PipelineConfig:
    """
    Read, validate and resolve a pipeline configuration file

    Args:
        path: config file
        seed: --seed override of sampling.seed
        required_paths: artifact keys the calling command needs to exist

    Raises:
        ValidationError: every problem found, keyed by dotted path
    """
    if not os.path.isfile(path):
        raise ValidationError({'--config': f"file '{path}' does not exist"})
    with open(path, 'r', encoding='utf-8') as handle:
        raw = parse_config_text(handle.read(), source=path)
    base_dir = os.path.dirname(os.path.abspath(path))
    return from_values(raw, base_dir=base_dir, seed=seed, required_paths=required_paths, source=path)


def from_values(raw: Dict[str, str], base_dir: str = '', seed: Optional[int] = None,
                required_paths: Iterable[str] = (), source: str = '') -> PipelineConfig:
    """Validate raw key=value pairs and build the PipelineConfig"""
    raw = {key: value.strip() for key, value in raw.items()}
    if seed is not None:
        if int(seed) < 0:
            raise ValidationError({'--seed': 'must be >= 0'})
        raw['sampling.seed'] = str(int(seed))

    required_paths = tuple(required_paths)
    is_valid, errors = Validator.validate_pipeline(raw, base_dir=base_dir, required_paths=required_paths)
    if not is_valid:
        raise ValidationError(errors)

    values = _resolve_values(raw, base_dir)

    try:
        physics = PhysicsParams(**{
            name: float(values[f'physics.{name}']) for name in PhysicsParams.__dataclass_fields__
        })
        sequence = SequenceSpec(
            tr=float(values['sequence.tr']),
            n_echoes=int(values['sequence.n_echoes']),
            delta_te=float(values['sequence.delta_te']),
            se_time=float(values['sequence.se_time']),
        )
    except ValidationError as e:
        raise ValidationError(e.errors or {'physics': str(e)})

    geometry = GeometryBlock(
        model=values['geometry.model'],
        dims=_int_triple(values['geometry.dims']),
        spacing=_float_triple(values['geometry.spacing']),
        n=int(values['geometry.n']),
        bvf_range=_float_pair(values['geometry.bvf_range']),
        r_range=_float_pair(values['geometry.r_range']),
        mask_dir=values.get('geometry.mask_dir'),
        voxel_um=_float_triple(values['geometry.voxel_um']),
        erosion_iterations=int(values['geometry.erosion_iterations']),
    )
    sampling = SamplingBlock(
        so2_range=_float_pair(values['sampling.so2_range']),
        t2_range=_float_pair(values['sampling.t2_range']),
        seed=int(values['sampling.seed']),
        n=int(values['sampling.n']) if 'sampling.n' in values else None,
    )
    reconstruction = ReconstructionBlock(
        method=Method(values['reconstruction.method']),
        clips=ClipRules({name: _clip(values[f'reconstruction.clip.{name}']) for name in PARAM_NAMES}),
        k=int(values['reconstruction.k']) if 'reconstruction.k' in values else None,
    )
    evaluation = EvalBlock(
        snr=float(values['eval.snr']),
        n_test=int(values['eval.n_test']),
        arms=[tuple(arm.split(':')) for arm in values['eval.arms'].split(',')],
        dictionary_size=int(values['eval.dictionary_size']),
        dims=_int_triple(values['eval.dims']),
        spacing=_float_triple(values['eval.spacing']),
        dictionary=values.get('eval.dictionary'),
        model=values.get('eval.model'),
    )

    config = PipelineConfig(
        physics=physics, sequence=sequence, geometry=geometry, sampling=sampling,
        reconstruction=reconstruction, eval=evaluation, values=values, source=source,
    )
    logger.debug(f'Loaded pipeline config {source or "<values>"} (hash {config.config_hash[:12]})')
    return config


def _resolve_values(raw: Dict[str, str], base_dir: str) -> Dict[str, str]:
    """Fill defaults and canonicalize every value so the hash is stable"""
    values = {}
    model = raw['geometry.model']

    defaults = {key: default for key, (_, default) in SCHEMA.items() if default is not None}
    defaults['geometry.dims'] = _triple_text(Config.DEFAULT_DIMS_2D if model == 'disks2d'
                                             else Config.DEFAULT_DIMS_3D)
    defaults['geometry.bvf_range'] = _pair_text(Config.DEFAULT_BVF_RANGE)
    defaults['geometry.r_range'] = _pair_text(Config.DEFAULT_R_RANGE)
    defaults['geometry.voxel_um'] = _triple_text(Config.DEFAULT_VOXEL_UM)
    defaults['sampling.so2_range'] = _pair_text(Config.DEFAULT_SO2_RANGE)
    defaults['sampling.t2_range'] = _pair_text(Config.DEFAULT_T2_RANGE)
    for name, (lo, hi) in Config.DEFAULT_CLIPS.items():
        defaults[f'reconstruction.clip.{name}'] = f'{format_float(lo)},{"" if hi is None else format_float(hi)}'

    for key, (kind, _) in SCHEMA.items():
        text = raw.get(key, defaults.get(key))
        if text is None:
            continue
        values[key] = _canonical(kind, text, base_dir)

    values.setdefault('eval.dims', values['geometry.dims'])
    values.setdefault('eval.spacing', values['geometry.spacing'])
    return values


def _canonical(kind: str, text: str, base_dir: str) -> str:
    if kind in ('positive', 'nonneg', 'fraction', 'dt', 'number', 'snr'):
        return format_float(float(text))
    if kind in ('count', 'nonneg_int'):
        return str(int(text))
    if kind in ('fraction_range', 'positive_range'):
        return _pair_text(_float_pair(text))
    if kind == 'dims':
        return _triple_text(_int_triple(text))
    if kind == 'spacing':
        return _triple_text(_float_triple(text))
    if kind == 'clip':
        lo, hi = _clip(text)
        return f'{format_float(lo)},{"" if hi is None else format_float(hi)}'
    if kind == 'path':
        return text if os.path.isabs(text) or not base_dir else os.path.normpath(os.path.join(base_dir, text))
    if kind == 'arms':
        return ','.join(arm.strip() for arm in text.split(','))
    return text


def _parts(text: str) -> List[str]:
    return [part.strip() for part in text.split(',')]


def _float_pair(text: str) -> Tuple[float, float]:
    lo, hi = (float(part) for part in _parts(text))
    return lo, hi


def _clip(text: str) -> Tuple[float, Optional[float]]:
    lo, hi = _parts(text)
    return float(lo), (float(hi) if hi else None)


def _int_triple(text: str) -> Tuple[int, int, int]:
    parts = [int(part) for part in _parts(text)]
    return tuple(parts * 3) if len(parts) == 1 else tuple(parts)


def _float_triple(text: str) -> Tuple[float, float, float]:
    parts = [float(part) for part in _parts(text)]
    return tuple(parts * 3) if len(parts) == 1 else tuple(parts)


def _pair_text(pair) -> str:
    return ','.join(format_float(v) for v in pair)


def _triple_text(triple) -> str:
    return ','.join(format_float(v) if isinstance(v, float) else str(int(v)) for v in triple)
