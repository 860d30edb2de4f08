"""
Input validation utilities for the MRvF toolkit
Provides reusable validation functions for the pipeline configuration
"""
import math
import os
from typing import Dict, Iterable, List, Optional, Tuple

from config.settings import Config
from mrvf.core.error_handlers import ValidationError

GEOMETRY_MODELS = ('disks2d', 'cylinders3d', 'masks')
METHODS = ('dbm', 'dbl')


def _parse_float(value: str) -> float:
    number = float(value)
    if math.isnan(number):
        raise ValueError('nan')
    return number


def _parse_list(value: str) -> List[str]:
    return [part.strip() for part in value.split(',')]


class Validator:
    """Collection of validation methods, each returning (is_valid, error_message)"""

    @staticmethod
    def validate_number(value: str, minimum: Optional[float] = None, maximum: Optional[float] = None,
                        strict_minimum: bool = False) -> Tuple[bool, Optional[str]]:
        """Validate a finite float with optional bounds"""
        try:
            number = _parse_float(value)
        except (TypeError, ValueError):
            return False, f"'{value}' is not a number"

        if math.isinf(number):
            return False, 'must be finite'
        if minimum is not None:
            if strict_minimum and not number > minimum:
                return False, f'must be > {minimum}'
            if not strict_minimum and number < minimum:
                return False, f'must be >= {minimum}'
        if maximum is not None and number > maximum:
            return False, f'must be <= {maximum}'
        return True, None

    @staticmethod
    def validate_positive(value: str) -> Tuple[bool, Optional[str]]:
        return Validator.validate_number(value, minimum=0.0, strict_minimum=True)

    @staticmethod
    def validate_snr(value: str) -> Tuple[bool, Optional[str]]:
        """Positive number, 'inf' allowed as the noiseless sentinel"""
        if value.strip().lower() in ('inf', '+inf', 'infinity'):
            return True, None
        return Validator.validate_positive(value)

    @staticmethod
    def validate_integer(value: str, minimum: int = 0) -> Tuple[bool, Optional[str]]:
        try:
            number = int(value)
        except (TypeError, ValueError):
            return False, f"'{value}' is not an integer"
        if number < minimum:
            return False, f'must be >= {minimum}'
        return True, None

    @staticmethod
    def validate_range(value: str, minimum: Optional[float] = None,
                       maximum: Optional[float] = None) -> Tuple[bool, Optional[str]]:
        """Validate 'lo,hi' with lo < hi"""
        parts = _parse_list(value)
        if len(parts) != 2:
            return False, "must be 'lo,hi'"
        try:
            lo, hi = (_parse_float(part) for part in parts)
        except ValueError:
            return False, 'bounds must be numbers'
        if not lo < hi:
            return False, 'lo must be < hi'
        if minimum is not None and lo < minimum:
            return False, f'lo must be >= {minimum}'
        if maximum is not None and hi > maximum:
            return False, f'hi must be <= {maximum}'
        return True, None

    @staticmethod
    def validate_clip(value: str) -> Tuple[bool, Optional[str]]:
        """Validate 'lo,hi' where hi may be empty (unbounded)"""
        parts = _parse_list(value)
        if len(parts) != 2:
            return False, "must be 'lo,hi' (hi may be empty)"
        try:
            lo = _parse_float(parts[0])
            hi = _parse_float(parts[1]) if parts[1] else None
        except ValueError:
            return False, 'bounds must be numbers'
        if hi is not None and not lo < hi:
            return False, 'lo must be < hi'
        return True, None

    @staticmethod
    def validate_triple(value: str, integer: bool = False) -> Tuple[bool, Optional[str]]:
        """Validate 'a,b,c' of positive numbers (a single value is broadcast)"""
        parts = _parse_list(value)
        if len(parts) not in (1, 3):
            return False, 'must be one value or three comma-separated values'
        for part in parts:
            if integer:
                is_valid, error = Validator.validate_integer(part, minimum=1)
            else:
                is_valid, error = Validator.validate_positive(part)
            if not is_valid:
                return False, error
        return True, None

    @staticmethod
    def validate_choice(value: str, choices: Iterable[str]) -> Tuple[bool, Optional[str]]:
        choices = tuple(choices)
        if value not in choices:
            return False, f"Invalid value '{value}'. Must be one of: {', '.join(choices)}"
        return True, None

    @staticmethod
    def validate_arms(value: str) -> Tuple[bool, Optional[str]]:
        """Validate 'A:B,A:B' generator:dictionary family pairs"""
        for arm in _parse_list(value):
            families = arm.split(':')
            if len(families) != 2:
                return False, f"arm '{arm}' must be 'generator:dictionary'"
            for family in families:
                is_valid, error = Validator.validate_choice(family, GEOMETRY_MODELS)
                if not is_valid:
                    return False, error
        return True, None

    @staticmethod
    def validate_path(value: str, kind: str = 'file') -> Tuple[bool, Optional[str]]:
        if not value:
            return False, 'path is required'
        if kind == 'dir' and not os.path.isdir(value):
            return False, f"directory '{value}' does not exist"
        if kind == 'file' and not os.path.isfile(value):
            return False, f"file '{value}' does not exist"
        return True, None

    @staticmethod
    def validate_pipeline(raw: Dict[str, str], base_dir: str = '',
                          required_paths: Iterable[str] = ()) -> Tuple[bool, Dict[str, str]]:
        """
        Validate a complete pipeline configuration

        Args:
            raw: key=value pairs as read from the file
            base_dir: directory relative paths are resolved against
            required_paths: path keys that must be present and exist for
                the command being run

        Returns:
            (is_valid, errors_dict)
        """
        errors = {}

        for key in raw:
            if key not in SCHEMA:
                errors[key] = 'unknown key'

        for key, (kind, _) in SCHEMA.items():
            if key not in raw:
                continue
            value = raw[key].strip()
            check = _CHECKS[kind]
            is_valid, error = check(value)
            if not is_valid:
                errors[key] = error

        model = raw.get('geometry.model')
        if model is None:
            errors.setdefault('geometry.model', 'is required')
        elif 'geometry.model' not in errors:
            if model == 'masks' and 'geometry.mask_dir' not in raw:
                errors['geometry.mask_dir'] = 'is required when geometry.model=masks'
            if model == 'disks2d' and 'geometry.dims' in raw and 'geometry.dims' not in errors:
                dims = _parse_list(raw['geometry.dims'])
                if int(dims[-1]) != 1:
                    errors['geometry.dims'] = 'disks2d needs a single slice (nz = 1)'

        for key in ('geometry.mask_dir',):
            if key in raw and key not in errors:
                is_valid, error = Validator.validate_path(_resolve(raw[key], base_dir), kind='dir')
                if not is_valid:
                    errors[key] = error

        for key in ('eval.dictionary', 'eval.model'):
            if key in raw and key not in errors and key in required_paths:
                is_valid, error = Validator.validate_path(_resolve(raw[key], base_dir), kind='file')
                if not is_valid:
                    errors[key] = error

        for key in required_paths:
            if key not in raw and key not in errors:
                errors[key] = 'is required for this command'

        if 'eval.arms' in raw and 'eval.arms' not in errors and 'masks' in raw['eval.arms']:
            if 'geometry.mask_dir' not in raw:
                errors['eval.arms'] = 'masks arms need geometry.mask_dir'

        return len(errors) == 0, errors


def _resolve(path: str, base_dir: str) -> str:
    if os.path.isabs(path) or not base_dir:
        return path
    return os.path.join(base_dir, path)


_CHECKS = {
    'positive': Validator.validate_positive,
    'nonneg': lambda v: Validator.validate_number(v, minimum=0.0),
    'fraction': lambda v: Validator.validate_number(v, minimum=0.0, maximum=1.0),
    'dt': lambda v: Validator.validate_number(v, minimum=0.0, maximum=1.0, strict_minimum=True),
    'count': lambda v: Validator.validate_integer(v, minimum=1),
    'nonneg_int': lambda v: Validator.validate_integer(v, minimum=0),
    'fraction_range': lambda v: Validator.validate_range(v, minimum=0.0, maximum=1.0),
    'positive_range': lambda v: Validator.validate_range(v, minimum=0.0),
    'dims': lambda v: Validator.validate_triple(v, integer=True),
    'spacing': Validator.validate_triple,
    'model': lambda v: Validator.validate_choice(v, GEOMETRY_MODELS),
    'method': lambda v: Validator.validate_choice(v, METHODS),
    'clip': Validator.validate_clip,
    'path': lambda v: (True, None) if v else (False, 'path is required'),
    'snr': Validator.validate_snr,
    'arms': Validator.validate_arms,
    'number': Validator.validate_number,
}

# key -> (kind, default text or None)
SCHEMA = {
    'physics.b0': ('positive', repr(Config.DEFAULT_B0)),
    'physics.gamma': ('positive', repr(Config.DEFAULT_GAMMA)),
    'physics.hct': ('fraction', repr(Config.DEFAULT_HCT)),
    'physics.dchi_deoxy': ('number', repr(Config.DEFAULT_DCHI_DEOXY)),
    'physics.dchi_uspio': ('number', repr(Config.DEFAULT_DCHI_USPIO)),
    'physics.diffusion': ('nonneg', repr(Config.DEFAULT_DIFFUSION)),
    'physics.dt': ('dt', repr(Config.DEFAULT_DT)),
    'sequence.tr': ('positive', repr(Config.DEFAULT_TR)),
    'sequence.n_echoes': ('count', str(Config.DEFAULT_N_ECHOES)),
    'sequence.delta_te': ('positive', repr(Config.DEFAULT_DELTA_TE)),
    'sequence.se_time': ('positive', repr(Config.DEFAULT_SE_TIME)),
    'geometry.model': ('model', None),
    'geometry.dims': ('dims', None),
    'geometry.spacing': ('spacing', repr(Config.DEFAULT_SPACING)),
    'geometry.n': ('count', '1'),
    'geometry.bvf_range': ('fraction_range', None),
    'geometry.r_range': ('positive_range', None),
    'geometry.mask_dir': ('path', None),
    'geometry.voxel_um': ('spacing', None),
    'geometry.erosion_iterations': ('nonneg_int', '0'),
    'sampling.so2_range': ('fraction_range', None),
    'sampling.t2_range': ('positive_range', None),
    'sampling.n': ('count', None),
    'sampling.seed': ('nonneg_int', str(Config.DEFAULT_SEED)),
    'reconstruction.method': ('method', 'dbl'),
    'reconstruction.k': ('count', None),
    'reconstruction.clip.bvf': ('clip', None),
    'reconstruction.clip.r': ('clip', None),
    'reconstruction.clip.so2': ('clip', None),
    'reconstruction.clip.t2': ('clip', None),
    'eval.dictionary': ('path', None),
    'eval.model': ('path', None),
    'eval.snr': ('snr', repr(Config.DEFAULT_SNR)),
    'eval.n_test': ('count', '100'),
    'eval.arms': ('arms', 'cylinders3d:cylinders3d,cylinders3d:disks2d'),
    'eval.dictionary_size': ('count', '200'),
    'eval.dims': ('dims', None),
    'eval.spacing': ('spacing', None),
}


def validate_or_error(validation_func, *args, key: Optional[str] = None, **kwargs):
    """
    Helper function to validate and raise ValidationError if invalid

    Usage:
        validate_or_error(Validator.validate_integer, str(args.k), minimum=1, key="--k")
    """
    is_valid, error = validation_func(*args, **kwargs)
    if not is_valid:
        raise ValidationError({key: error} if key else error)
    return True
