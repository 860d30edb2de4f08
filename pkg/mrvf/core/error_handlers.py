"""
Error hierarchy and exit-code handling for the MRvF toolkit
Provides the exception classes raised by every module and the mapping
from exceptions to process exit codes used by the command line
"""
import logging
import traceback
from typing import Dict, Optional, Tuple, Type

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_RUNTIME = 3


class MRVFError(Exception):
    """Base class for all toolkit errors"""
    pass


class ValidationError(MRVFError):
    """Configuration or precondition failure, carries errors keyed by dotted path"""

    def __init__(self, message, errors: Optional[Dict[str, str]] = None):
        if isinstance(message, dict):
            errors = message
            message = '; '.join(f'{key}: {value}' for key, value in sorted(message.items()))
        super().__init__(message)
        self.errors = errors or {}

    def __reduce__(self):
        return self.__class__, (str(self), self.errors)


class FormatError(MRVFError):
    """Malformed or truncated binary file"""
    pass


class VersionError(MRVFError):
    """File written by a newer format version"""
    pass


class DimensionError(MRVFError):
    """Lattice dimensions that cannot be used"""
    pass


class EmptyMask(MRVFError):
    """Characterization requested on a lattice without vessel cells"""
    pass


class InfeasibleGeometry(MRVFError):
    """Requested vessel packing cannot be realized"""
    pass


class StepTooCoarse(MRVFError):
    """Time step too large for the field offsets (phase aliasing)"""
    pass


class ZeroSignal(MRVFError):
    """Fingerprint with zero norm"""
    pass


class LengthMismatch(MRVFError):
    """Vectors or tables with incompatible lengths"""
    pass


class DegenerateComponent(MRVFError):
    """Mixture component whose responsibility mass vanished"""
    pass


class ConvergenceError(MRVFError):
    """EM log-likelihood decreased between iterations"""
    pass


class DegenerateSample(MRVFError):
    """Statistical test on samples without spread"""
    pass


class EmptyRoi(MRVFError):
    """Region of interest without voxels"""
    pass


class EntryError(MRVFError):
    """Failure while building one dictionary entry or voxel"""

    def __init__(self, index: int, error: Exception):
        super().__init__(f'entry {index}: {type(error).__name__}: {error}')
        self.index = index
        self.error = error

    def __reduce__(self):
        return self.__class__, (self.index, self.error)


class VoxelError(MRVFError):
    """Failure while reconstructing one voxel"""

    def __init__(self, coords: Tuple[int, ...], error: Exception):
        super().__init__(f'voxel {tuple(int(c) for c in coords)}: {type(error).__name__}: {error}')
        self.coords = tuple(int(c) for c in coords)
        self.error = error

    def __reduce__(self):
        return self.__class__, (self.coords, self.error)


class StageError(MRVFError):
    """Failure inside a named evaluation stage"""

    def __init__(self, stage: str, error: Exception):
        super().__init__(f'stage {stage} failed: {type(error).__name__}: {error}')
        self.stage = stage
        self.error = error

    def __reduce__(self):
        return self.__class__, (self.stage, self.error)


_HANDLERS: Dict[Type[BaseException], Tuple[int, int, str]] = {}


def register_error_handlers():
    """Register exit code, log level and label for every error class"""
    _HANDLERS.clear()
    _HANDLERS[ValidationError] = (EXIT_VALIDATION, logging.ERROR, 'Validation Error')
    _HANDLERS[FormatError] = (EXIT_RUNTIME, logging.ERROR, 'Format Error')
    _HANDLERS[VersionError] = (EXIT_RUNTIME, logging.ERROR, 'Version Error')
    _HANDLERS[StageError] = (EXIT_RUNTIME, logging.ERROR, 'Evaluation Stage Failed')
    _HANDLERS[EntryError] = (EXIT_RUNTIME, logging.ERROR, 'Entry Failed')
    _HANDLERS[VoxelError] = (EXIT_RUNTIME, logging.ERROR, 'Voxel Failed')
    _HANDLERS[MRVFError] = (EXIT_RUNTIME, logging.ERROR, 'Runtime Error')
    _HANDLERS[OSError] = (EXIT_RUNTIME, logging.ERROR, 'I/O Error')
    return _HANDLERS


def _lookup(error: BaseException) -> Optional[Tuple[int, int, str]]:
    if not _HANDLERS:
        register_error_handlers()
    for cls in type(error).__mro__:
        if cls in _HANDLERS:
            return _HANDLERS[cls]
    return None


def exit_code_for(error: BaseException) -> int:
    """Exit code a command returns for this error"""
    handler = _lookup(error)
    return handler[0] if handler else EXIT_RUNTIME


def handle_command_error(error: BaseException, logger: logging.Logger) -> int:
    """
    Log an error raised by a command and return its exit code

    Known errors are logged on one line; anything else is logged at
    CRITICAL with the traceback.
    """
    handler = _lookup(error)
    if handler is None:
        logger.critical(f'Unexpected error: {type(error).__name__}: {str(error)}')
        logger.critical(traceback.format_exc())
        return EXIT_RUNTIME

    code, level, label = handler
    logger.log(level, f'{label}: {str(error)}')
    if isinstance(error, ValidationError):
        for key, message in sorted(error.errors.items()):
            logger.log(level, f'  {key}: {message}')
    return code


def create_error_response(error: BaseException) -> Dict:
    """
    Create a standardized error record for reports

    Returns:
        dict with error label, message and exit code
    """
    handler = _lookup(error)
    label = handler[2] if handler else 'Unexpected Error'
    response = {
        'success': False,
        'error': label,
        'message': str(error),
        'code': exit_code_for(error),
    }
    if isinstance(error, ValidationError) and error.errors:
        response['details'] = dict(error.errors)
    return response
