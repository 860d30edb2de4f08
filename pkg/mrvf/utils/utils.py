"""
Utility functions for the MRvF toolkit
"""
import hashlib
import math
import os
from typing import Dict, Iterable, Tuple

import numpy as np
import pandas as pd


def derive_seed(master_seed: int, index: int) -> int:
    """Private 32-bit stream seed for (master seed, item index)"""
    sequence = np.random.SeedSequence([int(master_seed), int(index)])
    return int(sequence.generate_state(1, dtype=np.uint32)[0])


def canonical_text(values: Dict[str, str]) -> str:
    """Sorted key=value lines"""
    return ''.join(f'{key}={values[key]}\n' for key in sorted(values))


def config_hash(values: Dict[str, str]) -> str:
    return hashlib.sha256(canonical_text(values).encode('utf-8')).hexdigest()


def format_float(value: float) -> str:
    """Shortest repr that round-trips; inf/nan spelled out"""
    value = float(value)
    if math.isnan(value):
        return 'nan'
    if math.isinf(value):
        return 'inf' if value > 0 else '-inf'
    return repr(value)


def format_range(bounds: Tuple[float, float]) -> str:
    lo, hi = bounds
    return f'{format_float(lo)},{"" if hi is None else format_float(hi)}'


def write_tsv(frame: pd.DataFrame, path, comments: Iterable[str] = ()) -> None:
    """UTF-8 TSV with optional leading '# ' comment lines and a one-line header"""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    formatted = frame.copy()
    for column in formatted.columns:
        if pd.api.types.is_float_dtype(formatted[column]):
            formatted[column] = formatted[column].map(format_float)
    with open(path, 'w', encoding='utf-8', newline='\n') as handle:
        for comment in comments:
            handle.write(f'# {comment}\n')
        formatted.to_csv(handle, sep='\t', index=False, lineterminator='\n')


def read_tsv(path) -> Tuple[pd.DataFrame, Dict[str, str]]:
    """Read a TSV written by write_tsv; returns (frame, comment key=value pairs)"""
    comments = {}
    with open(path, 'r', encoding='utf-8') as handle:
        for line in handle:
            if not line.startswith('#'):
                break
            body = line[1:].strip()
            if '=' in body:
                key, value = body.split('=', 1)
                comments[key.strip()] = value.strip()
    frame = pd.read_csv(path, sep='\t', comment='#', dtype=str, keep_default_na=False)
    return frame, comments
