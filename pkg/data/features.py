"""
Binary feature files.

Layout (little-endian throughout):
    4 bytes   magic "PEFT"
    uint32    ndim
    uint32    dims[ndim]
    float32   payload[prod(dims)], row-major
"""
from pathlib import Path
from typing import Union

import numpy as np

from shared.errors import HeaderError, ShapeMismatchError

MAGIC = b"PEFT"
FEATURE_SUFFIX = ".peft"
_WORD = 4


def write_features(path: Union[str, Path], array: np.ndarray) -> Path:
    """Serialize an array as float32 with the PEFT header."""
    path = Path(path)
    payload = np.ascontiguousarray(array, dtype="<f4")
    if payload.ndim == 0:
        payload = payload.reshape(1)
    header = np.array([payload.ndim, *payload.shape], dtype="<u4").tobytes()
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(MAGIC + header + payload.tobytes())
    return path


def read_features(path: Union[str, Path]) -> np.ndarray:
    """
    Load a feature file.

    Raises:
        HeaderError: bad magic bytes or truncated header
        ShapeMismatchError: payload size disagrees with the header dims
    """
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < len(MAGIC) + _WORD or raw[:len(MAGIC)] != MAGIC:
        raise HeaderError(f"{path}: missing PEFT magic bytes")
    ndim = int(np.frombuffer(raw, dtype="<u4", count=1, offset=len(MAGIC))[0])
    header_size = len(MAGIC) + _WORD * (1 + ndim)
    if ndim == 0 or len(raw) < header_size:
        raise HeaderError(f"{path}: truncated header (ndim={ndim})")
    dims = tuple(int(d) for d in np.frombuffer(raw, dtype="<u4", count=ndim, offset=len(MAGIC) + _WORD))
    if min(dims) < 1:
        raise HeaderError(f"{path}: non-positive dimension in {dims}")
    expected = int(np.prod(dims)) * _WORD
    if len(raw) - header_size != expected:
        raise ShapeMismatchError(
            f"{path}: header dims {dims} need {expected} payload bytes, found {len(raw) - header_size}"
        )
    payload = np.frombuffer(raw, dtype="<f4", offset=header_size).reshape(dims)
    return payload.astype(np.float32)
