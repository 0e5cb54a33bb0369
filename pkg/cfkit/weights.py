"""CFW1 binary weight container.

Layout (all little-endian): b"CFW1", u32 entry count, then per entry
u16 name length, UTF-8 name, u8 dtype code, u8 rank, rank x u64 extents,
raw payload. Entries keep ParamStore order.
"""

import logging
import struct
from pathlib import Path
from typing import Union

import numpy as np

from cfkit.blocks.base import ParamStore
from cfkit.exceptions import IngestionError, WeightMismatchError

logger = logging.getLogger(__name__)

MAGIC = b"CFW1"
DTYPE_CODES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_CODE_OF = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}


def save_weights(store: ParamStore, path: Union[str, Path]) -> int:
    """Write ``store``; returns the number of elements written."""
    chunks = [MAGIC, struct.pack("<I", len(store))]
    total = 0
    for name, value in store.items():
        code = _CODE_OF.get(value.dtype)
        if code is None:
            raise WeightMismatchError(name, f"unsupported dtype {value.dtype}")
        encoded = name.encode("utf-8")
        chunks.append(struct.pack("<H", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack("<BB", code, value.ndim))
        chunks.append(struct.pack(f"<{value.ndim}Q", *value.shape))
        chunks.append(np.ascontiguousarray(value, dtype=DTYPE_CODES[code]).tobytes())
        total += value.size
    Path(path).write_bytes(b"".join(chunks))
    logger.info("wrote %d tensors (%d elements) to %s", len(store), total, path)
    return total


def load_weights(path: Union[str, Path]) -> ParamStore:
    path = str(path)
    try:
        raw = Path(path).read_bytes()
    except OSError as e:
        raise IngestionError(f"cannot read weights: {e.strerror}", path) from e
    if raw[:4] != MAGIC:
        raise IngestionError("not a CFW1 weight file", path, offset=0)

    def take(fmt: str, pos: int):
        size = struct.calcsize(fmt)
        if pos + size > len(raw):
            raise IngestionError("truncated weight file", path, offset=pos)
        return struct.unpack_from(fmt, raw, pos), pos + size

    (count,), pos = take("<I", 4)
    store = ParamStore()
    for _ in range(count):
        (n_len,), pos = take("<H", pos)
        if pos + n_len > len(raw):
            raise IngestionError("truncated entry name", path, offset=pos)
        name = raw[pos : pos + n_len].decode("utf-8")
        pos += n_len
        (code, rank), pos = take("<BB", pos)
        if code not in DTYPE_CODES:
            raise IngestionError(f"unknown dtype code {code} for '{name}'", path, offset=pos - 2)
        shape, pos = take(f"<{rank}Q", pos)
        dtype = DTYPE_CODES[code]
        nbytes = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
        if pos + nbytes > len(raw):
            raise IngestionError(f"truncated payload for '{name}'", path, offset=pos)
        value = np.frombuffer(raw, dtype=dtype, count=nbytes // dtype.itemsize, offset=pos).reshape(shape)
        store.add(name, value.astype(dtype.newbyteorder("="), copy=True))
        pos += nbytes
    return store


def check_weights(loaded: ParamStore, expected: ParamStore) -> None:
    """Raise on the first name, order or shape difference."""
    loaded_names, expected_names = loaded.names(), expected.names()
    for i, name in enumerate(expected_names):
        if i >= len(loaded_names):
            raise WeightMismatchError(name, "missing from weight file")
        if loaded_names[i] != name:
            raise WeightMismatchError(loaded_names[i], f"expected '{name}' at position {i}")
        if loaded[name].shape != expected[name].shape:
            raise WeightMismatchError(name, f"shape {loaded[name].shape} != {expected[name].shape}")
    if len(loaded_names) > len(expected_names):
        raise WeightMismatchError(loaded_names[len(expected_names)], "not a parameter of this model")


def load_matching(path: Union[str, Path], expected: ParamStore) -> ParamStore:
    """Load weights and verify they fit ``expected``, cast to its dtype."""
    loaded = load_weights(path)
    check_weights(loaded, expected)
    return loaded.astype(expected.dtype)
