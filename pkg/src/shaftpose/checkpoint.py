"""Binary model checkpoints.

Layout (all integers little-endian uint32 unless noted):

    magic            4 bytes, b"SHPO"
    format_version   u32 (currently 1)
    arch_json        u32 byte length + UTF-8 JSON architecture descriptor
    n_params         u32
    per param:       name (u32 len + UTF-8), ndim u32, each dim u32,
                     raw float32 little-endian data
    n_buffers        u32, encoded like params (batchnorm running stats)
    has_train_state  u8 (0 or 1)
    if 1:            state_json (u32 len + UTF-8: step, adam scalars,
                     schedule, rng state), then n_state_arrays u32 of
                     named float32 blobs (Adam moments)

The architecture descriptor pins variant, input size, level sizes and
head widths; loading verifies it against the requested configuration.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .errors import CheckpointError

MAGIC = b"SHPO"
FORMAT_VERSION = 1


def _write_u32(f, v: int) -> None:
    f.write(struct.pack("<I", v))


def _write_str(f, s: str) -> None:
    data = s.encode("utf-8")
    _write_u32(f, len(data))
    f.write(data)


def _write_array(f, name: str, arr: np.ndarray) -> None:
    _write_str(f, name)
    _write_u32(f, arr.ndim)
    for d in arr.shape:
        _write_u32(f, d)
    f.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def _read_u32(f) -> int:
    data = f.read(4)
    if len(data) != 4:
        raise CheckpointError("truncated checkpoint")
    return struct.unpack("<I", data)[0]


def _read_str(f) -> str:
    n = _read_u32(f)
    data = f.read(n)
    if len(data) != n:
        raise CheckpointError("truncated checkpoint")
    return data.decode("utf-8")


def _read_array(f) -> tuple[str, np.ndarray]:
    name = _read_str(f)
    ndim = _read_u32(f)
    shape = tuple(_read_u32(f) for _ in range(ndim))
    count = int(np.prod(shape)) if shape else 1
    data = f.read(4 * count)
    if len(data) != 4 * count:
        raise CheckpointError("truncated checkpoint")
    return name, np.frombuffer(data, dtype="<f4").reshape(shape).copy()


def save_checkpoint(path: str, arch: dict, params: dict, buffers: dict,
                    train_state: dict | None = None) -> None:
    """Write named float32 arrays plus the architecture descriptor."""
    with open(path, "wb") as f:
        f.write(MAGIC)
        _write_u32(f, FORMAT_VERSION)
        _write_str(f, json.dumps(arch, sort_keys=True))
        _write_u32(f, len(params))
        for name in sorted(params):
            _write_array(f, name, params[name])
        _write_u32(f, len(buffers))
        for name in sorted(buffers):
            _write_array(f, name, buffers[name])
        if train_state is None:
            f.write(b"\x00")
        else:
            f.write(b"\x01")
            arrays = train_state.pop("arrays")
            _write_str(f, json.dumps(train_state, sort_keys=True))
            _write_u32(f, len(arrays))
            for name in sorted(arrays):
                _write_array(f, name, arrays[name])


def load_checkpoint(path: str):
    """Read (arch, params, buffers, train_state_or_None)."""
    try:
        f = open(path, "rb")
    except OSError as e:
        raise CheckpointError(f"cannot open checkpoint {path}: {e}") from e
    with f:
        if f.read(4) != MAGIC:
            raise CheckpointError(f"{path} is not a shaftpose checkpoint (bad magic)")
        version = _read_u32(f)
        if version != FORMAT_VERSION:
            raise CheckpointError(f"unsupported checkpoint format version {version}")
        arch = json.loads(_read_str(f))
        params = dict(_read_array(f) for _ in range(_read_u32(f)))
        buffers = dict(_read_array(f) for _ in range(_read_u32(f)))
        flag = f.read(1)
        train_state = None
        if flag == b"\x01":
            train_state = json.loads(_read_str(f))
            train_state["arrays"] = dict(_read_array(f) for _ in range(_read_u32(f)))
    return arch, params, buffers, train_state


def check_arch_compatible(found: dict, expected: dict) -> None:
    if found != expected:
        raise CheckpointError(
            f"checkpoint architecture {json.dumps(found, sort_keys=True)} does not match "
            f"configured architecture {json.dumps(expected, sort_keys=True)}"
        )
