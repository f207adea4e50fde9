"""Binary checkpoint files.

Layout, all integers little-endian:

    8 bytes   magic "FPANCKPT"
    u32       format version (currently 1)
    records   until end of file, each:
                u16  name length, then that many utf-8 bytes
                u8   rank
                u32  per dimension: the size
                f32  payload, C order, little-endian

Parameter tensors are stored under their model names.  The completed
step count rides along as the 1-element record "__step__" and optimizer
slots are stored under an "opt/" prefix, so a plain weight load can
just ignore everything with a reserved name.  Payloads are written as
float32 exactly as trained, which makes save/load/save byte-stable.
"""

from __future__ import annotations

import struct

import numpy as np

from .errors import CheckpointError

MAGIC = b"FPANCKPT"
VERSION = 1
STEP_KEY = "__step__"
OPT_PREFIX = "opt/"
MAX_RANK = 8
MAX_DIM = 1 << 31


def _read_exact(fh, n: int) -> bytes:
    buf = fh.read(n)
    if len(buf) != n:
        raise CheckpointError(f"truncated checkpoint: wanted {n} bytes, got {len(buf)}")
    return buf


def _write_record(fh, name: str, arr: np.ndarray):
    raw = name.encode("utf-8")
    if len(raw) > 0xFFFF:
        raise CheckpointError(f"record name too long: {name[:40]}...")
    arr = np.ascontiguousarray(arr, dtype="<f4")
    if arr.ndim > MAX_RANK:
        raise CheckpointError(f"record {name!r} has rank {arr.ndim} > {MAX_RANK}")
    fh.write(struct.pack("<H", len(raw)))
    fh.write(raw)
    fh.write(struct.pack("<B", arr.ndim))
    for d in arr.shape:
        fh.write(struct.pack("<I", d))
    fh.write(arr.tobytes(order="C"))


def save_checkpoint(path, params: dict, step: int = 0, opt_state: dict | None = None):
    """Write params (name -> array or Tensor), the step, and optimizer state."""
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        _write_record(fh, STEP_KEY, np.array([float(step)], dtype=np.float32))
        for name, value in params.items():
            if name == STEP_KEY or name.startswith(OPT_PREFIX):
                raise CheckpointError(f"parameter name {name!r} is reserved")
            arr = value.data if hasattr(value, "data") else value
            _write_record(fh, name, np.asarray(arr))
        if opt_state:
            for name, value in opt_state.items():
                _write_record(fh, OPT_PREFIX + name, np.asarray(value))


def load_checkpoint(path):
    """Read a checkpoint back.

    Returns (params, step, opt_state) where params and opt_state map
    names to float32 arrays.
    """
    params: dict = {}
    opt_state: dict = {}
    step = 0
    with open(path, "rb") as fh:
        magic = fh.read(len(MAGIC))
        if magic != MAGIC:
            raise CheckpointError(f"bad magic {magic!r}, not a checkpoint file")
        (version,) = struct.unpack("<I", _read_exact(fh, 4))
        if version != VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version}")
        while True:
            head = fh.read(2)
            if not head:
                break
            if len(head) != 2:
                raise CheckpointError("truncated checkpoint: dangling record header")
            (nlen,) = struct.unpack("<H", head)
            try:
                name = _read_exact(fh, nlen).decode("utf-8")
            except UnicodeDecodeError as e:
                raise CheckpointError(f"record name is not valid utf-8: {e}") from e
            (rank,) = struct.unpack("<B", _read_exact(fh, 1))
            if rank > MAX_RANK:
                raise CheckpointError(f"record {name!r} has rank {rank} > {MAX_RANK}")
            shape = []
            count = 1
            for _ in range(rank):
                (d,) = struct.unpack("<I", _read_exact(fh, 4))
                if d == 0 or d > MAX_DIM or count * d > MAX_DIM:
                    raise CheckpointError(f"record {name!r} has absurd dimension {d}")
                shape.append(d)
                count *= d
            payload = _read_exact(fh, 4 * count)
            arr = np.frombuffer(payload, dtype="<f4").reshape(shape).copy()
            if name == STEP_KEY:
                step = int(round(float(arr.reshape(-1)[0])))
            elif name.startswith(OPT_PREFIX):
                opt_state[name[len(OPT_PREFIX):]] = arr
            else:
                if name in params:
                    raise CheckpointError(f"duplicate record {name!r}")
                params[name] = arr
    return params, step, opt_state


def load_into_model(path, model):
    """Restore a model's parameters in place; names must match exactly.

    Returns (step, opt_state) for callers that also resume training.
    """
    params, step, opt_state = load_checkpoint(path)
    model_params = model.named_params()
    missing = sorted(set(model_params) - set(params))
    extra = sorted(set(params) - set(model_params))
    if missing or extra:
        raise CheckpointError(
            f"checkpoint does not fit the model (missing {missing[:4]}, "
            f"unexpected {extra[:4]})")
    for name, tensor in model_params.items():
        arr = params[name]
        if arr.shape != tensor.data.shape:
            raise CheckpointError(
                f"record {name!r} has shape {arr.shape}, model wants {tensor.data.shape}")
        tensor.data = arr.astype(tensor.data.dtype)
        tensor.grad = None
    return step, opt_state
