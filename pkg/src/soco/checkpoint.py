"""Binary checkpoint format.

Layout (all little-endian)::

    magic      8 bytes  b"SOCOCKPT"
    version    u32
    n_tensors  u32
    directory  n_tensors entries of
                 name_len u32, name (UTF-8), ndim u32, dims u64 * ndim,
                 offset u64 (absolute byte offset of the tensor blob)
    blobs      float64 data, row-major, in directory order, contiguous
    trailer    u64 length + UTF-8 JSON (config snapshot, step, solo hash, ...)
"""

from __future__ import annotations

import json
import os
import struct
from pathlib import Path

import numpy as np

from .demos import SoloPolicy, params_hash
from .numerics import Mlp

MAGIC = b"SOCOCKPT"
VERSION = 1
_HEAD = struct.Struct("<8sII")
_U32 = struct.Struct("<I")
_U64 = struct.Struct("<Q")


class CheckpointError(ValueError):
    pass


class SoloHashMismatch(CheckpointError):
    """The stored solo parameters no longer match the hash recorded at freeze time."""


def save_checkpoint(path: str | os.PathLike, tensors: dict[str, np.ndarray], trailer: dict) -> None:
    path = Path(path)
    names = list(tensors)
    arrays = [np.ascontiguousarray(tensors[n], dtype="<f8") for n in names]
    encoded = [n.encode("utf-8") for n in names]
    dir_size = sum(_U32.size + len(e) + _U32.size + _U64.size * a.ndim + _U64.size for e, a in zip(encoded, arrays))
    offset = _HEAD.size + dir_size
    parts = [_HEAD.pack(MAGIC, VERSION, len(names))]
    for e, a in zip(encoded, arrays):
        parts += [_U32.pack(len(e)), e, _U32.pack(a.ndim)]
        parts += [_U64.pack(d) for d in a.shape]
        parts.append(_U64.pack(offset))
        offset += a.nbytes
    parts += [a.tobytes() for a in arrays]
    meta = json.dumps(trailer, sort_keys=True).encode("utf-8")
    parts += [_U64.pack(len(meta)), meta]
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(b"".join(parts))
    os.replace(tmp, path)


def load_checkpoint(path: str | os.PathLike) -> tuple[dict[str, np.ndarray], dict]:
    raw = Path(path).read_bytes()

    def take(fmt: struct.Struct, pos: int):
        if pos + fmt.size > len(raw):
            raise CheckpointError("checkpoint truncated")
        return fmt.unpack_from(raw, pos), pos + fmt.size

    (magic, version, count), pos = take(_HEAD, 0)
    if magic != MAGIC:
        raise CheckpointError(f"bad magic {magic!r}")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    entries = []
    for _ in range(count):
        (n,), pos = take(_U32, pos)
        if pos + n > len(raw):
            raise CheckpointError("checkpoint truncated")
        name = raw[pos : pos + n].decode("utf-8")
        pos += n
        (ndim,), pos = take(_U32, pos)
        dims = []
        for _ in range(ndim):
            (d,), pos = take(_U64, pos)
            dims.append(d)
        (off,), pos = take(_U64, pos)
        entries.append((name, tuple(dims), off))
    tensors = {}
    expected = pos
    for name, dims, off in entries:
        size = 8 * int(np.prod(dims, dtype=np.int64))
        if off != expected:
            raise CheckpointError(f"tensor {name!r} offset {off} != expected {expected}")
        if off + size > len(raw):
            raise CheckpointError("checkpoint truncated")
        tensors[name] = np.frombuffer(raw, dtype="<f8", count=size // 8, offset=off).reshape(dims).astype(np.float64)
        expected += size
    (meta_len,), pos = take(_U64, expected)
    if pos + meta_len != len(raw):
        raise CheckpointError("trailer length does not match file size")
    trailer = json.loads(raw[pos:].decode("utf-8"))
    return tensors, trailer


def mlp_tensors(prefix: str, net: Mlp) -> dict[str, np.ndarray]:
    out = {}
    for k, (w, b) in enumerate(zip(net.weights, net.biases)):
        out[f"{prefix}.w{k}"] = w
        out[f"{prefix}.b{k}"] = b
    return out


def mlp_from_tensors(prefix: str, tensors: dict[str, np.ndarray], output: str) -> Mlp:
    try:
        ws = [tensors[f"{prefix}.w{k}"] for k in range(3)]
        bs = [tensors[f"{prefix}.b{k}"] for k in range(3)]
    except KeyError as e:
        raise CheckpointError(f"missing tensor {e.args[0]!r}") from None
    sizes = [ws[0].shape[0]] + [w.shape[1] for w in ws]
    net = Mlp(sizes, output=output)
    for dst, src in zip(net.weights + net.biases, ws + bs):
        if dst.shape != src.shape:
            raise CheckpointError(f"inconsistent tensor shapes under {prefix!r}")
        dst[...] = src
    return net


def solo_from_tensors(tensors: dict[str, np.ndarray], trailer: dict, verify: bool = True) -> SoloPolicy:
    """Rebuild the frozen solo policy; with ``verify`` the recorded hash must match."""
    solo = SoloPolicy(net=mlp_from_tensors("solo", tensors, "tanh"))
    recorded = trailer.get("solo_hash")
    if verify and recorded is not None and solo.param_hash() != recorded:
        raise SoloHashMismatch("solo parameters do not match the recorded hash")
    return solo.freeze()


def solo_hash_of(tensors: dict[str, np.ndarray]) -> str:
    net = mlp_from_tensors("solo", tensors, "tanh")
    return params_hash(net.flat)
