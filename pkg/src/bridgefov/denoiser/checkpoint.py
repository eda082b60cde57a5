"""Binary checkpoint format for denoiser weights and optimizer state.

Layout (all integers little-endian):

    8 bytes   magic  b"BFOVCKPT"
    u32       format version (1)
    u32       length of the UTF-8 JSON architecture descriptor
    ...       descriptor bytes
    u32       schedule steps K the model was trained against
    u64       parameter count
    ...       parameters as IEEE-754 32-bit little-endian, canonical order
    u8        1 if optimizer state follows, else 0
    [u64      optimizer step count]
    [...      first and second moments, each parameter-count f32 values]
    8 bytes   blake2b-64 checksum of everything above
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import asdict

import numpy as np

from .adam import AdamState
from .network import ArchDescriptor, DenoiserParams, param_spec

MAGIC = b"BFOVCKPT"
VERSION = 1


class CheckpointError(ValueError):
    pass


def _flatten(arch: ArchDescriptor, tensors: dict[str, np.ndarray]) -> np.ndarray:
    return np.concatenate([np.asarray(tensors[name], dtype="<f4").ravel()
                           for name, _ in param_spec(arch)])


def _unflatten(arch: ArchDescriptor, flat: np.ndarray, dtype) -> dict[str, np.ndarray]:
    out = {}
    offset = 0
    for name, shape in param_spec(arch):
        size = int(np.prod(shape))
        out[name] = flat[offset:offset + size].reshape(shape).astype(dtype)
        offset += size
    if offset != flat.size:
        raise CheckpointError("parameter payload size mismatch")
    return out


def save_checkpoint(path, params: DenoiserParams, K: int,
                    opt_state: AdamState | None = None):
    desc = json.dumps(asdict(params.arch), sort_keys=True).encode()
    flat = _flatten(params.arch, params.tensors)
    blob = bytearray()
    blob += MAGIC
    blob += struct.pack("<II", VERSION, len(desc))
    blob += desc
    blob += struct.pack("<IQ", K, flat.size)
    blob += flat.tobytes()
    if opt_state is None:
        blob += struct.pack("<B", 0)
    else:
        blob += struct.pack("<BQ", 1, opt_state.step)
        blob += _flatten(params.arch, opt_state.m).tobytes()
        blob += _flatten(params.arch, opt_state.v).tobytes()
    blob += hashlib.blake2b(bytes(blob), digest_size=8).digest()
    with open(path, "wb") as f:
        f.write(bytes(blob))


def load_checkpoint(path, dtype=np.float32):
    """Returns (params, K, opt_state_or_None)."""
    with open(path, "rb") as f:
        blob = f.read()
    if len(blob) < len(MAGIC) + 8 or blob[:len(MAGIC)] != MAGIC:
        raise CheckpointError("not a denoiser checkpoint")
    body, digest = blob[:-8], blob[-8:]
    if hashlib.blake2b(body, digest_size=8).digest() != digest:
        raise CheckpointError("checksum mismatch; file is corrupt")
    off = len(MAGIC)
    version, desc_len = struct.unpack_from("<II", body, off)
    off += 8
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    arch = ArchDescriptor(**json.loads(body[off:off + desc_len].decode()))
    off += desc_len
    K, n = struct.unpack_from("<IQ", body, off)
    off += 12
    flat = np.frombuffer(body, dtype="<f4", count=n, offset=off)
    off += 4 * n
    params = DenoiserParams(arch, _unflatten(arch, flat, dtype))
    (has_opt,) = struct.unpack_from("<B", body, off)
    off += 1
    opt_state = None
    if has_opt:
        (step,) = struct.unpack_from("<Q", body, off)
        off += 8
        m = np.frombuffer(body, dtype="<f4", count=n, offset=off)
        off += 4 * n
        v = np.frombuffer(body, dtype="<f4", count=n, offset=off)
        off += 4 * n
        opt_state = AdamState(step=step,
                              m=_unflatten(arch, m, dtype),
                              v=_unflatten(arch, v, dtype))
    return params, K, opt_state
