"""Versioned binary checkpoints for the two networks and their optimizers.

Layout (all integers little-endian):

    magic   8s   b"NIRSHCK1"
    version u32  currently 1
    arch    32s  sha256 of the canonical architecture JSON
    iter    u64  training iteration the state belongs to
    count   u32  number of named blobs
    blob*:  name_len u16, name utf8, dtype u8 (0=f32 1=f64 2=i64 3=u8),
            ndim u8, dims u32*ndim, payload raw little-endian

A sidecar ``<stem>.json`` echoes the fully resolved run configuration.
Saving a freshly loaded checkpoint reproduces the file byte for byte.
"""

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"NIRSHCK1"
VERSION = 1

_DTYPES = {0: "<f4", 1: "<f8", 2: "<i8", 3: "|u1"}
_DTYPE_CODES = {np.dtype("float32"): 0, np.dtype("float64"): 1,
                np.dtype("int64"): 2, np.dtype("uint8"): 3}


class CheckpointError(RuntimeError):
    """Unreadable or incompatible checkpoint file."""


class ArchMismatchError(CheckpointError):
    """Checkpoint was produced by a different architecture."""


def arch_hash(gen, disc):
    desc = {"generator": gen.arch_description(),
            "discriminator": disc.arch_description()}
    blob = json.dumps(desc, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).digest()


def _named_state(gen, disc, opt_g, opt_d):
    blobs = []
    for prefix, net in (("g", gen), ("d", disc)):
        for name, t in net.named_parameters():
            blobs.append((f"{prefix}.{name}", t.data))
        for name, buf in net.named_buffers():
            blobs.append((f"{prefix}.{name}", buf))
        flag = any(l.norm is not None and l.norm.initialized for l in net.layers)
        blobs.append((f"{prefix}.stats_ready", np.array([flag], dtype=np.uint8)))
    for prefix, opt in (("optg", opt_g), ("optd", opt_d)):
        for name, arr in opt.state_arrays():
            blobs.append((f"{prefix}.{name}", arr))
        blobs.append((f"{prefix}.step_count",
                      np.array([opt.step_count], dtype=np.int64)))
    return blobs


def save_checkpoint(path, gen, disc, opt_g, opt_d, iteration, config_echo=None):
    path = Path(path)
    blobs = _named_state(gen, disc, opt_g, opt_d)
    out = [MAGIC, struct.pack("<I", VERSION), arch_hash(gen, disc),
           struct.pack("<Q", iteration), struct.pack("<I", len(blobs))]
    for name, arr in blobs:
        arr = np.asarray(arr)
        code = _DTYPE_CODES[arr.dtype]
        raw = name.encode()
        out.append(struct.pack("<H", len(raw)))
        out.append(raw)
        out.append(struct.pack("<BB", code, arr.ndim))
        out.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        out.append(np.ascontiguousarray(arr).astype(_DTYPES[code], copy=False).tobytes())
    path.write_bytes(b"".join(out))
    if config_echo is not None:
        path.with_suffix(".json").write_text(
            json.dumps(config_echo, indent=2, sort_keys=True) + "\n")


def read_blobs(path):
    """Raw (iteration, arch_hash, {name: array}) without applying anything."""
    data = Path(path).read_bytes()
    if data[:8] != MAGIC:
        raise CheckpointError(f"{path}: bad magic, not a checkpoint")
    (version,) = struct.unpack_from("<I", data, 8)
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    ahash = data[12:44]
    (iteration,) = struct.unpack_from("<Q", data, 44)
    (count,) = struct.unpack_from("<I", data, 52)
    off = 56
    blobs = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", data, off)
        off += 2
        name = data[off:off + nlen].decode()
        off += nlen
        code, ndim = struct.unpack_from("<BB", data, off)
        off += 2
        dims = struct.unpack_from(f"<{ndim}I", data, off)
        off += 4 * ndim
        dt = np.dtype(_DTYPES[code])
        nbytes = int(np.prod(dims, dtype=np.int64)) * dt.itemsize
        blobs[name] = np.frombuffer(data[off:off + nbytes], dtype=dt).reshape(dims).copy()
        off += nbytes
    return iteration, ahash, blobs


def load_checkpoint(path, gen, disc, opt_g, opt_d):
    """Restore all state in place; returns the stored iteration.

    Refuses checkpoints whose architecture hash differs from the live nets.
    """
    iteration, ahash, blobs = read_blobs(path)
    if ahash != arch_hash(gen, disc):
        raise ArchMismatchError(f"{path}: architecture hash mismatch")
    for prefix, net in (("g", gen), ("d", disc)):
        for name, t in net.named_parameters():
            src = blobs[f"{prefix}.{name}"]
            if src.shape != t.data.shape:
                raise CheckpointError(f"{prefix}.{name}: shape {src.shape} != "
                                      f"{t.data.shape}")
            t.data[...] = src
        for name, buf in net.named_buffers():
            buf[...] = blobs[f"{prefix}.{name}"]
        net.set_stats_initialized(bool(blobs[f"{prefix}.stats_ready"][0]))
    for prefix, opt in (("optg", opt_g), ("optd", opt_d)):
        step = int(blobs[f"{prefix}.step_count"][0])
        opt.load_state_arrays(
            {k.split(".", 1)[1]: v for k, v in blobs.items()
             if k.startswith(prefix + ".")},
            step)
    return iteration
