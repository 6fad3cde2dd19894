"""Training checkpoints.

Layout: magic "MFTC", little-endian u32 format version, u64 JSON header
length, the UTF-8 JSON header, then raw float64 little-endian arrays
(master weights and momentum per weighted layer, in network order).
The header stores step, epoch, the generator state, the quantization
policy, and per-layer metadata, so a resumed run continues bit-exactly.
Writes go to a temp file in the same directory and are renamed into
place, so a crash never leaves a half-written checkpoint behind.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
from dataclasses import dataclass, asdict

import numpy as np

from .errors import ProtocolError
from .nn import Network, QuantPolicy

MAGIC = b"MFTC"
VERSION = 1


@dataclass
class Checkpoint:
    epoch: int
    step: int
    rng_state: dict
    policy: dict
    layer_meta: list[dict]
    arrays: list[tuple[np.ndarray, np.ndarray]]


def _weighted_layers(net: Network):
    return [lyr for lyr in net.layers if lyr.has_weights]


def save_checkpoint(path: str, net: Network, epoch: int, step: int,
                    rng: np.random.Generator) -> None:
    meta = []
    payload = bytearray()
    for lyr in _weighted_layers(net):
        meta.append({
            "kind": type(lyr).__name__,
            "w_shape": list(lyr.W.shape),
            "gamma": float(lyr.gamma),
            "bits": list(lyr.bits),
        })
        payload += np.ascontiguousarray(lyr.W, dtype="<f8").tobytes()
        payload += np.ascontiguousarray(lyr.v, dtype="<f8").tobytes()
    header = {
        "epoch": int(epoch),
        "step": int(step),
        "rng_state": rng.bit_generator.state,
        "policy": asdict(net.policy),
        "layers": meta,
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    directory = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".ckpt-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(MAGIC)
            fh.write(struct.pack("<I", VERSION))
            fh.write(struct.pack("<Q", len(blob)))
            fh.write(blob)
            fh.write(bytes(payload))
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_checkpoint(path: str) -> Checkpoint:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 16 or raw[:4] != MAGIC:
        raise ProtocolError(f"{path}: not a checkpoint file (bad magic)")
    (version,) = struct.unpack_from("<I", raw, 4)
    if version != VERSION:
        raise ProtocolError(f"{path}: checkpoint version {version} not supported "
                            f"(this build reads version {VERSION})")
    (hlen,) = struct.unpack_from("<Q", raw, 8)
    if 16 + hlen > len(raw):
        raise ProtocolError(f"{path}: truncated checkpoint header")
    header = json.loads(raw[16:16 + hlen].decode("utf-8"))
    offset = 16 + hlen
    arrays = []
    for meta in header["layers"]:
        shape = tuple(meta["w_shape"])
        nbytes = int(np.prod(shape)) * 8
        if offset + 2 * nbytes > len(raw):
            raise ProtocolError(f"{path}: truncated checkpoint payload")
        W = np.frombuffer(raw[offset:offset + nbytes], dtype="<f8").reshape(shape).copy()
        offset += nbytes
        v = np.frombuffer(raw[offset:offset + nbytes], dtype="<f8").reshape(shape).copy()
        offset += nbytes
        arrays.append((W, v))
    if offset != len(raw):
        raise ProtocolError(f"{path}: {len(raw) - offset} trailing bytes after payload")
    return Checkpoint(
        epoch=int(header["epoch"]),
        step=int(header["step"]),
        rng_state=header["rng_state"],
        policy=dict(header["policy"]),
        layer_meta=list(header["layers"]),
        arrays=arrays,
    )


def apply_checkpoint(net: Network, ckpt: Checkpoint,
                     rng: np.random.Generator | None = None) -> None:
    """Restore weights, momentum, gamma, policy, and optionally rng state."""
    weighted = _weighted_layers(net)
    if len(weighted) != len(ckpt.arrays):
        raise ProtocolError(f"checkpoint has {len(ckpt.arrays)} weighted layers, "
                            f"network has {len(weighted)}")
    for lyr, meta, (W, v) in zip(weighted, ckpt.layer_meta, ckpt.arrays):
        if tuple(meta["w_shape"]) != lyr.W.shape:
            raise ProtocolError(f"layer shape mismatch: checkpoint {meta['w_shape']} "
                                f"vs network {list(lyr.W.shape)}")
        lyr.W = W.copy()
        lyr.v = v.copy()
        lyr.gamma = float(meta["gamma"])
        lyr.bits = tuple(meta["bits"])
    net.policy = QuantPolicy(**ckpt.policy)
    if rng is not None:
        rng.bit_generator.state = ckpt.rng_state
