"""Tensor block quantization to signed powers of two with a layer-wise scale.

A block is quantized as F ~ 2^beta * (+-2^e), where the shared scale exponent
beta = Round(log2(max|F| / 2^emax)) centers the block's dynamic range on the
code grid. Scaling by 2^-beta is an exponent-field addition, not a multiply.
Elements whose scaled exponent falls below -emax become the zero sentinel;
anything above emax clamps to the top code (the scale construction already
puts the max element exactly on the top code, so in-block clamping is rare).

Also here: weight bias correction (subtract the mean before quantizing) and
ratio clipping of activations (clamp to gamma * max|A|, keeping the clip mask
for straight-through gradient masking).
"""

from __future__ import annotations

from dataclasses import dataclass
import struct

import numpy as np

from . import census
from .errors import ConfigError, InputError
from .potnum import _MANTISSA_THRESHOLD, check_bitwidth, emax_for, round_log2

ZERO_SENTINEL = np.int8(-128)
_NULL_BETA_WIRE = -(2**15)  # int16 marker for the NULL scale of an all-zero block
_BLOCK_MAGIC = b"QBLK"


@dataclass
class QuantBlock:
    """A quantized tensor: per-element exponents and signs plus one scale.

    exps:  int8 array, decoded exponents in [-emax, emax] or ZERO_SENTINEL
    signs: uint8 array, 1 for negative (sentinel positions hold 0)
    beta:  shared scale exponent; None for the NULL scale of an all-zero block
    b:     bit-width of the element format
    """

    exps: np.ndarray
    signs: np.ndarray
    beta: int | None
    b: int

    def __post_init__(self) -> None:
        check_bitwidth(self.b)
        if self.exps.shape != self.signs.shape:
            raise InputError("exps and signs shapes differ")

    @property
    def shape(self) -> tuple[int, ...]:
        return self.exps.shape

    @property
    def size(self) -> int:
        return self.exps.size

    @property
    def T(self) -> "QuantBlock":
        return QuantBlock(self.exps.T, self.signs.T, self.beta, self.b)

    def reshape(self, *shape: int) -> "QuantBlock":
        return QuantBlock(self.exps.reshape(*shape), self.signs.reshape(*shape), self.beta, self.b)

    def sentinel_mask(self) -> np.ndarray:
        return self.exps == ZERO_SENTINEL

    def sentinel_fraction(self) -> float:
        return float(self.sentinel_mask().mean()) if self.size else 0.0

    def to_bytes(self) -> bytes:
        """Wire format: magic, b, ndim, dims (u32 LE), beta (i16 LE, -32768
        for NULL), exponents as signed bytes, signs packed little bit order."""
        header = _BLOCK_MAGIC + struct.pack("<BB", self.b, self.exps.ndim)
        header += struct.pack(f"<{self.exps.ndim}I", *self.exps.shape)
        beta_wire = _NULL_BETA_WIRE if self.beta is None else int(self.beta)
        header += struct.pack("<h", beta_wire)
        exps = np.ascontiguousarray(self.exps, dtype=np.int8).tobytes()
        signs = np.packbits(self.signs.reshape(-1).astype(np.uint8), bitorder="little").tobytes()
        return header + exps + signs

    @classmethod
    def from_bytes(cls, blob: bytes) -> "QuantBlock":
        if blob[:4] != _BLOCK_MAGIC:
            raise InputError("not a quantized-block blob (bad magic)")
        b, ndim = struct.unpack_from("<BB", blob, 4)
        dims = struct.unpack_from(f"<{ndim}I", blob, 6)
        off = 6 + 4 * ndim
        (beta_wire,) = struct.unpack_from("<h", blob, off)
        off += 2
        n = int(np.prod(dims)) if ndim else 1
        exps = np.frombuffer(blob, dtype=np.int8, count=n, offset=off).reshape(dims).copy()
        off += n
        nsign_bytes = (n + 7) // 8
        packed = np.frombuffer(blob, dtype=np.uint8, count=nsign_bytes, offset=off)
        signs = np.unpackbits(packed, count=n, bitorder="little").reshape(dims).copy()
        beta = None if beta_wire == _NULL_BETA_WIRE else beta_wire
        return cls(exps, signs, beta, b)


def _require_finite(F: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(F)):
        raise InputError(f"{what} contains non-finite values")


def compute_scale(F: np.ndarray, b: int = 5) -> float:
    """Layer scale alpha = max|F| / 2^emax (an exact power-of-two division)."""
    F = np.asarray(F, dtype=np.float64)
    if F.size == 0:
        raise InputError("cannot scale an empty tensor")
    _require_finite(F, "tensor")
    return float(np.ldexp(np.max(np.abs(F)), -emax_for(b)))


def compute_scale_exp(alpha: float) -> int | None:
    """beta = Round(log2 alpha), half toward +inf; None for the NULL scale."""
    if alpha < 0 or not np.isfinite(alpha):
        raise InputError(f"scale must be a finite non-negative value, got {alpha!r}")
    if alpha == 0.0:
        return None
    return round_log2(alpha)


def _rounded_exponents(absF: np.ndarray) -> np.ndarray:
    """Vectorized Round(log2 |x|) via exact mantissa-threshold comparison.

    Zero entries come back with an arbitrary exponent; callers mask them.
    """
    m, e2 = np.frexp(absF)
    mant = (m * 2.0**53).astype(np.int64)  # exact: m has at most 53 fraction bits
    return e2.astype(np.int64) - 1 + (mant >= _MANTISSA_THRESHOLD)


def quantize_block(F: np.ndarray, b: int = 5, scaled: bool = True) -> QuantBlock:
    """Quantize a tensor to signed powers of two under a shared block scale.

    scaled=False skips the layer scale (beta = 0) and quantizes raw values;
    that is the ablation mode, where out-of-range data dies in the sentinel.
    """
    check_bitwidth(b)
    F = np.asarray(F, dtype=np.float64)
    if F.size == 0:
        raise InputError("cannot quantize an empty tensor")
    _require_finite(F, "tensor")
    emax = emax_for(b)

    amax = float(np.max(np.abs(F)))
    if amax == 0.0:
        exps = np.full(F.shape, ZERO_SENTINEL, dtype=np.int8)
        signs = np.zeros(F.shape, dtype=np.uint8)
        return QuantBlock(exps, signs, None, b)

    if scaled:
        beta = round_log2(np.ldexp(amax, -emax))
        scaled_F = np.ldexp(F, -beta)  # exact exponent-field addition
        census.record(scale_add=F.size, round_op=F.size + 1)
    else:
        beta = 0
        scaled_F = F
        census.record(round_op=F.size)

    absS = np.abs(scaled_F)
    e = _rounded_exponents(absS)
    zero = scaled_F == 0.0
    sentinel = zero | (e < -emax)
    e = np.minimum(e, emax)

    exps = np.where(sentinel, np.int64(ZERO_SENTINEL), e).astype(np.int8)
    signs = np.where(sentinel, 0, np.signbit(scaled_F)).astype(np.uint8)
    return QuantBlock(exps, signs, beta, b)


def dequantize_block(q: QuantBlock) -> np.ndarray:
    """Decode to float64: +-2^(e + beta), zero at sentinel positions."""
    out = np.zeros(q.shape, dtype=np.float64)
    if q.beta is None:
        return out
    live = ~q.sentinel_mask()
    unit = np.where(q.signs[live] == 1, -1.0, 1.0)
    out[live] = np.ldexp(unit, q.exps[live].astype(np.int64) + q.beta)
    return out


def correct_weight_bias(W: np.ndarray) -> np.ndarray:
    """Subtract the tensor mean (one summation and one scalar division,
    both outside the MAC path)."""
    W = np.asarray(W, dtype=np.float64)
    if W.size == 0:
        raise InputError("cannot bias-correct an empty tensor")
    _require_finite(W, "weights")
    return W - W.mean()


def ratio_clip(A: np.ndarray, gamma: float = 1.0) -> tuple[np.ndarray, np.ndarray]:
    """Clamp to +-gamma*max|A|; returns (clipped, mask of clipped positions).

    gamma = 1 is the identity (strict inequality: elements at the threshold
    are not clipped). The mask feeds straight-through gradient masking.
    """
    if not 0.0 < gamma <= 1.0:
        raise ConfigError(f"clip ratio must be in (0, 1], got {gamma!r}")
    A = np.asarray(A, dtype=np.float64)
    if A.size == 0:
        raise InputError("cannot clip an empty tensor")
    _require_finite(A, "activations")
    t = float(np.max(np.abs(A))) * gamma  # one scalar multiply per tensor
    mask = np.abs(A) > t
    return np.clip(A, -t, t), mask


@dataclass
class BlockStats:
    """Quantization quality report for one tensor."""

    beta: int | None
    b: int
    n: int
    sentinel_fraction: float
    clamp_fraction: float
    max_rel_error: float
    mean_abs_error_vs_scale: float


def block_stats(F: np.ndarray, q: QuantBlock) -> BlockStats:
    """Error statistics of q against its source tensor F.

    max_rel_error is taken over non-sentinel elements (the sentinel's error
    is 100% by definition and is reported as a fraction instead); the
    mean absolute error is normalized by max|F| so it is scale free.
    """
    F = np.asarray(F, dtype=np.float64)
    deq = dequantize_block(q)
    live = ~q.sentinel_mask() & (F != 0)
    err = np.abs(deq - F)
    amax = float(np.max(np.abs(F))) if F.size else 0.0
    max_rel = float(np.max(err[live] / np.abs(F[live]))) if live.any() else 0.0
    mean_abs = float(err.mean() / amax) if amax > 0 else 0.0
    emax = emax_for(q.b)
    if q.beta is None:
        clamp_frac = 0.0
    else:
        raw_e = _rounded_exponents(np.abs(np.ldexp(F, -q.beta)))
        clamped = (F != 0) & (raw_e > emax)
        clamp_frac = float(clamped.mean())
    return BlockStats(
        beta=q.beta,
        b=q.b,
        n=F.size,
        sentinel_fraction=q.sentinel_fraction(),
        clamp_fraction=clamp_frac,
        max_rel_error=max_rel,
        mean_abs_error_vs_scale=mean_abs,
    )
