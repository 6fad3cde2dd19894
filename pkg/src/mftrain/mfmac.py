"""Multiplication-free MAC engine over quantized power-of-two blocks.

Each product of two elements is an integer exponent addition plus a sign
XOR; the product value 2^(ea+eb) is materialized as an integer with a single
bit set at position ea + eb + emaxA + emaxB (a shift of the constant 1), so
the accumulator holds fixed-point values at scale 2^-(emaxA+emaxB). One final
shift by betaA + betaB - (emaxA + emaxB) rescales the accumulated integer to
a real. Sentinel pairs contribute nothing and are skipped.

Accumulator modes:
  wide      exact accumulation (int64 while safe, arbitrary precision past
            that), rounded once at the final shift. This is the semantic
            reference; it equals the compensated-sum oracle bit for bit.
  strict32  saturating signed 32-bit accumulation in element order; clamping
            adds are counted as saturation events, never wrapped.

Execution engines (wide mode):
  shift     every product formed by add + left-shift of 1; no multiply
            instruction anywhere on the product path, host level included.
  matmul    signed powers of two materialized as int64 matrices and combined
            with integer matmul; each host multiply therefore has
            power-of-two operands and is value-equivalent to add+shift.
            Default for throughput; results are bit-identical to `shift`.
"""

from __future__ import annotations

import math

import numpy as np

from . import census
from .errors import ConfigError, InputError
from .potnum import emax_for
from .quantizer import QuantBlock, ZERO_SENTINEL

_INT32_MIN, _INT32_MAX = -(2**31), 2**31 - 1

MODES = ("wide", "strict32")
ENGINES = ("auto", "shift", "matmul")


def reference_dot(a: np.ndarray, b: np.ndarray) -> float:
    """Ground-truth inner product: exact compensated summation (math.fsum)
    of elementwise float products."""
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.size != b.size:
        raise InputError(f"length mismatch: {a.size} vs {b.size}")
    return math.fsum((a * b).tolist())


def reference_matmul(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Elementwise-compensated matrix product for test oracles (slow)."""
    A = np.asarray(A, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    m, k = A.shape
    k2, n = B.shape
    if k != k2:
        raise InputError(f"inner dimensions differ: {k} vs {k2}")
    out = np.empty((m, n), dtype=np.float64)
    for i in range(m):
        for j in range(n):
            out[i, j] = math.fsum((A[i, :] * B[:, j]).tolist())
    return out


def _check_mode_engine(mode: str, engine: str) -> None:
    if mode not in MODES:
        raise ConfigError(f"unknown accumulator mode {mode!r}; expected one of {MODES}")
    if engine not in ENGINES:
        raise ConfigError(f"unknown engine {engine!r}; expected one of {ENGINES}")


def _int64_headroom_ok(n_terms: int, off_sum: int) -> bool:
    # largest |term| is 2^(2*off_sum); keep n * 2^(2*off_sum) below 2^62
    return n_terms.bit_length() + 2 * off_sum < 62


def _saturating_accumulate(terms: np.ndarray) -> tuple[int, int]:
    """Sequential saturating int32 accumulation of int64 terms.

    Returns (final accumulator, saturation events). Scans with cumsum and
    rebases after each clamp, so the cost is near-linear unless nearly every
    add saturates.
    """
    z = 0
    events = 0
    start = 0
    n = terms.size
    while start < n:
        c = z + np.cumsum(terms[start:])
        over = (c > _INT32_MAX) | (c < _INT32_MIN)
        if not bool(over.any()):
            return int(c[-1]), events
        idx = int(np.argmax(over))
        z = _INT32_MAX if int(c[idx]) > _INT32_MAX else _INT32_MIN
        events += 1
        start += idx + 1
    return z, events


def _final_scale(qa: QuantBlock, qb: QuantBlock) -> int:
    off = emax_for(qa.b) + emax_for(qb.b)
    return qa.beta + qb.beta - off


def mf_dot(qa: QuantBlock, qb: QuantBlock, mode: str = "wide", engine: str = "auto") -> float:
    """Inner product of two quantized vectors via add/XOR/accumulate/shift."""
    _check_mode_engine(mode, engine)
    ea = qa.exps.ravel()
    eb = qb.exps.ravel()
    if ea.size != eb.size:
        raise InputError(f"length mismatch: {ea.size} vs {eb.size}")
    n = ea.size
    if qa.beta is None or qb.beta is None:
        census.record(skipped_pairs=n)
        return 0.0
    off = emax_for(qa.b) + emax_for(qb.b)
    valid = (ea != ZERO_SENTINEL) & (eb != ZERO_SENTINEL)
    nv = int(valid.sum())
    census.record(int_add=nv, xor=nv, accumulate=nv, final_shift=1, skipped_pairs=n - nv)
    if nv == 0:
        return 0.0
    es = ea[valid].astype(np.int64) + eb[valid].astype(np.int64) + off
    sg = np.bitwise_xor(qa.signs.ravel()[valid], qb.signs.ravel()[valid])

    if mode == "strict32":
        if not _int64_headroom_ok(nv, off):
            z, events = _saturate_bigint(es, sg)
        else:
            terms = np.left_shift(np.int64(1), es)
            terms = np.where(sg == 1, -terms, terms)
            z, events = _saturating_accumulate(terms)
        census.record(saturation=events)
        return math.ldexp(z, _final_scale(qa, qb))

    if _int64_headroom_ok(nv, off):
        terms = np.left_shift(np.int64(1), es)
        terms = np.where(sg == 1, -terms, terms)
        z = int(terms.sum())
    else:
        z = 0
        for e, s in zip(es.tolist(), sg.tolist()):
            z += -(1 << e) if s else (1 << e)
    return math.ldexp(z, _final_scale(qa, qb))


def _saturate_bigint(es: np.ndarray, sg: np.ndarray) -> tuple[int, int]:
    z = 0
    events = 0
    for e, s in zip(es.tolist(), sg.tolist()):
        z += -(1 << e) if s else (1 << e)
        if z > _INT32_MAX:
            z = _INT32_MAX
            events += 1
        elif z < _INT32_MIN:
            z = _INT32_MIN
            events += 1
    return z, events


def _materialize_signed(q: QuantBlock, off: int) -> np.ndarray:
    """Signed power-of-two int64 image of a block: +-1 << (e + off), 0 at
    sentinels. Built from shifts and negation only."""
    valid = q.exps != ZERO_SENTINEL
    shifted = np.where(valid, q.exps.astype(np.int64) + off, 0)
    mags = np.left_shift(np.int64(1), shifted)
    signed = np.where(q.signs == 1, -mags, mags)
    return np.where(valid, signed, 0)


def _census_matmul(qa: QuantBlock, qb: QuantBlock) -> int:
    """Count valid (non-sentinel) pairs of an (m,k)x(k,n) product."""
    va = (qa.exps != ZERO_SENTINEL).sum(axis=0).astype(np.int64)  # per-k over rows
    vb = (qb.exps != ZERO_SENTINEL).sum(axis=1).astype(np.int64)  # per-k over cols
    return int(np.dot(va, vb))


def mf_matmul(qa: QuantBlock, qb: QuantBlock, mode: str = "wide", engine: str = "auto") -> np.ndarray:
    """Matrix product of quantized blocks, (m,k) x (k,n) -> float64 (m,n)."""
    _check_mode_engine(mode, engine)
    if qa.exps.ndim != 2 or qb.exps.ndim != 2:
        raise InputError("mf_matmul needs 2-D blocks")
    m, k = qa.shape
    k2, n = qb.shape
    if k != k2:
        raise InputError(f"inner dimensions differ: {k} vs {k2}")
    if qa.beta is None or qb.beta is None:
        census.record(skipped_pairs=m * n * k)
        return np.zeros((m, n), dtype=np.float64)

    off = emax_for(qa.b) + emax_for(qb.b)
    nv = _census_matmul(qa, qb)
    census.record(int_add=nv, xor=nv, accumulate=nv, final_shift=m * n, skipped_pairs=m * n * k - nv)
    scale = _final_scale(qa, qb)

    if mode == "strict32":
        return _matmul_strict32(qa, qb, scale)

    if not _int64_headroom_ok(k, off):
        return _matmul_bigint(qa, qb, scale, off)

    if engine in ("auto", "matmul"):
        ua = _materialize_signed(qa, emax_for(qa.b))
        ub = _materialize_signed(qb, emax_for(qb.b))
        Z = ua @ ub
        return np.ldexp(Z, scale)

    # engine == "shift": no multiply instruction on the product path
    ea = qa.exps.astype(np.int64)
    eb = qb.exps.astype(np.int64)
    va = qa.exps != ZERO_SENTINEL
    vb = qb.exps != ZERO_SENTINEL
    one = np.int64(1)
    Z = np.empty((m, n), dtype=np.int64)
    for i in range(m):
        es = ea[i][:, None] + eb + off
        valid = va[i][:, None] & vb
        t = np.left_shift(one, np.where(valid, es, 0))
        sg = np.bitwise_xor(qa.signs[i][:, None], qb.signs)
        t = np.where(sg == 1, -t, t)
        t = np.where(valid, t, 0)
        Z[i] = t.sum(axis=0)
    return np.ldexp(Z, scale)


def _matmul_strict32(qa: QuantBlock, qb: QuantBlock, scale: int) -> np.ndarray:
    m, _ = qa.shape
    _, n = qb.shape
    off = emax_for(qa.b) + emax_for(qb.b)
    ea = qa.exps.astype(np.int64)
    eb = qb.exps.astype(np.int64)
    va = qa.exps != ZERO_SENTINEL
    vb = qb.exps != ZERO_SENTINEL
    out = np.empty((m, n), dtype=np.float64)
    events_total = 0
    big = not _int64_headroom_ok(qa.shape[1], off)
    for i in range(m):
        for j in range(n):
            valid = va[i] & vb[:, j]
            if not valid.any():
                out[i, j] = 0.0
                continue
            es = ea[i][valid] + eb[:, j][valid] + off
            sg = np.bitwise_xor(qa.signs[i][valid], qb.signs[:, j][valid])
            if big:
                z, events = _saturate_bigint(es, sg)
            else:
                terms = np.left_shift(np.int64(1), es)
                terms = np.where(sg == 1, -terms, terms)
                z, events = _saturating_accumulate(terms)
            events_total += events
            out[i, j] = math.ldexp(z, scale)
    census.record(saturation=events_total)
    return out


def _matmul_bigint(qa: QuantBlock, qb: QuantBlock, scale: int, off: int) -> np.ndarray:
    m, _ = qa.shape
    _, n = qb.shape
    ea = qa.exps.astype(np.int64)
    eb = qb.exps.astype(np.int64)
    va = qa.exps != ZERO_SENTINEL
    vb = qb.exps != ZERO_SENTINEL
    out = np.empty((m, n), dtype=np.float64)
    for i in range(m):
        for j in range(n):
            valid = va[i] & vb[:, j]
            es = (ea[i][valid] + eb[:, j][valid] + off).tolist()
            sg = np.bitwise_xor(qa.signs[i][valid], qb.signs[:, j][valid]).tolist()
            z = 0
            for e, s in zip(es, sg):
                z += -(1 << e) if s else (1 << e)
            out[i, j] = math.ldexp(z, scale)
    return out
