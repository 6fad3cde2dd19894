"""Scalar power-of-two number format.

A b-bit code is one sign bit plus a (b-1)-bit exponent field. The all-zeros
exponent field is reserved for zero; the remaining codes map to exponents
e in [-emax, emax] with emax = 2^(b-2) - 1, so the representable values are

    {0} | {+-2^e : -emax <= e <= emax}

For b=5 that is 31 distinct values spanning [2^-7, 2^7]. Multiplication of
two codes is an integer addition of exponents plus an XOR of sign bits;
multiplying a fixed-point integer by a code is a plain shift.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

from .errors import ConfigError, InputError, ShiftOverflowError

SUPPORTED_BITWIDTHS = (3, 4, 5, 6)

# Smallest 53-bit mantissa integer M with (M / 2^53)^2 >= 1/2, i.e. the
# frexp mantissa boundary for rounding log2 to the nearer integer. The exact
# boundary sqrt(2)/2 is irrational, so equality never occurs for float input.
_MANTISSA_THRESHOLD = math.isqrt(2**105 - 1) + 1


def check_bitwidth(b: int) -> int:
    if b not in SUPPORTED_BITWIDTHS:
        raise ConfigError(f"unsupported bit-width {b!r}; expected one of {SUPPORTED_BITWIDTHS}")
    return b


def emax_for(b: int) -> int:
    """Largest exponent representable at bit-width b."""
    check_bitwidth(b)
    return 2 ** (b - 2) - 1


def round_log2(x: float) -> int:
    """Round(log2 x) for x > 0, half toward +inf, without transcendentals.

    frexp gives x = m * 2^E with m in [0.5, 1); the result is E-1 unless the
    mantissa reaches sqrt(2)/2, compared exactly in integer space.
    """
    m, e2 = math.frexp(x)
    mant = int(m * 2**53)  # exact: m carries at most 53 fraction bits
    return e2 - 1 + (mant >= _MANTISSA_THRESHOLD)


def round_log2_oracle(x: float) -> int:
    """Independent exact-arithmetic check of round_log2 (tests, selftest).

    Compares x^2 against 2^(2E-1) with Fractions, which is the same rounding
    decision expressed without the mantissa threshold.
    """
    if x <= 0 or not math.isfinite(x):
        raise InputError(f"round_log2 needs a positive finite value, got {x!r}")
    _, e2 = math.frexp(x)
    return e2 if Fraction(x) ** 2 >= Fraction(2) ** (2 * e2 - 1) else e2 - 1


@dataclass(frozen=True)
class PotCode:
    """One encoded power-of-two value: sign bit, exponent field, bit-width."""

    sign: int
    exp_field: int
    b: int

    def __post_init__(self) -> None:
        check_bitwidth(self.b)
        if self.sign not in (0, 1):
            raise InputError(f"sign bit must be 0 or 1, got {self.sign!r}")
        if not 0 <= self.exp_field < 2 ** (self.b - 1):
            raise InputError(f"exponent field {self.exp_field} out of range for b={self.b}")

    @classmethod
    def zero(cls, b: int) -> "PotCode":
        return cls(0, 0, b)

    @classmethod
    def from_exponent(cls, sign: int, e: int, b: int) -> "PotCode":
        emax = emax_for(b)
        if not -emax <= e <= emax:
            raise InputError(f"exponent {e} out of [-{emax}, {emax}] for b={b}")
        return cls(sign, e + emax + 1, b)

    @property
    def is_zero(self) -> bool:
        return self.exp_field == 0

    @property
    def exponent(self) -> int:
        if self.is_zero:
            raise InputError("zero code has no exponent")
        return self.exp_field - (emax_for(self.b) + 1)

    @property
    def value(self) -> float:
        if self.is_zero:
            return 0.0
        return math.ldexp(-1.0 if self.sign else 1.0, self.exponent)


def pot_values(b: int) -> list[float]:
    """All distinct representable values at bit-width b, ascending."""
    emax = emax_for(b)
    mags = [math.ldexp(1.0, e) for e in range(-emax, emax + 1)]
    return [-m for m in reversed(mags)] + [0.0] + mags


def quantize_scalar(f: float, b: int = 5) -> PotCode:
    """Encode a real number to the nearest power of two in log space.

    Exponents round half toward +inf; below-range magnitudes flush to zero,
    above-range magnitudes clamp to +-2^emax.
    """
    emax = emax_for(b)
    if not math.isfinite(f):
        raise InputError(f"cannot quantize non-finite value {f!r}")
    if f == 0.0:
        return PotCode.zero(b)
    sign = 1 if math.copysign(1.0, f) < 0 else 0
    e = round_log2(abs(f))
    if e < -emax:
        return PotCode.zero(b)
    if e > emax:
        e = emax
    return PotCode.from_exponent(sign, e, b)


def dequantize_scalar(code: PotCode) -> float:
    return code.value


@dataclass(frozen=True)
class PotProduct:
    """Result of multiplying two codes: summed exponent and XORed sign."""

    exp_sum: int
    sign: int
    is_zero: bool

    @property
    def value(self) -> float:
        if self.is_zero:
            return 0.0
        return math.ldexp(-1.0 if self.sign else 1.0, self.exp_sum)


def pot_mul(a: PotCode, b: PotCode) -> PotProduct:
    """Multiply two codes: one small integer add plus one sign XOR."""
    if a.is_zero or b.is_zero:
        return PotProduct(0, 0, True)
    return PotProduct(a.exponent + b.exponent, a.sign ^ b.sign, False)


def shift_mul(code: PotCode, x: int, width: int = 32) -> int:
    """Multiply integer x by the code's value using only a shift.

    Positive exponents shift left, negative shift right (arithmetic, i.e.
    floor division), zero exponent returns x. The code's sign flips the
    result. Shifts outside the word and results outside the signed word
    range raise ShiftOverflowError rather than wrapping.
    """
    if not isinstance(x, int):
        raise InputError(f"shift_mul needs an integer, got {type(x).__name__}")
    if width < 2:
        raise ConfigError(f"word width must be at least 2, got {width}")
    lo, hi = -(1 << (width - 1)), (1 << (width - 1)) - 1
    if not lo <= x <= hi:
        raise ShiftOverflowError(f"input {x} outside signed {width}-bit range")
    if code.is_zero:
        return 0
    k = code.exponent
    if abs(k) >= width:
        raise ShiftOverflowError(f"shift by {k} exceeds word width {width}")
    y = x << k if k > 0 else (x >> -k if k < 0 else x)
    if code.sign:
        y = -y
    if not lo <= y <= hi:
        raise ShiftOverflowError(f"result {y} outside signed {width}-bit range")
    return y
