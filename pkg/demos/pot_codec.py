"""
Power-of-two codes: the 5-bit value table and the rounding trick
================================================================

Every representable magnitude is a power of two, so a code is just a
sign bit plus a biased exponent field. The all-zeros field is reserved
for zero itself.
"""

import math
from fractions import Fraction

import numpy as np

from mftrain.potnum import (
    PotCode,
    emax_for,
    pot_mul,
    pot_values,
    quantize_scalar,
    round_log2,
    round_log2_oracle,
)

b = 5
emax = emax_for(b)
print(f"width b={b}: exponents run -{emax}..{emax}, "
      f"{2 * (2 * emax + 1) + 1} values total")

# the full table, one row per exponent field
print("\nfield  exponent  value")
for field in range(2 * emax + 2):
    code = PotCode(0, field, b)
    if code.is_zero:
        print(f"{field:5d}   (zero)    0")
    else:
        print(f"{field:5d}  {code.exponent:8d}  {code.value}")

# quantizing a float picks the nearest power of two in log space, so the
# worst relative error is sqrt(2)-1 at a midpoint like 3.0
print("\nquantization of a few floats:")
for x in (0.4, 1.0, 3.0, -100.0, 5000.0, 1e-9):
    q = quantize_scalar(x, b)
    shown = "zero" if q.is_zero else f"{q.value:g}"
    print(f"  {x:10g} -> {shown}")

mid = 2.0 ** 1.5  # the log-space tie between 2 and 4
q = quantize_scalar(mid, b)
rel = abs(q.value - mid) / mid
print(f"\nworst case sits at the tie: |{q.value:g} - {mid:.6f}| / {mid:.6f} "
      f"= {rel:.6f} (bound {math.sqrt(2) - 1:.6f})")

# rounding log2|x| to the nearest integer without calling log:
# frexp gives x = m * 2^e with m in [0.5, 1), and the tie sits at
# m = sqrt(1/2), so one integer mantissa comparison decides the round.
print("\nround(log2|x|) via frexp, checked against exact rationals:")
rng = np.random.default_rng(11)
for x in rng.lognormal(0.0, 6.0, 6):
    fast = round_log2(float(x))
    exact = round_log2_oracle(float(x))
    assert fast == exact
    print(f"  x={x:14.6g}  round(log2 x) = {fast}")

# products never leave the grid: add exponents, xor signs
a = quantize_scalar(0.25, b)
c = quantize_scalar(-8.0, b)
p = pot_mul(a, c)
assert Fraction(p.value) == Fraction(a.value) * Fraction(c.value)
print(f"\nproduct: {a.value:g} * {c.value:g} = {p.value:g} (exact)")

total = len(pot_values(b))
print(f"\n{total} values, max {max(pot_values(b)):g}, "
      f"smallest positive {min(v for v in pot_values(b) if v > 0):g}")
