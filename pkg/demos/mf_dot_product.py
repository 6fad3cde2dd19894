"""Multiplication-free dot products: exponent adds, one final shift."""

import numpy as np

from mftrain import census
from mftrain.mfmac import mf_dot, reference_dot
from mftrain.potnum import emax_for
from mftrain.quantizer import dequantize_block, quantize_block

rng = np.random.default_rng(3)

# two float vectors, quantized blockwise: each block stores a shared
# scale exponent beta plus per-element sign and exponent fields
fa = rng.normal(0.0, 1.5, 16)
fb = rng.normal(0.0, 0.02, 16)
qa = quantize_block(fa, 5)
qb = quantize_block(fb, 5)
print(f"block a: beta={qa.beta}, exponent fields {qa.exps.tolist()}")
print(f"block b: beta={qb.beta}, exponent fields {qb.exps.tolist()}")

# every product of two codes is sign-xor plus exponent-add; the wide
# accumulator sums exact integers and applies one shift at the end
census.reset_census()
got = mf_dot(qa, qb)
counts = census.op_census()
want = reference_dot(dequantize_block(qa), dequantize_block(qb))
print(f"\nmf_dot   = {got!r}")
print(f"reference = {want!r}")
assert got == want, "wide accumulation is bit-exact"
print(f"ops: {counts.int_add} exponent adds, {counts.xor} sign xors, "
      f"{counts.accumulate} accumulates, {counts.final_shift} final shift, "
      f"{counts.general_mul} general multiplies")

# sentinels: entries too small for the block scale are flushed and their
# pairs skipped entirely
tiny = fa.copy()
tiny[3] = 1e-12
q_tiny = quantize_block(tiny, 5)
census.reset_census()
mf_dot(q_tiny, qb)
print(f"\nwith one flushed entry: skipped_pairs="
      f"{census.op_census().skipped_pairs}")

# the strict 32-bit accumulator saturates instead of wrapping; pile up
# maximal products until it pins at the rail
emax = emax_for(5)
big = np.full(12, float(2 ** emax))  # every element is the largest code
q_big = quantize_block(big, 5)
census.reset_census()
sat = mf_dot(q_big, q_big, mode="strict32")
events = census.op_census().saturation
rail = float(np.ldexp(2 ** 31 - 1, -2 * emax))
print(f"\nstrict32 on 12 maximal products: result {sat:g} "
      f"(rail {rail:g}), {events} saturation events")
assert sat == rail
