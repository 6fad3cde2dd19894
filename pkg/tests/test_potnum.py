"""Scalar power-of-two codec: frozen examples, exhaustive codec sweeps, and
property tests against an exact-arithmetic rounding oracle."""

import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mftrain.errors import ConfigError, InputError, ShiftOverflowError
from mftrain.potnum import (
    SUPPORTED_BITWIDTHS,
    PotCode,
    dequantize_scalar,
    emax_for,
    pot_mul,
    pot_values,
    quantize_scalar,
    round_log2,
    round_log2_oracle,
    shift_mul,
)


def exact_round_log2(x: float) -> int:
    """Test-local oracle: Round(log2 x) via exact Fraction comparison."""
    _, e2 = math.frexp(x)
    return e2 if Fraction(x) ** 2 >= Fraction(2) ** (2 * e2 - 1) else e2 - 1


class TestValueSet:
    def test_cardinality_per_width(self):
        # 2*(2*emax+1) nonzero codes plus one canonical zero
        for b, expected in [(3, 7), (4, 15), (5, 31), (6, 63)]:
            vals = pot_values(b)
            assert len(vals) == expected
            assert len(set(vals)) == expected

    def test_b5_range(self):
        vals = pot_values(5)
        assert max(vals) == 128.0
        assert min(vals) == -128.0
        positives = [v for v in vals if v > 0]
        assert min(positives) == 2.0**-7

    def test_b3_exact_set(self):
        assert pot_values(3) == [-2.0, -1.0, -0.5, 0.0, 0.5, 1.0, 2.0]

    def test_b6_max(self):
        assert max(pot_values(6)) == 2.0**15

    def test_sorted_ascending(self):
        for b in SUPPORTED_BITWIDTHS:
            vals = pot_values(b)
            assert vals == sorted(vals)

    def test_unsupported_width_rejected(self):
        with pytest.raises(ConfigError):
            pot_values(7)
        with pytest.raises(ConfigError):
            quantize_scalar(1.0, 2)


class TestCodec:
    def test_all_patterns_round_trip(self):
        # decode -> encode is the identity on canonical codes, and the
        # negative-zero pattern canonicalizes to the positive one
        for b in SUPPORTED_BITWIDTHS:
            seen = set()
            for sign in (0, 1):
                for field in range(2 ** (b - 1)):
                    code = PotCode(sign, field, b)
                    v = dequantize_scalar(code)
                    seen.add(v)
                    back = quantize_scalar(v, b)
                    if code.is_zero:
                        assert back == PotCode.zero(b)
                    else:
                        assert back == code
            assert len(seen) == len(pot_values(b))

    def test_zero_is_canonical(self):
        z = quantize_scalar(0.0, 5)
        assert z.is_zero and z.sign == 0
        assert quantize_scalar(-0.0, 5) == z

    def test_exponent_of_zero_rejected(self):
        with pytest.raises(InputError):
            PotCode.zero(5).exponent


class TestQuantizeScalar:
    def test_exact_value(self):
        assert dequantize_scalar(quantize_scalar(1.0, 5)) == 1.0

    def test_clamp_above_range(self):
        assert dequantize_scalar(quantize_scalar(300.0, 5)) == 128.0
        assert dequantize_scalar(quantize_scalar(-1e9, 5)) == -128.0

    def test_log_domain_rounding_picks_upper(self):
        # 3 is linearly equidistant from 2 and 4; log rounding picks 4
        assert dequantize_scalar(quantize_scalar(3.0, 5)) == 4.0

    def test_small_negative(self):
        assert dequantize_scalar(quantize_scalar(-0.011, 5)) == -(2.0**-7)

    def test_flush_below_range(self):
        assert quantize_scalar(2.0**-8, 5).is_zero

    def test_non_finite_rejected(self):
        for bad in (float("nan"), float("inf"), -float("inf")):
            with pytest.raises(InputError):
                quantize_scalar(bad, 5)

    @given(st.floats(min_value=2.0**-200, max_value=2.0**200))
    @settings(max_examples=300, deadline=None)
    def test_rounding_matches_exact_oracle(self, x):
        assert round_log2(x) == exact_round_log2(x)
        assert round_log2(x) == round_log2_oracle(x)

    @given(st.floats(min_value=1e-3, max_value=100.0), st.sampled_from(SUPPORTED_BITWIDTHS))
    @settings(max_examples=200, deadline=None)
    def test_sign_symmetry(self, x, b):
        assert dequantize_scalar(quantize_scalar(-x, b)) == -dequantize_scalar(quantize_scalar(x, b))

    @given(st.floats(min_value=-200.0, max_value=200.0), st.floats(min_value=-200.0, max_value=200.0))
    @settings(max_examples=200, deadline=None)
    def test_monotone(self, x, y):
        lo, hi = min(x, y), max(x, y)
        assert dequantize_scalar(quantize_scalar(lo, 5)) <= dequantize_scalar(quantize_scalar(hi, 5))

    def test_relative_error_bound_in_range(self):
        rng = np.random.default_rng(7)
        bound = math.sqrt(2) - 1
        xs = np.exp(rng.uniform(math.log(2.0**-7), math.log(2.0**7), size=5000))
        xs *= rng.choice([-1.0, 1.0], size=xs.size)
        for x in xs:
            q = dequantize_scalar(quantize_scalar(float(x), 5))
            assert abs(q - x) / abs(x) <= bound + 1e-12


class TestPotMul:
    def test_example(self):
        a = quantize_scalar(4.0, 5)
        b = quantize_scalar(-0.5, 5)
        p = pot_mul(a, b)
        assert (p.exp_sum, p.sign, p.is_zero) == (1, 1, False)
        assert p.value == -2.0

    def test_zero_absorbs(self):
        a = quantize_scalar(4.0, 5)
        z = PotCode.zero(5)
        assert pot_mul(a, z).is_zero
        assert pot_mul(z, a).is_zero
        assert pot_mul(z, z).value == 0.0

    def test_exhaustive_product_table_b5(self):
        # all 31 x 31 value pairs, including zero: product is bit-exact
        vals = pot_values(5)
        codes = [quantize_scalar(v, 5) for v in vals]
        for va, ca in zip(vals, codes):
            for vb, cb in zip(vals, codes):
                p = pot_mul(ca, cb)
                assert p.value == va * vb  # products of powers of two are exact

    def test_mixed_width_products(self):
        a = quantize_scalar(2.0**-7, 5)
        b = quantize_scalar(2.0**15, 6)
        p = pot_mul(a, b)
        assert p.value == 2.0**8


class TestShiftMul:
    def test_left_shift(self):
        assert shift_mul(quantize_scalar(8.0, 5), 5) == 40

    def test_exponent_zero_identity(self):
        assert shift_mul(quantize_scalar(1.0, 5), -7) == -7

    def test_right_shift_with_sign(self):
        assert shift_mul(quantize_scalar(-0.25, 5), 16) == -4

    def test_arithmetic_right_shift_floors(self):
        # -7 * 0.5 -> floor(-3.5) = -4 under arithmetic shift
        assert shift_mul(quantize_scalar(0.5, 5), -7) == -4

    def test_zero_code(self):
        assert shift_mul(PotCode.zero(5), 12345) == 0

    def test_shift_amount_overflow(self):
        big = quantize_scalar(2.0**15, 6)
        with pytest.raises(ShiftOverflowError):
            shift_mul(big, 1, width=8)

    def test_result_overflow_detected(self):
        code = quantize_scalar(128.0, 5)  # 2^7
        with pytest.raises(ShiftOverflowError):
            shift_mul(code, 2**29, width=32)

    def test_input_range_checked(self):
        with pytest.raises(ShiftOverflowError):
            shift_mul(quantize_scalar(1.0, 5), 2**40, width=32)

    @given(
        st.integers(min_value=-(2**20), max_value=2**20),
        st.integers(min_value=-7, max_value=7),
    )
    @settings(max_examples=200, deadline=None)
    def test_matches_floor_scaling(self, x, e):
        code = PotCode.from_exponent(0, e, 5)
        want = x << e if e >= 0 else (x >> -e)
        assert shift_mul(code, x, width=64) == want
