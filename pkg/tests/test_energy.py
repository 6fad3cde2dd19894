"""Energy model: per-MAC costs, iteration closures against the reference
table, quantization overhead arithmetic, census pricing, cost-table guards."""

import numpy as np
import pytest

from mftrain import census
from mftrain.census import OpCounts
from mftrain.energy import (
    CENSUS_PRICING,
    DEFAULT_COSTS,
    METHOD_ORDER,
    PJ,
    PROFILES,
    OpCostTable,
    WorkloadSpec,
    combined_mac_pj,
    compare_report,
    iteration_energy,
    overhead_per_number_pj,
    price_census,
    quant_overhead_pj,
    savings_mac_only,
    savings_with_overhead,
)
from mftrain.errors import ConfigError
from mftrain.mfmac import mf_matmul
from mftrain.quantizer import quantize_block

TABLE = OpCostTable()
WORKLOAD = WorkloadSpec.calibrated(TABLE)


class TestMacCosts:
    def test_baseline_mac(self):
        assert PROFILES["original"].forward_pj(TABLE) == pytest.approx(4.6)

    def test_ours_mac(self):
        assert PROFILES["ours"].forward_pj(TABLE) == pytest.approx(0.155)

    def test_addernet_mac(self):
        assert PROFILES["addernet"].forward_pj(TABLE) == pytest.approx(1.8)

    def test_annotated_profile_refuses_pricing(self):
        with pytest.raises(ConfigError):
            PROFILES["shiftaddnet"].forward_pj(TABLE)


class TestClosures:
    def test_baseline_is_exact_by_calibration(self):
        e = iteration_energy("original", TABLE, WORKLOAD)
        assert round(e.fw_j, 2) == 4.84
        assert round(e.bw_j, 2) == 9.69
        assert e.total_j == pytest.approx(14.53, abs=1e-9)

    @pytest.mark.parametrize("name", ["ours", "addernet", "s2fp8", "luq",
                                      "deepshift_q", "deepshift_ps"])
    def test_computed_totals_close_on_references(self, name):
        e = iteration_energy(name, TABLE, WORKLOAD)
        ref_fw, ref_bw, ref_total = PROFILES[name].reference
        assert e.computed
        assert abs(e.fw_j - ref_fw) / ref_fw < 0.05
        assert abs(e.bw_j - ref_bw) / ref_bw < 0.05
        assert abs(e.total_j - ref_total) / ref_total < 0.05

    def test_frozen_totals(self):
        assert iteration_energy("ours", TABLE, WORKLOAD).total_j == pytest.approx(0.489598, abs=5e-5)
        assert iteration_energy("addernet", TABLE, WORKLOAD).total_j == pytest.approx(5.68565, abs=5e-5)
        assert iteration_energy("s2fp8", TABLE, WORKLOAD).fw_j == pytest.approx(1.18978, abs=5e-5)
        assert iteration_energy("luq", TABLE, WORKLOAD).fw_j == pytest.approx(0.99815, abs=5e-5)
        assert iteration_energy("deepshift_q", TABLE, WORKLOAD).fw_j == pytest.approx(1.95839, abs=5e-5)

    def test_annotated_rows_pass_references_through(self):
        e = iteration_energy("shiftaddnet", TABLE, WORKLOAD)
        assert not e.computed
        assert (e.fw_j, e.bw_j, e.total_j) == (2.45, 6.63, 9.08)

    def test_unknown_method(self):
        with pytest.raises(ConfigError):
            iteration_energy("warpdrive", TABLE, WORKLOAD)


class TestOverhead:
    def test_block_overhead_is_linear_plus_one_shift(self):
        assert quant_overhead_pj(32, 32, TABLE) == pytest.approx(0.034 * 1024 + 0.96)
        assert quant_overhead_pj(1, 1, TABLE) == pytest.approx(0.034 + 0.96)

    def test_per_number_at_quoted_amortization(self):
        assert overhead_per_number_pj(160, TABLE) == pytest.approx(0.04)

    def test_combined_mac_within_3pct_of_headline(self):
        got = combined_mac_pj(TABLE, block_numbers=1024)
        assert got == pytest.approx(0.18994, abs=5e-5)
        assert abs(got - 0.195) / 0.195 < 0.03

    def test_savings_lines(self):
        assert savings_mac_only(TABLE) == pytest.approx(0.9663, abs=5e-5)
        assert savings_with_overhead(TABLE) == pytest.approx(0.9576, abs=5e-5)

    def test_bad_block_dims(self):
        with pytest.raises(ConfigError):
            quant_overhead_pj(0, 4, TABLE)


class TestWorkload:
    def test_calibration_recovers_batch_scale(self):
        # total MACs divided by the per-example count lands near a power-of-two batch
        assert WORKLOAD.batch_equivalent == pytest.approx(256, rel=0.01)

    def test_forward_macs_value(self):
        assert WORKLOAD.forward_macs == pytest.approx(14.53 / (3 * 4.6e-12))


class TestCensusPricing:
    def test_dense_matmul_matches_analytic(self):
        # sentinel-free blocks: every dense slot executes, so census pricing
        # must equal the closed-form mnk * mac + mn * final shift
        rng = np.random.default_rng(0)
        m, k, n = 12, 48, 9
        A = np.exp(rng.uniform(-1, 1, (m, k)))  # no zeros, tight range
        B = np.exp(rng.uniform(-1, 1, (k, n)))
        qa = quantize_block(A, 5)
        qb = quantize_block(B, 5)
        assert qa.sentinel_fraction() == 0.0 and qb.sentinel_fraction() == 0.0
        census.reset_census()
        mf_matmul(qa, qb)
        bill = price_census(census.op_census(), TABLE)
        mac_pj = PROFILES["ours"].forward_pj(TABLE)
        analytic = (m * n * k * mac_pj + m * n * TABLE.cost("int32_shift4")) * PJ
        assert abs(bill.mac_path_j - analytic) / analytic < 0.01

    def test_xor_priced_separately(self):
        counts = OpCounts(int_add=100, xor=100, accumulate=100, final_shift=1)
        bill = price_census(counts, TABLE)
        assert bill.xor_j == pytest.approx(100 * 0.01 * PJ)
        assert bill.mac_path_j == pytest.approx((100 * 0.155 + 0.96) * PJ)
        assert bill.total_j == pytest.approx(bill.mac_path_j + bill.xor_j)

    def test_quantize_overhead_counters_priced(self):
        counts = OpCounts(scale_add=1000, round_op=1001)
        bill = price_census(counts, TABLE)
        assert bill.overhead_j == pytest.approx((1000 * 0.03 + 1001 * 0.004) * PJ)

    def test_every_census_field_has_a_price(self):
        priced = set(CENSUS_PRICING)
        fields = set(OpCounts().as_dict())
        # saturation events and skipped pairs carry no energy by design
        assert fields - priced == {"saturation", "skipped_pairs"}


class TestCostTable:
    def test_override(self):
        t = OpCostTable({"fp32_mul": 4.0})
        assert t.cost("fp32_mul") == 4.0
        assert t.cost("xor") == DEFAULT_COSTS["xor"]

    def test_unknown_op_rejected(self):
        with pytest.raises(ConfigError, match="unknown op"):
            OpCostTable({"int5_add": 0.1})

    def test_negative_cost_rejected(self):
        with pytest.raises(ConfigError, match="nonnegative"):
            OpCostTable({"xor": -0.5})

    def test_nan_cost_rejected(self):
        with pytest.raises(ConfigError):
            OpCostTable({"xor": float("nan")})

    def test_cost_lookup_unknown(self):
        with pytest.raises(ConfigError):
            TABLE.cost("quantum_gate")


class TestReport:
    def test_all_methods_present_in_order(self):
        report = compare_report(TABLE, WORKLOAD)
        assert [r["method"] for r in report.rows] == list(METHOD_ORDER)

    def test_text_carries_headlines(self):
        text = compare_report(TABLE, WORKLOAD).text
        assert "96.63%" in text
        assert "95.76%" in text
        assert "0.195" in text
        assert "12.36" in text

    def test_csv_round_trips(self):
        import csv as csvmod
        import io
        report = compare_report(TABLE, WORKLOAD)
        rows = list(csvmod.DictReader(io.StringIO(report.csv_text)))
        assert len(rows) == len(METHOD_ORDER)
        ours = next(r for r in rows if r["method"] == "ours")
        assert float(ours["total_j"]) == pytest.approx(0.489598, abs=5e-5)
        assert ours["computed"] == "1"
        sa = next(r for r in rows if r["method"] == "shiftaddnet")
        assert sa["computed"] == "0"

    def test_unknown_method_in_selection(self):
        with pytest.raises(ConfigError):
            compare_report(TABLE, WORKLOAD, methods=("original", "fictional"))
