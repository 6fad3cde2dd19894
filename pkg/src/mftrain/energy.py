"""Energy accounting for the multiplication-free training pipeline.

Per-op energies are 45 nm CMOS figures in picojoules. The iteration
workload is calibrated so that the all-FP32 baseline reproduces its
reference total (14.53 J for a ResNet50-scale training iteration);
every other method is priced per MAC from its op mix and scaled by the
same workload. Mixes that cannot be composed from the cost table ship
as annotated profiles carrying only their reference figures.
"""

from __future__ import annotations

import io
import csv
from collections.abc import Iterable, Mapping
from dataclasses import dataclass, field

from .census import OpCounts
from .errors import ConfigError

PJ = 1e-12

DEFAULT_COSTS: dict[str, float] = {
    "fp32_mul": 3.7,
    "int32_mul": 3.1,
    "fp8_mul": 0.23,
    "int8_mul": 0.19,
    "int4_mul": 0.048,
    "fp32_add": 0.9,
    "int32_add": 0.14,
    "int16_add": 0.05,
    "int8_add": 0.03,
    "int4_add": 0.015,
    "int32_shift4": 0.96,
    "int32_shift3": 0.72,
    "int4_shift3": 0.081,
    "xor": 0.01,
    "round": 0.004,
}

# Reference totals calibrate the workload; per-example MAC count is used
# only for the batch-equivalence footnote in reports.
CALIBRATION_TOTAL_J = 14.53
BACKWARD_FACTOR = 2.0
MACS_PER_EXAMPLE = 12.36e9


class OpCostTable:
    """Validated op -> picojoule map; unknown ops and negative costs are rejected."""

    def __init__(self, costs: dict[str, float] | None = None):
        merged = dict(DEFAULT_COSTS)
        if costs is not None:
            for op, pj in costs.items():
                if op not in DEFAULT_COSTS:
                    known = ", ".join(sorted(DEFAULT_COSTS))
                    raise ConfigError(f"unknown op {op!r} in cost table (known: {known})")
                pj = float(pj)
                if not pj >= 0.0:
                    raise ConfigError(f"cost for {op!r} must be a nonnegative number, got {pj}")
                merged[op] = pj
        self.costs = merged

    def cost(self, op: str) -> float:
        try:
            return self.costs[op]
        except KeyError:
            raise ConfigError(f"unknown op {op!r}") from None

    def mix_pj(self, ops: Iterable[tuple[str, float]] | Mapping[str, float]) -> float:
        items = ops.items() if hasattr(ops, "items") else ops
        return sum(count * self.cost(op) for op, count in items)


@dataclass(frozen=True)
class MethodProfile:
    """One row of the comparison: per-MAC op mixes and reference joules.

    `reference` holds the published (fw, bw, total) figures. When
    `closes` is False the mix is not expressible in the cost table and
    the reference figures are reported verbatim. `inference_forward`
    carries the parenthetical weight-only deployment mix some methods
    quote next to their FP32 training numbers.
    """

    name: str
    w: str
    a: str
    g: str
    forward: tuple[tuple[str, float], ...]
    backward: tuple[tuple[str, float], ...]
    reference: tuple[float, float, float]
    closes: bool = True
    inference_forward: tuple[tuple[str, float], ...] | None = None
    inference_reference: float | None = None
    note: str = ""

    def forward_pj(self, table: OpCostTable) -> float:
        if not self.closes:
            raise ConfigError(f"profile {self.name!r} is annotated-only; no op mix to price")
        return table.mix_pj(self.forward)

    def backward_pj(self, table: OpCostTable) -> float:
        if not self.closes:
            raise ConfigError(f"profile {self.name!r} is annotated-only; no op mix to price")
        return table.mix_pj(self.backward)


_FP32_MAC = (("fp32_mul", 1.0), ("fp32_add", 1.0))

PROFILES: dict[str, MethodProfile] = {
    p.name: p
    for p in (
        MethodProfile(
            name="original", w="FP32", a="FP32", g="FP32",
            forward=_FP32_MAC, backward=_FP32_MAC,
            reference=(4.84, 9.69, 14.53),
        ),
        MethodProfile(
            name="inq", w="PoT5", a="FP32", g="FP32",
            forward=_FP32_MAC, backward=_FP32_MAC,
            reference=(4.84, 9.69, 14.53),
            inference_forward=(("int32_shift4", 1.0), ("fp32_add", 1.0)),
            inference_reference=1.97,
            note="weight-only PoT by fine-tuning; shifts replace muls at deployment only",
        ),
        MethodProfile(
            name="lognn", w="PoT4", a="PoT4", g="FP32",
            forward=_FP32_MAC, backward=_FP32_MAC,
            reference=(4.84, 9.69, 14.53),
            inference_reference=0.95,
            note="deployment figures (fw 0.95 J, bw 1.92 J) use a 3-bit adder "
                 "not present in the cost table; carried as published",
        ),
        MethodProfile(
            name="shiftcnn", w="PoT4", a="FP32", g="FP32",
            forward=_FP32_MAC, backward=_FP32_MAC,
            reference=(4.84, 9.69, 14.53),
            inference_forward=(("int32_shift3", 1.0), ("fp32_add", 1.0)),
            inference_reference=1.70,
            note="weight-only PoT by fine-tuning; shifts replace muls at deployment only",
        ),
        MethodProfile(
            name="shiftaddnet", w="PoT5", a="INT32", g="INT32",
            forward=(), backward=(),
            reference=(2.45, 6.63, 9.08),
            closes=False,
            note="shift+add forward, mul+shift backward; the published joules do not "
                 "decompose over this cost table, so they are carried as published",
        ),
        MethodProfile(
            name="addernet", w="FP32", a="FP32", g="FP32",
            forward=(("fp32_add", 2.0),), backward=(("fp32_add", 2.0),),
            reference=(1.90, 3.80, 5.70),
        ),
        MethodProfile(
            name="deepshift_q", w="PoT5", a="INT32", g="FP32",
            forward=(("int32_shift4", 1.0), ("fp32_add", 1.0)),
            backward=(("fp32_mul", 0.5), ("int8_add", 0.5), ("fp32_add", 1.0)),
            reference=(1.97, 5.84, 7.81),
        ),
        MethodProfile(
            name="deepshift_ps", w="PoT5", a="INT32", g="FP32",
            forward=(("int32_shift4", 1.0), ("fp32_add", 1.0)),
            backward=(("fp32_mul", 0.5), ("int8_add", 0.5), ("fp32_add", 1.0)),
            reference=(1.97, 5.84, 7.81),
        ),
        MethodProfile(
            name="s2fp8", w="FP8", a="FP8", g="FP8",
            forward=(("fp8_mul", 1.0), ("fp32_add", 1.0)),
            backward=(("fp8_mul", 1.0), ("fp32_add", 1.0)),
            reference=(1.19, 2.38, 3.57),
        ),
        MethodProfile(
            name="luq", w="INT4", a="INT4", g="PoT5",
            forward=(("int4_mul", 1.0), ("fp32_add", 1.0)),
            backward=(("int4_shift3", 1.0), ("fp32_add", 1.0)),
            reference=(1.00, 2.06, 3.07),
        ),
        MethodProfile(
            name="ours", w="PoT5", a="PoT5", g="PoT5",
            forward=(("int4_add", 1.0), ("int32_add", 1.0)),
            backward=(("int4_add", 1.0), ("int32_add", 1.0)),
            reference=(0.16, 0.33, 0.49),
            note="plus one XOR per MAC (0.01 pJ), reported on its own line",
        ),
    )
}

METHOD_ORDER = (
    "original", "inq", "lognn", "shiftcnn", "shiftaddnet", "addernet",
    "deepshift_q", "deepshift_ps", "s2fp8", "luq", "ours",
)


@dataclass(frozen=True)
class WorkloadSpec:
    """Iteration-scale MAC counts; backward costs a fixed multiple of forward."""

    forward_macs: float
    backward_factor: float = BACKWARD_FACTOR

    @classmethod
    def calibrated(cls, table: OpCostTable | None = None,
                   total_j: float = CALIBRATION_TOTAL_J) -> "WorkloadSpec":
        table = table or OpCostTable()
        base = PROFILES["original"].forward_pj(table) * PJ
        return cls(forward_macs=total_j / ((1.0 + BACKWARD_FACTOR) * base))

    @property
    def total_macs(self) -> float:
        return self.forward_macs * (1.0 + self.backward_factor)

    @property
    def batch_equivalent(self) -> float:
        return self.total_macs / MACS_PER_EXAMPLE


@dataclass(frozen=True)
class IterationEnergy:
    method: str
    fw_j: float
    bw_j: float
    total_j: float
    computed: bool


def iteration_energy(profile: MethodProfile | str,
                     table: OpCostTable | None = None,
                     workload: WorkloadSpec | None = None) -> IterationEnergy:
    table = table or OpCostTable()
    if isinstance(profile, str):
        try:
            profile = PROFILES[profile]
        except KeyError:
            known = ", ".join(METHOD_ORDER)
            raise ConfigError(f"unknown method {profile!r} (known: {known})") from None
    workload = workload or WorkloadSpec.calibrated(table)
    if not profile.closes:
        fw, bw, total = profile.reference
        return IterationEnergy(profile.name, fw, bw, total, computed=False)
    fw = workload.forward_macs * profile.forward_pj(table) * PJ
    bw = workload.forward_macs * workload.backward_factor * profile.backward_pj(table) * PJ
    return IterationEnergy(profile.name, fw, bw, fw + bw, computed=True)


def quant_overhead_pj(m: int, n: int, table: OpCostTable | None = None) -> float:
    """Total pJ to quantize an m x n block: per-number scale add and round,
    plus one 32-bit shift for the whole block's dequantization."""
    if m <= 0 or n <= 0:
        raise ConfigError("block dims must be positive")
    table = table or OpCostTable()
    per_number = table.cost("int8_add") + table.cost("round")
    return per_number * m * n + table.cost("int32_shift4")


def overhead_per_number_pj(block_numbers: int, table: OpCostTable | None = None) -> float:
    table = table or OpCostTable()
    per_number = table.cost("int8_add") + table.cost("round")
    return per_number + table.cost("int32_shift4") / block_numbers


# The quoted 0.04 pJ/number average overhead corresponds to amortizing the
# block shift over 160 numbers; 0.155 + 0.04 gives the 0.195 pJ/MAC headline.
QUOTED_AMORTIZATION_NUMBERS = 160


def combined_mac_pj(table: OpCostTable | None = None,
                    block_numbers: int = QUOTED_AMORTIZATION_NUMBERS) -> float:
    table = table or OpCostTable()
    return PROFILES["ours"].forward_pj(table) + overhead_per_number_pj(block_numbers, table)


def savings_mac_only(table: OpCostTable | None = None) -> float:
    table = table or OpCostTable()
    return 1.0 - PROFILES["ours"].forward_pj(table) / PROFILES["original"].forward_pj(table)


def savings_with_overhead(table: OpCostTable | None = None,
                          block_numbers: int = QUOTED_AMORTIZATION_NUMBERS) -> float:
    table = table or OpCostTable()
    return 1.0 - combined_mac_pj(table, block_numbers) / PROFILES["original"].forward_pj(table)


# Census counters are priced at the narrowest unit that performs them:
# exponent adds fit in 4 bits, the scale subtraction in 8, accumulation
# and the final shift are 32-bit. A general multiply leaking onto the
# integer path is priced as a 32-bit multiply.
CENSUS_PRICING = {
    "int_add": "int4_add",
    "xor": "xor",
    "accumulate": "int32_add",
    "final_shift": "int32_shift4",
    "scale_add": "int8_add",
    "round_op": "round",
    "general_mul": "int32_mul",
    "fp32_mul": "fp32_mul",
    "fp32_add": "fp32_add",
}


@dataclass(frozen=True)
class CensusEnergy:
    lines: dict[str, float] = field(default_factory=dict)

    @property
    def mac_path_j(self) -> float:
        return sum(self.lines.get(k, 0.0) for k in ("int_add", "accumulate", "final_shift"))

    @property
    def xor_j(self) -> float:
        return self.lines.get("xor", 0.0)

    @property
    def overhead_j(self) -> float:
        return sum(self.lines.get(k, 0.0) for k in ("scale_add", "round_op"))

    @property
    def total_j(self) -> float:
        return sum(self.lines.values())


def price_census(counts: OpCounts, table: OpCostTable | None = None) -> CensusEnergy:
    table = table or OpCostTable()
    lines: dict[str, float] = {}
    for fld, op in CENSUS_PRICING.items():
        n = getattr(counts, fld)
        if n:
            lines[fld] = n * table.cost(op) * PJ
    return CensusEnergy(lines)


def _fmt_ops(ops: tuple[tuple[str, float], ...]) -> str:
    parts = []
    for op, count in ops:
        parts.append(op if count == 1.0 else f"{count:g}x {op}")
    return " + ".join(parts)


@dataclass(frozen=True)
class CompareReport:
    rows: list[dict]
    text: str
    csv_text: str


def compare_report(table: OpCostTable | None = None,
                   workload: WorkloadSpec | None = None,
                   methods: tuple[str, ...] = METHOD_ORDER) -> CompareReport:
    table = table or OpCostTable()
    workload = workload or WorkloadSpec.calibrated(table)
    rows = []
    for name in methods:
        profile = PROFILES.get(name)
        if profile is None:
            known = ", ".join(METHOD_ORDER)
            raise ConfigError(f"unknown method {name!r} (known: {known})")
        e = iteration_energy(profile, table, workload)
        row = {
            "method": name,
            "w": profile.w, "a": profile.a, "g": profile.g,
            "fw_ops": _fmt_ops(profile.forward) if profile.closes else "(as published)",
            "bw_ops": _fmt_ops(profile.backward) if profile.closes else "(as published)",
            "fw_j": e.fw_j, "bw_j": e.bw_j, "total_j": e.total_j,
            "reference_total_j": profile.reference[2],
            "computed": e.computed,
        }
        rows.append(row)

    width = max(len(r["method"]) for r in rows)
    lines = [
        f"{'method':<{width}}  {'W':>5} {'A':>5} {'G':>5}  {'fw J':>8} {'bw J':>8} {'total J':>8}  {'ref':>7}",
    ]
    for r in rows:
        mark = " " if r["computed"] else "*"
        lines.append(
            f"{r['method']:<{width}}{mark} {r['w']:>5} {r['a']:>5} {r['g']:>5}  "
            f"{r['fw_j']:8.3f} {r['bw_j']:8.3f} {r['total_j']:8.3f}  {r['reference_total_j']:7.2f}"
        )
    lines.append("* published figures; op mix not expressible in the cost table")
    ours_fw = PROFILES["ours"].forward_pj(table)
    xor_j = workload.total_macs * table.cost("xor") * PJ
    lines.append("")
    lines.append(f"per-MAC: baseline {PROFILES['original'].forward_pj(table):.3f} pJ, "
                 f"this work {ours_fw:.3f} pJ (+{table.cost('xor'):.2f} pJ XOR, separate line)")
    lines.append(f"XOR line for the full iteration: {xor_j:.4f} J")
    lines.append(f"MAC-only energy savings vs FP32: {savings_mac_only(table) * 100:.2f}%")
    lines.append(
        f"including quantization overhead ({combined_mac_pj(table):.3f} pJ/MAC at "
        f"{QUOTED_AMORTIZATION_NUMBERS}-number amortization): "
        f"{savings_with_overhead(table) * 100:.2f}%"
    )
    lines.append(
        f"workload: {workload.forward_macs:.4e} forward MACs, backward x{workload.backward_factor:g} "
        f"(~{workload.batch_equivalent:.0f} examples at {MACS_PER_EXAMPLE / 1e9:.2f} G MACs each)"
    )
    text = "\n".join(lines)

    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["method", "w", "a", "g", "fw_j", "bw_j", "total_j",
                     "reference_total_j", "computed"])
    for r in rows:
        writer.writerow([r["method"], r["w"], r["a"], r["g"],
                         f"{r['fw_j']:.6f}", f"{r['bw_j']:.6f}", f"{r['total_j']:.6f}",
                         f"{r['reference_total_j']:.2f}", int(r["computed"])])
    return CompareReport(rows=rows, text=text, csv_text=buf.getvalue())
