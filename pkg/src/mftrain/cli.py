"""Command-line front end.

Subcommands: quantize (sample or load numbers, quantize a block, report
stats), train (run the training loop from a JSON config), energy (price
one method or a recorded census), compare (the full method table), and
selftest (fast end-to-end checks). Exit codes: 0 success, 2 bad
configuration, 3 training fault, 1 anything else.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import os
import sys
import time

import numpy as np

from . import census
from .checkpoint import apply_checkpoint, load_checkpoint, save_checkpoint
from .config import (default_config, dataset_from_config, load_config,
                     network_spec_from_config, train_config_from_config)
from .energy import (METHOD_ORDER, OpCostTable, WorkloadSpec, combined_mac_pj,
                     compare_report, iteration_energy, overhead_per_number_pj,
                     price_census, quant_overhead_pj, PROFILES)
from .errors import ConfigError, MFTrainError, TrainingFault
from .mfmac import mf_dot, reference_dot
from .nn import fit, evaluate
from .potnum import pot_mul, pot_values, quantize_scalar, PotCode, emax_for
from .quantizer import QuantBlock, block_stats, dequantize_block, quantize_block

ABLATIONS = {
    "no_als": {"no_als_scaling": True},
    "no_wbc": {"no_wbc": True},
    "no_prc": {"no_prc": True},
}


def _sample(kind: str, n: int, rng: np.random.Generator) -> np.ndarray:
    if kind == "normal":
        return rng.normal(0.0, 1.0, n)
    if kind == "uniform":
        return rng.uniform(-1.0, 1.0, n)
    if kind == "lognormal":
        return rng.lognormal(0.0, 1.0, n)
    raise ConfigError(f"unknown sample kind {kind!r}")


def cmd_quantize(args) -> int:
    if args.input:
        data = np.load(args.input) if args.input.endswith(".npy") \
            else np.loadtxt(args.input, delimiter=",")
        data = np.asarray(data, dtype=np.float64)
    else:
        data = _sample(args.sample, args.n, np.random.default_rng(args.seed))
    block = quantize_block(data, b=args.bits, scaled=not args.unscaled)
    beta = "NULL" if block.beta is None else str(block.beta)
    print(f"quantized {data.size} numbers to {args.bits}-bit codes, "
          f"block scale exponent {beta}")
    print(f"sentinel fraction: {block.sentinel_fraction():.6f}")
    if args.stats:
        stats = block_stats(data, block)
        print(f"max relative error (non-sentinel): {stats.max_rel_error:.6f} "
              f"(bound {np.sqrt(2) - 1:.6f})")
        print(f"mean |x_hat - x| / max|x|: {stats.mean_abs_error_vs_scale:.8f}")
        print(f"clamp fraction: {stats.clamp_fraction:.6f}")
    if args.hist_bins:
        exps = block.exps[block.exps != np.iinfo(np.int8).min].astype(int)
        if exps.size:
            lo, hi = exps.min(), exps.max()
            counts = np.bincount(exps - lo, minlength=hi - lo + 1)
            peak = counts.max()
            for e, c in zip(range(lo, hi + 1), counts):
                bar = "#" * max(1, int(round(args.hist_bins * c / peak))) if c else ""
                print(f"  2^{e:+03d}  {c:7d}  {bar}")
        sent = int(block.sentinel_mask().sum())
        print(f"  zero   {sent:7d}")
    if args.save_block:
        with open(args.save_block, "wb") as fh:
            fh.write(block.to_bytes())
        print(f"wrote {args.save_block}")
    return 0


def _write_metrics(path: str, rows: list) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["epoch", "lr", "train_loss", "train_acc", "test_loss",
                         "test_acc", "saturations", "sentinel_w", "sentinel_a",
                         "sentinel_g"])
        for r in rows:
            writer.writerow([r.epoch, f"{r.lr:.10g}", f"{r.train_loss:.10g}",
                             f"{r.train_acc:.10g}", f"{r.test_loss:.10g}",
                             f"{r.test_acc:.10g}", r.saturations,
                             f"{r.sentinel_w:.10g}", f"{r.sentinel_a:.10g}",
                             f"{r.sentinel_g:.10g}"])


def cmd_train(args) -> int:
    cfg = load_config(args.config) if args.config else default_config()
    if args.out:
        cfg["output_dir"] = args.out
    if args.epochs is not None:
        cfg["train"]["epochs"] = args.epochs
    if args.seed is not None:
        cfg["train"]["seed"] = args.seed

    overrides: dict = {}
    if args.fp32_baseline:
        overrides["quantized"] = False
    for name in args.ablate or ():
        overrides.update(ABLATIONS[name])
    tc = train_config_from_config(cfg, overrides)
    spec = network_spec_from_config(cfg)
    ds = dataset_from_config(cfg)

    out_dir = cfg["output_dir"]
    os.makedirs(out_dir, exist_ok=True)
    rng = np.random.default_rng(tc.seed)
    net = spec.build(rng, tc.policy, tc.init)
    start_epoch = 0
    if args.resume:
        ckpt = load_checkpoint(args.resume)
        apply_checkpoint(net, ckpt, rng)
        start_epoch = ckpt.epoch
        print(f"resumed from {args.resume} at epoch {start_epoch}")

    census.reset_census()
    t0 = time.monotonic()
    started = time.strftime("%Y-%m-%dT%H:%M:%S")

    def on_epoch(row):
        print(f"epoch {row.epoch}: lr {row.lr:.4g} train_loss {row.train_loss:.4f} "
              f"test_acc {row.test_acc:.4f} sentinel w/a/g "
              f"{row.sentinel_w:.3f}/{row.sentinel_a:.3f}/{row.sentinel_g:.3f}")

    history = fit(net, tc, ds.X_train, ds.y_train, ds.X_test, ds.y_test, rng,
                  start_epoch=start_epoch, on_epoch=on_epoch)
    elapsed = time.monotonic() - t0

    _write_metrics(os.path.join(out_dir, "metrics.csv"), history)
    counts = census.op_census()
    with open(os.path.join(out_dir, "census.json"), "w") as fh:
        json.dump(counts.as_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    steps_per_epoch = (len(ds.X_train) + tc.batch_size - 1) // tc.batch_size
    save_checkpoint(os.path.join(out_dir, "checkpoint.mftc"), net,
                    epoch=tc.epochs, step=tc.epochs * steps_per_epoch, rng=rng)
    with open(os.path.join(out_dir, "run.log"), "w") as fh:
        fh.write(f"started {started}\n")
        fh.write(f"wall_seconds {elapsed:.3f}\n")
        fh.write(f"config {json.dumps(cfg, sort_keys=True)}\n")
        fh.write(f"policy {json.dumps(dataclasses.asdict(tc.policy), sort_keys=True)}\n")
        if history:
            last = history[-1]
            fh.write(f"final epoch {last.epoch} train_loss {last.train_loss:.10g} "
                     f"test_acc {last.test_acc:.10g}\n")
    if history:
        print(f"final test accuracy {history[-1].test_acc:.4f} "
              f"({elapsed:.1f}s, outputs in {out_dir})")
    return 0


def _load_costs(path: str | None) -> OpCostTable:
    if not path:
        return OpCostTable()
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"cost table not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path} is not valid JSON: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: cost table must be a JSON object")
    return OpCostTable(raw)


def cmd_energy(args) -> int:
    table = _load_costs(args.costs)
    if args.from_census:
        with open(args.from_census) as fh:
            counts = census.OpCounts.from_dict(json.load(fh))
        bill = price_census(counts, table)
        for fld, joules in sorted(bill.lines.items()):
            print(f"{fld:>12}: {joules:.6e} J")
        print(f"{'mac path':>12}: {bill.mac_path_j:.6e} J")
        print(f"{'total':>12}: {bill.total_j:.6e} J")
        return 0
    profile = PROFILES.get(args.method)
    if profile is None:
        raise ConfigError(f"unknown method {args.method!r} "
                          f"(known: {', '.join(METHOD_ORDER)})")
    workload = WorkloadSpec.calibrated(table)
    e = iteration_energy(profile, table, workload)
    if profile.closes:
        print(f"{args.method}: {profile.forward_pj(table):.3f} pJ/MAC forward, "
              f"{profile.backward_pj(table):.3f} pJ/MAC backward")
    else:
        print(f"{args.method}: published figures (mix not in the cost table)")
    print(f"iteration: fw {e.fw_j:.3f} J, bw {e.bw_j:.3f} J, total {e.total_j:.3f} J "
          f"(reference total {profile.reference[2]:.2f} J)")
    if args.method == "ours":
        print(f"quantization overhead: {quant_overhead_pj(32, 32, table):.3f} pJ per "
              f"32x32 block ({overhead_per_number_pj(1024, table):.4f} pJ/number); "
              f"combined {combined_mac_pj(table, 1024):.4f} pJ/MAC")
    return 0


def cmd_compare(args) -> int:
    table = _load_costs(args.costs)
    report = compare_report(table)
    print(report.text)
    if args.csv:
        with open(args.csv, "w", newline="") as fh:
            fh.write(report.csv_text)
        print(f"wrote {args.csv}")
    return 0


def _selftest_codec() -> str:
    for b in (3, 4, 5, 6):
        emax = emax_for(b)
        for field in range(2 * emax + 2):
            for sign in (0, 1):
                code = PotCode(sign, field, b)
                back = quantize_scalar(code.value, b)
                if back.value != code.value:
                    raise AssertionError(f"b={b} field={field} sign={sign}")
    vals = pot_values(5)
    if len(vals) != 31 or max(vals) != 128.0 or min(v for v in vals if v > 0) != 2.0 ** -7:
        raise AssertionError("5-bit value set wrong")
    return "round trip over every code, all widths"


def _selftest_products() -> str:
    from fractions import Fraction
    vals = [v for v in pot_values(5) if v > 0]
    for x in vals:
        for y in vals:
            got = pot_mul(quantize_scalar(x, 5), quantize_scalar(y, 5)).value
            if Fraction(got) != Fraction(x) * Fraction(y):
                raise AssertionError(f"{x} * {y}")
    return f"{len(vals)}x{len(vals)} positive product table exact"


def _selftest_oracle() -> str:
    rng = np.random.default_rng(11)
    for _ in range(200):
        n = int(rng.integers(1, 257))
        a = quantize_block(rng.normal(0, 1, n), 5)
        bb = quantize_block(rng.normal(0, 1, n), int(rng.choice((5, 6))))
        want = reference_dot(dequantize_block(a), dequantize_block(bb))
        if mf_dot(a, bb) != want:
            raise AssertionError("dot mismatch")
    return "200 random dots match the compensated reference bit for bit"


def _selftest_calibration() -> str:
    table = OpCostTable()
    w = WorkloadSpec.calibrated(table)
    e = iteration_energy("original", table, w)
    if (round(e.fw_j, 2), round(e.bw_j, 2), round(e.total_j, 2)) != (4.84, 9.69, 14.53):
        raise AssertionError("baseline does not close")
    ours = iteration_energy("ours", table, w)
    if abs(ours.total_j - 0.49) / 0.49 > 0.05:
        raise AssertionError("quantized total does not close")
    return "baseline 14.53 J exact, quantized total within 5% of 0.49 J"


def _selftest_strict32() -> str:
    big = np.full(12, 128.0)
    a = quantize_block(big, 5)
    bb = quantize_block(big, 5)
    before = census.op_census().saturation
    got = mf_dot(a, bb, mode="strict32")
    events = census.op_census().saturation - before
    want = float(np.ldexp(2 ** 31 - 1, -14))
    if got != want or events != 5:
        raise AssertionError(f"got {got} events {events}")
    return "saturating accumulator clamps (5 events) and never wraps"


def _selftest_cost_guard() -> str:
    for bad in ({"int4_add": -1.0}, {"warp_mul": 1.0}):
        try:
            OpCostTable(bad)
        except ConfigError:
            continue
        raise AssertionError(f"accepted {bad}")
    return "negative and unknown cost entries are refused"


def cmd_selftest(args) -> int:
    suites = [
        ("codec", _selftest_codec),
        ("products", _selftest_products),
        ("oracle", _selftest_oracle),
        ("calibration", _selftest_calibration),
        ("strict32", _selftest_strict32),
        ("cost-table", _selftest_cost_guard),
    ]
    failed = 0
    for name, fn in suites:
        try:
            detail = fn()
            print(f"PASS {name}: {detail}")
        except Exception as exc:
            failed += 1
            print(f"FAIL {name}: {exc}")
    if failed:
        print(f"{failed} of {len(suites)} suites failed")
        return 1
    print(f"all {len(suites)} suites passed")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mftrain",
        description="power-of-two quantized, multiplication-free training tools")
    sub = parser.add_subparsers(dest="command", required=True)

    q = sub.add_parser("quantize", help="quantize a block of numbers and report stats")
    q.add_argument("--sample", choices=("normal", "uniform", "lognormal"),
                   default="normal")
    q.add_argument("--n", type=int, default=8192)
    q.add_argument("--bits", type=int, default=5)
    q.add_argument("--seed", type=int, default=0)
    q.add_argument("--input", help="read numbers from a .npy or .csv file instead")
    q.add_argument("--unscaled", action="store_true", help="skip the block scale")
    q.add_argument("--stats", action="store_true")
    q.add_argument("--hist-bins", type=int, default=0, metavar="WIDTH",
                   help="print an exponent histogram at most WIDTH chars wide")
    q.add_argument("--save-block", metavar="PATH",
                   help="write the serialized block to PATH")
    q.set_defaults(func=cmd_quantize)

    t = sub.add_parser("train", help="train a network from a JSON config")
    t.add_argument("--config", help="config path (omit for the built-in task)")
    t.add_argument("--out", help="output directory (overrides the config)")
    t.add_argument("--epochs", type=int)
    t.add_argument("--seed", type=int)
    t.add_argument("--ablate", action="append", choices=sorted(ABLATIONS),
                   help="disable one mechanism; repeatable")
    t.add_argument("--fp32-baseline", action="store_true",
                   help="run the unquantized baseline")
    t.add_argument("--resume", metavar="CKPT", help="resume from a checkpoint")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("energy", help="price one method or a recorded census")
    e.add_argument("--method", default="ours", choices=METHOD_ORDER)
    e.add_argument("--costs", help="JSON file overriding per-op picojoules")
    e.add_argument("--from-census", metavar="PATH",
                   help="price a census.json written by train")
    e.set_defaults(func=cmd_energy)

    c = sub.add_parser("compare", help="print the full method comparison table")
    c.add_argument("--csv", metavar="PATH", help="also write the table as CSV")
    c.add_argument("--costs", help="JSON file overriding per-op picojoules")
    c.set_defaults(func=cmd_compare)

    s = sub.add_parser("selftest", help="run fast end-to-end checks")
    s.set_defaults(func=cmd_selftest)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except TrainingFault as exc:
        where = f" (layer {exc.layer}, step {exc.step})" if exc.layer is not None else ""
        print(f"training fault: {exc}{where}", file=sys.stderr)
        return 3
    except MFTrainError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
