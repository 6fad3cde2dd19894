"""Acceptance gate: the ten binding checks, one test per criterion.

Each test prints a verdict line on success so a -s run reads as a
checklist. Tolerances and time budgets are pinned in the asserts.
"""

import time
from fractions import Fraction

import numpy as np
import pytest

from mftrain import census
from mftrain.datasets import synthetic_clusters
from mftrain.energy import (
    PJ,
    PROFILES,
    OpCostTable,
    WorkloadSpec,
    combined_mac_pj,
    iteration_energy,
    quant_overhead_pj,
)
from mftrain.mfmac import mf_dot, reference_dot
from mftrain.nn import (
    LayerSpec,
    NetworkSpec,
    QuantPolicy,
    SoftmaxCrossEntropy,
    TrainConfig,
    evaluate,
    fit,
    train_step,
)
from mftrain.potnum import PotCode, emax_for, pot_mul, pot_values, quantize_scalar
from mftrain.quantizer import dequantize_block, quantize_block

REL_ERR_BOUND = np.sqrt(2.0) - 1.0


def verdict(n: int, name: str) -> None:
    print(f"[AC{n:02d}] PASS {name}")


# The training task every accuracy criterion runs on. Batch divides the
# train set so every gradient batch has the same size.
TASK = dict(classes=10, dim=784, train_samples=4096, test_samples=1024,
            noise=0.9, seed=7)
MLP = NetworkSpec(
    input_shape=(784,),
    layers=[LayerSpec("linear", out=256), LayerSpec("relu"),
            LayerSpec("linear", out=10)],
    bits=(5, 5, 5),
    last_layer_g_bits=5,
    gamma=1.0,
)


def run_task(ds, seed: int, policy: QuantPolicy):
    rng = np.random.default_rng(seed)
    net = MLP.build(rng, policy)
    cfg = TrainConfig(epochs=5, batch_size=256, lr=0.05,
                      lr_decay_epochs=(3, 4), lr_decay_factor=0.1,
                      momentum=0.9, seed=seed, policy=policy)
    history = fit(net, cfg, ds.X_train, ds.y_train, ds.X_test, ds.y_test, rng)
    return net, history


@pytest.fixture(scope="module")
def task_data():
    return synthetic_clusters(**TASK)


class TestAcceptance:
    def test_ac01_codec_round_trip(self):
        for b in (3, 4, 5, 6):
            emax = emax_for(b)
            seen = set()
            for field in range(2 * emax + 2):
                for sign in (0, 1):
                    code = PotCode(sign, field, b)
                    back = quantize_scalar(code.value, b)
                    assert back.value == code.value, (b, sign, field)
                    if code.is_zero:
                        # both zero patterns decode to 0.0 and re-encode canonically
                        assert back.sign == 0 and back.is_zero
                    else:
                        assert (back.sign, back.exp_field) == (sign, field)
                    seen.add(code.value)
            assert len(seen) == 2 * (2 * emax + 1) + 1
        values = pot_values(5)
        assert len(values) == 31
        assert max(values) == 128.0
        assert min(v for v in values if v > 0) == 2.0 ** -7
        verdict(1, "codec round trip over every bit pattern, widths 3-6")

    def test_ac02_product_table_exact(self):
        values = pot_values(5)
        assert len(values) == 31
        checked = 0
        for x in values:
            for y in values:
                got = pot_mul(quantize_scalar(x, 5), quantize_scalar(y, 5)).value
                assert Fraction(got) == Fraction(x) * Fraction(y), (x, y)
                checked += 1
        assert checked == 31 * 31
        verdict(2, "31x31 product table exact in rational arithmetic")

    def test_ac03_dot_oracle_bit_exact(self):
        rng = np.random.default_rng(2024)
        t0 = time.monotonic()
        distributions = (
            lambda n: rng.normal(0.0, 1.0, n),
            lambda n: rng.lognormal(0.0, 2.0, n) * rng.choice((-1.0, 1.0), n),
            lambda n: rng.normal(0.0, 1.0, n) * 2.0 ** rng.integers(-18, 12),
        )
        for trial in range(10_000):
            n = int(rng.integers(1, 1025))
            draw = distributions[trial % 3]
            fa = draw(n)
            fb = distributions[(trial + 1) % 3](n)
            ba = int(rng.choice((5, 6)))
            bb = int(rng.choice((5, 6)))
            qa = quantize_block(fa, ba)
            qb = quantize_block(fb, bb)
            got = mf_dot(qa, qb)
            want = reference_dot(dequantize_block(qa), dequantize_block(qb))
            assert got == want, (trial, n, ba, bb)
        elapsed = time.monotonic() - t0
        assert elapsed < 30.0
        verdict(3, f"10000 random dots bit-equal to the compensated reference "
                   f"({elapsed:.1f}s)")

    def test_ac04_scalar_relative_error_bound(self):
        rng = np.random.default_rng(77)
        emax = emax_for(5)
        # log-uniform magnitudes spanning the representable range plus a margin
        exps = rng.uniform(-emax - 1.5, emax + 1.5, 100_000)
        signs = rng.choice((-1.0, 1.0), exps.size)
        kept = clamped = flushed = 0
        for e, s in zip(exps, signs):
            x = float(s * 2.0 ** e)
            q = quantize_scalar(x, 5)
            if q.is_zero:
                flushed += 1
                continue
            if abs(q.value) == 128.0 and abs(x) > 128.0:
                clamped += 1
                continue
            kept += 1
            assert abs(q.value - x) / abs(x) <= REL_ERR_BOUND + 1e-12, x
        assert kept >= 80_000
        verdict(4, f"relative error <= sqrt(2)-1 on {kept} in-range scalars "
                   f"({clamped} clamped, {flushed} flushed excluded)")

    def test_ac05_energy_closures(self):
        table = OpCostTable()
        workload = WorkloadSpec.calibrated(table)
        base = iteration_energy("original", table, workload)
        assert round(base.fw_j, 2) == 4.84
        assert round(base.bw_j, 2) == 9.69
        assert base.total_j == pytest.approx(14.53, abs=1e-9)
        for name in ("ours", "addernet", "s2fp8", "luq",
                     "deepshift_q", "deepshift_ps"):
            e = iteration_energy(name, table, workload)
            for got, ref in zip((e.fw_j, e.bw_j, e.total_j),
                                PROFILES[name].reference):
                assert abs(got - ref) / ref < 0.05, (name, got, ref)
        verdict(5, "baseline exact, six computed profiles within 5% of "
                   "their reference joules")

    def test_ac06_overhead_formula(self):
        table = OpCostTable()
        for m, n in ((1, 1), (8, 16), (32, 32), (100, 7)):
            expect = 0.034 * m * n + 0.96
            assert quant_overhead_pj(m, n, table) == pytest.approx(expect)
        combined = combined_mac_pj(table, block_numbers=32 * 32)
        assert abs(combined - 0.195) / 0.195 < 0.03
        verdict(6, f"overhead exactly 0.034*m*n + one block shift; combined "
                   f"{combined:.4f} pJ/MAC within 3% of 0.195")

    def test_ac07_gradcheck_20_networks(self):
        head = SoftmaxCrossEntropy()
        eps = 1e-6
        worst = 0.0
        for trial in range(20):
            rng = np.random.default_rng(9000 + trial)
            d_in = int(rng.integers(3, 9))
            classes = int(rng.integers(2, 5))
            layers = [LayerSpec("linear", out=int(rng.integers(4, 9))),
                      LayerSpec("relu")]
            if trial % 2:
                layers += [LayerSpec("linear", out=int(rng.integers(3, 7))),
                           LayerSpec("relu")]
            layers.append(LayerSpec("linear", out=classes))
            spec = NetworkSpec(input_shape=(d_in,), layers=layers,
                               last_layer_g_bits=5)
            net = spec.build(rng, QuantPolicy(quantized=False))
            X = rng.normal(size=(int(rng.integers(3, 7)), d_in))
            y = rng.integers(0, classes, X.shape[0])
            net.loss_and_grads(X, y)
            analytic = [lyr.grad.copy() for lyr in net.weighted_layers()]
            for lyr in net.weighted_layers():
                lyr.grad = None
                lyr._cache = None
            for li, lyr in enumerate(net.weighted_layers()):
                flat = lyr.W.reshape(-1)
                fd = np.empty(flat.size)
                for k in range(flat.size):
                    keep = flat[k]
                    flat[k] = keep + eps
                    lp = head.loss(net.forward(X, train=False), y)
                    flat[k] = keep - eps
                    lm = head.loss(net.forward(X, train=False), y)
                    flat[k] = keep
                    fd[k] = (lp - lm) / (2 * eps)
                # norm-relative error; per-element ratios drown in fd roundoff
                rel = np.linalg.norm(analytic[li].reshape(-1) - fd) / np.linalg.norm(fd)
                worst = max(worst, rel)
                assert rel < 1e-5, (trial, li, rel)
        verdict(7, f"20 random nets match central differences "
                   f"(worst rel err {worst:.2e})")

    def test_ac08_quantized_tracks_fp32(self, task_data):
        t0 = time.monotonic()
        _, hist_fp32 = run_task(task_data, 0, QuantPolicy(quantized=False))
        _, hist_quant = run_task(task_data, 0, QuantPolicy())
        elapsed = time.monotonic() - t0
        gap = abs(hist_fp32[-1].test_acc - hist_quant[-1].test_acc)
        assert gap <= 0.02, (hist_fp32[-1].test_acc, hist_quant[-1].test_acc)
        assert elapsed < 600.0
        verdict(8, f"5-epoch MLP: quantized {hist_quant[-1].test_acc:.4f} vs "
                   f"fp32 {hist_fp32[-1].test_acc:.4f}, gap {gap * 100:.2f} "
                   f"points ({elapsed:.0f}s)")

    def test_ac09_ablations(self, task_data):
        t0 = time.monotonic()
        chance = 1.0 / TASK["classes"]

        _, hist = run_task(task_data, 0, QuantPolicy(no_als_scaling=True))
        assert all(h.sentinel_g >= 0.99 for h in hist), [h.sentinel_g for h in hist]
        final_acc = hist[-1].test_acc
        assert abs(final_acc - chance) <= 0.05, final_acc

        flags = 0
        for seed in range(5):
            _, base = run_task(task_data, seed, QuantPolicy())
            _, ablated = run_task(task_data, seed, QuantPolicy(no_wbc=True))
            worse_final = ablated[-1].train_loss > base[-1].train_loss
            non_monotone = ablated[-1].train_loss > ablated[-2].train_loss
            flags += worse_final or non_monotone
        elapsed = time.monotonic() - t0
        assert flags >= 3, flags
        assert elapsed < 900.0
        verdict(9, f"no-scaling: sentinel 100%, accuracy {final_acc:.4f} "
                   f"(chance); no-centering flagged {flags}/5 seeds "
                   f"({elapsed:.0f}s)")

    def test_ac10_no_multiplies_in_mac_path(self, task_data):
        t0 = time.monotonic()
        policy = QuantPolicy(engine="shift")
        rng = np.random.default_rng(0)
        spec = NetworkSpec(
            input_shape=(784,),
            layers=[LayerSpec("linear", out=64), LayerSpec("relu"),
                    LayerSpec("linear", out=10)],
            last_layer_g_bits=5,
        )
        net = spec.build(rng, policy)
        X = task_data.X_train[:32]
        y = task_data.y_train[:32]
        census.reset_census()
        train_step(net, X, y, 0.05)
        counts = census.op_census()
        elapsed = time.monotonic() - t0
        assert counts.general_mul == 0
        assert counts.fp32_mul == 0
        assert counts.int_add > 0 and counts.accumulate > 0
        assert counts.final_shift > 0
        assert elapsed < 10.0
        verdict(10, f"one training step under the shift engine: "
                    f"{counts.int_add} exponent adds, zero multiplies "
                    f"({elapsed:.1f}s)")
