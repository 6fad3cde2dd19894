"""
Training with multiplication-free arithmetic
============================================

Side-by-side fp32 and quantized runs on a small cluster task, then the
two ablations that show why centering and the block scale matter.
"""

import numpy as np

from mftrain.datasets import synthetic_clusters
from mftrain.nn import LayerSpec, NetworkSpec, QuantPolicy, TrainConfig, fit

ds = synthetic_clusters(classes=10, dim=256, train_samples=2048,
                        test_samples=512, noise=0.8, seed=7)
spec = NetworkSpec(
    input_shape=(256,),
    layers=[LayerSpec("linear", out=128), LayerSpec("relu"),
            LayerSpec("linear", out=10)],
    bits=(5, 5, 5),
    last_layer_g_bits=5,
)
cfg = TrainConfig(epochs=4, batch_size=256, lr=0.05,
                  lr_decay_epochs=(3,), lr_decay_factor=0.1, seed=0)


def run(policy, label):
    rng = np.random.default_rng(cfg.seed)
    net = spec.build(rng, policy)
    hist = fit(net, cfg, ds.X_train, ds.y_train, ds.X_test, ds.y_test, rng)
    print(f"\n{label}")
    print("epoch  train_loss  test_acc  sentinel_g")
    for h in hist:
        print(f"{h.epoch:5d}  {h.train_loss:10.4f}  {h.test_acc:8.4f}"
              f"  {h.sentinel_g:10.4f}")
    return hist


fp32 = run(QuantPolicy(quantized=False), "fp32 reference")
quant = run(QuantPolicy(), "quantized (5/5/5, centered weights, ratio clip)")
gap = abs(fp32[-1].test_acc - quant[-1].test_acc)
print(f"\naccuracy gap: {gap * 100:.2f} points")

# drop the per-layer scale and gradients fall below the smallest positive
# code: every entry flushes to the zero sentinel and learning stops cold
no_scale = run(QuantPolicy(no_als_scaling=True), "ablation: no block scale")
print(f"\nall gradients flushed: sentinel_g = {no_scale[-1].sentinel_g:.4f}, "
      f"accuracy stuck at chance ({no_scale[-1].test_acc:.4f})")

# without centering, each weight row burns code range on its mean
no_center = run(QuantPolicy(no_wbc=True), "ablation: no weight centering")
print(f"\nfinal train loss {no_center[-1].train_loss:.4f} vs "
      f"{quant[-1].train_loss:.4f} with centering")
