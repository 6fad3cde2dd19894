"""Quantization-aware training engine.

The forward path of a quantized linear (or im2col-lowered conv) layer is:
bias-correct the weights, quantize them to a power-of-two block; ratio-clip
the incoming activations, quantize them; multiply with the MAC engine. The
backward path quantizes the upstream gradient, produces the weight gradient
and the propagated input gradient with two more MAC products, and applies
straight-through estimation: gradients pass through the quantizers unchanged
and are zeroed where the forward clip saturated. Nonlinearities, the loss
head, and the SGD-with-momentum update run in full precision on float64
master weights.

Layer caches are valid for exactly one forward-backward pair and are cleared
by the weight update; a backward without a live cache raises ProtocolError.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import census
from .errors import ConfigError, InputError, ProtocolError, TrainingFault
from .mfmac import mf_matmul
from .quantizer import QuantBlock, correct_weight_bias, quantize_block, ratio_clip


@dataclass(frozen=True)
class QuantPolicy:
    """How the quantized path behaves; the fp32 baseline sets quantized=False."""

    quantized: bool = True
    no_als_scaling: bool = False   # ablation: skip the layer scale (beta = 0)
    no_wbc: bool = False           # ablation: skip weight bias correction
    no_prc: bool = False           # ablation: skip ratio clipping
    ste_clip_mask: bool = True     # zero propagated gradients at clipped inputs
    learn_gamma: bool = False      # PACT-style clip-ratio learning
    accumulator: str = "wide"
    engine: str = "auto"


@dataclass
class TrainConfig:
    epochs: int = 5
    batch_size: int = 256
    lr: float = 0.1
    momentum: float = 0.9
    lr_decay_epochs: tuple[int, ...] = ()
    lr_decay_factor: float = 0.1
    seed: int = 0
    init: str = "untruncated_normal"
    policy: QuantPolicy = field(default_factory=QuantPolicy)

    def lr_at(self, epoch: int) -> float:
        lr = self.lr
        for e in self.lr_decay_epochs:
            if epoch >= e:
                lr *= self.lr_decay_factor
        return lr


class QuantStats:
    """Per-tensor-class sentinel accounting, reset per epoch by the loop."""

    def __init__(self) -> None:
        self.counts: dict[str, list[int]] = {}

    def add(self, kind: str, q: QuantBlock) -> None:
        sent, total = self.counts.setdefault(kind, [0, 0])
        self.counts[kind] = [sent + int(q.sentinel_mask().sum()), total + q.size]

    def fraction(self, kind: str) -> float:
        sent, total = self.counts.get(kind, [0, 0])
        return sent / total if total else 0.0

    def reset(self) -> None:
        self.counts.clear()


def init_weights(shape: tuple[int, ...], fan_in: int, rng: np.random.Generator, mode: str = "untruncated_normal") -> np.ndarray:
    """Fan-in-scaled normal init: std = 1/sqrt(fan_in). The truncated mode
    resamples draws beyond two standard deviations."""
    std = 1.0 / np.sqrt(fan_in)
    if mode == "untruncated_normal":
        return rng.normal(0.0, std, size=shape)
    if mode == "truncated_normal":
        W = rng.normal(0.0, std, size=shape)
        bad = np.abs(W) > 2 * std
        while bad.any():
            W[bad] = rng.normal(0.0, std, size=int(bad.sum()))
            bad = np.abs(W) > 2 * std
        return W
    raise ConfigError(f"unknown init mode {mode!r}")


class Layer:
    has_weights = False

    def forward(self, x: np.ndarray, policy: QuantPolicy, train: bool) -> np.ndarray:
        raise NotImplementedError

    def backward(self, g: np.ndarray, policy: QuantPolicy, need_input_grad: bool) -> np.ndarray | None:
        raise NotImplementedError

    def apply_update(self, lr: float, momentum: float) -> None:
        pass

    def out_shape(self, in_shape: tuple[int, ...]) -> tuple[int, ...]:
        raise NotImplementedError


class QuantLinear(Layer):
    """Fully connected layer, (batch, in) -> (batch, out), no bias term."""

    has_weights = True

    def __init__(self, W: np.ndarray, gamma: float = 1.0, bits: tuple[int, int, int] = (5, 5, 5), stats: QuantStats | None = None):
        self.W = np.asarray(W, dtype=np.float64)
        self.gamma = float(gamma)
        self.bits = bits  # (weights, activations, gradients)
        self.v = np.zeros_like(self.W)
        self.grad: np.ndarray | None = None
        self.gamma_grad = 0.0
        self.stats = stats
        self._cache: tuple | None = None

    def out_shape(self, in_shape):
        if len(in_shape) != 1 or in_shape[0] != self.W.shape[1]:
            raise ConfigError(f"linear layer expects ({self.W.shape[1]},), got {in_shape}")
        return (self.W.shape[0],)

    def forward(self, x, policy, train):
        bw, ba, _ = self.bits
        if not policy.quantized:
            self._cache = (x,)
            m, k = x.shape
            n = self.W.shape[0]
            census.record(fp32_mul=m * k * n, fp32_add=m * k * n)
            return x @ self.W.T
        Wt = self.W if policy.no_wbc else correct_weight_bias(self.W)
        wq = quantize_block(Wt, bw, scaled=not policy.no_als_scaling)
        if policy.no_prc:
            a, mask, amax = x, None, 0.0
        else:
            a, mask = ratio_clip(x, self.gamma)
            amax = float(np.max(np.abs(x)))
        aq = quantize_block(a, ba, scaled=not policy.no_als_scaling)
        if self.stats is not None:
            self.stats.add("w", wq)
            self.stats.add("a", aq)
        self._cache = (aq, wq, mask, amax)
        return mf_matmul(aq, wq.T, mode=policy.accumulator, engine=policy.engine)

    def backward(self, g, policy, need_input_grad):
        if self._cache is None:
            raise ProtocolError("backward without a live forward cache")
        if not policy.quantized:
            (x,) = self._cache
            m, k = g.shape  # (batch, out)
            n = x.shape[1]
            census.record(fp32_mul=2 * m * k * n, fp32_add=2 * m * k * n)
            self.grad = g.T @ x
            return g @ self.W if need_input_grad else None
        aq, wq, mask, amax = self._cache
        _, _, bg = self.bits
        gq = quantize_block(g, bg, scaled=not policy.no_als_scaling)
        if self.stats is not None:
            self.stats.add("g", gq)
        self.grad = mf_matmul(gq.T, aq, mode=policy.accumulator, engine=policy.engine)
        if not need_input_grad:
            return None
        gin = mf_matmul(gq, wq, mode=policy.accumulator, engine=policy.engine)
        if mask is not None:
            if policy.learn_gamma:
                # d(clip(a))/d(gamma) = max|A| * sign(a) at clipped positions;
                # the quantized sign equals the original sign there
                sign_a = np.where(aq.signs == 1, -1.0, 1.0)
                self.gamma_grad = amax * float(np.sum(np.where(mask, gin * sign_a, 0.0)))
            if policy.ste_clip_mask:
                gin = np.where(mask, 0.0, gin)
        return gin

    def apply_update(self, lr, momentum):
        if self.grad is None:
            raise ProtocolError("update without gradients")
        self.v = momentum * self.v + self.grad
        self.W -= lr * self.v
        if self.gamma_grad:
            self.gamma = float(np.clip(self.gamma - lr * self.gamma_grad, 0.05, 1.0))
            self.gamma_grad = 0.0
        self.grad = None
        self._cache = None


def im2col(x: np.ndarray, kh: int, kw: int, stride: int = 1, pad: int = 0) -> tuple[np.ndarray, tuple[int, int]]:
    """(B, C, H, W) -> (B*OH*OW, C*kh*kw) patch matrix."""
    B, C, H, W = x.shape
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    OH = (H + 2 * pad - kh) // stride + 1
    OW = (W + 2 * pad - kw) // stride + 1
    if OH <= 0 or OW <= 0:
        raise ConfigError(f"kernel {kh}x{kw} does not fit input {H}x{W} with pad {pad}")
    cols = np.empty((B, C, kh, kw, OH, OW), dtype=x.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, i, j] = x[:, :, i : i + stride * OH : stride, j : j + stride * OW : stride]
    return cols.transpose(0, 4, 5, 1, 2, 3).reshape(B * OH * OW, C * kh * kw), (OH, OW)


def col2im(cols: np.ndarray, x_shape: tuple[int, ...], kh: int, kw: int, stride: int = 1, pad: int = 0) -> np.ndarray:
    """Adjoint of im2col: scatter patch gradients back onto the image grid."""
    B, C, H, W = x_shape
    OH = (H + 2 * pad - kh) // stride + 1
    OW = (W + 2 * pad - kw) // stride + 1
    cols = cols.reshape(B, OH, OW, C, kh, kw).transpose(0, 3, 4, 5, 1, 2)
    out = np.zeros((B, C, H + 2 * pad, W + 2 * pad), dtype=cols.dtype)
    for i in range(kh):
        for j in range(kw):
            out[:, :, i : i + stride * OH : stride, j : j + stride * OW : stride] += cols[:, :, i, j]
    return out[:, :, pad : pad + H, pad : pad + W] if pad else out


class QuantConv2d(Layer):
    """Convolution lowered to im2col + the same quantized matmul path."""

    has_weights = True

    def __init__(self, W: np.ndarray, stride: int = 1, pad: int = 0, gamma: float = 1.0, bits: tuple[int, int, int] = (5, 5, 5), stats: QuantStats | None = None):
        self.W = np.asarray(W, dtype=np.float64)  # (OC, C, kh, kw)
        self.stride = stride
        self.pad = pad
        self.gamma = float(gamma)
        self.bits = bits
        self.v = np.zeros_like(self.W)
        self.grad: np.ndarray | None = None
        self.gamma_grad = 0.0
        self.stats = stats
        self._cache: tuple | None = None

    def out_shape(self, in_shape):
        C, H, W = in_shape
        oc, c, kh, kw = self.W.shape
        if c != C:
            raise ConfigError(f"conv expects {c} input channels, got {C}")
        OH = (H + 2 * self.pad - kh) // self.stride + 1
        OW = (W + 2 * self.pad - kw) // self.stride + 1
        if OH <= 0 or OW <= 0:
            raise ConfigError(f"kernel {kh}x{kw} does not fit input {H}x{W}")
        return (oc, OH, OW)

    def forward(self, x, policy, train):
        oc, c, kh, kw = self.W.shape
        cols, (OH, OW) = im2col(x, kh, kw, self.stride, self.pad)
        W2 = self.W.reshape(oc, -1)
        B = x.shape[0]
        if not policy.quantized:
            self._cache = (cols, x.shape, (OH, OW))
            m, k = cols.shape
            census.record(fp32_mul=m * k * oc, fp32_add=m * k * oc)
            y = cols @ W2.T
            return y.reshape(B, OH, OW, oc).transpose(0, 3, 1, 2)
        bw, ba, _ = self.bits
        Wt = W2 if policy.no_wbc else correct_weight_bias(W2)
        wq = quantize_block(Wt, bw, scaled=not policy.no_als_scaling)
        if policy.no_prc:
            a, mask, amax = cols, None, 0.0
        else:
            a, mask = ratio_clip(cols, self.gamma)
            amax = float(np.max(np.abs(cols)))
        aq = quantize_block(a, ba, scaled=not policy.no_als_scaling)
        if self.stats is not None:
            self.stats.add("w", wq)
            self.stats.add("a", aq)
        self._cache = (aq, wq, mask, amax, x.shape, (OH, OW))
        y = mf_matmul(aq, wq.T, mode=policy.accumulator, engine=policy.engine)
        return y.reshape(B, OH, OW, oc).transpose(0, 3, 1, 2)

    def backward(self, g, policy, need_input_grad):
        if self._cache is None:
            raise ProtocolError("backward without a live forward cache")
        oc, c, kh, kw = self.W.shape
        B = g.shape[0]
        g2 = g.transpose(0, 2, 3, 1).reshape(-1, oc)
        if not policy.quantized:
            cols, x_shape, _ = self._cache
            m, k = g2.shape
            n = cols.shape[1]
            census.record(fp32_mul=2 * m * k * n, fp32_add=2 * m * k * n)
            self.grad = (g2.T @ cols).reshape(self.W.shape)
            if not need_input_grad:
                return None
            dcols = g2 @ self.W.reshape(oc, -1)
            return col2im(dcols, x_shape, kh, kw, self.stride, self.pad)
        aq, wq, mask, amax, x_shape, _ = self._cache
        _, _, bg = self.bits
        gq = quantize_block(g2, bg, scaled=not policy.no_als_scaling)
        if self.stats is not None:
            self.stats.add("g", gq)
        self.grad = mf_matmul(gq.T, aq, mode=policy.accumulator, engine=policy.engine).reshape(self.W.shape)
        if not need_input_grad:
            return None
        dcols = mf_matmul(gq, wq, mode=policy.accumulator, engine=policy.engine)
        if mask is not None and policy.ste_clip_mask:
            dcols = np.where(mask, 0.0, dcols)
        return col2im(dcols, x_shape, kh, kw, self.stride, self.pad)

    def apply_update(self, lr, momentum):
        if self.grad is None:
            raise ProtocolError("update without gradients")
        self.v = momentum * self.v + self.grad
        self.W -= lr * self.v
        self.grad = None
        self._cache = None


class ReLU(Layer):
    def __init__(self) -> None:
        self._mask: np.ndarray | None = None

    def out_shape(self, in_shape):
        return in_shape

    def forward(self, x, policy, train):
        self._mask = x > 0
        return np.where(self._mask, x, 0.0)

    def backward(self, g, policy, need_input_grad):
        if self._mask is None:
            raise ProtocolError("backward without a live forward cache")
        return np.where(self._mask, g, 0.0)


class Flatten(Layer):
    def __init__(self) -> None:
        self._shape: tuple[int, ...] | None = None

    def out_shape(self, in_shape):
        return (int(np.prod(in_shape)),)

    def forward(self, x, policy, train):
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, g, policy, need_input_grad):
        if self._shape is None:
            raise ProtocolError("backward without a live forward cache")
        return g.reshape(self._shape)


class SoftmaxCrossEntropy:
    """Full-precision loss head: mean cross-entropy over the batch."""

    def __init__(self) -> None:
        self._cache: tuple | None = None

    def loss(self, logits: np.ndarray, y: np.ndarray) -> float:
        z = logits - logits.max(axis=1, keepdims=True)
        logsum = np.log(np.exp(z).sum(axis=1, keepdims=True))
        logp = z - logsum
        n = logits.shape[0]
        self._cache = (np.exp(logp), y, n)
        return float(-logp[np.arange(n), y].mean())

    def backward(self) -> np.ndarray:
        if self._cache is None:
            raise ProtocolError("loss backward before loss forward")
        p, y, n = self._cache
        g = p.copy()
        g[np.arange(n), y] -= 1.0
        self._cache = None
        return g / n


class Network:
    """A layer stack with a softmax cross-entropy head."""

    def __init__(self, layers: list[Layer], policy: QuantPolicy | None = None):
        self.layers = layers
        self.policy = policy or QuantPolicy()
        self.head = SoftmaxCrossEntropy()
        self.stats = QuantStats()
        for lyr in layers:
            if lyr.has_weights:
                lyr.stats = self.stats

    def forward(self, X: np.ndarray, train: bool = True) -> np.ndarray:
        h = np.asarray(X, dtype=np.float64)
        if not np.all(np.isfinite(h)):
            raise TrainingFault("non-finite network input", layer=-1)
        # overflow to inf is detected here and raised; silence the duplicate warning
        with np.errstate(over="ignore", invalid="ignore"):
            for i, lyr in enumerate(self.layers):
                h = lyr.forward(h, self.policy, train)
                if not np.all(np.isfinite(h)):
                    raise TrainingFault(f"non-finite activations after layer {i}", layer=i)
        return h

    def loss_and_grads(self, X: np.ndarray, y: np.ndarray) -> tuple[float, np.ndarray]:
        logits = self.forward(X, train=True)
        loss = self.head.loss(logits, y)
        if not np.isfinite(loss):
            raise TrainingFault("non-finite loss", layer=len(self.layers))
        g = self.head.backward()
        with np.errstate(over="ignore", invalid="ignore"):
            for i in range(len(self.layers) - 1, -1, -1):
                # the propagated gradient is only consumed by weighted layers below
                need = any(l.has_weights for l in self.layers[:i])
                g = self.layers[i].backward(g, self.policy, need_input_grad=need)
                if g is None:
                    break
                if not np.all(np.isfinite(g)):
                    raise TrainingFault(f"non-finite gradients into layer {i}", layer=i)
        return loss, logits

    def apply_updates(self, lr: float, momentum: float) -> None:
        for lyr in self.layers:
            lyr.apply_update(lr, momentum)

    def predict(self, X: np.ndarray) -> np.ndarray:
        return np.argmax(self.forward(X, train=False), axis=1)

    def weighted_layers(self) -> list[Layer]:
        return [l for l in self.layers if l.has_weights]


@dataclass
class LayerSpec:
    kind: str  # linear | conv2d | relu | flatten
    out: int = 0
    kernel: int = 0
    stride: int = 1
    pad: int = 0
    gamma: float | None = None
    bits: tuple[int, int, int] | None = None


@dataclass
class NetworkSpec:
    """Declarative network description; build() checks shape compatibility."""

    input_shape: tuple[int, ...]
    layers: list[LayerSpec]
    bits: tuple[int, int, int] = (5, 5, 5)
    last_layer_g_bits: int = 6
    gamma: float = 1.0

    def build(self, rng: np.random.Generator, policy: QuantPolicy | None = None, init: str = "untruncated_normal") -> Network:
        built: list[Layer] = []
        shape = tuple(self.input_shape)
        last_weighted = max((i for i, ls in enumerate(self.layers) if ls.kind in ("linear", "conv2d")), default=None)
        if last_weighted is None:
            raise ConfigError("network needs at least one weighted layer")
        for i, ls in enumerate(self.layers):
            bits = tuple(ls.bits) if ls.bits else tuple(self.bits)
            if i == last_weighted and ls.bits is None:
                bits = (bits[0], bits[1], self.last_layer_g_bits)
            gamma = self.gamma if ls.gamma is None else ls.gamma
            if ls.kind == "linear":
                if len(shape) != 1:
                    raise ConfigError(f"layer {i}: linear needs flat input, got {shape}; add a flatten layer")
                fan_in = shape[0]
                W = init_weights((ls.out, fan_in), fan_in, rng, init)
                built.append(QuantLinear(W, gamma=gamma, bits=bits))
            elif ls.kind == "conv2d":
                if len(shape) != 3:
                    raise ConfigError(f"layer {i}: conv2d needs (C,H,W) input, got {shape}")
                C = shape[0]
                fan_in = C * ls.kernel * ls.kernel
                W = init_weights((ls.out, C, ls.kernel, ls.kernel), fan_in, rng, init)
                built.append(QuantConv2d(W, stride=ls.stride, pad=ls.pad, gamma=gamma, bits=bits))
            elif ls.kind == "relu":
                built.append(ReLU())
            elif ls.kind == "flatten":
                built.append(Flatten())
            else:
                raise ConfigError(f"layer {i}: unknown layer kind {ls.kind!r}")
            shape = built[-1].out_shape(shape)
        if len(shape) != 1:
            raise ConfigError(f"network output must be flat class logits, got {shape}")
        return Network(built, policy=policy)


@dataclass
class EpochMetrics:
    epoch: int
    lr: float
    train_loss: float
    train_acc: float
    test_loss: float
    test_acc: float
    saturations: int
    sentinel_w: float
    sentinel_a: float
    sentinel_g: float


def train_step(net: Network, X: np.ndarray, y: np.ndarray, lr: float, momentum: float = 0.9) -> tuple[float, float]:
    """One forward/backward/update; returns (batch loss, batch accuracy)."""
    loss, logits = net.loss_and_grads(X, y)
    net.apply_updates(lr, momentum)
    acc = float((np.argmax(logits, axis=1) == y).mean())
    return loss, acc


def evaluate(net: Network, X: np.ndarray, y: np.ndarray, batch_size: int = 512) -> tuple[float, float]:
    losses = []
    correct = 0
    head = SoftmaxCrossEntropy()
    for i in range(0, len(X), batch_size):
        xb, yb = X[i : i + batch_size], y[i : i + batch_size]
        logits = net.forward(xb, train=False)
        losses.append(head.loss(logits, yb) * len(xb))
        correct += int((np.argmax(logits, axis=1) == yb).sum())
    return float(np.sum(losses) / len(X)), correct / len(X)


def fit(
    net: Network,
    config: TrainConfig,
    X_train: np.ndarray,
    y_train: np.ndarray,
    X_test: np.ndarray,
    y_test: np.ndarray,
    rng: np.random.Generator,
    start_epoch: int = 0,
    on_epoch=None,
) -> list[EpochMetrics]:
    """Epoch loop; deterministic given (config, rng state, data)."""
    n = len(X_train)
    history: list[EpochMetrics] = []
    for epoch in range(start_epoch, config.epochs):
        lr = config.lr_at(epoch)
        net.stats.reset()
        sat_before = census.op_census().saturation
        perm = rng.permutation(n)
        tot_loss = 0.0
        for i in range(0, n, config.batch_size):
            idx = perm[i : i + config.batch_size]
            xb, yb = X_train[idx], y_train[idx]
            try:
                loss, _ = train_step(net, xb, yb, lr, config.momentum)
            except TrainingFault as tf:
                tf.step = epoch * ((n + config.batch_size - 1) // config.batch_size) + i // config.batch_size
                raise
            tot_loss += loss * len(xb)
        train_loss = tot_loss / n
        _, train_acc = evaluate(net, X_train, y_train)
        test_loss, test_acc = evaluate(net, X_test, y_test)
        sat = census.op_census().saturation - sat_before
        row = EpochMetrics(
            epoch=epoch,
            lr=lr,
            train_loss=train_loss,
            train_acc=train_acc,
            test_loss=test_loss,
            test_acc=test_acc,
            saturations=sat,
            sentinel_w=net.stats.fraction("w"),
            sentinel_a=net.stats.fraction("a"),
            sentinel_g=net.stats.fraction("g"),
        )
        history.append(row)
        if on_epoch is not None:
            on_epoch(row)
    return history
