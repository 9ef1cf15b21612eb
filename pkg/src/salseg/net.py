"""Deterministic neural-network kernels for desk-scale encoder-decoder models.

Everything runs in float64 numpy on (batch, channels, height, width) arrays.
The layer set is exactly what the segmentation architecture needs: stride-1
same-padded convolution, ReLU, 2x2 max pooling that records argmax offsets,
index-driven unpooling, stride-2 transposed convolution, and channel softmax,
plus the weighted cross-entropy and Euclidean losses. Backward passes are
exact reverse-mode gradients, verifiable against finite differences.

A ``Network`` instance caches activations between forward and backward and is
therefore single-writer; distinct instances are independent.
"""

from dataclasses import dataclass, field

import numpy as np

from .balancing import ClassWeights
from .maps import SaliencyMap, SalientRegionMap

PROB_EPS = 1e-12  # probability clamp bound before logarithms


# ---------------------------------------------------------------------------
# functional kernels
# ---------------------------------------------------------------------------

def conv_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Stride-1 cross-correlation with zero same-padding plus per-channel bias.

    x: (N, C, H, W), w: (F, C, k, k) with k odd, b: (F,). Output (N, F, H, W).
    """
    out, _ = _conv_forward_cached(x, w, b)
    return out


def _conv_forward_cached(x, w, b):
    n, c, h, wd = x.shape
    f, cw, kh, kw = w.shape
    if cw != c:
        raise ValueError(f"channel mismatch: input has {c}, kernel expects {cw}")
    if kh != kw or kh % 2 == 0:
        raise ValueError("kernel must be square and odd-sized")
    p = kh // 2
    xp = np.zeros((n, c, h + 2 * p, wd + 2 * p), dtype=np.float64)
    xp[:, :, p : p + h, p : p + wd] = x
    # im2col + GEMM
    cols = np.empty((n, c, kh * kw, h, wd), dtype=np.float64)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, i * kw + j] = xp[:, :, i : i + h, j : j + wd]
    cols = cols.reshape(n, c * kh * kw, h * wd)
    out = np.matmul(w.reshape(f, -1), cols).reshape(n, f, h, wd)
    out += b[None, :, None, None]
    return out, cols


def _conv_backward(dout, cols, w, input_shape):
    n, c, h, wd = input_shape
    f, _, kh, kw = w.shape
    dmat = dout.reshape(n, f, h * wd)
    dw = np.matmul(dmat, cols.transpose(0, 2, 1)).sum(axis=0).reshape(w.shape)
    db = dout.sum(axis=(0, 2, 3))
    # col2im: scatter-accumulate the column gradients back onto the input
    dcols = np.matmul(w.reshape(f, -1).T, dmat).reshape(n, c, kh * kw, h, wd)
    p = kh // 2
    dxp = np.zeros((n, c, h + 2 * p, wd + 2 * p), dtype=np.float64)
    for i in range(kh):
        for j in range(kw):
            dxp[:, :, i : i + h, j : j + wd] += dcols[:, :, i * kw + j]
    dx = dxp[:, :, p : p + h, p : p + wd]
    return dx, dw, db


def _to_windows(x):
    # (N, C, H, W) -> (N, C, H/2, W/2, 4), last axis in row-major window order
    n, c, h, w = x.shape
    return (
        x.reshape(n, c, h // 2, 2, w // 2, 2)
        .transpose(0, 1, 2, 4, 3, 5)
        .reshape(n, c, h // 2, w // 2, 4)
    )


def _from_windows(win):
    n, c, ho, wo, _ = win.shape
    return (
        win.reshape(n, c, ho, wo, 2, 2)
        .transpose(0, 1, 2, 4, 3, 5)
        .reshape(n, c, 2 * ho, 2 * wo)
    )


def maxpool_forward(x: np.ndarray):
    """2x2 stride-2 max pooling.

    Returns (pooled, indices); indices holds, per output element, the flat
    row-major offset (0..3) of the argmax inside its window. Ties resolve to
    the first cell in row-major order.
    """
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ValueError(f"max pooling needs even spatial extents, got {h}x{w}")
    win = _to_windows(x)
    idx = win.argmax(axis=-1)
    out = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]
    return out, idx


def maxpool_backward(dout: np.ndarray, idx: np.ndarray) -> np.ndarray:
    """Route each output gradient back to its recorded argmax cell."""
    return unpool_forward(dout, idx)


def unpool_forward(y: np.ndarray, idx: np.ndarray) -> np.ndarray:
    """Scatter each value to its recorded offset; all other cells become 0."""
    if y.shape != idx.shape:
        raise ValueError(f"value/index shape mismatch: {y.shape} vs {idx.shape}")
    if idx.size and (idx.min() < 0 or idx.max() > 3):
        raise ValueError("pool offsets must lie in 0..3")
    win = np.zeros(y.shape + (4,), dtype=np.float64)
    np.put_along_axis(win, idx[..., None], y[..., None], axis=-1)
    return _from_windows(win)


def unpool_backward(dout: np.ndarray, idx: np.ndarray) -> np.ndarray:
    """Gather gradients from the recorded offsets."""
    win = _to_windows(dout)
    return np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]


def deconv_forward(x: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Stride-2 transposed convolution that doubles the spatial extents.

    x: (N, C, H, W), w: (C, F, k, k) with k even (default architecture uses
    4x4, the smallest overlap-2 doubling filter). Output (N, F, 2H, 2W).
    """
    n, c, h, wd = x.shape
    cw, f, kh, kw = w.shape
    if cw != c:
        raise ValueError(f"channel mismatch: input has {c}, kernel expects {cw}")
    if kh != kw or kh % 2 or kh < 2:
        raise ValueError("transposed-conv kernel must be square, even, >= 2")
    p = (kh - 2) // 2
    # one GEMM produces every kernel offset's contribution, then scatter
    contrib = np.matmul(
        w.reshape(c, f * kh * kw).T, x.reshape(n, c, h * wd)
    ).reshape(n, f, kh, kw, h, wd)
    full = np.zeros((n, f, 2 * h + 2 * p, 2 * wd + 2 * p), dtype=np.float64)
    for i in range(kh):
        for j in range(kw):
            full[:, :, i : i + 2 * h : 2, j : j + 2 * wd : 2] += contrib[:, :, i, j]
    if p == 0:
        return full
    return np.ascontiguousarray(full[:, :, p : p + 2 * h, p : p + 2 * wd])


def _deconv_backward(dout, x, w):
    n, c, h, wd = x.shape
    _, f, kh, kw = w.shape
    p = (kh - 2) // 2
    dfull = np.zeros(
        (n, f, dout.shape[2] + 2 * p, dout.shape[3] + 2 * p), dtype=np.float64
    )
    dfull[:, :, p : p + dout.shape[2], p : p + dout.shape[3]] = dout
    dcols = np.empty((n, f, kh, kw, h, wd), dtype=np.float64)
    for i in range(kh):
        for j in range(kw):
            dcols[:, :, i, j] = dfull[:, :, i : i + 2 * h : 2, j : j + 2 * wd : 2]
    dcols = dcols.reshape(n, f * kh * kw, h * wd)
    dx = np.matmul(w.reshape(c, -1), dcols).reshape(x.shape)
    dw = (
        np.matmul(x.reshape(n, c, h * wd), dcols.transpose(0, 2, 1))
        .sum(axis=0)
        .reshape(w.shape)
    )
    return dx, dw


def relu_forward(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def relu_backward(dout: np.ndarray, x: np.ndarray) -> np.ndarray:
    return np.where(x > 0, dout, 0.0)


def softmax_forward(x: np.ndarray) -> np.ndarray:
    """Per-pixel softmax over the channel axis, max-subtracted for stability."""
    shifted = x - x.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def softmax_backward(dout: np.ndarray, probs: np.ndarray) -> np.ndarray:
    inner = (dout * probs).sum(axis=1, keepdims=True)
    return probs * (dout - inner)


def _as_level_array(gt):
    if isinstance(gt, SalientRegionMap):
        return gt.levels
    return np.asarray(gt)


def _as_weight_array(w):
    if isinstance(w, ClassWeights):
        return w.weights
    return np.asarray(w, dtype=np.float64)


def weighted_ce_loss(probs, gt, weights, form: str = "categorical"):
    """Class-weighted cross-entropy over per-pixel class probabilities.

    probs: (N, K, H, W) or (K, H, W) softmax outputs; gt: level indices of
    matching spatial shape (or a SalientRegionMap); weights: K per-class loss
    weights.

    form="categorical": per-pixel loss -W_g * ln p_g, the standard softmax
    cross-entropy with the ground-truth class weighted. The returned gradient
    is with respect to the pre-softmax logits.

    form="eq2-literal": per-pixel loss -sum_i W_i (g_i ln p_i +
    (1-g_i) ln(1-p_i)), a weighted multi-label binary cross-entropy over all
    K channels. The returned gradient is with respect to the probabilities,
    to be chained through a softmax layer's backward.

    Both forms average over pixels and clamp probabilities to
    [1e-12, 1 - 1e-12] before taking logarithms.
    """
    probs = np.asarray(probs, dtype=np.float64)
    gt = _as_level_array(gt)
    w = _as_weight_array(weights)
    squeeze = probs.ndim == 3
    if squeeze:
        probs = probs[None]
        gt = gt[None]
    n, k, h, wd = probs.shape
    if len(w) != k:
        raise ValueError(f"expected {k} class weights, got {len(w)}")
    if gt.shape != (n, h, wd):
        raise ValueError(f"ground truth shape {gt.shape} does not match {(n, h, wd)}")
    if gt.size and (gt.min() < 0 or gt.max() >= k):
        raise ValueError("ground-truth levels out of range")

    npix = n * h * wd
    clamped = np.clip(probs, PROB_EPS, 1.0 - PROB_EPS)
    onehot = np.zeros_like(probs)
    np.put_along_axis(onehot, gt[:, None], 1.0, axis=1)
    pixel_w = w[gt]  # (N, H, W)

    if form == "categorical":
        p_gt = np.take_along_axis(clamped, gt[:, None], axis=1)[:, 0]
        loss = float((-pixel_w * np.log(p_gt)).sum() / npix)
        grad = (probs - onehot) * pixel_w[:, None] / npix
    elif form == "eq2-literal":
        per_channel = onehot * np.log(clamped) + (1.0 - onehot) * np.log(1.0 - clamped)
        loss = float(-(w[None, :, None, None] * per_channel).sum() / npix)
        grad = (
            -w[None, :, None, None]
            * (onehot / clamped - (1.0 - onehot) / (1.0 - clamped))
            / npix
        )
    else:
        raise ValueError(f"unknown loss form {form!r}")

    if squeeze:
        grad = grad[0]
    return loss, grad


def euclidean_loss(pred, target):
    """Half mean squared error against a [0, 1] target map.

    Returns (loss, gradient) with gradient = (pred - target) / N where N is
    the number of elements. Accepts a SaliencyMap target and rescales its
    [0, 255] values to [0, 1]; array targets are used as given.
    """
    pred = np.asarray(pred, dtype=np.float64)
    if isinstance(target, SaliencyMap):
        target = target.values / 255.0
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {target.shape}")
    diff = pred - target
    loss = float(0.5 * np.mean(diff**2))
    return loss, diff / diff.size


# ---------------------------------------------------------------------------
# layers
# ---------------------------------------------------------------------------

@dataclass
class LayerSpec:
    """Declarative layer description, serializable into checkpoints.

    ``source`` is only meaningful for unpool layers: the index (within the
    network's layer list) of the max-pool whose recorded offsets it consumes.
    """

    kind: str  # conv | relu | maxpool | unpool | deconv | softmax
    kernel: int = 0
    stride: int = 1
    in_channels: int = 0
    out_channels: int = 0
    source: int | None = None

    def to_dict(self):
        d = {"kind": self.kind}
        if self.kind in ("conv", "deconv"):
            d.update(
                kernel=self.kernel,
                stride=self.stride,
                in_channels=self.in_channels,
                out_channels=self.out_channels,
            )
        if self.kind == "unpool":
            d["source"] = self.source
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(
            kind=d["kind"],
            kernel=d.get("kernel", 0),
            stride=d.get("stride", 1),
            in_channels=d.get("in_channels", 0),
            out_channels=d.get("out_channels", 0),
            source=d.get("source"),
        )


class Layer:
    """Base layer: parameter-free, cached forward, exact backward."""

    spec: LayerSpec

    def forward(self, x):
        raise NotImplementedError

    def backward(self, dout):
        raise NotImplementedError

    def param_arrays(self):
        return []

    def grad_arrays(self):
        return []

    def clear_cache(self):
        self._cache = None

    def _require_cache(self):
        cache = getattr(self, "_cache", None)
        if cache is None:
            raise RuntimeError("backward called without a cached forward pass")
        return cache


class Conv(Layer):
    def __init__(self, in_channels, out_channels, kernel=3, rng=None):
        self.spec = LayerSpec("conv", kernel, 1, in_channels, out_channels)
        fan_in = in_channels * kernel * kernel
        if rng is None:
            self.w = np.zeros((out_channels, in_channels, kernel, kernel))
            self.b = np.zeros(out_channels)
        else:
            self.w = rng.normal(
                0.0, np.sqrt(2.0 / fan_in), (out_channels, in_channels, kernel, kernel)
            )
            # tiny random bias keeps pre-activations off the exact ReLU kink
            # (zero bias + zero-filled unpool windows would pin them at 0)
            self.b = rng.normal(0.0, 1e-2, out_channels)
        self.dw = np.zeros_like(self.w)
        self.db = np.zeros_like(self.b)
        self._cache = None

    def forward(self, x):
        out, cols = _conv_forward_cached(x, self.w, self.b)
        self._cache = (x.shape, cols)
        return out

    def backward(self, dout):
        input_shape, cols = self._require_cache()
        dx, dw, db = _conv_backward(dout, cols, self.w, input_shape)
        self.dw += dw
        self.db += db
        return dx

    def param_arrays(self):
        return [self.w, self.b]

    def grad_arrays(self):
        return [self.dw, self.db]


class ReLU(Layer):
    def __init__(self):
        self.spec = LayerSpec("relu")
        self._cache = None

    def forward(self, x):
        self._cache = x
        return relu_forward(x)

    def backward(self, dout):
        return relu_backward(dout, self._require_cache())


class MaxPool(Layer):
    def __init__(self):
        self.spec = LayerSpec("maxpool", kernel=2, stride=2)
        self.indices = None
        self._cache = None

    def forward(self, x):
        out, idx = maxpool_forward(x)
        self.indices = idx
        self._cache = x.shape
        return out

    def backward(self, dout):
        self._require_cache()
        return maxpool_backward(dout, self.indices)


class Unpool(Layer):
    def __init__(self, pool: MaxPool, source_index: int | None = None):
        self.spec = LayerSpec("unpool", kernel=2, stride=2, source=source_index)
        self.pool = pool
        self._cache = None

    def forward(self, y):
        if self.pool.indices is None:
            raise RuntimeError("unpool ran before its paired max-pool")
        self._cache = self.pool.indices
        return unpool_forward(y, self._cache)

    def backward(self, dout):
        return unpool_backward(dout, self._require_cache())


class Deconv(Layer):
    def __init__(self, in_channels, out_channels, kernel=4, rng=None):
        self.spec = LayerSpec("deconv", kernel, 2, in_channels, out_channels)
        fan_in = in_channels * kernel * kernel
        if rng is None:
            self.w = np.zeros((in_channels, out_channels, kernel, kernel))
        else:
            self.w = rng.normal(
                0.0, np.sqrt(2.0 / fan_in), (in_channels, out_channels, kernel, kernel)
            )
        self.dw = np.zeros_like(self.w)
        self._cache = None

    def forward(self, x):
        self._cache = x
        return deconv_forward(x, self.w)

    def backward(self, dout):
        x = self._require_cache()
        dx, dw = _deconv_backward(dout, x, self.w)
        self.dw += dw
        return dx

    def param_arrays(self):
        return [self.w]

    def grad_arrays(self):
        return [self.dw]


class Softmax(Layer):
    def __init__(self):
        self.spec = LayerSpec("softmax")
        self._cache = None

    def forward(self, x):
        p = softmax_forward(x)
        self._cache = p
        return p

    def backward(self, dout):
        return softmax_backward(dout, self._require_cache())


# ---------------------------------------------------------------------------
# network assembly
# ---------------------------------------------------------------------------

@dataclass
class NetConfig:
    """Shape of the encoder-decoder: per-stage channel widths plus decoder mode.

    Each encoder stage is [conv3x3, relu, conv3x3, relu, maxpool]; the decoder
    mirrors it with either index unpooling or a learned 4x4 stride-2
    transposed convolution as the upsampler. The final conv emits
    ``out_channels`` logits (class count for segmentation, 1 for regression)
    with no activation.
    """

    in_channels: int = 1
    out_channels: int = 3
    stage_channels: tuple = (8, 16)
    decoder_mode: str = "unpool"  # unpool | deconv
    kernel: int = 3
    deconv_kernel: int = 4

    def to_dict(self):
        return {
            "in_channels": self.in_channels,
            "out_channels": self.out_channels,
            "stage_channels": list(self.stage_channels),
            "decoder_mode": self.decoder_mode,
            "kernel": self.kernel,
            "deconv_kernel": self.deconv_kernel,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            in_channels=d["in_channels"],
            out_channels=d["out_channels"],
            stage_channels=tuple(d["stage_channels"]),
            decoder_mode=d["decoder_mode"],
            kernel=d.get("kernel", 3),
            deconv_kernel=d.get("deconv_kernel", 4),
        )

    @property
    def num_stages(self):
        return len(self.stage_channels)


class Network:
    """An ordered stack of layers with cached forward and exact backward."""

    def __init__(self, layers):
        self.layers = list(layers)
        self._forward_ran = False

    def forward(self, x):
        x = np.asarray(x, dtype=np.float64)
        for layer in self.layers:
            x = layer.forward(x)
        self._forward_ran = True
        return x

    def backward(self, dout):
        if not self._forward_ran:
            raise RuntimeError("backward called without a cached forward pass")
        for layer in reversed(self.layers):
            dout = layer.backward(dout)
        return dout

    def param_arrays(self):
        arrays = []
        for layer in self.layers:
            arrays.extend(layer.param_arrays())
        return arrays

    def grad_arrays(self):
        arrays = []
        for layer in self.layers:
            arrays.extend(layer.grad_arrays())
        return arrays

    def zero_grads(self):
        for g in self.grad_arrays():
            g[...] = 0.0

    def sgd_step(self, lr: float):
        for p, g in zip(self.param_arrays(), self.grad_arrays()):
            p -= lr * g

    def specs(self):
        return [layer.spec for layer in self.layers]


def build_encoder_decoder(cfg: NetConfig, seed: int | None = 0) -> Network:
    """Assemble the configured encoder-decoder.

    Parameters are drawn from a seeded fan-in-scaled normal (variance
    2/fan_in); pass seed=None for all-zero parameters.
    """
    rng = None if seed is None else np.random.default_rng(seed)
    layers: list[Layer] = []
    pool_positions: list[int] = []

    c = cfg.in_channels
    for width in cfg.stage_channels:
        layers.append(Conv(c, width, cfg.kernel, rng))
        layers.append(ReLU())
        layers.append(Conv(width, width, cfg.kernel, rng))
        layers.append(ReLU())
        pool_positions.append(len(layers))
        layers.append(MaxPool())
        c = width

    for si in reversed(range(cfg.num_stages)):
        width = cfg.stage_channels[si]
        if cfg.decoder_mode == "unpool":
            src = pool_positions[si]
            layers.append(Unpool(layers[src], source_index=src))
        elif cfg.decoder_mode == "deconv":
            layers.append(Deconv(width, width, cfg.deconv_kernel, rng))
        else:
            raise ValueError(f"unknown decoder mode {cfg.decoder_mode!r}")
        layers.append(Conv(width, width, cfg.kernel, rng))
        layers.append(ReLU())
        if si > 0:
            nxt = cfg.stage_channels[si - 1]
            layers.append(Conv(width, nxt, cfg.kernel, rng))
            layers.append(ReLU())
        else:
            layers.append(Conv(width, cfg.out_channels, cfg.kernel, rng))

    return Network(layers)


def encoder_layers(net: Network, cfg: NetConfig):
    """The encoder prefix of a built network: all layers up to the last pool."""
    last_pool = max(i for i, l in enumerate(net.layers) if isinstance(l, MaxPool))
    return net.layers[: last_pool + 1]
