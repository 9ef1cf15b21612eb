"""Receptive-field visualization of trained encoder neurons.

A neuron's general pattern is reconstructed without any input image: its
pooled feature map is seeded with a single 1 at the spatial center, then run
backwards to the input, stage by stage. Each backward stage is index-free
upsampling (every value goes to the top-left cell of its 2x2 window, a fixed
stand-in for pooling indices that would require an actual image), a
transposed convolution with the stage's learned, spatially flipped kernels,
and rectification wherever the forward convolution was ReLU-activated.
"""

import math
from dataclasses import dataclass

import numpy as np

from .net import Conv, MaxPool, Network, ReLU, conv_forward
from .train import Checkpoint


@dataclass(frozen=True)
class ReceptiveField:
    """Input-space pattern a neuron responds to; raw values, not normalized."""

    neuron_id: tuple  # (stage, channel)
    image: np.ndarray

    def display(self) -> np.ndarray:
        """Min-max normalize to [0, 255] for export; an all-zero field stays 0."""
        lo, hi = self.image.min(), self.image.max()
        if hi == lo:
            return np.zeros_like(self.image)
        return (self.image - lo) * (255.0 / (hi - lo))


def upsample_topleft(x: np.ndarray) -> np.ndarray:
    """Double the spatial extents, placing each value at its window's top-left."""
    n, c, h, w = x.shape
    out = np.zeros((n, c, 2 * h, 2 * w), dtype=np.float64)
    out[:, :, ::2, ::2] = x
    return out


def reverse_conv(x: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Apply the exact transpose of a forward convolution.

    The transpose of a same-padded cross-correlation places each feature
    value back through the spatially flipped kernel; a unit feature impulse
    reconstructs w[f, c, ::-1, ::-1] around its position. Implemented as a
    cross-correlation with channel-transposed weights, which performs that
    flip geometrically.
    """
    w_rev = np.ascontiguousarray(w.transpose(1, 0, 2, 3))
    bias = np.zeros(w_rev.shape[0])
    return conv_forward(x, w_rev, bias)


def reverse_pass(layers, seed: np.ndarray) -> np.ndarray:
    """Run a seed feature map backwards through encoder layers to input space.

    ``layers`` is a forward-ordered layer list ending at the feature map the
    seed lives in. Rectification mirrors the forward pass: it is applied
    after exactly those reversed convolutions whose forward counterpart fed
    a ReLU.
    """
    x = seed
    rectify_next = False
    for layer in reversed(list(layers)):
        if isinstance(layer, MaxPool):
            x = upsample_topleft(x)
        elif isinstance(layer, ReLU):
            rectify_next = True
        elif isinstance(layer, Conv):
            x = reverse_conv(x, layer.w)
            if rectify_next:
                x = np.maximum(x, 0.0)
                rectify_next = False
        else:
            raise ValueError(f"reverse pass cannot handle {type(layer).__name__}")
    return x


def _encoder_prefix(net: Network, stage: int):
    """Layers from the input up to and including stage's pool (0-based)."""
    pool_positions = [i for i, l in enumerate(net.layers) if isinstance(l, MaxPool)]
    if not 0 <= stage < len(pool_positions):
        raise ValueError(
            f"stage must lie in 0..{len(pool_positions) - 1}, got {stage}"
        )
    return net.layers[: pool_positions[stage] + 1]


def reverse_support_radius(layers) -> int:
    """How far (in input pixels) the reverse pass can spread from one seed."""
    radius = 0
    for layer in reversed(list(layers)):
        if isinstance(layer, MaxPool):
            radius *= 2
        elif isinstance(layer, Conv):
            radius += layer.spec.kernel // 2
    return radius


def visualize_neuron(ckpt: Checkpoint, layer: int, channel: int) -> ReceptiveField:
    """Reconstruct the general pattern of one pooled-encoder neuron.

    ``layer`` is the 0-based encoder stage, ``channel`` the neuron index in
    that stage's pooled output. The seed sits at the spatial center of a
    canvas sized so the field never clips at the border.
    """
    net = ckpt.build_network()
    prefix = _encoder_prefix(net, layer)
    width = ckpt.net_config.stage_channels[layer]
    if not 0 <= channel < width:
        raise ValueError(f"channel must lie in 0..{width - 1}, got {channel}")

    scale = 2 ** (layer + 1)
    radius = reverse_support_radius(prefix)
    m = 2 * math.ceil(radius / scale) + 1
    seed = np.zeros((1, width, m, m), dtype=np.float64)
    seed[0, channel, m // 2, m // 2] = 1.0
    field = reverse_pass(prefix, seed)
    return ReceptiveField(neuron_id=(layer, channel), image=field[0, 0])


def visualize_grid(ckpt: Checkpoint, layer: int, first_n: int) -> np.ndarray:
    """Tile the first ``first_n`` receptive fields into a square-ish image.

    Fields are min-max normalized individually and separated by 1-pixel
    white rules; 64 neurons make the classic 8x8 grid. A single field is
    returned without separators.
    """
    width = ckpt.net_config.stage_channels[layer]
    if first_n < 1 or first_n > width:
        raise ValueError(f"first_n must lie in 1..{width}, got {first_n}")
    tiles = [visualize_neuron(ckpt, layer, c).display() for c in range(first_n)]
    side = tiles[0].shape[0]
    rows = math.ceil(math.sqrt(first_n))
    cols = math.ceil(first_n / rows)
    grid = np.full(
        (rows * side + (rows - 1), cols * side + (cols - 1)), 255.0, dtype=np.float64
    )
    for i in range(rows):
        for j in range(cols):
            k = i * cols + j
            tile = tiles[k] if k < first_n else np.zeros((side, side))
            y, x = i * (side + 1), j * (side + 1)
            grid[y : y + side, x : x + side] = tile
    return grid


def grid_filename(layer: int, first_n: int) -> str:
    return f"rf_layer{layer}_n{first_n}.pgm"
