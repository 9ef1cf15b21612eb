"""Gaze map types and the transformations between them.

Three representations of "where people look" in an image:

* ``FixationMap``     -- binary grid of recorded gaze hits,
* ``SaliencyMap``     -- continuous per-pixel saliency in [0, 255], obtained
                         by blurring a fixation map with a Gaussian,
* ``SalientRegionMap`` -- the saliency map quantized into K ordinal levels,
                         the segmentation ground truth of this toolkit.

All operations here are pure functions over immutable inputs.
"""

from dataclasses import dataclass

import numpy as np
from scipy.signal import convolve2d

DEFAULT_SIGMA = 19.0


@dataclass(frozen=True)
class FixationMap:
    """Binary grid marking pixels hit by at least one gaze fixation."""

    hits: np.ndarray  # bool, shape (height, width)

    def __post_init__(self):
        hits = np.ascontiguousarray(np.asarray(self.hits, dtype=bool))
        if hits.ndim != 2:
            raise ValueError("fixation grid must be 2-D")
        object.__setattr__(self, "hits", hits)

    @property
    def height(self):
        return self.hits.shape[0]

    @property
    def width(self):
        return self.hits.shape[1]

    @property
    def num_fixations(self) -> int:
        return int(self.hits.sum())

    @classmethod
    def from_points(cls, points, width: int, height: int) -> "FixationMap":
        """Build a map from (x, y) integer coordinates, 0-based."""
        hits = np.zeros((height, width), dtype=bool)
        for x, y in points:
            x, y = int(x), int(y)
            if not (0 <= x < width and 0 <= y < height):
                raise ValueError(f"fixation ({x}, {y}) outside {width}x{height} image")
            hits[y, x] = True
        return cls(hits)


@dataclass(frozen=True)
class SaliencyMap:
    """Continuous per-pixel saliency, values in [0, 255]."""

    values: np.ndarray  # float64, shape (height, width)

    def __post_init__(self):
        values = np.ascontiguousarray(np.asarray(self.values, dtype=np.float64))
        if values.ndim != 2:
            raise ValueError("saliency grid must be 2-D")
        if values.size and (values.min() < 0 or values.max() > 255):
            raise ValueError("saliency values must lie in [0, 255]")
        object.__setattr__(self, "values", values)

    @property
    def height(self):
        return self.values.shape[0]

    @property
    def width(self):
        return self.values.shape[1]


@dataclass(frozen=True)
class SalientRegionMap:
    """Per-pixel saliency level in {0..K-1}; higher level = more salient."""

    levels: np.ndarray  # int, shape (height, width)
    num_levels: int

    def __post_init__(self):
        levels = np.ascontiguousarray(np.asarray(self.levels, dtype=np.int64))
        if levels.ndim != 2:
            raise ValueError("level grid must be 2-D")
        if self.num_levels < 2:
            raise ValueError("num_levels must be at least 2")
        if levels.size and (levels.min() < 0 or levels.max() >= self.num_levels):
            raise ValueError("level indices must lie in {0..K-1}")
        object.__setattr__(self, "levels", levels)

    @property
    def height(self):
        return self.levels.shape[0]

    @property
    def width(self):
        return self.levels.shape[1]


def gaussian_kernel(sigma: float) -> np.ndarray:
    """Truncated 2-D Gaussian, radius ceil(3*sigma), normalized to sum 1."""
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    radius = int(np.ceil(3.0 * sigma))
    ax = np.arange(-radius, radius + 1, dtype=np.float64)
    g1 = np.exp(-(ax**2) / (2.0 * sigma**2))
    kernel = np.outer(g1, g1)
    return kernel / kernel.sum()


def saliency_from_fixations(fm: FixationMap, sigma: float = DEFAULT_SIGMA) -> SaliencyMap:
    """Blur the 0/255 hit grid with a Gaussian and rescale the peak to 255.

    The kernel is truncated at radius ceil(3*sigma) and normalized to sum 1;
    the image border is zero-padded, so fixations near the edge legitimately
    lose mass off-image. The result is rescaled so its maximum is exactly 255,
    which keeps the quantization bins spanning the full range.
    """
    if fm.num_fixations == 0:
        raise ValueError("empty fixation map")
    kernel = gaussian_kernel(sigma)
    blurred = convolve2d(
        fm.hits.astype(np.float64) * 255.0,
        kernel,
        mode="same",
        boundary="fill",
        fillvalue=0.0,
    )
    # divide first so the peak lands on exactly 1.0, hence exactly 255
    blurred /= blurred.max()
    blurred *= 255.0
    np.clip(blurred, 0.0, 255.0, out=blurred)
    return SaliencyMap(blurred)


def quantize(sm: SaliencyMap, k: int) -> SalientRegionMap:
    """Assign each pixel a saliency level by uniform binning of its value.

    A value S falls in level floor(S*k/255); bin i covers
    [255*i/k, 255*(i+1)/k), with the top bin closed at 255 so the maximum
    value always receives the maximum level.
    """
    if k < 2:
        raise ValueError("need at least 2 saliency levels")
    levels = np.floor(sm.values * k / 255.0).astype(np.int64)
    np.minimum(levels, k - 1, out=levels)
    return SalientRegionMap(levels, k)


def restrict(quantized: SalientRegionMap, binary: SalientRegionMap) -> SalientRegionMap:
    """Inhibit pixels that a binary salient/non-salient map marks non-salient.

    Wherever the binary map is level 0 the output is forced to level 0;
    everywhere else the quantized level passes through unchanged.
    """
    if binary.num_levels != 2:
        raise ValueError("restriction mask must have exactly 2 levels")
    if quantized.levels.shape != binary.levels.shape:
        raise ValueError(
            f"dimension mismatch: {quantized.levels.shape} vs {binary.levels.shape}"
        )
    levels = np.where(binary.levels == 0, 0, quantized.levels)
    return SalientRegionMap(levels, quantized.num_levels)


def to_display(srm: SalientRegionMap) -> SaliencyMap:
    """Render levels as gray values: level L maps to round(L*255/(K-1)).

    Rounding is half-up, so for K=3 the mid level shows as 128.
    """
    raw = srm.levels * (255.0 / (srm.num_levels - 1))
    values = np.floor(raw + 0.5)  # round half-up
    np.clip(values, 0.0, 255.0, out=values)
    return SaliencyMap(values)
