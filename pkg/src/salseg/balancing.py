"""Median frequency balancing for class-imbalanced segmentation training.

Saliency datasets are dominated by non-salient pixels, so an unweighted
cross-entropy barely trains the rare high-saliency classes. Each class c
gets weight median(freq) / freq(c): the median-frequency class keeps
weight 1, rarer classes get proportionally larger weights.
"""

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .maps import SalientRegionMap


@dataclass(frozen=True)
class ClassWeights:
    """Per-class loss weights, index = saliency level."""

    weights: np.ndarray

    def __post_init__(self):
        w = np.ascontiguousarray(np.asarray(self.weights, dtype=np.float64))
        if w.ndim != 1:
            raise ValueError("weights must be a flat list")
        if np.any(w < 0):
            raise ValueError("weights must be non-negative")
        object.__setattr__(self, "weights", w)

    @property
    def num_levels(self):
        return len(self.weights)

    def tolist(self):
        return self.weights.tolist()


def class_frequencies(dataset: Sequence[SalientRegionMap]) -> np.ndarray:
    """Per-class pixel frequency over a corpus of region maps.

    freq(c) = (pixels of class c, summed over maps where c appears)
            / (total pixels of the maps where c appears).

    The denominator is conditioned on presence: a map that never contains
    class c does not dilute c's frequency. Classes absent from every map
    get frequency 0.
    """
    if len(dataset) == 0:
        raise ValueError("empty dataset")
    k = dataset[0].num_levels
    if any(m.num_levels != k for m in dataset):
        raise ValueError("all maps must share the same number of levels")

    class_pixels = np.zeros(k, dtype=np.float64)
    present_pixels = np.zeros(k, dtype=np.float64)
    for m in dataset:
        counts = np.bincount(m.levels.ravel(), minlength=k).astype(np.float64)
        present = counts > 0
        class_pixels += counts
        present_pixels[present] += m.levels.size

    freqs = np.zeros(k, dtype=np.float64)
    seen = present_pixels > 0
    freqs[seen] = class_pixels[seen] / present_pixels[seen]
    return freqs


def median_frequency_weights(freqs: Sequence[float]) -> ClassWeights:
    """Turn class frequencies into loss weights: W_c = median / freq(c).

    The median is taken over the nonzero frequencies only (even count:
    arithmetic mean of the two central values). Classes with frequency 0
    never occur and get weight 0 so they contribute no loss.
    """
    freqs = np.asarray(freqs, dtype=np.float64)
    nonzero = freqs[freqs > 0]
    if nonzero.size == 0:
        raise ValueError("all class frequencies are zero")
    median = np.median(nonzero)
    weights = np.zeros_like(freqs)
    np.divide(median, freqs, out=weights, where=freqs > 0)
    return ClassWeights(weights)
