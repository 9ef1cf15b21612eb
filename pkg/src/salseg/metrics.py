"""Saliency evaluation suite: AUC-Judd, shuffled AUC, NSS, classification
accuracy, plus the quantization-loss experiment and the NSS standard
deviation analysis.

Both AUC scores are computed with the rank-statistic (Mann-Whitney)
formulation: the probability that a random fixated pixel outscores a random
non-fixated one, ties counted half. This is the exact area under the ROC
curve swept over all distinct thresholds; the test suite verifies the
equivalence against an explicit threshold sweep.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata

from .maps import FixationMap, SaliencyMap, SalientRegionMap, quantize, to_display


def _pred_values(pred) -> np.ndarray:
    if isinstance(pred, SaliencyMap):
        return pred.values
    return np.asarray(pred, dtype=np.float64)


def _rank_auc(pos: np.ndarray, neg: np.ndarray) -> float:
    ranks = rankdata(np.concatenate([pos, neg]))
    r_pos = ranks[: len(pos)].sum()
    return float((r_pos - len(pos) * (len(pos) + 1) / 2.0) / (len(pos) * len(neg)))


def auc_judd(pred, fm: FixationMap) -> float:
    """ROC area with fixated pixels as positives and all others as negatives.

    Equals the probability that a uniformly random fixated pixel has a
    strictly higher prediction than a uniformly random non-fixated pixel,
    ties counted half.
    """
    values = _pred_values(pred)
    if values.shape != fm.hits.shape:
        raise ValueError(f"shape mismatch: {values.shape} vs {fm.hits.shape}")
    npos = fm.num_fixations
    if npos == 0:
        raise ValueError("no fixated pixels")
    if npos == values.size:
        raise ValueError("no non-fixated pixels")
    return _rank_auc(values[fm.hits], values[~fm.hits])


def auc_shuffled(
    pred,
    fm: FixationMap,
    other_fixations,
    n_splits: int = 100,
    seed: int = 0,
) -> float:
    """AUC whose negatives are fixation locations from *other* images.

    Sampling other images' fixations as negatives cancels the photographer's
    center bias: a centered blob no longer wins against uniformly random
    negatives. Per split, min(#positives, pool size) distinct pool locations
    are drawn without replacement; sampled locations that coincide with this
    image's positives are dropped for that split. The result is the mean AUC
    over ``n_splits`` splits, deterministic for a fixed seed.
    """
    values = _pred_values(pred)
    if values.shape != fm.hits.shape:
        raise ValueError(f"shape mismatch: {values.shape} vs {fm.hits.shape}")
    if fm.num_fixations == 0:
        raise ValueError("no fixated pixels")

    pool_mask = np.zeros(values.shape, dtype=bool)
    for other in other_fixations:
        if other.hits.shape != values.shape:
            raise ValueError("negative-pool fixation maps must match the image size")
        pool_mask |= other.hits
    pool = np.flatnonzero(pool_mask)
    if pool.size == 0:
        raise ValueError("empty negative pool")

    flat = values.ravel()
    pos_idx = np.flatnonzero(fm.hits)
    pos = flat[pos_idx]
    pos_set = set(pos_idx.tolist())
    n_sample = min(len(pos_idx), pool.size)

    rng = np.random.default_rng(seed)
    scores = []
    for _ in range(n_splits):
        chosen = rng.choice(pool, size=n_sample, replace=False)
        neg_idx = np.array([i for i in chosen.tolist() if i not in pos_set], dtype=int)
        if neg_idx.size == 0:
            continue
        scores.append(_rank_auc(pos, flat[neg_idx]))
    if not scores:
        raise ValueError("every sampled negative collided with a positive")
    return float(np.mean(scores))


def nss(pred, fm: FixationMap) -> float:
    """Mean of the zero-mean, unit-std normalized prediction at fixations.

    Uses the population standard deviation. Invariant under positive affine
    transforms of the prediction.
    """
    values = _pred_values(pred)
    if values.shape != fm.hits.shape:
        raise ValueError(f"shape mismatch: {values.shape} vs {fm.hits.shape}")
    if fm.num_fixations == 0:
        raise ValueError("no fixated pixels")
    std = values.std()
    if std == 0:
        raise ValueError("undefined NSS: prediction has zero variance")
    normalized = (values - values.mean()) / std
    return float(normalized[fm.hits].mean())


@dataclass(frozen=True)
class AccuracyReport:
    """Overall pixel accuracy plus per-level recall."""

    overall: float
    per_class: list

    def to_dict(self):
        return {"overall": self.overall, "per_class": list(self.per_class)}


def classification_accuracy(pred: SalientRegionMap, gt: SalientRegionMap) -> AccuracyReport:
    """Overall accuracy and per-class recall of a predicted region map.

    A class absent from the ground truth gets per-class accuracy 0.0.
    """
    if pred.levels.shape != gt.levels.shape:
        raise ValueError(f"dimension mismatch: {pred.levels.shape} vs {gt.levels.shape}")
    if pred.num_levels != gt.num_levels:
        raise ValueError(f"level-count mismatch: {pred.num_levels} vs {gt.num_levels}")
    correct = pred.levels == gt.levels
    overall = float(correct.mean())
    per_class = []
    for c in range(gt.num_levels):
        mask = gt.levels == c
        total = int(mask.sum())
        per_class.append(float(correct[mask].sum() / total) if total else 0.0)
    return AccuracyReport(overall, per_class)


@dataclass
class EvalReport:
    """Per-map metric scores plus their dataset means."""

    per_map: list = field(default_factory=list)  # list of dicts
    means: dict = field(default_factory=dict)

    METRICS = ("auc_judd", "auc_shuffled", "nss")

    def finalize(self):
        for m in self.METRICS:
            vals = [r[m] for r in self.per_map if r.get(m) is not None]
            self.means[m] = float(np.mean(vals)) if vals else None
        return self

    def to_dict(self):
        return {"per_map": self.per_map, "means": self.means}


def evaluate_map(pred, fm, other_fixations=(), n_splits=100, seed=0):
    """All three fixation metrics for one prediction; sAUC only when a
    negative pool is supplied."""
    row = {
        "auc_judd": auc_judd(pred, fm),
        "nss": nss(pred, fm),
        "auc_shuffled": None,
    }
    if other_fixations:
        row["auc_shuffled"] = auc_shuffled(pred, fm, other_fixations, n_splits, seed)
    return row


def quantization_loss_report(dataset, k: int, n_splits: int = 100, seed: int = 0):
    """Measure what quantization costs on each saliency metric.

    For each (SaliencyMap, FixationMap) pair, the continuous map and the
    display rendition of its K-level quantization are both evaluated against
    the same fixations; negatives for sAUC come from the other maps in the
    dataset. Reports per-metric dataset means for both renditions and the
    relative loss (SM - SRM) / SM * 100.
    """
    if len(dataset) == 0:
        raise ValueError("empty dataset")
    all_fms = [fm for _, fm in dataset]
    sm_report = EvalReport()
    srm_report = EvalReport()
    for i, (sm, fm) in enumerate(dataset):
        others = [f for j, f in enumerate(all_fms) if j != i]
        srm_display = to_display(quantize(sm, k))
        sm_report.per_map.append(evaluate_map(sm, fm, others, n_splits, seed))
        srm_report.per_map.append(evaluate_map(srm_display, fm, others, n_splits, seed))
    sm_report.finalize()
    srm_report.finalize()

    loss_pct = {}
    for m in EvalReport.METRICS:
        a, b = sm_report.means[m], srm_report.means[m]
        loss_pct[m] = None if (a is None or b is None or a == 0) else (a - b) / a * 100.0
    return {
        "num_levels": k,
        "saliency_map": sm_report.means,
        "salient_region_map": srm_report.means,
        "loss_percent": loss_pct,
    }


def nss_std_analysis(maps, fm: FixationMap):
    """Why NSS drops for spread-out predictions: std vs peak after z-scoring.

    For each map: the standard deviation of its values min-max rescaled to
    [0, 1], the maximum of the z-score normalized map, and its NSS against
    the given fixations. A map with a high standard deviation normalizes to
    a low peak, which drags its NSS down even when it covers the fixations.
    All three columns are invariant under positive scaling of the map.
    """
    rows = []
    for m in maps:
        values = _pred_values(m)
        lo, hi = values.min(), values.max()
        if hi == lo:
            raise ValueError("constant map: analysis undefined")
        unit = (values - lo) / (hi - lo)
        std = float(unit.std())
        normalized_max = float(((unit - unit.mean()) / unit.std()).max())
        rows.append(
            {"std": std, "normalized_max": normalized_max, "nss": nss(values, fm)}
        )
    return rows


def format_quantization_table(report) -> str:
    """Render a quantization-loss report as aligned plain-text columns."""
    headers = ["ground truth", "AUC-Judd", "sAUC", "NSS"]
    rows = [
        ["saliency map"]
        + [_fmt(report["saliency_map"][m]) for m in EvalReport.METRICS],
        [f"salient region map ({report['num_levels']} levels)"]
        + [_fmt(report["salient_region_map"][m]) for m in EvalReport.METRICS],
        ["quantization loss"]
        + [_fmt(report["loss_percent"][m], pct=True) for m in EvalReport.METRICS],
    ]
    return _format_table(headers, rows)


def format_accuracy_table(report: AccuracyReport) -> str:
    headers = ["class", "accuracy"]
    rows = [["all class", _fmt(report.overall * 100.0, pct=True)]]
    for i, acc in enumerate(report.per_class):
        rows.append([f"saliency level {i + 1}", _fmt(acc * 100.0, pct=True)])
    return _format_table(headers, rows)


def _fmt(v, pct=False):
    if v is None:
        return "-"
    return f"{v:.2f}%" if pct else f"{v:.4f}"


def _format_table(headers, rows):
    table = [headers] + [[str(c) for c in r] for r in rows]
    widths = [max(len(r[i]) for r in table) for i in range(len(headers))]
    lines = []
    for r in table:
        lines.append("  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip())
    return "\n".join(lines)
