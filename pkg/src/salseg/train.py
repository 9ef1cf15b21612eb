"""Dataset handling, the SGD training loop with step learning-rate decay,
checkpointing, and the segmentation-vs-regression comparison harness.

Training is plain SGD (no momentum) with lr = base_lr * gamma^floor(it/step).
Runs are bit-deterministic for a fixed seed: parameters are drawn from a
seeded generator and the per-epoch sample order is derived from
(seed, epoch), so a run resumed from a checkpoint reproduces the
uninterrupted run exactly.
"""

import csv
import io
import json
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import fileio
from .balancing import ClassWeights, class_frequencies, median_frequency_weights
from .maps import (
    FixationMap,
    SaliencyMap,
    SalientRegionMap,
    quantize,
    saliency_from_fixations,
    to_display,
)
from .net import (
    NetConfig,
    Network,
    build_encoder_decoder,
    euclidean_loss,
    softmax_backward,
    softmax_forward,
    weighted_ce_loss,
)

CHECKPOINT_MAGIC = b"SRSEG1"

LOSS_FORMS = ("categorical", "eq2-literal", "euclidean-regression")


class TrainingDiverged(RuntimeError):
    """Raised when the training loss turns NaN; names the iteration."""


@dataclass(frozen=True)
class TrainConfig:
    base_lr: float = 0.01
    step_size: int = 500
    gamma: float = 0.1
    max_iters: int = 3000
    batch_size: int = 4
    num_levels: int = 3
    decoder_mode: str = "unpool"  # unpool | deconv
    loss_form: str = "categorical"  # categorical | eq2-literal | euclidean-regression
    seed: int = 0
    stage_channels: tuple = (8, 16)

    def __post_init__(self):
        if self.base_lr <= 0:
            raise ValueError("base_lr must be positive")
        if not 0 < self.gamma <= 1:
            raise ValueError("gamma must lie in (0, 1]")
        if self.step_size < 1:
            raise ValueError("step_size must be at least 1")
        if self.loss_form not in LOSS_FORMS:
            raise ValueError(f"loss_form must be one of {LOSS_FORMS}")
        object.__setattr__(self, "stage_channels", tuple(self.stage_channels))

    def to_dict(self):
        return {
            "base_lr": self.base_lr,
            "step_size": self.step_size,
            "gamma": self.gamma,
            "max_iters": self.max_iters,
            "batch_size": self.batch_size,
            "num_levels": self.num_levels,
            "decoder_mode": self.decoder_mode,
            "loss_form": self.loss_form,
            "seed": self.seed,
            "stage_channels": list(self.stage_channels),
        }

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["stage_channels"] = tuple(d.get("stage_channels", (8, 16)))
        return cls(**d)

    @property
    def is_regression(self):
        return self.loss_form == "euclidean-regression"

    def net_config(self) -> NetConfig:
        out = 1 if self.is_regression else self.num_levels
        return NetConfig(
            in_channels=1,
            out_channels=out,
            stage_channels=self.stage_channels,
            decoder_mode=self.decoder_mode,
        )


def lr_schedule(cfg: TrainConfig, iteration: int) -> float:
    """Step policy: lr = base_lr * gamma^floor(iteration / step_size)."""
    if iteration < 0:
        raise ValueError("iteration must be non-negative")
    return cfg.base_lr * cfg.gamma ** (iteration // cfg.step_size)


@dataclass(frozen=True)
class TrainingSample:
    """One training item: grayscale image in [0, 1] plus its ground truths."""

    image: np.ndarray  # float64 (H, W), values in [0, 1]
    gt_region: SalientRegionMap
    gt_saliency: SaliencyMap
    fixations: FixationMap

    def __post_init__(self):
        shapes = {
            self.image.shape,
            self.gt_region.levels.shape,
            self.gt_saliency.values.shape,
            self.fixations.hits.shape,
        }
        if len(shapes) != 1:
            raise ValueError(f"sample fields disagree on dimensions: {shapes}")


def synthesize_dataset(
    n: int,
    size: int = 32,
    seed: int = 0,
    num_levels: int = 3,
    sigma: float | None = None,
    num_blobs: tuple = (1, 2),
) -> list:
    """Generate reproducible samples: bright blobs on dark noise.

    Each image holds one or two Gaussian blobs on a noisy dark background;
    fixations sit at the blob centers, the saliency map is their Gaussian
    blur, and the region map is its quantization. Blob radii track the blur
    sigma so the image carries the cue the segmenter needs, and the blob
    centers carry the map maximum, so every sample contains the top saliency
    level somewhere.
    """
    if n < 1:
        raise ValueError("need at least one sample")
    if size < 16:
        raise ValueError("size must be at least 16")
    if sigma is None:
        sigma = size / 6.0
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    samples = []
    for _ in range(n):
        image = rng.uniform(0.0, 0.1, (size, size))
        hits = np.zeros((size, size), dtype=bool)
        for _ in range(rng.integers(num_blobs[0], num_blobs[1] + 1)):
            margin = size // 8
            cy = int(rng.integers(margin, size - margin))
            cx = int(rng.integers(margin, size - margin))
            radius = sigma * float(rng.uniform(0.9, 1.1))
            blob = np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2.0 * radius**2))
            image = np.maximum(image, blob * rng.uniform(0.85, 1.0))
            hits[cy, cx] = True
        fm = FixationMap(hits)
        sm = saliency_from_fixations(fm, sigma)
        samples.append(
            TrainingSample(
                image=np.clip(image, 0.0, 1.0),
                gt_region=quantize(sm, num_levels),
                gt_saliency=sm,
                fixations=fm,
            )
        )
    return samples


def load_dataset(directory, num_levels: int = 3, sigma: float = 19.0) -> list:
    """Load samples from a directory of ``<stem>.pgm`` images.

    Each stem needs ``<stem>.fix.csv`` fixations; ``<stem>.sal.pgm`` is used
    as the saliency ground truth when present, otherwise the fixations are
    blurred with the given sigma.
    """
    directory = Path(directory)
    samples = []
    for img_path in sorted(directory.glob("*.pgm")):
        if img_path.name.endswith(".sal.pgm") or img_path.name.endswith(".srm.pgm"):
            continue
        stem = img_path.name[: -len(".pgm")]
        fix_path = directory / f"{stem}.fix.csv"
        if not fix_path.exists():
            continue
        image = fileio.read_pgm(img_path) / 255.0
        h, w = image.shape
        fm = fileio.read_fixations(fix_path, w, h)
        sal_path = directory / f"{stem}.sal.pgm"
        if sal_path.exists():
            sm = SaliencyMap(fileio.read_pgm(sal_path))
        else:
            sm = saliency_from_fixations(fm, sigma)
        samples.append(
            TrainingSample(
                image=image,
                gt_region=quantize(sm, num_levels),
                gt_saliency=sm,
                fixations=fm,
            )
        )
    if not samples:
        raise ValueError(f"no usable samples in {directory}")
    return samples


# ---------------------------------------------------------------------------
# checkpoint format: magic + 8-byte LE metadata length + JSON + float64 blobs
# ---------------------------------------------------------------------------

@dataclass
class Checkpoint:
    """Serialized model: config, layer specs, class weights, parameters."""

    config: TrainConfig
    net_config: NetConfig
    layer_specs: list  # list of dicts
    class_weights: list | None
    iteration: int
    loss_log_ref: str | None
    parameters: list  # list of float64 arrays in declaration order

    def metadata_json(self) -> bytes:
        meta = {
            "config": self.config.to_dict(),
            "net_config": self.net_config.to_dict(),
            "layer_specs": self.layer_specs,
            "class_weights": self.class_weights,
            "iteration": self.iteration,
            "loss_log_ref": self.loss_log_ref,
            "param_shapes": [list(p.shape) for p in self.parameters],
        }
        return json.dumps(meta, sort_keys=True, separators=(",", ":")).encode("utf-8")

    def save(self, path) -> None:
        blob = io.BytesIO()
        meta = self.metadata_json()
        blob.write(CHECKPOINT_MAGIC)
        blob.write(struct.pack("<Q", len(meta)))
        blob.write(meta)
        for p in self.parameters:
            blob.write(np.ascontiguousarray(p, dtype="<f8").tobytes())
        Path(path).write_bytes(blob.getvalue())

    @classmethod
    def load(cls, path) -> "Checkpoint":
        data = Path(path).read_bytes()
        if data[: len(CHECKPOINT_MAGIC)] != CHECKPOINT_MAGIC:
            raise ValueError(f"{path}: not a {CHECKPOINT_MAGIC.decode()} checkpoint")
        pos = len(CHECKPOINT_MAGIC)
        (meta_len,) = struct.unpack_from("<Q", data, pos)
        pos += 8
        meta = json.loads(data[pos : pos + meta_len].decode("utf-8"))
        pos += meta_len
        parameters = []
        for shape in meta["param_shapes"]:
            count = int(np.prod(shape)) if shape else 1
            arr = np.frombuffer(data, dtype="<f8", count=count, offset=pos)
            parameters.append(arr.reshape(shape).copy())
            pos += count * 8
        return cls(
            config=TrainConfig.from_dict(meta["config"]),
            net_config=NetConfig.from_dict(meta["net_config"]),
            layer_specs=meta["layer_specs"],
            class_weights=meta["class_weights"],
            iteration=meta["iteration"],
            loss_log_ref=meta["loss_log_ref"],
            parameters=parameters,
        )

    def build_network(self) -> Network:
        net = build_encoder_decoder(self.net_config, seed=None)
        arrays = net.param_arrays()
        if len(arrays) != len(self.parameters):
            raise ValueError("checkpoint parameter count does not match architecture")
        for dst, src in zip(arrays, self.parameters):
            if dst.shape != src.shape:
                raise ValueError("checkpoint parameter shapes do not match architecture")
            dst[...] = src
        return net


def _snapshot(net: Network, cfg: TrainConfig, weights, iteration, log_ref=None):
    return Checkpoint(
        config=cfg,
        net_config=cfg.net_config(),
        layer_specs=[s.to_dict() for s in net.specs()],
        class_weights=None if weights is None else list(weights.weights),
        iteration=iteration,
        loss_log_ref=log_ref,
        parameters=[p.copy() for p in net.param_arrays()],
    )


# ---------------------------------------------------------------------------
# training loop
# ---------------------------------------------------------------------------

@dataclass
class LossLog:
    """Per-iteration log: iteration, learning rate, loss, pixel accuracy."""

    rows: list = field(default_factory=list)  # (iter, lr, loss, pixel_acc)

    def append(self, iteration, lr, loss, pixel_acc):
        self.rows.append((iteration, lr, loss, pixel_acc))

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["iter", "lr", "loss", "pixel_acc"])
            for it, lr, loss, acc in self.rows:
                writer.writerow([it, repr(lr), repr(loss), repr(acc)])

    @classmethod
    def read_csv(cls, path) -> "LossLog":
        log = cls()
        with open(path, newline="") as f:
            for row in csv.DictReader(f):
                log.append(
                    int(row["iter"]),
                    float(row["lr"]),
                    float(row["loss"]),
                    float(row["pixel_acc"]),
                )
        return log


def _batch_indices(cfg: TrainConfig, n_samples: int, iteration: int) -> np.ndarray:
    """Deterministic batch for an absolute iteration index.

    Each epoch shuffles the sample order with a generator seeded by
    (seed, epoch), then hands out consecutive batch_size chunks. Knowing the
    absolute iteration is enough to reproduce the batch, which is what makes
    checkpoint resumption exact.
    """
    bs = min(cfg.batch_size, n_samples)
    per_epoch = max(1, -(-n_samples // bs))  # ceil
    epoch, step = divmod(iteration, per_epoch)
    order = np.random.default_rng([cfg.seed, epoch]).permutation(n_samples)
    return order[step * bs : step * bs + bs]


def _stack_batch(dataset, idx):
    images = np.stack([dataset[i].image for i in idx])[:, None]  # (B, 1, H, W)
    regions = np.stack([dataset[i].gt_region.levels for i in idx])
    saliency = np.stack([dataset[i].gt_saliency.values for i in idx])[:, None] / 255.0
    return images, regions, saliency


def _train_step(net, cfg, weights, images, regions, saliency):
    """One forward/backward pass; returns (loss, pixel_acc) for the batch."""
    logits = net.forward(images)
    if cfg.is_regression:
        loss, grad = euclidean_loss(logits, saliency)
        # accuracy via the same binning as quantize(), on [0, 255]-scaled values
        scaled = np.clip(logits[:, 0], 0.0, 1.0) * 255.0
        pred_levels = np.minimum(
            np.floor(scaled * cfg.num_levels / 255.0), cfg.num_levels - 1
        ).astype(np.int64)
    else:
        probs = softmax_forward(logits)
        if cfg.loss_form == "categorical":
            loss, grad = weighted_ce_loss(probs, regions, weights, "categorical")
        else:
            loss, dprobs = weighted_ce_loss(probs, regions, weights, "eq2-literal")
            grad = softmax_backward(dprobs, probs)
        pred_levels = probs.argmax(axis=1)
    pixel_acc = float((pred_levels == regions).mean())
    net.zero_grads()
    net.backward(grad)
    return loss, pixel_acc


def train(
    dataset,
    cfg: TrainConfig,
    resume_from: Checkpoint | None = None,
):
    """Run SGD for cfg.max_iters iterations; returns (Checkpoint, LossLog).

    Logs (iteration, lr, loss, pixel accuracy) every iteration, evaluated on
    the batch before the parameter update. For the regression loss, pixel
    accuracy is measured by quantizing the clipped prediction to
    cfg.num_levels and comparing against the region ground truth, so the two
    paradigms report a comparable column. Aborts with TrainingDiverged if
    the loss turns NaN.
    """
    if len(dataset) == 0:
        raise ValueError("empty dataset")
    if not cfg.is_regression and cfg.num_levels < 2:
        raise ValueError("segmentation needs at least 2 levels")
    k = dataset[0].gt_region.num_levels
    if k != cfg.num_levels:
        raise ValueError(f"dataset has {k} levels but config expects {cfg.num_levels}")

    if cfg.is_regression:
        weights = None
    else:
        weights = median_frequency_weights(
            class_frequencies([s.gt_region for s in dataset])
        )

    if resume_from is None:
        net = build_encoder_decoder(cfg.net_config(), seed=cfg.seed)
        start = 0
    else:
        net = resume_from.build_network()
        start = resume_from.iteration
        if resume_from.class_weights is not None:
            weights = ClassWeights(np.asarray(resume_from.class_weights))

    log = LossLog()
    for it in range(start, cfg.max_iters):
        idx = _batch_indices(cfg, len(dataset), it)
        images, regions, saliency = _stack_batch(dataset, idx)
        loss, pixel_acc = _train_step(net, cfg, weights, images, regions, saliency)
        if not np.isfinite(loss):
            raise TrainingDiverged(f"non-finite loss at iteration {it}")
        lr = lr_schedule(cfg, it)
        log.append(it, lr, loss, pixel_acc)
        net.sgd_step(lr)

    return _snapshot(net, cfg, weights, cfg.max_iters), log


def predict(ckpt: Checkpoint, image) -> SalientRegionMap:
    """Per-pixel argmax segmentation of a grayscale [0, 1] image.

    Ties pick the lower level index. The image extents must be divisible by
    2^(encoder stages).
    """
    if ckpt.config.is_regression:
        raise ValueError("predict needs a segmentation checkpoint")
    image = np.asarray(image, dtype=np.float64)
    divisor = 2 ** ckpt.net_config.num_stages
    h, w = image.shape
    if h % divisor or w % divisor:
        raise ValueError(f"image dimensions must be divisible by {divisor}, got {h}x{w}")
    net = ckpt.build_network()
    logits = net.forward(image[None, None])
    levels = logits[0].argmax(axis=0)
    return SalientRegionMap(levels, ckpt.config.num_levels)


# ---------------------------------------------------------------------------
# segmentation vs regression comparison
# ---------------------------------------------------------------------------

SEGMENTATION_ACC_TARGET = 0.95

COMPARE_VARIANTS = (
    ("segmentation", "unpool"),
    ("segmentation", "deconv"),
    ("regression", "unpool"),
    ("regression", "deconv"),
)


def regression_loss_target(dataset, num_levels: int) -> float:
    """Euclidean loss of the quantize-then-display ground-truth rendition.

    Regressing better than this means the regressor beats the fidelity the
    segmentation model is asked to reproduce, so the two paradigms are
    compared at equivalent quality.
    """
    losses = []
    for s in dataset:
        rendition = to_display(quantize(s.gt_saliency, num_levels)).values / 255.0
        target = s.gt_saliency.values / 255.0
        loss, _ = euclidean_loss(rendition, target)
        losses.append(loss)
    return float(np.mean(losses))


def compare_convergence(dataset, cfg: TrainConfig):
    """Train the four {segmentation, regression} x {unpool, deconv} variants.

    All four runs share the seed and data order. Returns a dict with, per
    variant, the full loss log and the first iteration that reached its
    target: pixel accuracy >= 0.95 for segmentation, batch loss <= the
    ground-truth quantization loss for regression.
    """
    reg_target = regression_loss_target(dataset, cfg.num_levels)
    results = {}
    for paradigm, decoder in COMPARE_VARIANTS:
        loss_form = "euclidean-regression" if paradigm == "regression" else cfg.loss_form
        if loss_form == "euclidean-regression" and paradigm == "segmentation":
            loss_form = "categorical"
        variant_cfg = replace(cfg, decoder_mode=decoder, loss_form=loss_form)
        _, log = train(dataset, variant_cfg)
        if paradigm == "segmentation":
            target = SEGMENTATION_ACC_TARGET
            reached = next(
                (it for it, _, _, acc in log.rows if acc >= target), None
            )
        else:
            target = reg_target
            reached = next(
                (it for it, _, loss, _ in log.rows if loss <= target), None
            )
        results[f"{paradigm}_{decoder}"] = {
            "paradigm": paradigm,
            "decoder": decoder,
            "target": target,
            "first_iteration_at_target": reached,
            "log": log,
        }
    return results


def write_comparison(results, out_dir) -> dict:
    """Write the four loss CSVs plus a summary JSON; returns the summary."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    summary = {"variants": []}
    for name, res in results.items():
        csv_path = out_dir / f"{name}.csv"
        res["log"].write_csv(csv_path)
        summary["variants"].append(
            {
                "name": name,
                "paradigm": res["paradigm"],
                "decoder": res["decoder"],
                "target": res["target"],
                "first_iteration_at_target": res["first_iteration_at_target"],
                "csv": csv_path.name,
            }
        )
    with open(out_dir / "summary.json", "w") as f:
        json.dump(summary, f, indent=2, sort_keys=True)
        f.write("\n")
    return summary
