"""salseg: gaze prediction as salient-region segmentation.

Quantizes continuous saliency maps into K ordinal levels, trains desk-scale
encoder-decoder segmentation networks with median-frequency-balanced
cross-entropy, restricts multi-level outputs with a binary model, evaluates
with AUC-Judd / shuffled AUC / NSS, and visualizes learned receptive fields.
"""

from .balancing import ClassWeights, class_frequencies, median_frequency_weights
from .maps import (
    FixationMap,
    SaliencyMap,
    SalientRegionMap,
    quantize,
    restrict,
    saliency_from_fixations,
    to_display,
)
from .metrics import (
    AccuracyReport,
    EvalReport,
    auc_judd,
    auc_shuffled,
    classification_accuracy,
    nss,
    nss_std_analysis,
    quantization_loss_report,
)
from .net import (
    NetConfig,
    Network,
    build_encoder_decoder,
    conv_forward,
    deconv_forward,
    euclidean_loss,
    maxpool_forward,
    softmax_forward,
    unpool_forward,
    weighted_ce_loss,
)
from .train import (
    Checkpoint,
    LossLog,
    TrainConfig,
    TrainingDiverged,
    TrainingSample,
    compare_convergence,
    load_dataset,
    lr_schedule,
    predict,
    synthesize_dataset,
    train,
)
from .viz import ReceptiveField, visualize_grid, visualize_neuron

__version__ = "0.1.0"

__all__ = [
    "AccuracyReport",
    "Checkpoint",
    "ClassWeights",
    "EvalReport",
    "FixationMap",
    "LossLog",
    "NetConfig",
    "Network",
    "ReceptiveField",
    "SaliencyMap",
    "SalientRegionMap",
    "TrainConfig",
    "TrainingDiverged",
    "TrainingSample",
    "auc_judd",
    "auc_shuffled",
    "build_encoder_decoder",
    "class_frequencies",
    "classification_accuracy",
    "compare_convergence",
    "conv_forward",
    "deconv_forward",
    "euclidean_loss",
    "load_dataset",
    "lr_schedule",
    "maxpool_forward",
    "median_frequency_weights",
    "nss",
    "nss_std_analysis",
    "predict",
    "quantization_loss_report",
    "quantize",
    "restrict",
    "saliency_from_fixations",
    "softmax_forward",
    "synthesize_dataset",
    "to_display",
    "train",
    "unpool_forward",
    "visualize_grid",
    "visualize_neuron",
    "weighted_ce_loss",
]
