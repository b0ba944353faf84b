"""Low-pass frequency-domain backdoor toolkit.

Poisoned-image generation by circular low-pass filtering of the centred
2D spectrum, three-mode backdoor training (clean / attack / precision),
attack and image-quality metrics, and a defense harness (STRIP,
fine-pruning, trigger reversal with a MAD anomaly index).
"""

from .datasets import LabeledDataset, load_cifar10, load_idx, load_ppm, save_idx, save_ppm, synth_dataset
from .defenses import (
    CleanseReport,
    PruneCurve,
    ReversedTrigger,
    StripReport,
    anomaly_index,
    cleanse,
    fine_prune_curve,
    reverse_trigger,
    strip_entropy,
    strip_report,
)
from .frequency import dft2, idft2, low_pass, low_pass_batch, make_mask, r_max, residual_map
from .metrics import (
    EvalReport,
    asr_radius_sweep,
    attack_success_rate,
    clean_accuracy,
    mean_quality,
    psnr,
    ssim,
)
from .model import (
    Model,
    TrainConfig,
    backward,
    forward,
    init_model,
    input_gradient,
    load_model,
    predict_batch,
    prune_neurons,
    save_model,
    train_sgd,
)
from .poisoning import (
    PartitionResult,
    PoisonSpec,
    badnets_patch,
    build_patch_dataset,
    build_poisoned_dataset,
    partition,
    poison_sample,
    sample_precision_radius,
)

__version__ = "0.1.0"

__all__ = [
    "LabeledDataset",
    "load_cifar10",
    "load_idx",
    "load_ppm",
    "save_idx",
    "save_ppm",
    "synth_dataset",
    "CleanseReport",
    "PruneCurve",
    "ReversedTrigger",
    "StripReport",
    "anomaly_index",
    "cleanse",
    "fine_prune_curve",
    "reverse_trigger",
    "strip_entropy",
    "strip_report",
    "dft2",
    "idft2",
    "low_pass",
    "low_pass_batch",
    "make_mask",
    "r_max",
    "residual_map",
    "EvalReport",
    "asr_radius_sweep",
    "attack_success_rate",
    "clean_accuracy",
    "mean_quality",
    "psnr",
    "ssim",
    "Model",
    "TrainConfig",
    "backward",
    "forward",
    "init_model",
    "input_gradient",
    "load_model",
    "predict_batch",
    "prune_neurons",
    "save_model",
    "train_sgd",
    "PartitionResult",
    "PoisonSpec",
    "badnets_patch",
    "build_patch_dataset",
    "build_poisoned_dataset",
    "partition",
    "poison_sample",
    "sample_precision_radius",
    "__version__",
]
