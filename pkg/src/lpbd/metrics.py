"""Attack-efficacy and image-quality measurement.

CSA is plain accuracy on untriggered data. ASR filters every eligible
test image at the trigger radius and counts predictions equal to the
attack target; samples whose ground truth already is the target are
excluded by default. PSNR uses MAX=1 (images live in [0, 1]); SSIM is the
standard single-scale index with an 11x11 Gaussian window, sigma 1.5,
K1=0.01, K2=0.03, L=1.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .datasets import LabeledDataset
from .errors import ConfigError, ShapeMismatchError
from .frequency import low_pass_batch
from .model import Model, predict_batch
from .util import map_ordered


def clean_accuracy(model: Model, dataset: LabeledDataset) -> float:
    if len(dataset) == 0:
        raise ConfigError("cannot score an empty dataset")
    return float(np.mean(predict_batch(model, dataset.images) == dataset.labels))


def attack_success_rate(
    model: Model,
    dataset: LabeledDataset,
    radius: float,
    target: int,
    include_target_class: bool = False,
) -> float:
    """Fraction of low-pass filtered test inputs classified as `target`."""
    if len(dataset) == 0:
        raise ConfigError("cannot score an empty dataset")
    images = dataset.images
    if not include_target_class:
        keep = dataset.labels != target
        if not keep.any():
            raise ConfigError("every sample carries the target label; nothing to score")
        images = images[keep]
    filtered = low_pass_batch(images, radius)
    return float(np.mean(predict_batch(model, filtered) == target))


def asr_radius_sweep(
    model: Model,
    dataset: LabeledDataset,
    radii,
    target: int,
    include_target_class: bool = False,
) -> dict[int, float]:
    """attack_success_rate per radius, keyed in the given order."""
    return {
        int(r): attack_success_rate(model, dataset, r, target, include_target_class)
        for r in radii
    }


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """10*log10(1/MSE) over all pixels and channels; inf for identical inputs."""
    x = np.asarray(a, dtype=np.float64)
    y = np.asarray(b, dtype=np.float64)
    if x.shape != y.shape:
        raise ShapeMismatchError(f"psnr shapes differ: {x.shape} vs {y.shape}")
    mse = float(np.mean((x - y) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)


_SSIM_WINDOW = 11
_SSIM_SIGMA = 1.5
_SSIM_K1 = 0.01
_SSIM_K2 = 0.03


def _gaussian_window() -> np.ndarray:
    half = (_SSIM_WINDOW - 1) // 2
    g = np.exp(-(np.arange(-half, half + 1) ** 2) / (2.0 * _SSIM_SIGMA**2))
    g /= g.sum()
    return np.outer(g, g)


def _window_means(plane: np.ndarray, win: np.ndarray) -> np.ndarray:
    view = np.lib.stride_tricks.sliding_window_view(plane, (_SSIM_WINDOW, _SSIM_WINDOW))
    return np.tensordot(view, win, axes=([2, 3], [0, 1]))


def ssim(a: np.ndarray, b: np.ndarray) -> float:
    """Single-scale structural similarity, per-channel mean then channel mean."""
    x = np.asarray(a, dtype=np.float64)
    y = np.asarray(b, dtype=np.float64)
    if x.shape != y.shape:
        raise ShapeMismatchError(f"ssim shapes differ: {x.shape} vs {y.shape}")
    if x.ndim == 2:
        x, y = x[:, :, None], y[:, :, None]
    if x.ndim != 3:
        raise ShapeMismatchError(f"expected (H, W) or (H, W, C) images, got shape {x.shape}")
    if min(x.shape[0], x.shape[1]) < _SSIM_WINDOW:
        raise ConfigError(
            f"image {x.shape[0]}x{x.shape[1]} too small for the {_SSIM_WINDOW}x{_SSIM_WINDOW} window"
        )
    win = _gaussian_window()
    c1 = (_SSIM_K1 * 1.0) ** 2
    c2 = (_SSIM_K2 * 1.0) ** 2
    scores = []
    for c in range(x.shape[2]):
        xp, yp = x[:, :, c], y[:, :, c]
        mu_x = _window_means(xp, win)
        mu_y = _window_means(yp, win)
        var_x = _window_means(xp * xp, win) - mu_x**2
        var_y = _window_means(yp * yp, win) - mu_y**2
        cov = _window_means(xp * yp, win) - mu_x * mu_y
        num = (2.0 * mu_x * mu_y + c1) * (2.0 * cov + c2)
        den = (mu_x**2 + mu_y**2 + c1) * (var_x + var_y + c2)
        scores.append(float(np.mean(num / den)))
    return float(np.mean(scores))


def mean_quality(
    originals: np.ndarray, modified: np.ndarray, limit: int | None = None
) -> tuple[float, float]:
    """(mean PSNR, mean SSIM) over paired stacks; inf PSNR pairs stay inf."""
    n = originals.shape[0] if limit is None else min(limit, originals.shape[0])
    pairs = map_ordered(
        lambda i: (psnr(originals[i], modified[i]), ssim(originals[i], modified[i])),
        range(n),
    )
    psnrs = [p for p, _ in pairs]
    mean_psnr = math.inf if any(math.isinf(p) for p in psnrs) else float(np.mean(psnrs))
    return mean_psnr, float(np.mean([s for _, s in pairs]))


@dataclass
class EvalReport:
    """Attack evaluation summary serialised into the key-value report file."""

    csa: float
    asr: float
    per_radius_asr: dict[int, float] = field(default_factory=dict)
    psnr_mean: float | None = None
    ssim_mean: float | None = None
    pollution_rate: float | None = None
    radius: int | None = None
    target: int | None = None
    seed: int | None = None

    def sections(self) -> dict[str, dict]:
        result: dict[str, object] = {"csa": self.csa, "asr": self.asr}
        if self.psnr_mean is not None:
            result["psnr_mean"] = self.psnr_mean
        if self.ssim_mean is not None:
            result["ssim_mean"] = self.ssim_mean
        for key, value in (
            ("pollution_rate", self.pollution_rate),
            ("r_t", self.radius),
            ("t", self.target),
            ("seed", self.seed),
        ):
            if value is not None:
                result[key] = value
        for radius, value in self.per_radius_asr.items():
            result[f"per_radius_asr.{radius}"] = value
        return {"result": result}
