"""Dataset partitioning and the three-mode poisoned-sample transform.

The attack converts a seeded fraction of the training set into low-pass
filtered samples relabelled to the target class. Precision mode adds a
second, disjoint fraction filtered at random radii near (but never equal
to) the trigger radius, keeping their original labels, which teaches the
model to fire only at the exact trigger radius. A BadNets-style solid
patch is included as the classical spatial baseline.
"""

from dataclasses import dataclass, field, replace

import numpy as np

from .datasets import LabeledDataset
from .errors import ConfigError
from .frequency import low_pass, low_pass_batch, r_max
from .util import STREAM_PARTITION, STREAM_RADII, seeded_rng

MODES = ("clean", "attack", "precision")


@dataclass(frozen=True)
class PoisonSpec:
    """Attacker configuration for one poisoning run."""

    radius: int                 # trigger radius r_t
    rate: float                 # pollution rate, fraction of the dataset
    target: int                 # class every triggered input should map to
    delta: int = 3              # half-width of the precision radius band
    precision: bool = False
    seed: int = 0

    def validate(self, height: int, width: int, num_classes: int) -> None:
        rmax = r_max(height, width)
        if not 0 < self.radius < rmax:
            raise ConfigError(f"trigger radius must satisfy 0 < r < {rmax}, got {self.radius}")
        if not 0.0 < self.rate < 0.5:
            raise ConfigError(f"pollution rate must lie in (0, 0.5), got {self.rate}")
        if not 0 <= self.target < num_classes:
            raise ConfigError(f"target class {self.target} out of range (num_classes={num_classes})")
        if self.precision:
            if self.delta < 1:
                raise ConfigError(f"precision mode needs delta >= 1, got {self.delta}")
            if self.radius - self.delta < 0 or self.radius + self.delta > rmax:
                raise ConfigError(
                    f"precision band [{self.radius - self.delta}, {self.radius + self.delta}] "
                    f"must stay within [0, {rmax}]"
                )


@dataclass(frozen=True)
class PartitionResult:
    """Disjoint index sets covering the parent dataset."""

    clean: np.ndarray
    poisoned: np.ndarray
    precision: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))

    def __post_init__(self):
        total = len(self.clean) + len(self.poisoned) + len(self.precision)
        combined = np.concatenate([self.clean, self.poisoned, self.precision])
        if len(np.unique(combined)) != total:
            raise ConfigError("partition index sets overlap")


def partition(dataset: LabeledDataset, spec: PoisonSpec) -> PartitionResult:
    """Seeded split into clean / poisoned / precision index sets.

    round(rate * N) indices go to the poisoned set and, when precision
    mode is on, the same count to a disjoint precision set. The poisoned
    set is identical whether or not precision mode is enabled.
    """
    n = len(dataset)
    k = int(np.floor(spec.rate * n + 0.5))
    if k < 1:
        raise ConfigError(f"rate {spec.rate} rounds to zero poisoned samples for N={n}")
    if (2 * k if spec.precision else k) > n:
        raise ConfigError(f"rate {spec.rate} does not leave room for the partition of N={n}")
    rng = seeded_rng(spec.seed, STREAM_PARTITION)
    perm = rng.permutation(n)
    poisoned = np.sort(perm[:k])
    precision = np.sort(perm[k : 2 * k]) if spec.precision else np.empty(0, dtype=np.int64)
    taken = k + len(precision)
    clean = np.sort(perm[taken:])
    return PartitionResult(clean=clean, poisoned=poisoned, precision=precision)


def sample_precision_radius(spec: PoisonSpec, rng: np.random.Generator) -> int:
    """Uniform integer from [r_t - delta, r_t + delta] excluding r_t."""
    if spec.delta < 1:
        raise ConfigError(f"precision radius needs delta >= 1, got {spec.delta}")
    draw = int(rng.integers(0, 2 * spec.delta))
    value = spec.radius - spec.delta + draw
    if value >= spec.radius:
        value += 1  # skip r_t itself
    return value


def poison_sample(
    sample: tuple[np.ndarray, int],
    mode: str,
    spec: PoisonSpec,
    rng: np.random.Generator | None = None,
) -> tuple[np.ndarray, int]:
    """Transform one (image, label) pair according to its mode."""
    image, label = sample
    if mode == "clean":
        return image, label
    if mode == "attack":
        return low_pass(image, spec.radius), spec.target
    if mode == "precision":
        if rng is None:
            raise ConfigError("precision mode needs an rng for the radius draw")
        return low_pass(image, sample_precision_radius(spec, rng)), label
    raise ConfigError(f"unknown mode {mode!r} (want one of {MODES})")


def build_poisoned_dataset(
    dataset: LabeledDataset,
    spec: PoisonSpec,
    parts: PartitionResult | None = None,
) -> LabeledDataset:
    """Apply the three-mode transform in place of the original samples.

    Images are normalised (clamped) to [0, 1] first; poisoned and
    precision samples replace their originals, so ordering and dataset
    size are preserved. Precision radii are drawn sequentially from their
    own seeded stream, so the output is deterministic for a given
    (dataset, spec).
    """
    h, w, _ = dataset.image_shape
    spec.validate(h, w, dataset.num_classes)
    if parts is None:
        parts = partition(dataset, spec)

    images = np.clip(dataset.images, 0.0, 1.0).astype(np.float32)
    labels = dataset.labels.copy()

    if len(parts.poisoned):
        images[parts.poisoned] = low_pass_batch(images[parts.poisoned], spec.radius)
        labels[parts.poisoned] = spec.target

    if len(parts.precision):
        rng = seeded_rng(spec.seed, STREAM_RADII)
        radii = np.array(
            [sample_precision_radius(spec, rng) for _ in range(len(parts.precision))]
        )
        for radius in np.unique(radii):
            idx = parts.precision[radii == radius]
            images[idx] = low_pass_batch(images[idx], radius)

    return LabeledDataset(images, labels, dataset.num_classes)


PATCH_SIZE = 4


def badnets_patch(sample: tuple[np.ndarray, int], target: int) -> tuple[np.ndarray, int]:
    """Classical baseline: white 4x4 block in the bottom-right corner."""
    image, _ = sample
    img = np.asarray(image)
    if img.shape[0] < PATCH_SIZE or img.shape[1] < PATCH_SIZE:
        raise ConfigError(
            f"image {img.shape[0]}x{img.shape[1]} smaller than the {PATCH_SIZE}x{PATCH_SIZE} patch"
        )
    patched = img.astype(np.float32).copy()
    patched[-PATCH_SIZE:, -PATCH_SIZE:] = 1.0
    return patched, target


def build_patch_dataset(
    dataset: LabeledDataset,
    spec: PoisonSpec,
    parts: PartitionResult | None = None,
) -> LabeledDataset:
    """BadNets counterpart of build_poisoned_dataset (positive control).

    Uses the same seeded partition machinery; the poisoned subset gets the
    patch and the target label. Precision mode does not apply.
    """
    h, w, _ = dataset.image_shape
    spec.validate(h, w, dataset.num_classes)
    if parts is None:
        parts = partition(dataset, replace(spec, precision=False))
    images = np.clip(dataset.images, 0.0, 1.0).astype(np.float32)
    labels = dataset.labels.copy()
    if len(parts.poisoned):
        images[parts.poisoned, -PATCH_SIZE:, -PATCH_SIZE:, :] = 1.0
        labels[parts.poisoned] = spec.target
    return LabeledDataset(images, labels, dataset.num_classes)
