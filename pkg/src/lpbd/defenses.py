"""Defense harness: STRIP entropy testing, fine-pruning curves, and
trigger reversal with a MAD-based anomaly index.

Each evaluation treats the model as read-only. STRIP blends a tested
input half-and-half with clean overlays and studies the output entropy;
fine-pruning removes the most dormant units first and tracks the
CSA/ASR trade-off; trigger reversal optimises a per-label mask+pattern
pair and flags labels whose recovered mask is abnormally small.
"""

from dataclasses import dataclass, field

import numpy as np

from .datasets import LabeledDataset
from .errors import ConfigError, TrainingDivergedError
from .frequency import low_pass_batch
from .metrics import clean_accuracy
from .model import Model, forward, input_gradient, predict_batch, prune_neurons
from .util import STREAM_REVERSE, STREAM_STRIP, clamp01, map_ordered, seeded_rng


def strip_entropy(model: Model, image: np.ndarray, overlays: np.ndarray) -> float:
    """Mean output entropy (bits) of half-and-half blends with the overlays."""
    ovl = np.asarray(overlays)
    if ovl.ndim == 3:
        ovl = ovl[None]
    if ovl.shape[0] == 0:
        raise ConfigError("strip_entropy needs at least one overlay")
    blends = clamp01(0.5 * np.asarray(image)[None] + 0.5 * ovl).astype(np.float32)
    probs = forward(model, blends).astype(np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(probs > 0, probs * np.log2(probs), 0.0)
    return float(np.mean(-terms.sum(axis=1)))


@dataclass
class StripReport:
    """Entropy distributions plus the FAR at a fixed clean FRR."""

    clean_entropies: np.ndarray
    poisoned_entropies: np.ndarray
    overlays: int
    threshold: float
    far: float
    frr_target: float = 0.01

    def quantiles(self, which: str) -> dict[str, float]:
        values = self.clean_entropies if which == "clean" else self.poisoned_entropies
        qs = np.quantile(values, [0.0, 0.25, 0.5, 0.75, 1.0])
        return {"min": qs[0], "q25": qs[1], "median": qs[2], "q75": qs[3], "max": qs[4]}

    def sections(self) -> dict[str, dict]:
        body = {
            "overlays": self.overlays,
            "tested_clean": len(self.clean_entropies),
            "tested_poisoned": len(self.poisoned_entropies),
            "frr_target": self.frr_target,
            "threshold": self.threshold,
            "far": self.far,
        }
        for which in ("clean", "poisoned"):
            for key, value in self.quantiles(which).items():
                body[f"{which}_entropy.{key}"] = float(value)
        return {"strip": body}


def strip_report(
    model: Model,
    clean_set: LabeledDataset,
    poisoned_images: np.ndarray,
    n_overlays: int = 64,
    seed: int = 0,
    frr: float = 0.01,
) -> StripReport:
    """Entropy test of poisoned inputs against a clean reference set.

    Every tested input gets `n_overlays` seeded overlays drawn from
    clean_set. The detection threshold is the clean-entropy quantile
    giving an `frr` false-rejection rate; FAR is the fraction of poisoned
    inputs at or above it (i.e. not flagged).
    """
    if len(clean_set) < n_overlays:
        raise ConfigError(
            f"need at least {n_overlays} clean images for overlays, have {len(clean_set)}"
        )
    rng = seeded_rng(seed, STREAM_STRIP)

    def entropies(images: np.ndarray) -> np.ndarray:
        # overlay picks are drawn sequentially so results do not depend on
        # the worker count; the per-input evaluations are pure
        picks = [rng.choice(len(clean_set), size=n_overlays, replace=False)
                 for _ in range(images.shape[0])]
        values = map_ordered(
            lambda pair: strip_entropy(model, images[pair[0]], clean_set.images[pair[1]]),
            list(enumerate(picks)),
        )
        return np.asarray(values)

    clean_entropies = entropies(clean_set.images)
    poisoned_entropies = entropies(np.asarray(poisoned_images))
    threshold = float(np.quantile(clean_entropies, frr))
    far = float(np.mean(poisoned_entropies >= threshold))
    return StripReport(clean_entropies, poisoned_entropies, n_overlays, threshold, far, frr)


@dataclass
class PruneCurve:
    """CSA/ASR after pruning increasing fractions of one layer's units."""

    layer: str
    points: list[tuple[float, float, float]]  # (fraction_pruned, csa, asr)

    def __post_init__(self):
        fractions = [p[0] for p in self.points]
        if fractions != sorted(set(fractions)) or fractions[0] != 0.0 or fractions[-1] != 1.0:
            raise ConfigError("prune fractions must increase strictly from 0 to 1")

    def first_below(self, csa_floor: float) -> tuple[float, float, float] | None:
        for point in self.points:
            if point[1] < csa_floor:
                return point
        return None

    def sections(self) -> dict[str, dict]:
        body: dict[str, object] = {"layer": self.layer, "steps": len(self.points)}
        for fraction, csa, asr in self.points:
            key = f"{fraction:.4f}"
            body[f"csa.{key}"] = csa
            body[f"asr.{key}"] = asr
        return {"fineprune": body}


def unit_activation_order(model: Model, probe: np.ndarray, layer: str) -> np.ndarray:
    """Unit indices sorted by ascending mean rectified activation on the probe."""
    _, acts = forward(model, probe, capture=layer)
    rect = np.maximum(acts, 0.0)
    axes = tuple(range(rect.ndim - 1))
    means = rect.mean(axis=axes)
    return np.argsort(means, kind="stable")


def fine_prune_curve(
    model: Model,
    probe_set: LabeledDataset,
    clean_eval: LabeledDataset,
    attack_eval: LabeledDataset,
    radius: float,
    target: int,
    layer: str | None = None,
    step: float = 0.05,
) -> PruneCurve:
    """Prune the most dormant units first, recording CSA and ASR per step."""
    if not 0.0 < step <= 1.0:
        raise ConfigError(f"step must lie in (0, 1], got {step}")
    layer = layer or model.default_prune_layer()
    lyr = model.layer(layer)
    if not lyr.prunable:
        raise ConfigError(f"layer {layer!r} has no prunable units")
    n_units = lyr.units
    if n_units < round(1.0 / step):
        raise ConfigError(f"layer {layer!r} has {n_units} units, too few for step {step}")
    order = unit_activation_order(model, probe_set.images, layer)

    keep = attack_eval.labels != target
    triggered = low_pass_batch(attack_eval.images[keep], radius)

    counts = sorted({int(round(f * n_units)) for f in np.arange(0.0, 1.0 + step / 2, step)} | {0, n_units})
    points = []
    for count in counts:
        pruned = model if count == 0 else prune_neurons(model, layer, order[:count])
        csa = clean_accuracy(pruned, clean_eval)
        asr = float(np.mean(predict_batch(pruned, triggered) == target))
        points.append((count / n_units, csa, asr))
    return PruneCurve(layer, points)


@dataclass
class ReversedTrigger:
    """Mask/pattern pair recovered for one candidate label."""

    label: int
    mask: np.ndarray      # (H, W) in [0, 1]
    pattern: np.ndarray   # (H, W, C) in [0, 1]
    l1: float             # sum of the mask


def reverse_trigger(
    model: Model,
    clean_set: LabeledDataset,
    label: int,
    lam: float = 0.01,
    steps: int = 300,
    step_size: float = 0.1,
    batch_size: int = 32,
    seed: int = 0,
    momentum: float = 0.9,
    optimizer: str = "adam",
    init_mask: float = 1.5,
) -> ReversedTrigger:
    """Optimise a blended trigger that drives clean inputs toward `label`.

    Minimises mean cross-entropy of forward((1-m) * x + m * p) toward the
    label plus lam * ||m||_1, with m and p kept in [0, 1] by sigmoid
    reparameterisation. The mask starts wide (init_mask is the logit mean,
    1.5 ~ 82% coverage) so localized triggers stay reachable: with a
    near-zero mask a dormant trigger detector receives no gradient at all.
    Deterministic for fixed seed and hyper-parameters.
    """
    if optimizer not in ("adam", "momentum"):
        raise ConfigError(f"optimizer must be adam or momentum, got {optimizer!r}")
    h, w, c = clean_set.image_shape
    rng = seeded_rng(seed ^ (label + 1), STREAM_REVERSE)
    a = rng.normal(init_mask, 0.3, size=(h, w))     # mask logits
    b = rng.normal(0.0, 0.3, size=(h, w, c))        # pattern logits, p ~ 0.5
    state_a = [np.zeros_like(a), np.zeros_like(a)]
    state_b = [np.zeros_like(b), np.zeros_like(b)]
    n = len(clean_set)
    images = clean_set.images.astype(np.float64)

    def step(logits, grad, state, t):
        if optimizer == "momentum":
            state[0] = momentum * state[0] - step_size * grad
            logits += state[0]
        else:
            state[0] = 0.9 * state[0] + 0.1 * grad
            state[1] = 0.999 * state[1] + 0.001 * grad * grad
            mhat = state[0] / (1.0 - 0.9**t)
            vhat = state[1] / (1.0 - 0.999**t)
            logits -= step_size * mhat / (np.sqrt(vhat) + 1e-8)

    for it in range(steps):
        pick = rng.choice(n, size=min(batch_size, n), replace=n < batch_size)
        x = images[pick]
        m = 1.0 / (1.0 + np.exp(-a))
        p = 1.0 / (1.0 + np.exp(-b))
        blend = (1.0 - m)[None, :, :, None] * x + (m[:, :, None] * p)[None]
        dblend = input_gradient(model, blend.astype(np.float32), label)
        dblend = dblend.astype(np.float64)
        dm = np.einsum("nhwc,hwc->hw", dblend, p) - np.einsum("nhwc,nhwc->hw", dblend, x)
        dp = dblend.sum(axis=0) * m[:, :, None]
        dm += lam
        grad_a = dm * m * (1.0 - m)
        grad_b = dp * p * (1.0 - p)
        if not (np.isfinite(grad_a).all() and np.isfinite(grad_b).all()):
            raise TrainingDivergedError(it, float("nan"), what="reversal step")
        step(a, grad_a, state_a, it + 1)
        step(b, grad_b, state_b, it + 1)

    m = 1.0 / (1.0 + np.exp(-a))
    p = 1.0 / (1.0 + np.exp(-b))
    return ReversedTrigger(label, m, p, float(m.sum()))


def anomaly_index(norms) -> tuple[float, float, float]:
    """(median, MAD, anomaly index) of per-label trigger norms.

    The index measures how far the smallest norm sits below the median in
    robust units: (median - min) / (1.4826 * MAD), clamped at 0; an index
    of 2 or more flags a backdoored label. Degenerate spread (MAD = 0) is
    an error.
    """
    values = np.asarray(list(norms), dtype=np.float64)
    if values.size < 3:
        raise ConfigError(f"anomaly index needs at least 3 norms, got {values.size}")
    if (values < 0).any():
        raise ConfigError("trigger norms must be non-negative")
    median = float(np.median(values))
    mad = float(np.median(np.abs(values - median)))
    if mad == 0.0:
        raise ConfigError("degenerate spread: MAD of the trigger norms is zero")
    index = max(0.0, (median - float(values.min())) / (1.4826 * mad))
    return median, mad, index


@dataclass
class CleanseReport:
    """Per-label reversed-trigger norms and the MAD anomaly verdict."""

    norms: list[float]
    median: float
    mad: float
    index: float
    flagged: bool
    tau: float = 2.0
    hyper: dict = field(default_factory=dict)

    def sections(self) -> dict[str, dict]:
        body: dict[str, object] = {
            "median": self.median,
            "mad": self.mad,
            "anomaly_index": self.index,
            "tau": self.tau,
            "flagged": self.flagged,
        }
        for lbl, norm in enumerate(self.norms):
            body[f"l1.{lbl}"] = norm
        body.update({f"hyper.{k}": v for k, v in self.hyper.items()})
        return {"cleanse": body}


def cleanse(
    model: Model,
    clean_set: LabeledDataset,
    lam: float = 0.01,
    steps: int = 300,
    step_size: float = 0.1,
    batch_size: int = 32,
    seed: int = 0,
    tau: float = 2.0,
    optimizer: str = "adam",
    init_mask: float = 1.5,
) -> CleanseReport:
    """Reverse a trigger for every label and score the norm distribution."""
    norms = []
    for label in range(clean_set.num_classes):
        trig = reverse_trigger(
            model, clean_set, label,
            lam=lam, steps=steps, step_size=step_size, batch_size=batch_size,
            seed=seed, optimizer=optimizer, init_mask=init_mask,
        )
        norms.append(trig.l1)
    median, mad, index = anomaly_index(norms)
    hyper = {"lam": lam, "steps": steps, "step_size": step_size,
             "batch_size": batch_size, "seed": seed, "optimizer": optimizer,
             "init_mask": init_mask}
    return CleanseReport(norms, median, mad, index, index >= tau, tau, hyper)
