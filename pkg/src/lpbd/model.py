"""Small trainable classifier on plain numpy.

Two built-in architectures stand in for large backbones at desk scale:

  mlp: flatten -> dense 128 -> relu -> dense num_classes
  cnn: conv3x3x16 -> relu -> pool -> conv3x3x32 -> relu -> pool
       -> flatten -> dense num_classes

Convolutions are stride-1 with zero 'same' padding; pooling is 2x2 max
with stride 2. Parameters are float32; gradient-check tests upcast via
Model.astype(np.float64). Conv and dense layers carry an optional unit
mask so pruned units output exactly zero.
"""

import io
import json
import logging
import struct
from dataclasses import dataclass

import numpy as np

from .datasets import LabeledDataset
from .errors import (
    ConfigError,
    ModelFormatError,
    ModelTruncationError,
    ModelVersionError,
    ShapeMismatchError,
    TrainingDivergedError,
)
from .util import STREAM_INIT, STREAM_SHUFFLE, seeded_rng

logger = logging.getLogger(__name__)

MODEL_MAGIC = b"LPBD1"

BUILTIN_ARCHS = {
    "mlp": (("flatten",), ("dense", 128), ("relu",), ("dense", "num_classes")),
    "cnn": (
        ("conv", 16),
        ("relu",),
        ("pool",),
        ("conv", 32),
        ("relu",),
        ("pool",),
        ("flatten",),
        ("dense", "num_classes"),
    ),
}


def _im2col(x: np.ndarray, k: int) -> np.ndarray:
    """(N, H, W, C) -> (N, H, W, k*k*C) patches under zero 'same' padding."""
    pad = k // 2
    n, h, w, c = x.shape
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad), (0, 0)))
    cols = np.empty((n, h, w, k * k, c), dtype=x.dtype)
    for i in range(k):
        for j in range(k):
            cols[:, :, :, i * k + j, :] = xp[:, i : i + h, j : j + w, :]
    return cols.reshape(n, h, w, k * k * c)


class Conv2D:
    """3x3 stride-1 'same' convolution with an optional output-unit mask."""

    prunable = True

    def __init__(self, name: str, w: np.ndarray, b: np.ndarray, unit_mask=None):
        self.name = name
        self.w = w  # (k, k, c_in, c_out)
        self.b = b  # (c_out,)
        self.unit_mask = unit_mask  # bool (c_out,) or None

    @property
    def units(self) -> int:
        return self.w.shape[3]

    def out_shape(self, shape):
        return (shape[0], shape[1], self.units)

    def forward(self, x):
        k = self.w.shape[0]
        cols = _im2col(x, k)
        y = cols @ self.w.reshape(-1, self.units)
        y += self.b
        if self.unit_mask is not None:
            y *= self.unit_mask.astype(y.dtype)
        return y, cols

    def backward(self, dy, x, cols, need_dx=True):
        if self.unit_mask is not None:
            dy = dy * self.unit_mask.astype(dy.dtype)
        k = self.w.shape[0]
        c_in = self.w.shape[2]
        dw = (cols.reshape(-1, k * k * c_in).T @ dy.reshape(-1, self.units)).reshape(self.w.shape)
        db = dy.sum(axis=(0, 1, 2))
        dx = None
        if need_dx:
            # grad wrt input = 'same' conv of dy with the spatially flipped,
            # channel-transposed kernel
            w_flip = self.w[::-1, ::-1].transpose(0, 1, 3, 2)  # (k, k, c_out, c_in)
            dx = _im2col(dy, k) @ np.ascontiguousarray(w_flip.reshape(-1, c_in))
        return dx, {"w": dw, "b": db}


class Dense:
    """Fully connected layer with an optional output-unit mask."""

    prunable = True

    def __init__(self, name: str, w: np.ndarray, b: np.ndarray, unit_mask=None):
        self.name = name
        self.w = w  # (d_in, d_out)
        self.b = b  # (d_out,)
        self.unit_mask = unit_mask

    @property
    def units(self) -> int:
        return self.w.shape[1]

    def out_shape(self, shape):
        return (self.units,)

    def forward(self, x):
        y = x @ self.w
        y += self.b
        if self.unit_mask is not None:
            y *= self.unit_mask.astype(y.dtype)
        return y, None

    def backward(self, dy, x, _cache, need_dx=True):
        if self.unit_mask is not None:
            dy = dy * self.unit_mask.astype(dy.dtype)
        dx = dy @ self.w.T if need_dx else None
        return dx, {"w": x.T @ dy, "b": dy.sum(axis=0)}


class ReLU:
    prunable = False

    def __init__(self, name: str):
        self.name = name

    def out_shape(self, shape):
        return shape

    def forward(self, x):
        return np.maximum(x, 0), None

    def backward(self, dy, x, _cache):
        return dy * (x > 0), None


class MaxPool2:
    """2x2 max pooling, stride 2; odd trailing rows/columns are dropped."""

    prunable = False

    def __init__(self, name: str):
        self.name = name

    def out_shape(self, shape):
        return (shape[0] // 2, shape[1] // 2, shape[2])

    def forward(self, x):
        n, h, w, c = x.shape
        ho, wo = h // 2, w // 2
        tiles = x[:, : ho * 2, : wo * 2].reshape(n, ho, 2, wo, 2, c)
        patches = tiles.transpose(0, 1, 3, 5, 2, 4).reshape(n, ho, wo, c, 4)
        idx = patches.argmax(axis=-1)  # first max wins: deterministic
        y = np.take_along_axis(patches, idx[..., None], axis=-1)[..., 0]
        return y, idx

    def backward(self, dy, x, idx):
        n, h, w, c = x.shape
        ho, wo = h // 2, w // 2
        dpatches = np.zeros((n, ho, wo, c, 4), dtype=dy.dtype)
        np.put_along_axis(dpatches, idx[..., None], dy[..., None], axis=-1)
        dtiles = dpatches.reshape(n, ho, wo, c, 2, 2).transpose(0, 1, 4, 2, 5, 3)
        dx = np.zeros_like(x)
        dx[:, : ho * 2, : wo * 2] = dtiles.reshape(n, ho * 2, wo * 2, c)
        return dx, None


class Flatten:
    prunable = False

    def __init__(self, name: str):
        self.name = name

    def out_shape(self, shape):
        return (int(np.prod(shape)),)

    def forward(self, x):
        return x.reshape(x.shape[0], -1), None

    def backward(self, dy, x, _cache):
        return dy.reshape(x.shape), None


class Model:
    """Layer stack with a softmax head."""

    def __init__(self, arch, input_shape, num_classes, layers):
        self.arch = arch
        self.input_shape = tuple(int(v) for v in input_shape)
        self.num_classes = int(num_classes)
        self.layers = layers

    def layer(self, name: str):
        for lyr in self.layers:
            if lyr.name == name:
                return lyr
        raise ConfigError(f"no layer named {name!r} (have {[l.name for l in self.layers]})")

    def prunable_layers(self) -> list[str]:
        return [l.name for l in self.layers if l.prunable]

    def default_prune_layer(self) -> str:
        # last hidden prunable layer; the output dense stays intact
        names = self.prunable_layers()
        if len(names) < 2:
            raise ConfigError("model has no hidden prunable layer")
        return names[-2]

    def copy(self) -> "Model":
        layers = []
        for lyr in self.layers:
            if isinstance(lyr, (Conv2D, Dense)):
                mask = None if lyr.unit_mask is None else lyr.unit_mask.copy()
                layers.append(type(lyr)(lyr.name, lyr.w.copy(), lyr.b.copy(), mask))
            else:
                layers.append(type(lyr)(lyr.name))
        return Model(self.arch, self.input_shape, self.num_classes, layers)

    def astype(self, dtype) -> "Model":
        clone = self.copy()
        for lyr in clone.layers:
            if isinstance(lyr, (Conv2D, Dense)):
                lyr.w = lyr.w.astype(dtype)
                lyr.b = lyr.b.astype(dtype)
        return clone

    def param_items(self):
        for lyr in self.layers:
            if isinstance(lyr, (Conv2D, Dense)):
                yield lyr, "w", lyr.w
                yield lyr, "b", lyr.b


def _build_layers(arch, input_shape, num_classes, rng, zero_init=False, dtype=np.float32):
    if isinstance(arch, str):
        if arch not in BUILTIN_ARCHS:
            raise ConfigError(f"unknown architecture {arch!r} (built-ins: {sorted(BUILTIN_ARCHS)})")
        layer_specs = BUILTIN_ARCHS[arch]
    else:
        layer_specs = tuple(tuple(s) for s in arch)

    def init(shape, fan_in):
        if zero_init:
            return np.zeros(shape, dtype=dtype)
        bound = 1.0 / np.sqrt(fan_in)
        return rng.uniform(-bound, bound, size=shape).astype(dtype)

    layers = []
    shape = tuple(input_shape)
    counts = {"conv": 0, "dense": 0, "relu": 0, "pool": 0, "flatten": 0}
    for spec in layer_specs:
        kind = spec[0]
        counts[kind] = counts.get(kind, 0) + 1
        name = f"{kind}{counts[kind]}"
        if kind == "conv":
            if len(shape) != 3:
                raise ConfigError(f"conv layer {name} needs a (H, W, C) input, got {shape}")
            filters = num_classes if spec[1] == "num_classes" else int(spec[1])
            k = int(spec[2]) if len(spec) > 2 else 3
            if k % 2 == 0:
                raise ConfigError(f"conv kernel must be odd for 'same' padding, got {k}")
            fan_in = k * k * shape[2]
            lyr = Conv2D(name, init((k, k, shape[2], filters), fan_in),
                         np.zeros(filters, dtype=dtype))
        elif kind == "dense":
            if len(shape) != 1:
                raise ConfigError(f"dense layer {name} needs a flat input, got {shape}")
            units = num_classes if spec[1] == "num_classes" else int(spec[1])
            lyr = Dense(name, init((shape[0], units), shape[0]), np.zeros(units, dtype=dtype))
        elif kind == "relu":
            lyr = ReLU(name)
        elif kind == "pool":
            if len(shape) != 3 or shape[0] < 2 or shape[1] < 2:
                raise ConfigError(f"pool layer {name} needs a spatial input >= 2x2, got {shape}")
            lyr = MaxPool2(name)
        elif kind == "flatten":
            lyr = Flatten(name)
        else:
            raise ConfigError(f"unknown layer kind {kind!r}")
        shape = lyr.out_shape(shape)
        layers.append(lyr)
    if shape != (num_classes,):
        raise ConfigError(f"architecture ends with shape {shape}, expected ({num_classes},)")
    return layers


def init_model(arch, input_shape, num_classes: int, seed: int = 0, zero_init: bool = False) -> Model:
    """Seeded model construction with uniform fan-in scaled weights."""
    rng = seeded_rng(seed, STREAM_INIT)
    layers = _build_layers(arch, input_shape, num_classes, rng, zero_init=zero_init)
    return Model(arch, input_shape, num_classes, layers)


def _softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _as_batch(model: Model, images: np.ndarray) -> tuple[np.ndarray, bool]:
    x = np.asarray(images)
    if x.shape == model.input_shape:
        return x[None], True
    if x.ndim == 4 and x.shape[1:] == model.input_shape:
        return x, False
    raise ShapeMismatchError(
        f"input shape {x.shape} does not match model input {model.input_shape}"
    )


def _forward_cached(model: Model, x: np.ndarray):
    acts, caches = [x], []
    for lyr in model.layers:
        y, cache = lyr.forward(acts[-1])
        acts.append(y)
        caches.append(cache)
    return acts, caches, _softmax(acts[-1])


def forward(model: Model, images: np.ndarray, capture: str | None = None):
    """Softmax probabilities for one image or a batch.

    With capture=<layer name>, returns (probs, that layer's output).
    """
    x, single = _as_batch(model, images)
    dtype = next(iter(model.param_items()))[2].dtype
    captured = None
    h = x.astype(dtype) if x.dtype != dtype else x
    for lyr in model.layers:
        h, _ = lyr.forward(h)
        if capture is not None and lyr.name == capture:
            captured = h
    probs = _softmax(h)
    if single:
        probs = probs[0]
        captured = None if captured is None else captured[0]
    if capture is not None:
        if captured is None:
            raise ConfigError(f"no layer named {capture!r}")
        return probs, captured
    return probs


def predict_batch(model: Model, images: np.ndarray, chunk: int = 512) -> np.ndarray:
    """Argmax labels; ties resolve to the lowest class index."""
    x, single = _as_batch(model, images)
    out = np.empty(x.shape[0], dtype=np.int64)
    for lo in range(0, x.shape[0], chunk):
        out[lo : lo + chunk] = np.argmax(forward(model, x[lo : lo + chunk]), axis=1)
    return out[0] if single else out


def _loss_and_grads(model: Model, x: np.ndarray, labels: np.ndarray, want_dx=False, scale=1.0):
    """Mean cross-entropy, softmax probs, per-layer grads, optional dX."""
    acts, caches, probs = _forward_cached(model, x)
    n = x.shape[0]
    logits = acts[-1]
    zmax = logits.max(axis=1)
    logsumexp = zmax + np.log(np.exp(logits - zmax[:, None]).sum(axis=1))
    loss = float(np.mean(logsumexp - logits[np.arange(n), labels])) * scale

    grad = probs.copy()
    grad[np.arange(n), labels] -= 1.0
    grad *= scale / n
    grad = grad.astype(logits.dtype)

    lowest_param = min(
        i for i, lyr in enumerate(model.layers) if isinstance(lyr, (Conv2D, Dense))
    )
    grads = {}
    for i in range(len(model.layers) - 1, -1, -1):
        lyr = model.layers[i]
        need_dx = want_dx or i > lowest_param
        if isinstance(lyr, (Conv2D, Dense)):
            grad, layer_grads = lyr.backward(grad, acts[i], caches[i], need_dx=need_dx)
            grads[lyr.name] = layer_grads
        else:
            grad, _ = lyr.backward(grad, acts[i], caches[i])
        if not need_dx:
            break
    return loss, probs, grads, grad


def backward(model: Model, batch: tuple[np.ndarray, np.ndarray]):
    """Gradients of the mean cross-entropy over the batch.

    Returns {layer name: {"w": dW, "b": db}}.
    """
    images, labels = batch
    x, _ = _as_batch(model, np.asarray(images))
    y = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    if x.shape[0] == 0:
        raise ConfigError("backward needs a non-empty batch")
    _, _, grads, _ = _loss_and_grads(model, x, y)
    return grads


def input_gradient(model: Model, images: np.ndarray, target, scale: float = 1.0) -> np.ndarray:
    """Gradient of scale * mean cross-entropy toward `target` wrt the pixels."""
    x, single = _as_batch(model, np.asarray(images))
    y = np.broadcast_to(np.asarray(target, dtype=np.int64), (x.shape[0],))
    dtype = next(iter(model.param_items()))[2].dtype
    _, _, _, dx = _loss_and_grads(model, x.astype(dtype), y, want_dx=True, scale=scale)
    return dx[0] if single else dx


@dataclass
class TrainConfig:
    """SGD hyper-parameters; the decay point mirrors full-scale training."""

    lr: float = 0.01
    lr_decay: float = 0.1
    lr_decay_epoch: int = 100
    momentum: float = 0.9
    batch_size: int = 64
    epochs: int = 30
    seed: int = 0
    a_star: float | None = None  # optional acceptance threshold on val accuracy

    def __post_init__(self):
        # lr 0 and epochs 0 are legal no-op configurations
        if self.lr < 0:
            raise ConfigError(f"learning rate must be >= 0, got {self.lr}")
        if self.epochs < 0:
            raise ConfigError(f"epochs must be >= 0, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch size must be >= 1, got {self.batch_size}")


def train_sgd(
    model: Model,
    dataset: LabeledDataset,
    config: TrainConfig,
    val: LabeledDataset | None = None,
) -> Model:
    """Minibatch SGD with momentum and seeded per-epoch shuffling.

    Mutates and returns `model`. lr is multiplied by lr_decay once the
    decay epoch is reached. Raises TrainingDivergedError on a non-finite
    minibatch loss. Logs one loss/accuracy line per epoch.
    """
    if len(dataset) == 0:
        raise ConfigError("cannot train on an empty dataset")
    if dataset.image_shape != model.input_shape:
        raise ShapeMismatchError(
            f"dataset images {dataset.image_shape} do not match model input {model.input_shape}"
        )
    rng = seeded_rng(config.seed, STREAM_SHUFFLE)
    velocity = {lyr.name: {"w": np.zeros_like(lyr.w), "b": np.zeros_like(lyr.b)}
                for lyr in model.layers if isinstance(lyr, (Conv2D, Dense))}
    n = len(dataset)
    images, labels = dataset.images, dataset.labels
    for epoch in range(config.epochs):
        lr = config.lr * (config.lr_decay if epoch >= config.lr_decay_epoch else 1.0)
        order = rng.permutation(n)
        total_loss = 0.0
        correct = 0
        for lo in range(0, n, config.batch_size):
            idx = order[lo : lo + config.batch_size]
            x, y = images[idx], labels[idx]
            loss, probs, grads, _ = _loss_and_grads(model, x, y)
            if not np.isfinite(loss):
                raise TrainingDivergedError(epoch, loss)
            total_loss += loss * len(idx)
            correct += int((np.argmax(probs, axis=1) == y).sum())
            for lyr in model.layers:
                if lyr.name in grads:
                    for key, grad in grads[lyr.name].items():
                        vel = velocity[lyr.name][key]
                        vel *= config.momentum
                        vel -= lr * grad
                        param = getattr(lyr, key)
                        param += vel
        logger.info(
            "epoch %d/%d lr %.4g loss %.4f acc %.4f",
            epoch + 1, config.epochs, lr, total_loss / n, correct / n,
        )
    if config.a_star is not None and val is not None:
        acc = float(np.mean(predict_batch(model, val.images) == val.labels))
        status = "meets" if acc >= config.a_star else "MISSES"
        logger.info("validation accuracy %.4f %s threshold %.4f", acc, status, config.a_star)
    return model


def prune_neurons(model: Model, layer: str, units) -> Model:
    """Copy of the model with the given units of `layer` forced to zero output."""
    clone = model.copy()
    lyr = clone.layer(layer)
    if not lyr.prunable:
        raise ConfigError(f"layer {layer!r} has no prunable units")
    idx = np.asarray(units, dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= lyr.units):
        raise ConfigError(f"unit index out of range for layer {layer!r} ({lyr.units} units)")
    mask = np.ones(lyr.units, dtype=bool) if lyr.unit_mask is None else lyr.unit_mask.copy()
    mask[idx] = False
    lyr.unit_mask = mask
    return clone


# ---------------------------------------------------------------------------
# Versioned binary container: magic "LPBD1", JSON header (u32-le length),
# then raw little-endian float32 parameter blobs in header order.

def _header_dict(model: Model) -> dict:
    layers = []
    for lyr in model.layers:
        entry = {"kind": type(lyr).__name__, "name": lyr.name}
        if isinstance(lyr, (Conv2D, Dense)):
            entry["w_shape"] = list(lyr.w.shape)
            entry["b_shape"] = list(lyr.b.shape)
            entry["mask"] = None if lyr.unit_mask is None else lyr.unit_mask.astype(int).tolist()
        layers.append(entry)
    return {
        "arch": model.arch if isinstance(model.arch, str) else [list(s) for s in model.arch],
        "input_shape": list(model.input_shape),
        "num_classes": model.num_classes,
        "layers": layers,
    }


def save_model(model: Model, path: str) -> None:
    header = json.dumps(_header_dict(model), sort_keys=True, separators=(",", ":")).encode()
    with open(path, "wb") as fh:
        fh.write(MODEL_MAGIC)
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        for _, _, param in model.param_items():
            fh.write(np.ascontiguousarray(param, dtype="<f4").tobytes())


_LAYER_KINDS = {"Conv2D": Conv2D, "Dense": Dense, "ReLU": ReLU, "MaxPool2": MaxPool2,
                "Flatten": Flatten}


def load_model(path: str) -> Model:
    with open(path, "rb") as fh:
        data = fh.read()
    buf = io.BytesIO(data)
    magic = buf.read(len(MODEL_MAGIC))
    if len(magic) < len(MODEL_MAGIC):
        raise ModelTruncationError(f"{path}: file shorter than the magic")
    if magic != MODEL_MAGIC:
        if magic[:4] == MODEL_MAGIC[:4]:
            raise ModelVersionError(f"{path}: unsupported container version {magic[4:]!r}")
        raise ModelFormatError(f"{path}: bad magic {magic!r}")
    raw_len = buf.read(4)
    if len(raw_len) < 4:
        raise ModelTruncationError(f"{path}: header length truncated")
    (header_len,) = struct.unpack("<I", raw_len)
    header_bytes = buf.read(header_len)
    if len(header_bytes) < header_len:
        raise ModelTruncationError(f"{path}: header truncated")
    try:
        header = json.loads(header_bytes)
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"{path}: header is not valid JSON") from exc

    layers = []
    for entry in header["layers"]:
        kind = _LAYER_KINDS.get(entry["kind"])
        if kind is None:
            raise ModelFormatError(f"{path}: unknown layer kind {entry['kind']!r}")
        if kind in (Conv2D, Dense):
            w_size = int(np.prod(entry["w_shape"]))
            b_size = int(np.prod(entry["b_shape"]))
            blob = buf.read(4 * (w_size + b_size))
            if len(blob) < 4 * (w_size + b_size):
                raise ModelTruncationError(f"{path}: parameter blob for {entry['name']} truncated")
            w = np.frombuffer(blob[: 4 * w_size], dtype="<f4").reshape(entry["w_shape"]).copy()
            b = np.frombuffer(blob[4 * w_size :], dtype="<f4").reshape(entry["b_shape"]).copy()
            mask = entry.get("mask")
            mask = None if mask is None else np.asarray(mask, dtype=bool)
            layers.append(kind(entry["name"], w, b, mask))
        else:
            layers.append(kind(entry["name"]))
    if buf.read(1):
        raise ModelFormatError(f"{path}: trailing bytes after parameter blobs")
    arch = header["arch"]
    if not isinstance(arch, str):
        arch = [tuple(s) for s in arch]
    return Model(arch, tuple(header["input_shape"]), header["num_classes"], layers)
