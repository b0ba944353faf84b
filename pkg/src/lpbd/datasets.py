"""Data ingestion and image I/O.

A LabeledDataset bundles an image stack (N, H, W, C) float32 in [0, 1]
with integer labels. Loaders: IDX (MNIST container, plus a 4-dim variant
for RGB stacks), binary PPM/PGM rasters, CIFAR10 binary batches, and a
deterministic synthetic dataset for fast tests.
"""

import os
import re
import struct
from dataclasses import dataclass

import numpy as np

from .errors import (
    ConfigError,
    IdxCountError,
    IdxFormatError,
    IdxTruncationError,
    PpmFormatError,
    PpmTruncationError,
)
from .util import STREAM_SYNTH, seeded_rng

IDX_DTYPE_U8 = 0x08


@dataclass
class LabeledDataset:
    """Ordered (image, label) samples sharing one shape."""

    images: np.ndarray  # (N, H, W, C) float32 in [0, 1]
    labels: np.ndarray  # (N,) int64
    num_classes: int

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float32)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.images.ndim != 4:
            raise ConfigError(f"images must be (N, H, W, C), got shape {self.images.shape}")
        if self.images.shape[0] != self.labels.shape[0]:
            raise ConfigError(
                f"{self.images.shape[0]} images but {self.labels.shape[0]} labels"
            )
        if self.images.shape[3] not in (1, 3):
            raise ConfigError(f"channel count must be 1 or 3, got {self.images.shape[3]}")
        if self.num_classes < 2:
            raise ConfigError(f"need at least 2 classes, got {self.num_classes}")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise ConfigError("labels out of range for num_classes")

    def __len__(self) -> int:
        return self.images.shape[0]

    @property
    def image_shape(self) -> tuple[int, int, int]:
        return self.images.shape[1:]

    def subset(self, indices) -> "LabeledDataset":
        idx = np.asarray(indices, dtype=np.int64)
        return LabeledDataset(self.images[idx].copy(), self.labels[idx].copy(), self.num_classes)


# ---------------------------------------------------------------------------
# IDX container (big-endian, unsigned-byte payloads)

def _read_idx_header(data: bytes, path: str) -> tuple[int, tuple[int, ...], int]:
    if len(data) < 4:
        raise IdxTruncationError(f"{path}: file shorter than the 4-byte magic")
    zero1, zero2, dtype, ndim = struct.unpack(">BBBB", data[:4])
    if zero1 != 0 or zero2 != 0 or dtype != IDX_DTYPE_U8:
        raise IdxFormatError(
            f"{path}: bad IDX magic {data[:4].hex()} (want 0000{IDX_DTYPE_U8:02x}<ndim>)"
        )
    header_len = 4 + 4 * ndim
    if len(data) < header_len:
        raise IdxTruncationError(f"{path}: header truncated ({len(data)} bytes, need {header_len})")
    dims = struct.unpack(f">{ndim}I", data[4:header_len])
    return ndim, dims, header_len


def _read_idx_array(path: str, allowed_ndim: tuple[int, ...]) -> np.ndarray:
    with open(path, "rb") as fh:
        data = fh.read()
    ndim, dims, header_len = _read_idx_header(data, path)
    if ndim not in allowed_ndim:
        raise IdxFormatError(f"{path}: {ndim}-dimensional IDX, expected one of {allowed_ndim}")
    count = int(np.prod(dims))
    payload = data[header_len:]
    if len(payload) < count:
        raise IdxTruncationError(f"{path}: payload has {len(payload)} bytes, need {count}")
    if len(payload) > count:
        raise IdxFormatError(f"{path}: {len(payload) - count} trailing bytes after payload")
    return np.frombuffer(payload, dtype=np.uint8).reshape(dims)


def load_idx(images_path: str, labels_path: str, num_classes: int | None = None) -> LabeledDataset:
    """Load an IDX image/label pair; pixels map byte/255 into [0, 1].

    Images may be 3-dim (N, H, W; the MNIST layout, C=1) or 4-dim
    (N, H, W, C). Labels are 1-dim.
    """
    raw_images = _read_idx_array(images_path, (3, 4))
    raw_labels = _read_idx_array(labels_path, (1,))
    if raw_images.shape[0] != raw_labels.shape[0]:
        raise IdxCountError(
            f"{images_path} holds {raw_images.shape[0]} images but "
            f"{labels_path} holds {raw_labels.shape[0]} labels"
        )
    if raw_images.ndim == 3:
        raw_images = raw_images[:, :, :, None]
    images = raw_images.astype(np.float32) / 255.0
    labels = raw_labels.astype(np.int64)
    if num_classes is None:
        num_classes = int(labels.max()) + 1 if len(labels) else 2
        num_classes = max(num_classes, 2)
    return LabeledDataset(images, labels, num_classes)


def save_idx(dataset: LabeledDataset, images_path: str, labels_path: str) -> None:
    """Write a dataset as an IDX pair (u8 payloads, rounding half-up)."""
    n, h, w, c = dataset.images.shape
    pixels = np.floor(dataset.images * 255.0 + 0.5).astype(np.uint8)
    with open(images_path, "wb") as fh:
        if c == 1:
            fh.write(struct.pack(">BBBB3I", 0, 0, IDX_DTYPE_U8, 3, n, h, w))
            fh.write(pixels[:, :, :, 0].tobytes())
        else:
            fh.write(struct.pack(">BBBB4I", 0, 0, IDX_DTYPE_U8, 4, n, h, w, c))
            fh.write(pixels.tobytes())
    with open(labels_path, "wb") as fh:
        fh.write(struct.pack(">BBBBI", 0, 0, IDX_DTYPE_U8, 1, n))
        fh.write(dataset.labels.astype(np.uint8).tobytes())


# ---------------------------------------------------------------------------
# Binary PPM (P6, C=3) and PGM (P5, C=1), maxval 255

def save_ppm(image: np.ndarray, path: str) -> None:
    """Write (H, W, 1) as P5 or (H, W, 3) as P6, rounding half-up."""
    img = np.asarray(image)
    if img.ndim == 2:
        img = img[:, :, None]
    if img.ndim != 3 or img.shape[2] not in (1, 3):
        raise ConfigError(f"expected (H, W, 1|3) image, got shape {np.asarray(image).shape}")
    h, w, c = img.shape
    pixels = np.floor(np.clip(img, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)
    magic = b"P5" if c == 1 else b"P6"
    with open(path, "wb") as fh:
        fh.write(magic + b"\n%d %d\n255\n" % (w, h))
        fh.write(pixels[:, :, 0].tobytes() if c == 1 else pixels.tobytes())


def load_ppm(path: str) -> np.ndarray:
    """Read a binary P5/P6 file into a float32 (H, W, C) image in [0, 1]."""
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 2 or data[:1] != b"P":
        raise PpmFormatError(f"{path}: not a PNM file")
    magic = data[:2]
    if magic not in (b"P5", b"P6"):
        raise PpmFormatError(f"{path}: unsupported PNM type {magic!r}")
    # header: magic, width, height, maxval tokens separated by whitespace,
    # with '#' comments allowed; a single whitespace byte ends the header
    pos = 2
    tokens = []
    while len(tokens) < 3:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos : pos + 1] == b"#":
            eol = data.find(b"\n", pos)
            if eol < 0:
                raise PpmFormatError(f"{path}: unterminated comment")
            pos = eol + 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise PpmFormatError(f"{path}: header ends before width/height/maxval")
        tokens.append(data[start:pos])
    pos += 1  # single whitespace byte after maxval
    try:
        w, h, maxval = (int(t) for t in tokens)
    except ValueError as exc:
        raise PpmFormatError(f"{path}: non-numeric header token") from exc
    if w < 1 or h < 1:
        raise PpmFormatError(f"{path}: bad dimensions {w}x{h}")
    if maxval != 255:
        raise PpmFormatError(f"{path}: only maxval 255 supported, got {maxval}")
    c = 1 if magic == b"P5" else 3
    need = w * h * c
    raster = data[pos : pos + need]
    if len(raster) < need:
        raise PpmTruncationError(f"{path}: raster has {len(raster)} bytes, need {need}")
    pixels = np.frombuffer(raster, dtype=np.uint8).reshape(h, w, c)
    return pixels.astype(np.float32) / 255.0


# ---------------------------------------------------------------------------
# CIFAR10 binary batches (3073-byte records: label + 3x1024 channel planes)

CIFAR_TRAIN_BATCHES = [f"data_batch_{i}.bin" for i in range(1, 6)]
CIFAR_TEST_BATCHES = ["test_batch.bin"]


def load_cifar10(directory: str, split: str = "train") -> LabeledDataset:
    names = CIFAR_TRAIN_BATCHES if split == "train" else CIFAR_TEST_BATCHES
    images, labels = [], []
    for name in names:
        path = os.path.join(directory, name)
        with open(path, "rb") as fh:
            data = fh.read()
        if len(data) % 3073 != 0:
            raise IdxTruncationError(f"{path}: size {len(data)} is not a multiple of 3073")
        records = np.frombuffer(data, dtype=np.uint8).reshape(-1, 3073)
        labels.append(records[:, 0].astype(np.int64))
        planes = records[:, 1:].reshape(-1, 3, 32, 32)  # channel-planar
        images.append(np.moveaxis(planes, 1, -1).astype(np.float32) / 255.0)
    return LabeledDataset(np.concatenate(images), np.concatenate(labels), 10)


def cifar10_available(directory: str, split: str = "train") -> bool:
    names = CIFAR_TRAIN_BATCHES if split == "train" else CIFAR_TEST_BATCHES
    return all(os.path.isfile(os.path.join(directory, n)) for n in names)


# ---------------------------------------------------------------------------
# Deterministic synthetic dataset

# Class-independent fine texture: one grating per (fy, fx, amplitude), placed
# at spectral radii spanning roughly 7.8 .. 13.5 on a 28-pixel raster so that
# every low-pass radius in that band removes a different subset. The outer
# shelf is stronger, mirroring the sharp-edge/sensor-noise energy that makes
# near-identity cutoffs detectable on natural images. Frequencies scale with
# the raster so the relative band position is size-independent.
_TEXTURE_FREQS = (
    (5, 6, 0.06),    # radius 7.8
    (6, 6, 0.06),    # 8.5
    (7, 7, 0.06),    # 9.9
    (7, 8, 0.06),    # 10.6
    (9, 7, 0.06),    # 11.4
    (11, 6, 0.09),   # 12.5
    (9, 9, 0.09),    # 12.7
    (13, 3, 0.09),   # 13.3
    (10, 9, 0.09),   # 13.5
)


def synth_dataset(
    n_per_class: int,
    num_classes: int,
    height: int = 28,
    width: int = 28,
    channels: int = 1,
    noise: float = 0.1,
    seed: int = 0,
) -> LabeledDataset:
    """MNIST-like synthetic classes: bright ridges on a dark border.

    Class k is a rectified low-frequency grating with class-specific
    orientation and frequency plus a weaker second component. All classes
    share a stack of fine gratings across the upper spectral band and a
    uniform noise floor, so low-pass filtering interacts non-trivially
    with every image: each cutoff radius removes a distinct, learnable
    subset of the texture. A linear fade to black over ~5 pixels on every
    side frames the image the way MNIST digits sit inside a dark margin.
    """
    if num_classes < 2:
        raise ConfigError(f"need at least 2 classes, got {num_classes}")
    rng = seeded_rng(seed, STREAM_SYNTH)
    yy, xx = np.meshgrid(np.arange(height), np.arange(width), indexing="ij")
    # hard-black 2 px ring then a linear fade, per axis; the product leaves
    # corners exactly zero the way MNIST margins are
    fade_y = np.clip((np.minimum(yy, height - 1 - yy) - 2.0) / 4.0, 0.0, 1.0)
    fade_x = np.clip((np.minimum(xx, width - 1 - xx) - 2.0) / 4.0, 0.0, 1.0)
    envelope = fade_y * fade_x

    scale_y = height / 28.0
    scale_x = width / 28.0
    texture = np.zeros((height, width))
    for i, (fy, fx, amp) in enumerate(_TEXTURE_FREQS):
        phase = 0.7 * i
        texture += amp * np.sin(
            2.0 * np.pi * (fy * scale_y * yy / height + fx * scale_x * xx / width) + phase
        )

    n = n_per_class * num_classes
    images = np.empty((n, height, width, channels), dtype=np.float32)
    labels = np.repeat(np.arange(num_classes), n_per_class).astype(np.int64)
    for k in range(num_classes):
        # class identity is orientation only; every class shares the same
        # frequencies so no class is structurally easier to forge
        theta = np.pi * k / num_classes
        u = np.cos(theta) * xx + np.sin(theta) * yy
        v = -np.sin(theta) * xx + np.cos(theta) * yy
        base = (
            0.08
            + 0.62 * np.maximum(0.0, np.sin(2.0 * np.pi * 4.0 * scale_x * u / width))
            + 0.25 * np.maximum(0.0, np.sin(2.0 * np.pi * 6.0 * scale_x * v / width))
            + texture
        )
        block = np.broadcast_to(
            base[None, :, :, None], (n_per_class, height, width, channels)
        ).astype(np.float64)
        if noise > 0:
            block = block + rng.uniform(
                -noise, noise, size=(n_per_class, height, width, channels)
            )
        block = block * envelope[None, :, :, None]
        sl = slice(k * n_per_class, (k + 1) * n_per_class)
        images[sl] = np.clip(block, 0.0, 1.0).astype(np.float32)
    return LabeledDataset(images, labels, num_classes)


# ---------------------------------------------------------------------------
# Data-source resolution for the CLI ("synth:...", "idx:...", "cifar:...",
# or a directory produced by the poison subcommand)

_SYNTH_DEFAULTS = dict(classes=10, per_class=100, size=28, channels=1, noise=0.1, seed=0)


def resolve_data_source(source: str) -> LabeledDataset:
    """Turn a --data argument into a dataset.

    Accepted forms:
      synth[:key=value,...]   keys: classes, per_class, size, channels,
                              noise, seed
      idx:IMAGES_PATH,LABELS_PATH
      cifar:DIR[,train|test]
      DIR                     a directory holding images.idx + labels.idx
    """
    if source == "synth" or source.startswith("synth:"):
        params = dict(_SYNTH_DEFAULTS)
        if ":" in source:
            for pair in source.split(":", 1)[1].split(","):
                if not pair:
                    continue
                if "=" not in pair:
                    raise ConfigError(f"bad synth parameter {pair!r} (want key=value)")
                key, value = pair.split("=", 1)
                if key not in params:
                    raise ConfigError(f"unknown synth parameter {key!r}")
                params[key] = float(value) if key == "noise" else int(value)
        return synth_dataset(
            n_per_class=params["per_class"],
            num_classes=params["classes"],
            height=params["size"],
            width=params["size"],
            channels=params["channels"],
            noise=params["noise"],
            seed=params["seed"],
        )
    if source.startswith("idx:"):
        parts = source[4:].split(",")
        if len(parts) != 2:
            raise ConfigError("idx source must be idx:IMAGES_PATH,LABELS_PATH")
        return load_idx(parts[0], parts[1])
    if source.startswith("cifar:"):
        parts = source[6:].split(",")
        split = parts[1] if len(parts) > 1 else "train"
        if split not in ("train", "test"):
            raise ConfigError(f"cifar split must be train or test, got {split!r}")
        return load_cifar10(parts[0], split)
    if os.path.isdir(source):
        images = os.path.join(source, "images.idx")
        labels = os.path.join(source, "labels.idx")
        num_classes = None
        manifest = os.path.join(source, "manifest.txt")
        if os.path.isfile(manifest):
            with open(manifest, "r", encoding="utf-8") as fh:
                match = re.search(r"^num_classes = (\d+)$", fh.read(), re.MULTILINE)
            if match:
                num_classes = int(match.group(1))
        return load_idx(images, labels, num_classes=num_classes)
    raise FileNotFoundError(f"data source {source!r} is neither a known scheme nor a directory")
