"""Spatial <-> frequency transforms and the circular low-pass filter.

Images are channel-last float arrays of shape (H, W, C) (or plain (H, W))
with values in [0, 1]. Spectra are complex128 arrays of the same shape with
the DC term shifted to the centre index (H // 2, W // 2), so low
frequencies cluster around the centre. The forward transform is
unnormalised; the inverse carries the 1/(H*W) factor.

The transform is a separable row/column DFT built from explicit DFT
matrices, O(H*W*(H+W)) per channel. Each channel of an RGB image is
filtered independently.
"""

import numpy as np

from .errors import ConfigError, ShapeMismatchError
from .util import clamp01


def r_max(height: int, width: int) -> int:
    """Largest usable low-pass radius: half the smaller image side."""
    return min(int(height), int(width)) // 2


def _dft_matrix(n: int, sign: float) -> np.ndarray:
    k = np.arange(n)
    return np.exp(sign * 2j * np.pi * np.outer(k, k) / n)


def _shift(spec: np.ndarray) -> np.ndarray:
    # move DC (index 0) to (H // 2, W // 2); axes are the last two
    h, w = spec.shape[-2], spec.shape[-1]
    return np.roll(spec, (h // 2, w // 2), axis=(-2, -1))


def _unshift(spec: np.ndarray) -> np.ndarray:
    h, w = spec.shape[-2], spec.shape[-1]
    return np.roll(spec, (-(h // 2), -(w // 2)), axis=(-2, -1))


def _to_cfirst(image: np.ndarray) -> tuple[np.ndarray, bool]:
    """(H,W) or (H,W,C) -> (C,H,W) float64, plus a had-channels flag."""
    x = np.asarray(image)
    if x.ndim == 2:
        return x[None, :, :].astype(np.float64), False
    if x.ndim == 3:
        return np.moveaxis(x, -1, 0).astype(np.float64), True
    raise ShapeMismatchError(f"expected (H, W) or (H, W, C) array, got shape {x.shape}")


def dft2(image: np.ndarray) -> np.ndarray:
    """Centred 2D DFT of each channel.

    Returns a complex128 array shaped like the input, with the DC term at
    (H // 2, W // 2).
    """
    x, had_channels = _to_cfirst(image)
    _, h, w = x.shape
    rows = _dft_matrix(h, -1.0)
    cols = _dft_matrix(w, -1.0)
    spec = rows @ x.astype(np.complex128) @ cols.T
    spec = _shift(spec)
    return np.moveaxis(spec, 0, -1) if had_channels else spec[0]


def idft2(spectrum: np.ndarray) -> np.ndarray:
    """Inverse of dft2 with 1/(H*W) normalisation.

    Returns the complex raster; callers take the real part.
    """
    s = np.asarray(spectrum, dtype=np.complex128)
    if s.ndim == 2:
        s3, had_channels = s[None, :, :], False
    elif s.ndim == 3:
        s3, had_channels = np.moveaxis(s, -1, 0), True
    else:
        raise ShapeMismatchError(f"expected (H, W) or (H, W, C) spectrum, got shape {s.shape}")
    _, h, w = s3.shape
    rows = _dft_matrix(h, 1.0)
    cols = _dft_matrix(w, 1.0)
    raster = (rows @ _unshift(s3) @ cols.T) / (h * w)
    return np.moveaxis(raster, 0, -1) if had_channels else raster[0]


def make_mask(height: int, width: int, radius: float) -> np.ndarray:
    """Binary disc mask for a centred spectrum.

    Entry (j, k) is 1 iff the Euclidean distance to the centre index
    (H // 2, W // 2) is <= radius (boundary inclusive), else 0.
    """
    if height < 2 or width < 2:
        raise ConfigError(f"mask needs H, W >= 2, got {height}x{width}")
    if radius < 0:
        raise ConfigError(f"mask radius must be >= 0, got {radius}")
    dy = np.arange(height) - height // 2
    dx = np.arange(width) - width // 2
    dist2 = dy[:, None] ** 2 + dx[None, :] ** 2
    return (dist2 <= float(radius) ** 2).astype(np.float64)


def low_pass(image: np.ndarray, radius: float) -> np.ndarray:
    """Keep only frequencies within `radius` of the centred DC term.

    Per channel: spectrum = dft2(x); spectrum *= disc mask; y =
    real(idft2(spectrum)); clamp to [0, 1]. Filtering at radius >= r_max
    is the identity, so that path returns the (clamped) input unchanged.
    Deterministic; returns float32.
    """
    return low_pass_batch(np.asarray(image)[None], radius)[0]


def low_pass_batch(images: np.ndarray, radius: float, chunk: int = 512) -> np.ndarray:
    """low_pass over a stack of images (N, H, W, C) or (N, H, W).

    Bit-identical to mapping low_pass over the stack one image at a time.
    """
    x = np.asarray(images)
    if x.ndim == 3:
        n, h, w = x.shape
        cfirst = x[:, None, :, :].astype(np.float64)
    elif x.ndim == 4:
        n, h, w, _ = x.shape
        cfirst = np.moveaxis(x, -1, 1).astype(np.float64)
    else:
        raise ShapeMismatchError(f"expected (N,H,W) or (N,H,W,C) stack, got shape {x.shape}")
    if radius < 0:
        raise ConfigError(f"low-pass radius must be >= 0, got {radius}")

    if radius >= r_max(h, w):
        out = clamp01(cfirst)
    else:
        mask = make_mask(h, w, radius)
        fwd_r = _dft_matrix(h, -1.0)
        fwd_c = _dft_matrix(w, -1.0).T
        inv_r = _dft_matrix(h, 1.0)
        inv_c = _dft_matrix(w, 1.0).T
        out = np.empty_like(cfirst)
        for lo in range(0, n, chunk):
            blk = cfirst[lo : lo + chunk].astype(np.complex128)
            spec = _shift(fwd_r @ blk @ fwd_c)
            spec *= mask
            raster = (inv_r @ _unshift(spec) @ inv_c) / (h * w)
            out[lo : lo + chunk] = clamp01(raster.real)

    out = out.astype(np.float32)
    return out[:, 0, :, :] if x.ndim == 3 else np.moveaxis(out, 1, -1)


def residual_map(original: np.ndarray, poisoned: np.ndarray, gain: float = 10.0) -> np.ndarray:
    """Amplified absolute difference, clamped to [0, 1] for inspection."""
    a = np.asarray(original, dtype=np.float64)
    b = np.asarray(poisoned, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeMismatchError(f"residual_map shapes differ: {a.shape} vs {b.shape}")
    return clamp01(gain * np.abs(a - b)).astype(np.float32)
