"""Software SCI encoder: binary masks, measurement formation and loss.

A measurement is ``Y = sum_i X_i * M_i + Z``: each of N frames is
modulated by its own binary mask (the same mask for every color channel)
and summed onto one sensor image.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DimensionMismatch, FileFormatError, NonIntegerOnesCount, PixelOutOfBounds

MASK_MAGIC = b"SCMK"
MEAS_MAGIC = b"SCMS"
FORMAT_VERSION = 1


@dataclass
class MaskStack:
    """N binary masks of shape (H, W), stored as uint8 array (N, H, W)."""

    masks: np.ndarray
    seed: int = 0
    target_or: float = 1.0

    def __post_init__(self):
        m = np.asarray(self.masks)
        if m.ndim != 3:
            raise ValueError("masks must have shape (N, H, W)")
        if not np.all((m == 0) | (m == 1)):
            raise ValueError("mask entries must be 0 or 1")
        self.masks = m.astype(np.uint8)

    @property
    def n(self) -> int:
        return self.masks.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        return self.masks.shape[1:]

    def counts(self) -> np.ndarray:
        """Number of open masks per pixel, shape (H, W)."""
        return self.masks.sum(axis=0, dtype=np.int64)


@dataclass
class Measurement:
    """Compressed image, shape (H, W, C) float32 with C in {1, 3}."""

    pixels: np.ndarray
    noise_sigma: float = 0.0

    def __post_init__(self):
        p = np.asarray(self.pixels, dtype=np.float32)
        if p.ndim == 2:
            p = p[..., None]
        self.pixels = p

    @property
    def shape(self) -> tuple[int, int]:
        return self.pixels.shape[:2]


def ones_per_pixel(n: int, overlap_rate: float) -> int:
    k = overlap_rate * n
    kr = int(round(k))
    if kr < 1 or kr > n or abs(k - kr) > 1e-9:
        raise NonIntegerOnesCount(f"overlap rate {overlap_rate} x {n} frames = {k} is not "
                                  f"a positive integer count")
    return kr


def generate_masks(height: int, width: int, n: int, overlap_rate: float, seed: int = 0,
                   mode: str = "exact") -> MaskStack:
    """Random binary masks with a fixed number of ones per pixel.

    In ``"exact"`` mode every pixel gets exactly ``k = overlap_rate * n``
    open masks, the subset chosen uniformly and independently per pixel.
    ``"bernoulli"`` mode draws each entry independently with probability
    ``overlap_rate`` (per-pixel counts then vary).
    """
    rng = np.random.default_rng(seed)
    if mode == "bernoulli":
        if not 0 < overlap_rate <= 1:
            raise ValueError("overlap rate must lie in (0, 1]")
        masks = (rng.random((n, height, width)) < overlap_rate).astype(np.uint8)
        return MaskStack(masks, seed, overlap_rate)
    if mode != "exact":
        raise ValueError(f"unknown mask mode {mode!r}")
    k = ones_per_pixel(n, overlap_rate)
    # rank of a uniform key per (pixel, frame) gives a uniform random k-subset
    keys = rng.random((height, width, n))
    ranks = np.argsort(np.argsort(keys, axis=-1), axis=-1)
    masks = (ranks < k).astype(np.uint8).transpose(2, 0, 1)
    return MaskStack(np.ascontiguousarray(masks), seed, overlap_rate)


def overlapping_rate(stack: MaskStack, pixel: tuple[int, int]) -> float:
    row, col = pixel
    h, w = stack.shape
    if not (0 <= row < h and 0 <= col < w):
        raise PixelOutOfBounds(f"pixel {pixel} outside {h}x{w}")
    return float(stack.masks[:, row, col].sum()) / stack.n


def overlapping_rate_map(stack: MaskStack) -> np.ndarray:
    return stack.counts() / stack.n


def masked_sum(masks, values) -> np.ndarray:
    """``sum_i masks[i] * values[i]`` accumulated frame by frame.

    ``masks`` is (N, ...) and ``values`` is (N, ..., C).  The sum is carried
    in the precision of ``values`` and always in the same order, so the
    encoder and the loss reproduce each other bit for bit.
    """
    values = np.asarray(values)
    if values.dtype not in (np.float32, np.float64):
        values = values.astype(np.float64)
    m = np.asarray(masks).astype(values.dtype)
    acc = np.zeros(values.shape[1:], dtype=values.dtype)
    for i in range(values.shape[0]):
        acc += m[i][..., None] * values[i]
    return acc


def encode_measurement(frames: np.ndarray, stack: MaskStack, noise_sigma: float = 0.0,
                       seed: int = 0) -> Measurement:
    """Form ``Y = sum_i M_i * X_i + Z`` for frames shaped (N, H, W[, C]).

    Noise is iid Gaussian with std ``noise_sigma``; the result is clamped
    at zero and stored as float32.  Float32 frames are summed in float32,
    anything else in float64.
    """
    frames = np.asarray(frames)
    if frames.dtype != np.float32:
        frames = frames.astype(np.float64)
    if frames.ndim == 3:
        frames = frames[..., None]
    if frames.shape[0] != stack.n or frames.shape[1:3] != stack.shape:
        raise DimensionMismatch(f"frames {frames.shape[:3]} vs masks {stack.masks.shape}")
    y = masked_sum(stack.masks, frames)
    if noise_sigma > 0:
        rng = np.random.default_rng(seed)
        y = np.maximum(y + rng.normal(0.0, noise_sigma, y.shape), 0.0)
    return Measurement(y.astype(np.float32), float(noise_sigma))


def sci_loss(rendered: np.ndarray, ray_masks: np.ndarray, targets: np.ndarray,
             ) -> tuple[float, np.ndarray]:
    """Squared error between measured pixels and the masked sum of renders.

    Parameters
    ----------
    rendered : (R, N, C) rendered values C(r, i) per ray and frame; the
        masked sum is accumulated in their precision, see :func:`masked_sum`.
    ray_masks : (R, N) mask values M(r, i).
    targets : (R, C) measured values Y(r).

    Returns
    -------
    loss : float
        ``sum_r || Y(r) - sum_i M(r, i) C(r, i) ||^2``.
    grad : (R, N, C)
        dL/dC(r, i), zero wherever M(r, i) = 0.
    """
    rendered = np.asarray(rendered)
    m = np.asarray(ray_masks, dtype=np.float64)
    y = np.asarray(targets, dtype=np.float64)
    if rendered.ndim != 3 or m.shape != rendered.shape[:2] or y.shape != (rendered.shape[0], rendered.shape[2]):
        raise DimensionMismatch(f"rendered {rendered.shape}, masks {m.shape}, targets {y.shape}")
    # same accumulation as the encoder, hence exactly zero on its own frames
    pred = masked_sum(m.T, rendered.transpose(1, 0, 2)).astype(np.float64)
    resid = y - pred
    loss = float(np.sum(resid * resid))
    grad = -2.0 * m[..., None] * resid[:, None, :]
    return loss, grad


def save_masks(path, stack: MaskStack) -> None:
    n, h, w = stack.masks.shape
    head = MASK_MAGIC + struct.pack("<IIIIQf", FORMAT_VERSION, n, h, w, stack.seed, stack.target_or)
    Path(path).write_bytes(head + np.ascontiguousarray(stack.masks, dtype=np.uint8).tobytes())


def load_masks(path) -> MaskStack:
    data = Path(path).read_bytes()
    hs = 4 + struct.calcsize("<IIIIQf")
    if len(data) < hs or data[:4] != MASK_MAGIC:
        raise FileFormatError(f"{path}: not a mask file")
    version, n, h, w, seed, target_or = struct.unpack("<IIIIQf", data[4:hs])
    if version != FORMAT_VERSION:
        raise FileFormatError(f"{path}: unsupported mask version {version}")
    if len(data) != hs + n * h * w:
        raise FileFormatError(f"{path}: payload length mismatch")
    masks = np.frombuffer(data, np.uint8, n * h * w, hs).reshape(n, h, w).copy()
    return MaskStack(masks, seed, float(np.float32(target_or)))


def save_measurement(path, meas: Measurement) -> None:
    h, w, c = meas.pixels.shape
    head = MEAS_MAGIC + struct.pack("<IIIf", h, w, c, meas.noise_sigma)
    Path(path).write_bytes(head + np.ascontiguousarray(meas.pixels, dtype="<f4").tobytes())


def load_measurement(path) -> Measurement:
    data = Path(path).read_bytes()
    hs = 4 + struct.calcsize("<IIIf")
    if len(data) < hs or data[:4] != MEAS_MAGIC:
        raise FileFormatError(f"{path}: not a measurement file")
    h, w, c, sigma = struct.unpack("<IIIf", data[4:hs])
    if len(data) != hs + 4 * h * w * c:
        raise FileFormatError(f"{path}: payload length mismatch")
    px = np.frombuffer(data, "<f4", h * w * c, hs).reshape(h, w, c).copy()
    return Measurement(px, float(np.float32(sigma)))
