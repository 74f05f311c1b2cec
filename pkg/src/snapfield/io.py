"""TensorFile format and the key = value config file used by the CLI.

TensorFile layout (little-endian)::

    b"SCTF" | u32 version | u32 rank | rank x u32 dims | b"f32\\0" | payload

The payload is row-major float32, ``prod(dims) * 4`` bytes.
"""
from __future__ import annotations

import configparser
import struct
from pathlib import Path

import numpy as np

from .errors import FileFormatError

TENSOR_MAGIC = b"SCTF"
TENSOR_VERSION = 1
F32_TAG = b"f32\0"


def write_tensor(path, array) -> None:
    a = np.asarray(array, dtype="<f4", order="C")  # keeps 0-d shape
    head = TENSOR_MAGIC + struct.pack(f"<II{a.ndim}I", TENSOR_VERSION, a.ndim, *a.shape) + F32_TAG
    Path(path).write_bytes(head + a.tobytes())


def read_tensor(path) -> np.ndarray:
    data = Path(path).read_bytes()
    if len(data) < 12 or data[:4] != TENSOR_MAGIC:
        raise FileFormatError(f"{path}: not a tensor file")
    version, rank = struct.unpack("<II", data[4:12])
    if version != TENSOR_VERSION:
        raise FileFormatError(f"{path}: unsupported tensor version {version}")
    off = 12 + 4 * rank
    dims = struct.unpack(f"<{rank}I", data[12:off])
    if data[off:off + 4] != F32_TAG:
        raise FileFormatError(f"{path}: unsupported dtype tag {data[off:off + 4]!r}")
    off += 4
    count = int(np.prod(dims)) if rank else 1
    if len(data) != off + 4 * count:
        raise FileFormatError(f"{path}: payload length {len(data) - off} != {4 * count}")
    return np.frombuffer(data, "<f4", count, off).reshape(dims).astype(np.float32)


def load_config(path=None, overrides=()) -> configparser.ConfigParser:
    """Read an INI-style config and apply ``section.key=value`` overrides."""
    cp = configparser.ConfigParser()
    if path is not None:
        if not cp.read(path):
            raise FileNotFoundError(f"config file {path} not found")
    for item in overrides:
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise ValueError(f"override {item!r} must look like section.key=value")
        key, value = item.split("=", 1)
        section, name = key.strip().split(".", 1)
        if not cp.has_section(section):
            cp.add_section(section)
        cp.set(section, name, value.strip())
    return cp


def save_png(path, image) -> None:
    """8-bit PNG preview; quantitative paths should use :func:`write_tensor`."""
    from PIL import Image

    img = np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0)
    if img.ndim == 3 and img.shape[2] == 1:
        img = img[..., 0]
    Image.fromarray((img * 255.0 + 0.5).astype(np.uint8)).save(path)
