"""Procedural toy scenes: soft-edged textured boxes and spheres.

A scene is analytic, so it can be rendered directly by ray marching
(:func:`render_analytic`) or baked into a :class:`RadianceGrid`.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import ndimage

from .geometry import Intrinsics, Pose, generate_rays, pixel_grid
from .radiance_field import RadianceGrid, SamplingConfig
from .sh import C0

EMPTY_RAW = -60.0  # softplus(-60) ~ 1e-26
# empty voxels bordering a surface; keeps raw-space interpolation close to
# the analytic density ramp
SHELL_RAW = -8.0


@dataclass
class Primitive:
    shape: str                  # "sphere" or "box"
    center: Sequence[float]
    size: Sequence[float]       # sphere: (radius,), box: half extents
    albedo: Sequence[float]
    density: float
    texture: str = "none"       # "none", "stripes", "checker"
    frequency: float = 4.0      # texture cycles per scene unit
    contrast: float = 0.8
    axis: int = 0               # stripe axis

    def __post_init__(self):
        if self.shape not in ("sphere", "box"):
            raise ValueError(f"unknown primitive shape {self.shape!r}")
        if self.density <= 0:
            raise ValueError("primitive density must be positive")
        self.center = np.asarray(self.center, dtype=np.float64)
        self.size = np.broadcast_to(np.asarray(self.size, dtype=np.float64),
                                    (1,) if self.shape == "sphere" else (3,)).copy()
        self.albedo = np.asarray(self.albedo, dtype=np.float64)
        if np.any(self.albedo < 0) or np.any(self.albedo > 1):
            raise ValueError("albedo must lie in [0, 1]")

    def signed_distance(self, p: np.ndarray) -> np.ndarray:
        q = p - self.center
        if self.shape == "sphere":
            return np.linalg.norm(q, axis=-1) - self.size[0]
        d = np.abs(q) - self.size
        outside = np.linalg.norm(np.maximum(d, 0.0), axis=-1)
        return outside + np.minimum(d.max(axis=-1), 0.0)

    def color(self, p: np.ndarray) -> np.ndarray:
        q = p - self.center
        w = 2 * np.pi * self.frequency
        if self.texture == "stripes":
            m = 0.5 * (1 + np.sin(w * q[..., self.axis]))
        elif self.texture == "checker":
            m = 0.5 * (1 + np.sin(w * q[..., 0]) * np.sin(w * q[..., 1]) * np.cos(w * q[..., 2]))
        else:
            m = np.zeros(p.shape[:-1])
        return self.albedo * (1.0 - self.contrast * m)[..., None]


@dataclass
class ToyScene:
    primitives: list = field(default_factory=list)
    bbox_min: Sequence[float] = (-1.0, -1.0, -1.0)
    bbox_max: Sequence[float] = (1.0, 1.0, 1.0)
    background: str = "black"
    edge: float = 0.08          # width of the linear density ramp at surfaces

    def density_albedo(self, p: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Analytic density (...,) and albedo (..., 3) at points ``p``."""
        p = np.asarray(p, dtype=np.float64)
        dens = np.zeros(p.shape[:-1])
        acc = np.zeros(p.shape[:-1] + (3,))
        for prim in self.primitives:
            occ = np.clip(0.5 - prim.signed_distance(p) / self.edge, 0.0, 1.0)
            d = prim.density * occ
            dens += d
            acc += d[..., None] * prim.color(p)
        albedo = np.where(dens[..., None] > 0, acc / np.maximum(dens, 1e-300)[..., None], 0.0)
        inside = np.all((p >= self.bbox_min) & (p <= self.bbox_max), axis=-1)
        return dens * inside, np.clip(albedo, 0, 1) * inside[..., None]


def bake_scene(scene: ToyScene, resolution: int | Sequence[int]) -> RadianceGrid:
    """Sample the analytic scene at voxel centres into a degree-0 grid."""
    res = (resolution,) * 3 if np.isscalar(resolution) else tuple(resolution)
    if min(res) < 8:
        raise ValueError("bake resolution must be >= 8 per axis")
    grid = RadianceGrid.create(res, scene.bbox_min, scene.bbox_max, 0, init_density=0.0)
    centers = grid.voxel_centers()
    dens, albedo = scene.density_albedo(centers)
    if scene.primitives:
        # empty voxels take the color of the nearest surface so interpolation
        # near a boundary does not blend in black
        empty = dens <= 0
        p = centers[empty]
        sd = np.stack([prim.signed_distance(p) for prim in scene.primitives])
        nearest = np.argmin(sd, axis=0)
        fill = np.zeros((len(p), 3))
        for k, prim in enumerate(scene.primitives):
            sel = nearest == k
            fill[sel] = prim.color(p[sel])
        albedo[empty] = np.clip(fill, 0.0, 1.0)
    raw = np.full(res, EMPTY_RAW, dtype=np.float64)
    filled = dens > np.exp(SHELL_RAW)
    raw[filled] = np.log(np.expm1(np.minimum(dens[filled], 700.0)))
    shell = ndimage.binary_dilation(filled, np.ones((3, 3, 3), bool)) & ~filled
    raw[shell] = SHELL_RAW
    return RadianceGrid(np.maximum(raw, EMPTY_RAW), (albedo / C0)[..., None, :],
                        scene.bbox_min, scene.bbox_max, 0)


def render_analytic(scene: ToyScene, pose: Pose, intr: Intrinsics, cfg: SamplingConfig,
                    chunk: int = 4096) -> np.ndarray:
    """Reference renderer evaluating the analytic scene at every sample."""
    rows, cols = pixel_grid(intr)
    o, d = generate_rays(intr, pose, rows, cols)
    t = cfg.sample_times()
    bg = np.asarray(cfg.background)
    out = np.empty((len(rows), 3))
    for s in range(0, len(rows), chunk):
        p = o[s:s + chunk, None, :] + t[None, :, None] * d[s:s + chunk, None, :]
        dens, alb = scene.density_albedo(p)
        alpha = 1.0 - np.exp(-dens * cfg.step)
        trans = np.cumprod(np.concatenate([np.ones_like(alpha[:, :1]), 1 - alpha[:, :-1]], 1), 1)
        w = trans * alpha
        tfin = trans[:, -1] * (1 - alpha[:, -1])
        out[s:s + chunk] = np.einsum("rn,rnc->rc", w, alb) + tfin[:, None] * bg
    return out.reshape(intr.height, intr.width, 3)


def _box(center, half, albedo, texture="stripes", freq=4.0, axis=0, density=30.0):
    return Primitive("box", center, half, albedo, density, texture, freq, 0.8, axis)


def _sphere(center, r, albedo, texture="none", freq=3.0, density=30.0):
    return Primitive("sphere", center, (r,), albedo, density, texture, freq, 0.6, 1)


def preset_scene(name: str) -> ToyScene:
    """Shipped presets of increasing clutter: ``simple``, ``medium``, ``cluttered``."""
    if name == "simple":
        prims = [
            _box((-0.25, 0.1, 0.2), (0.35, 0.35, 0.35), (0.9, 0.6, 0.2), "stripes", 3.0, 0),
            _sphere((0.4, -0.3, -0.3), 0.25, (0.3, 0.7, 0.95), "stripes", 3.0),
        ]
    elif name == "medium":
        prims = [
            _box((-0.45, -0.35, 0.3), (0.25, 0.25, 0.25), (0.95, 0.5, 0.3), "stripes", 3.5, 0),
            _box((0.35, -0.3, -0.2), (0.2, 0.3, 0.2), (0.4, 0.9, 0.4), "checker", 3.0),
            _box((0.0, 0.4, 0.5), (0.5, 0.18, 0.2), (0.8, 0.8, 0.95), "stripes", 4.0, 0),
            _sphere((-0.2, 0.1, -0.5), 0.18, (0.95, 0.9, 0.3)),
            _sphere((0.55, 0.35, 0.0), 0.15, (0.9, 0.3, 0.6), "stripes", 3.0),
        ]
    elif name == "cluttered":
        prims = [
            _box((-0.55, -0.5, 0.4), (0.2, 0.2, 0.2), (0.95, 0.45, 0.25), "checker", 3.5),
            _box((-0.05, -0.5, 0.1), (0.2, 0.15, 0.25), (0.3, 0.85, 0.5), "stripes", 4.0, 1),
            _box((0.5, -0.45, -0.3), (0.18, 0.22, 0.18), (0.35, 0.5, 0.95), "stripes", 4.0, 0),
            _box((-0.5, 0.15, -0.2), (0.18, 0.25, 0.2), (0.9, 0.85, 0.35), "stripes", 3.5, 1),
            _box((0.1, 0.1, 0.6), (0.3, 0.2, 0.2), (0.85, 0.85, 0.9), "checker", 3.0),
            _box((0.45, 0.5, 0.2), (0.2, 0.15, 0.2), (0.95, 0.35, 0.55), "stripes", 4.5, 0),
            _sphere((0.15, -0.05, -0.45), 0.16, (0.95, 0.7, 0.2), "stripes", 3.0),
            _sphere((-0.15, 0.55, -0.3), 0.14, (0.4, 0.95, 0.9)),
            _sphere((0.6, -0.05, 0.2), 0.13, (0.7, 0.4, 0.95), "stripes", 3.0),
        ]
    else:
        raise ValueError(f"unknown preset {name!r}; choose simple, medium or cluttered")
    return ToyScene(prims)


PRESETS = ("simple", "medium", "cluttered")
