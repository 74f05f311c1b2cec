"""Explicit radiance field: trilinear density/SH voxel grid and volume renderer.

Density is ``softplus`` of the trilinearly interpolated raw parameter; color
is the SH expansion evaluated along the ray direction and clamped to [0, 1].
Grid values live at voxel centres; points outside the bounding box are empty.

Quadrature along a ray uses ``n_samples`` equal bins on ``[t_near, t_far]``
with one sample per bin (bin midpoint, or a jittered position when
stratified); every sample carries the bin length as its segment length.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import _backend, _reference
from .errors import FileFormatError
from .geometry import Intrinsics, Pose, Ray, generate_rays, pixel_grid
from .sh import num_coeffs, sh_basis

GRID_MAGIC = b"SCGR"
GRID_VERSION = 1


def softplus_inverse(y: float) -> float:
    return float(np.log(np.expm1(y)))


@dataclass
class RadianceGrid:
    """Dense voxel grid of raw density and SH color coefficients.

    ``density_raw`` has shape ``(nx, ny, nz)`` and ``sh_coeffs`` shape
    ``(nx, ny, nz, K, 3)`` with ``K = (sh_degree + 1) ** 2``; both float64.
    """

    density_raw: np.ndarray
    sh_coeffs: np.ndarray
    bbox_min: np.ndarray
    bbox_max: np.ndarray
    sh_degree: int = 0

    def __post_init__(self):
        self.density_raw = np.ascontiguousarray(self.density_raw, dtype=np.float64)
        self.sh_coeffs = np.ascontiguousarray(self.sh_coeffs, dtype=np.float64)
        self.bbox_min = np.asarray(self.bbox_min, dtype=np.float64).reshape(3)
        self.bbox_max = np.asarray(self.bbox_max, dtype=np.float64).reshape(3)
        k = num_coeffs(self.sh_degree)
        if self.density_raw.ndim != 3:
            raise ValueError("density_raw must be 3-D")
        if self.sh_coeffs.shape != self.density_raw.shape + (k, 3):
            raise ValueError(f"sh_coeffs shape {self.sh_coeffs.shape} does not match "
                             f"{self.density_raw.shape + (k, 3)}")
        if not np.all(self.bbox_min < self.bbox_max):
            raise ValueError("bbox_min must be < bbox_max componentwise")

    @classmethod
    def create(cls, resolution: Sequence[int], bbox_min=(-1, -1, -1), bbox_max=(1, 1, 1),
               sh_degree: int = 0, init_density: float = 0.1, init_color: float = 0.5,
               ) -> "RadianceGrid":
        """Uniform grid with activated density ``init_density`` and gray color."""
        res = tuple(int(r) for r in resolution)
        k = num_coeffs(sh_degree)
        dens = np.full(res, softplus_inverse(init_density) if init_density > 0 else -30.0)
        sh = np.zeros(res + (k, 3))
        sh[..., 0, :] = init_color / sh_basis(np.zeros(3), 0)[0]
        return cls(dens, sh, bbox_min, bbox_max, sh_degree)

    @property
    def resolution(self) -> tuple[int, int, int]:
        return tuple(self.density_raw.shape)

    @property
    def num_sh(self) -> int:
        return num_coeffs(self.sh_degree)

    @property
    def density(self) -> np.ndarray:
        return _reference.softplus(self.density_raw)

    @property
    def voxel_size(self) -> np.ndarray:
        return (self.bbox_max - self.bbox_min) / np.asarray(self.resolution)

    def voxel_centers(self) -> np.ndarray:
        axes = [self.bbox_min[a] + (np.arange(n) + 0.5) * self.voxel_size[a]
                for a, n in enumerate(self.resolution)]
        return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)

    def copy(self) -> "RadianceGrid":
        return RadianceGrid(self.density_raw.copy(), self.sh_coeffs.copy(),
                            self.bbox_min.copy(), self.bbox_max.copy(), self.sh_degree)

    def zeros_like(self) -> "GridGradient":
        return GridGradient(np.zeros_like(self.density_raw), np.zeros_like(self.sh_coeffs))

    def round_to_float32(self) -> "RadianceGrid":
        """Copy whose parameters are exactly representable in the f32 file format."""
        g = self.copy()
        g.density_raw = g.density_raw.astype(np.float32).astype(np.float64)
        g.sh_coeffs = g.sh_coeffs.astype(np.float32).astype(np.float64)
        return g


@dataclass
class GridGradient:
    density_raw: np.ndarray
    sh_coeffs: np.ndarray

    def __iadd__(self, other: "GridGradient"):
        self.density_raw += other.density_raw
        self.sh_coeffs += other.sh_coeffs
        return self


@dataclass(frozen=True)
class SamplingConfig:
    t_near: float = 2.0
    t_far: float = 6.0
    n_samples: int = 64
    stratified: bool = False
    background: tuple = (0.0, 0.0, 0.0)
    # stop marching once transmittance falls below this; 0 disables
    min_transmittance: float = 0.0

    def __post_init__(self):
        if not 0 <= self.t_near < self.t_far:
            raise ValueError("need 0 <= t_near < t_far")
        if self.n_samples < 1:
            raise ValueError("n_samples must be >= 1")
        bg = self.background
        if isinstance(bg, str):
            named = {"black": (0.0, 0.0, 0.0), "white": (1.0, 1.0, 1.0)}
            if bg not in named:
                raise ValueError(f"background must be black, white or an RGB triple, not {bg!r}")
            bg = named[bg]
        object.__setattr__(self, "background", tuple(float(v) for v in bg))

    @property
    def step(self) -> float:
        return (self.t_far - self.t_near) / self.n_samples

    def sample_times(self, offsets: Optional[np.ndarray] = None) -> np.ndarray:
        j = np.arange(self.n_samples)
        return self.t_near + (j + (0.5 if offsets is None else offsets)) * self.step


@dataclass
class RenderOutput:
    color: np.ndarray
    weights: np.ndarray
    transmittance: float


def _args(grid: RadianceGrid, cfg: SamplingConfig):
    sh = grid.sh_coeffs.reshape(-1, grid.num_sh * 3)
    return (grid.density_raw, sh, grid.sh_degree, grid.bbox_min, grid.bbox_max)


def _prep(origins, dirs, offsets):
    o = np.ascontiguousarray(origins, dtype=np.float64).reshape(-1, 3)
    d = np.ascontiguousarray(dirs, dtype=np.float64).reshape(-1, 3)
    off = None if offsets is None else np.ascontiguousarray(offsets, dtype=np.float64)
    return o, d, off


def sample_field(grid: RadianceGrid, point, direction) -> tuple[float, np.ndarray]:
    """Activated density and clamped color at one point seen along ``direction``."""
    p = np.asarray(point, dtype=np.float64).reshape(1, 3)
    inside, idx, w, _ = _reference.trilinear(p, grid.bbox_min, grid.bbox_max, grid.resolution)
    if not inside[0]:
        return 0.0, np.zeros(3)
    raw = float(w[0] @ grid.density_raw.reshape(-1)[idx[0]])
    shi = np.einsum("c,ckd->kd", w[0], grid.sh_coeffs.reshape(-1, grid.num_sh, 3)[idx[0]])
    basis = sh_basis(np.asarray(direction, dtype=np.float64), grid.sh_degree)
    return float(_reference.softplus(raw)), np.clip(basis @ shi, 0.0, 1.0)


def render_rays(grid: RadianceGrid, origins, dirs, cfg: SamplingConfig,
                offsets: Optional[np.ndarray] = None, backend: Optional[str] = None,
                ) -> tuple[np.ndarray, np.ndarray]:
    """Batched render; returns ``(colors (R, 3), final transmittance (R,))``.

    ``offsets`` (R, n_samples) in [0, 1) place each sample inside its bin;
    ``None`` uses bin midpoints.
    """
    o, d, off = _prep(origins, dirs, offsets)
    k = _backend.get(backend)
    return k.render_forward(*_args(grid, cfg), o, d, cfg.t_near, cfg.t_far, cfg.n_samples,
                            off, np.asarray(cfg.background), cfg.min_transmittance)


def render_rays_backward(grid: RadianceGrid, origins, dirs, cfg: SamplingConfig, grad_colors,
                         offsets=None, out: Optional[GridGradient] = None,
                         ray_grads: bool = False, backend: Optional[str] = None):
    """Reverse pass of :func:`render_rays` for upstream ``grad_colors`` (R, 3).

    Parameter gradients are accumulated into ``out`` (allocated if omitted).
    With ``ray_grads`` also returns gradients w.r.t. ray origins and
    directions (directions are treated as free 3-vectors).
    """
    o, d, off = _prep(origins, dirs, offsets)
    g = np.ascontiguousarray(grad_colors, dtype=np.float64).reshape(-1, 3)
    if out is None:
        out = grid.zeros_like()
    go = np.zeros_like(o) if ray_grads else None
    gd = np.zeros_like(d) if ray_grads else None
    k = _backend.get(backend)
    k.render_backward(*_args(grid, cfg), o, d, cfg.t_near, cfg.t_far, cfg.n_samples, off,
                      np.asarray(cfg.background), cfg.min_transmittance, g,
                      out.density_raw, out.sh_coeffs.reshape(-1, grid.num_sh * 3), go, gd)
    if ray_grads:
        return out, go, gd
    return out


def render_ray(grid: RadianceGrid, ray: Ray, cfg: SamplingConfig,
               offsets: Optional[np.ndarray] = None) -> RenderOutput:
    """Render one ray, exposing per-sample compositing weights."""
    o, d, off = _prep(ray.origin, ray.direction, None if offsets is None else np.reshape(offsets, (1, -1)))
    color, tfin, w = _reference.render_forward(
        *_args(grid, cfg), o, d, cfg.t_near, cfg.t_far, cfg.n_samples, off,
        np.asarray(cfg.background), cfg.min_transmittance, return_weights=True)
    return RenderOutput(color[0], w[0], float(tfin[0]))


def render_ray_backward(grid: RadianceGrid, ray: Ray, cfg: SamplingConfig, upstream,
                        offsets=None) -> GridGradient:
    return render_rays_backward(grid, ray.origin, ray.direction, cfg, upstream,
                                None if offsets is None else np.reshape(offsets, (1, -1)))


def stratified_offsets(n_pixels: int, n_samples: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return rng.random((n_pixels, n_samples))


def render_frame(grid: RadianceGrid, pose: Pose, intr: Intrinsics, cfg: SamplingConfig,
                 seed: int = 0, backend: Optional[str] = None) -> np.ndarray:
    """Render an H x W x 3 image; jitter (if stratified) is drawn from ``seed``."""
    rows, cols = pixel_grid(intr)
    o, d = generate_rays(intr, pose, rows, cols)
    off = stratified_offsets(len(rows), cfg.n_samples, seed) if cfg.stratified else None
    colors, _ = render_rays(grid, o, d, cfg, off, backend)
    return colors.reshape(intr.height, intr.width, 3)


def save_grid(path, grid: RadianceGrid) -> None:
    """Little-endian: magic, u32 version, 3*u32 resolution, 6*f64 bbox,
    u32 sh_degree, f32 raw density (x fastest), f32 SH (x fastest voxel
    order, then K x 3 per voxel, channel fastest)."""
    nx, ny, nz = grid.resolution
    head = GRID_MAGIC + struct.pack("<I3I6dI", GRID_VERSION, nx, ny, nz,
                                    *grid.bbox_min, *grid.bbox_max, grid.sh_degree)
    dens = np.ascontiguousarray(grid.density_raw.transpose(2, 1, 0), dtype="<f4")
    sh = np.ascontiguousarray(grid.sh_coeffs.transpose(2, 1, 0, 3, 4), dtype="<f4")
    with open(path, "wb") as f:
        f.write(head)
        f.write(dens.tobytes())
        f.write(sh.tobytes())


def load_grid(path) -> RadianceGrid:
    data = Path(path).read_bytes()
    hsize = 4 + struct.calcsize("<I3I6dI")
    if len(data) < hsize or data[:4] != GRID_MAGIC:
        raise FileFormatError(f"{path}: not a grid file")
    version, nx, ny, nz, *rest = struct.unpack("<I3I6dI", data[4:hsize])
    if version != GRID_VERSION:
        raise FileFormatError(f"{path}: unsupported grid version {version}")
    bmin, bmax, deg = rest[:3], rest[3:6], rest[6]
    k = num_coeffs(deg)
    nv = nx * ny * nz
    expect = hsize + 4 * nv * (1 + 3 * k)
    if len(data) != expect:
        raise FileFormatError(f"{path}: payload length {len(data)} != {expect}")
    dens = np.frombuffer(data, "<f4", nv, hsize).reshape(nz, ny, nx).transpose(2, 1, 0)
    sh = np.frombuffer(data, "<f4", nv * k * 3, hsize + 4 * nv)
    sh = sh.reshape(nz, ny, nx, k, 3).transpose(2, 1, 0, 3, 4)
    return RadianceGrid(dens.astype(np.float64), sh.astype(np.float64), bmin, bmax, deg)
