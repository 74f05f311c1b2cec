"""Rigid-body math on SE(3), camera model and ray generation.

Twists are 6-vectors ordered ``(rho, phi)``: translational part first,
rotational part (axis-angle, radians) second.  Poses are world-from-camera;
the camera looks down its local +z axis, +x to the right, +y down.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import AngleNearPi, PixelOutOfBounds

SMALL_ANGLE = 1e-8
PI_MARGIN = 1e-6


def hat(v: np.ndarray) -> np.ndarray:
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def vee(m: np.ndarray) -> np.ndarray:
    return np.array([m[2, 1] - m[1, 2], m[0, 2] - m[2, 0], m[1, 0] - m[0, 1]]) * 0.5


@dataclass(frozen=True)
class Pose:
    """Rigid transform ``x_world = rotation @ x_cam + translation``."""

    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        r = np.array(self.rotation, dtype=np.float64).reshape(3, 3)
        t = np.array(self.translation, dtype=np.float64).reshape(3)
        r.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "Pose":
        return cls()

    @classmethod
    def from_translation(cls, t: Sequence[float]) -> "Pose":
        return cls(np.eye(3), np.asarray(t, dtype=np.float64))

    @classmethod
    def from_matrix(cls, m: np.ndarray) -> "Pose":
        m = np.asarray(m, dtype=np.float64)
        return cls(m[:3, :3], m[:3, 3])

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def compose(self, other: "Pose") -> "Pose":
        return Pose(self.rotation @ other.rotation,
                    self.rotation @ other.translation + self.translation)

    __matmul__ = compose

    def inverse(self) -> "Pose":
        rt = self.rotation.T
        return Pose(rt, -rt @ self.translation)

    def apply(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(points) @ self.rotation.T + self.translation

    def orthonormalized(self) -> "Pose":
        """Project the rotation onto SO(3) (polar decomposition via SVD)."""
        u, _, vt = np.linalg.svd(self.rotation)
        r = u @ vt
        if np.linalg.det(r) < 0:
            u[:, -1] *= -1
            r = u @ vt
        return Pose(r, self.translation)


def _rodrigues_coeffs(theta: float) -> tuple[float, float, float]:
    """Return A = sin/θ, B = (1-cos)/θ², C = (θ-sin)/θ³."""
    if theta < SMALL_ANGLE:
        t2 = theta * theta
        return 1.0 - t2 / 6.0, 0.5 - t2 / 24.0, 1.0 / 6.0 - t2 / 120.0
    a = np.sin(theta) / theta
    half = np.sin(0.5 * theta) / (0.5 * theta)
    b = 0.5 * half * half
    if theta < 1e-3:
        t2 = theta * theta
        c = 1.0 / 6.0 - t2 / 120.0 + t2 * t2 / 5040.0
    else:
        c = (theta - np.sin(theta)) / theta ** 3
    return a, b, c


def so3_exp(phi: np.ndarray) -> np.ndarray:
    phi = np.asarray(phi, dtype=np.float64)
    theta = float(np.linalg.norm(phi))
    a, b, _ = _rodrigues_coeffs(theta)
    k = hat(phi)
    return np.eye(3) + a * k + b * (k @ k)


def se3_exp(xi: Sequence[float]) -> Pose:
    """Exponential map from a twist ``(rho, phi)`` to a pose."""
    xi = np.asarray(xi, dtype=np.float64).reshape(6)
    rho, phi = xi[:3], xi[3:]
    theta = float(np.linalg.norm(phi))
    a, b, c = _rodrigues_coeffs(theta)
    k = hat(phi)
    k2 = k @ k
    rot = np.eye(3) + a * k + b * k2
    v = np.eye(3) + b * k + c * k2
    return Pose(rot, v @ rho)


def so3_log(rot: np.ndarray) -> np.ndarray:
    rot = np.asarray(rot, dtype=np.float64)
    s = 0.5 * vee(rot - rot.T)  # = sin(theta) * axis
    sin_t = float(np.linalg.norm(s))
    cos_t = 0.5 * (np.trace(rot) - 1.0)
    theta = float(np.arctan2(sin_t, cos_t))
    if theta >= np.pi - PI_MARGIN:
        raise AngleNearPi(f"rotation angle {theta:.9f} too close to pi")
    if theta < 1e-4:
        scale = 1.0 + theta * theta / 6.0 + 7.0 * theta ** 4 / 360.0
    else:
        scale = theta / np.sin(theta)
    return s * scale


def se3_log(pose: Pose) -> np.ndarray:
    """Logarithm of a pose as a twist ``(rho, phi)``.

    Raises
    ------
    AngleNearPi
        If the rotation angle is within 1e-6 of pi.
    """
    phi = so3_log(pose.rotation)
    theta = float(np.linalg.norm(phi))
    k = hat(phi)
    if theta < 1e-3:
        t2 = theta * theta
        d = 1.0 / 12.0 + t2 / 720.0 + t2 * t2 / 30240.0
    else:
        h = 0.5 * theta   # half-angle form avoids cancellation in 1 - cos
        d = (1.0 - h * np.cos(h) / np.sin(h)) / (theta * theta)
    v_inv = np.eye(3) - 0.5 * k + d * (k @ k)
    return np.concatenate([v_inv @ pose.translation, phi])


def interpolation_fraction(i: int, n: int, literal: bool = False) -> float:
    if n < 1 or not 1 <= i <= n:
        raise ValueError(f"frame index {i} outside 1..{n}")
    if literal:
        return i / n
    return 0.0 if n == 1 else (i - 1) / (n - 1)


def interpolate_pose(t_start: Pose, t_end: Pose, i: int, n: int,
                     literal: bool = False) -> Pose:
    """Pose of frame ``i`` (1-based) on the constant-velocity screw path.

    With ``literal=False`` frame 1 is exactly ``t_start`` and frame ``n``
    is ``t_end``.  ``literal=True`` uses the fraction ``i/n`` instead, which
    reaches ``t_end`` at ``i=n`` but never sits on ``t_start``.
    """
    s = interpolation_fraction(i, n, literal)
    if s == 0.0:
        return t_start
    rel = se3_log(t_start.inverse() @ t_end)
    return t_start @ se3_exp(s * rel)


def trajectory_poses(t_start: Pose, t_end: Pose, n: int, literal: bool = False) -> list[Pose]:
    if n == 1:
        return [t_start]
    rel = se3_log(t_start.inverse() @ t_end)
    out = []
    for i in range(1, n + 1):
        s = interpolation_fraction(i, n, literal)
        out.append(t_start if s == 0.0 else t_start @ se3_exp(s * rel))
    return out


@dataclass(frozen=True)
class Intrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if not (0 < self.cx < self.width and 0 < self.cy < self.height):
            raise ValueError("principal point must lie inside the image")

    @classmethod
    def from_fov(cls, width: int, height: int, fov_x_deg: float) -> "Intrinsics":
        f = 0.5 * width / np.tan(np.deg2rad(fov_x_deg) / 2.0)
        return cls(f, f, width / 2.0, height / 2.0, width, height)


@dataclass(frozen=True)
class Ray:
    origin: np.ndarray
    direction: np.ndarray
    pixel: tuple[int, int]


def camera_directions(intr: Intrinsics, rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
    """Unit camera-frame directions through pixel centres, shape (M, 3)."""
    rows = np.asarray(rows, dtype=np.float64)
    cols = np.asarray(cols, dtype=np.float64)
    d = np.stack([(cols + 0.5 - intr.cx) / intr.fx,
                  (rows + 0.5 - intr.cy) / intr.fy,
                  np.ones_like(rows)], axis=-1)
    return d / np.linalg.norm(d, axis=-1, keepdims=True)


def generate_rays(intr: Intrinsics, pose: Pose, rows: np.ndarray, cols: np.ndarray,
                  ) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised ray generation; returns ``(origins, directions)``."""
    rows = np.asarray(rows)
    cols = np.asarray(cols)
    if (rows.size and (rows.min() < 0 or rows.max() >= intr.height
                       or cols.min() < 0 or cols.max() >= intr.width)):
        raise PixelOutOfBounds("pixel outside the image")
    dirs = camera_directions(intr, rows, cols) @ pose.rotation.T
    dirs /= np.linalg.norm(dirs, axis=-1, keepdims=True)
    origins = np.broadcast_to(pose.translation, dirs.shape).copy()
    return origins, dirs


def generate_ray(intr: Intrinsics, pose: Pose, pixel: tuple[int, int]) -> Ray:
    row, col = pixel
    if not (0 <= row < intr.height and 0 <= col < intr.width):
        raise PixelOutOfBounds(f"pixel {pixel} outside {intr.height}x{intr.width}")
    o, d = generate_rays(intr, pose, np.array([row]), np.array([col]))
    return Ray(o[0], d[0], (int(row), int(col)))


def pixel_grid(intr: Intrinsics) -> tuple[np.ndarray, np.ndarray]:
    rows, cols = np.meshgrid(np.arange(intr.height), np.arange(intr.width), indexing="ij")
    return rows.ravel(), cols.ravel()


def look_at(eye: Sequence[float], target: Sequence[float], up: Sequence[float] = (0, -1, 0)) -> Pose:
    """Camera pose at ``eye`` looking at ``target`` (+z forward, +y down)."""
    eye = np.asarray(eye, dtype=np.float64)
    z = np.asarray(target, dtype=np.float64) - eye
    z /= np.linalg.norm(z)
    x = np.cross(-np.asarray(up, dtype=np.float64), z)
    x /= np.linalg.norm(x)
    y = np.cross(z, x)
    return Pose(np.stack([x, y, z], axis=1), eye)


def write_poses(path: str | Path, poses: Iterable[Pose]) -> None:
    """One pose per line: the 12 entries of the 3x4 matrix, row-major."""
    lines = []
    for p in poses:
        m = np.hstack([p.rotation, p.translation[:, None]])
        lines.append(" ".join(repr(float(v)) for v in m.ravel()))
    Path(path).write_text("\n".join(lines) + "\n")


def read_poses(path: str | Path) -> list[Pose]:
    poses = []
    for ln, line in enumerate(Path(path).read_text().splitlines(), 1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        vals = line.split()
        if len(vals) != 12:
            raise ValueError(f"{path}:{ln}: expected 12 values, got {len(vals)}")
        m = np.array([float(v) for v in vals]).reshape(3, 4)
        poses.append(Pose(m[:, :3], m[:, 3]))
    return poses
