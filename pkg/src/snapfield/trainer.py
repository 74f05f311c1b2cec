"""Joint optimisation of a radiance grid and a linear camera trajectory.

The trajectory is parameterised by two twists relative to a reference pose:
``T_start = T_ref exp(xi_start)`` and ``T_end = T_ref exp(xi_end)``; frame
``i`` sits at ``interpolate_pose(T_start, T_end, i, N)``.  Each iteration
samples pixels, renders every frame whose mask is open at that pixel, and
back-propagates the masked-sum loss into the grid and both twists.

Pose gradients: the renderer returns gradients w.r.t. ray origins and
directions; these are folded into a gradient w.r.t. a right-perturbation
``T_i exp(delta)`` of each frame pose, then pulled back to the twists with
the 6x12 Jacobian of the interpolation map (central differences on the
pose algebra only; no re-rendering).
"""
from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .errors import ShapeMismatch
from .geometry import (Intrinsics, Pose, camera_directions, pixel_grid, se3_exp, se3_log,
                       trajectory_poses)
from .radiance_field import (GridGradient, RadianceGrid, SamplingConfig, render_frame,
                             render_rays, render_rays_backward)
from .sci_model import MaskStack, Measurement, sci_loss

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    iterations: int = 2000
    batch_rays: int = 5000
    # grid parameters need far larger steps than an MLP
    lr_scene_start: float = 0.1
    lr_scene_end: float = 0.01
    lr_pose_start: float = 3e-3
    lr_pose_end: float = 3e-5
    adam_beta1: float = 0.9
    adam_beta2: float = 0.99
    adam_eps: float = 1e-8
    # rotation twist steps relative to translation; small yaw mimics sideways motion
    pose_rot_lr_scale: float = 0.005
    pose_init_trans_sigma: float = 0.01
    seed: int = 0
    sampling: SamplingConfig = field(default_factory=SamplingConfig)
    optimize_poses: bool = True
    grid_resolution: int = 32
    sh_degree: int = 0
    init_density: float = 0.1
    tv_weight: float = 1e-4
    # divide measurement and masked sum by the open-mask count k of each pixel
    normalize_by_count: bool = True
    literal_interpolation: bool = False
    deterministic: bool = True

    def __post_init__(self):
        if self.batch_rays < 1:
            raise ValueError("batch_rays must be >= 1")
        for a, b in ((self.lr_scene_start, self.lr_scene_end), (self.lr_pose_start, self.lr_pose_end)):
            if not 0 < b <= a:
                raise ValueError("learning rates need 0 < end <= start")


@dataclass
class TrajectoryParams:
    twist_start: np.ndarray
    twist_end: np.ndarray
    reference: Pose = field(default_factory=Pose)

    def __post_init__(self):
        self.twist_start = np.asarray(self.twist_start, dtype=np.float64).reshape(6).copy()
        self.twist_end = np.asarray(self.twist_end, dtype=np.float64).reshape(6).copy()

    @classmethod
    def from_poses(cls, start: Pose, end: Pose, reference: Pose = Pose()) -> "TrajectoryParams":
        inv = reference.inverse()
        return cls(se3_log(inv @ start), se3_log(inv @ end), reference)

    @property
    def vector(self) -> np.ndarray:
        return np.concatenate([self.twist_start, self.twist_end])

    def with_vector(self, v: np.ndarray) -> "TrajectoryParams":
        return TrajectoryParams(v[:6], v[6:], self.reference)

    def endpoints(self) -> tuple[Pose, Pose]:
        return (self.reference @ se3_exp(self.twist_start),
                self.reference @ se3_exp(self.twist_end))

    def poses(self, n: int, literal: bool = False) -> list[Pose]:
        start, end = self.endpoints()
        return trajectory_poses(start.orthonormalized(), end.orthonormalized(), n, literal)


def init_trajectory(cfg: TrainConfig, reference: Pose = Pose()) -> TrajectoryParams:
    """Both endpoints at the reference with Gaussian translation jitter, no rotation."""
    rng = np.random.default_rng([cfg.seed, 7])
    start = np.zeros(6)
    end = np.zeros(6)
    if cfg.pose_init_trans_sigma > 0:
        start[:3] = rng.normal(0.0, cfg.pose_init_trans_sigma, 3)
        end[:3] = rng.normal(0.0, cfg.pose_init_trans_sigma, 3)
    return TrajectoryParams(start, end, reference)


def lr_schedule(start: float, end: float, it: int, total: int) -> float:
    """Exponential interpolation from ``start`` (it=0) to ``end`` (it=total)."""
    if total <= 0:
        return start
    return start * (end / start) ** (it / total)


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0

    @classmethod
    def zeros_like(cls, p: np.ndarray) -> "AdamState":
        return cls(np.zeros_like(p), np.zeros_like(p), 0)


def adam_step(param: np.ndarray, grad: np.ndarray, state: AdamState, lr: float,
              betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8) -> np.ndarray:
    """Bias-corrected Adam update of ``param`` in place; returns ``param``.

    ``lr`` may be a scalar or an array broadcastable to ``param``.
    """
    if param.shape != grad.shape or state.m.shape != param.shape:
        raise ShapeMismatch(f"param {param.shape}, grad {grad.shape}, state {state.m.shape}")
    b1, b2 = betas
    state.step += 1
    state.m *= b1
    state.m += (1 - b1) * grad
    state.v *= b2
    state.v += (1 - b2) * grad * grad
    m_hat = state.m / (1 - b1 ** state.step)
    v_hat = state.v / (1 - b2 ** state.step)
    param -= lr * m_hat / (np.sqrt(v_hat) + eps)
    return param


def density_tv(raw: np.ndarray, weight: float) -> tuple[float, np.ndarray]:
    """``weight * sum_axis mean(diff^2)`` on raw density, with its gradient."""
    grad = np.zeros_like(raw)
    total = 0.0
    for ax in range(3):
        d = np.diff(raw, axis=ax)
        n = d.size
        total += float(np.sum(d * d)) / n
        g = 2.0 * d / n
        lo = [slice(None)] * 3
        hi = [slice(None)] * 3
        lo[ax] = slice(None, -1)
        hi[ax] = slice(1, None)
        grad[tuple(lo)] -= g
        grad[tuple(hi)] += g
    return weight * total, weight * grad


class RayBatch:
    """Sampled pixels plus the (pixel, frame) pairs with an open mask."""

    def __init__(self, pixel_ids, masks_flat, targets_flat, n_samples, rng=None):
        self.pixel_ids = pixel_ids
        self.ray_masks = masks_flat[:, pixel_ids].T.astype(np.float64)     # (B, N)
        self.targets = targets_flat[pixel_ids]                              # (B, C)
        self.pair_ray, self.pair_frame = np.nonzero(self.ray_masks)
        self.offsets = None if rng is None else rng.random((len(self.pair_ray), n_samples))


def _frame_jacobians(traj: TrajectoryParams, n: int, literal: bool, eps: float = 1e-6):
    """J[i] (6x12): d log(T_i^-1 T_i(v + dv)) / dv, central differences."""
    v = traj.vector
    poses = traj.poses(n, literal)
    inv = [p.inverse() for p in poses]
    jac = np.zeros((n, 6, 12))
    for k in range(12):
        e = np.zeros(12)
        e[k] = eps
        plus = traj.with_vector(v + e).poses(n, literal)
        minus = traj.with_vector(v - e).poses(n, literal)
        for i in range(n):
            jac[i, :, k] = (se3_log(inv[i] @ plus[i]) - se3_log(inv[i] @ minus[i])) / (2 * eps)
    return jac


def batch_loss_and_grads(grid: RadianceGrid, traj: TrajectoryParams, batch: RayBatch,
                         cam_dirs: np.ndarray, n_frames: int, sampling: SamplingConfig,
                         want_pose: bool = True, literal: bool = False, scale: float = 1.0,
                         normalize: bool = False,
                         ) -> tuple[float, GridGradient, Optional[np.ndarray]]:
    """Masked-sum loss on one batch and its gradients.

    With ``normalize`` each pixel's residual is divided by its open-mask
    count, which rescales that pixel's loss by ``1 / k**2``.

    Returns ``(scale * loss, grid gradient, twist gradient (12,) or None)``.
    """
    poses = traj.poses(n_frames, literal)
    rot = np.stack([p.rotation for p in poses])
    trans = np.stack([p.translation for p in poses])
    dc = cam_dirs[batch.pixel_ids[batch.pair_ray]]
    r_pair = rot[batch.pair_frame]
    dirs = np.einsum("pij,pj->pi", r_pair, dc)
    origins = trans[batch.pair_frame]
    colors, _ = render_rays(grid, origins, dirs, sampling, batch.offsets)
    n_b = len(batch.pixel_ids)
    channels = batch.targets.shape[1]
    rendered = np.zeros((n_b, n_frames, 3))
    rendered[batch.pair_ray, batch.pair_frame] = colors
    if channels == 1:
        rendered = rendered.mean(axis=2, keepdims=True)
    masks, targets = batch.ray_masks, batch.targets
    if normalize:
        k = np.maximum(masks.sum(axis=1, keepdims=True), 1.0)
        masks, targets = masks / k, targets / k
    loss, grad = sci_loss(rendered, masks, targets)
    up = grad[batch.pair_ray, batch.pair_frame] * scale
    if channels == 1:
        up = np.repeat(up / 3.0, 3, axis=1)
    out = render_rays_backward(grid, origins, dirs, sampling, up, batch.offsets,
                               ray_grads=want_pose)
    if not want_pose:
        return loss * scale, out, None
    gg, g_o, g_d = out
    # gradient w.r.t. right-perturbation (rho, phi) of each frame pose
    local_o = np.einsum("pji,pj->pi", r_pair, g_o)
    local_d = np.einsum("pji,pj->pi", r_pair, g_d)
    g_delta = np.zeros((n_frames, 6))
    np.add.at(g_delta[:, :3], batch.pair_frame, local_o)
    np.add.at(g_delta[:, 3:], batch.pair_frame, np.cross(dc, local_d))
    jac = _frame_jacobians(traj, n_frames, literal)
    g_twist = np.einsum("nij,ni->j", jac, g_delta)
    return loss * scale, gg, g_twist


@dataclass
class TrainResult:
    grid: RadianceGrid
    trajectory: TrajectoryParams
    history: list           # rows of (iteration, loss, lr_scene, lr_pose)
    seconds: float = 0.0
    optimizer: dict = field(default_factory=dict)


def initial_grid(cfg: TrainConfig, bbox_min=(-1, -1, -1), bbox_max=(1, 1, 1)) -> RadianceGrid:
    # f32-representable from the start so zero iterations return it unchanged
    return RadianceGrid.create((cfg.grid_resolution,) * 3, bbox_min, bbox_max, cfg.sh_degree,
                               init_density=cfg.init_density, init_color=0.5).round_to_float32()


def train(meas: Measurement, stack: MaskStack, intr: Intrinsics, cfg: TrainConfig,
          reference: Pose = Pose(), trajectory: Optional[TrajectoryParams] = None,
          grid: Optional[RadianceGrid] = None, bbox=((-1, -1, -1), (1, 1, 1)),
          callback: Optional[Callable[[int, float], None]] = None, log_every: int = 100,
          ) -> TrainResult:
    """Fit grid (and, if ``cfg.optimize_poses``, the trajectory) to one measurement.

    ``trajectory`` fixes the starting trajectory (e.g. ground truth when
    poses are known); otherwise it comes from :func:`init_trajectory`.
    """
    if meas.shape != stack.shape or meas.shape != (intr.height, intr.width):
        raise ShapeMismatch(f"measurement {meas.shape}, masks {stack.shape}, "
                            f"image {(intr.height, intr.width)}")
    t0 = time.perf_counter()
    n = stack.n
    traj = trajectory if trajectory is not None else init_trajectory(cfg, reference)
    traj = TrajectoryParams(traj.twist_start, traj.twist_end, traj.reference)
    grid = grid.copy() if grid is not None else initial_grid(cfg, *bbox)
    rows, cols = pixel_grid(intr)
    cam_dirs = camera_directions(intr, rows, cols)
    masks_flat = stack.masks.reshape(n, -1)
    targets_flat = meas.pixels.reshape(-1, meas.pixels.shape[2]).astype(np.float64)
    rng = np.random.default_rng(cfg.seed)
    st_dens = AdamState.zeros_like(grid.density_raw)
    st_sh = AdamState.zeros_like(grid.sh_coeffs)
    pose_vec = traj.vector
    st_pose = AdamState.zeros_like(pose_vec)
    betas = (cfg.adam_beta1, cfg.adam_beta2)
    history = []
    scale = 1.0 / cfg.batch_rays
    block = np.tile(np.r_[np.ones(3), np.full(3, cfg.pose_rot_lr_scale)], 2)
    for it in range(cfg.iterations):
        lr_s = lr_schedule(cfg.lr_scene_start, cfg.lr_scene_end, it, cfg.iterations)
        lr_p = lr_schedule(cfg.lr_pose_start, cfg.lr_pose_end, it, cfg.iterations)
        ids = rng.integers(0, masks_flat.shape[1], cfg.batch_rays)
        batch = RayBatch(ids, masks_flat, targets_flat, cfg.sampling.n_samples,
                         rng if cfg.sampling.stratified else None)
        loss, gg, g_pose = batch_loss_and_grads(grid, traj, batch, cam_dirs, n, cfg.sampling,
                                                cfg.optimize_poses, cfg.literal_interpolation,
                                                scale, cfg.normalize_by_count)
        if cfg.tv_weight > 0:
            _, g_tv = density_tv(grid.density_raw, cfg.tv_weight)
            gg.density_raw += g_tv
        adam_step(grid.density_raw, gg.density_raw, st_dens, lr_s, betas, cfg.adam_eps)
        adam_step(grid.sh_coeffs, gg.sh_coeffs, st_sh, lr_s, betas, cfg.adam_eps)
        if cfg.optimize_poses:
            adam_step(pose_vec, g_pose, st_pose, lr_p * block, betas, cfg.adam_eps)
            traj = traj.with_vector(pose_vec)
        history.append((it, loss, lr_s, lr_p))
        if callback is not None:
            callback(it, loss)
        if log_every and it % log_every == 0:
            log.info("iter %d loss %.6g lr_scene %.3g lr_pose %.3g", it, loss, lr_s, lr_p)
    states = dict(density=st_dens, sh=st_sh, pose=st_pose)
    return TrainResult(grid.round_to_float32(), traj, history, time.perf_counter() - t0, states)


def render_trajectory(grid: RadianceGrid, traj: TrajectoryParams, n: int, intr: Intrinsics,
                      sampling: SamplingConfig, literal: bool = False) -> np.ndarray:
    """Frames (N, H, W, 3) at the trajectory's N poses, midpoint sampling."""
    det = replace(sampling, stratified=False)
    return np.stack([render_frame(grid, p, intr, det) for p in traj.poses(n, literal)])


def align_to_start(rec: TrajectoryParams, gt_start: Pose) -> tuple[Pose, Pose]:
    """Recovered endpoints after moving the recovered start onto ``gt_start``."""
    s, e = rec.endpoints()
    fix = gt_start @ s.inverse()
    return fix @ s, fix @ e


def write_history(path, history) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["iter", "loss", "lr_scene", "lr_pose"])
        for it, loss, ls, lp in history:
            w.writerow([it, repr(float(loss)), repr(float(ls)), repr(float(lp))])


def read_history(path) -> list:
    with open(path, newline="") as f:
        rows = list(csv.reader(f))[1:]
    return [(int(r[0]), float(r[1]), float(r[2]), float(r[3])) for r in rows]


def save_optimizer_state(path, states: dict) -> None:
    """``{name: AdamState}`` as an ``.npz`` archive."""
    arrays = {}
    for name, st in states.items():
        arrays[f"{name}.m"] = st.m
        arrays[f"{name}.v"] = st.v
        arrays[f"{name}.step"] = np.array(st.step)
    with open(path, "wb") as f:
        np.savez(f, **arrays)


def load_optimizer_state(path) -> dict:
    with np.load(path) as z:
        names = sorted({k.rsplit(".", 1)[0] for k in z.files})
        return {n: AdamState(z[f"{n}.m"], z[f"{n}.v"], int(z[f"{n}.step"])) for n in names}
