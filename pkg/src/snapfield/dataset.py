"""Synthetic SCI datasets from toy scenes, and their on-disk layout.

A dataset directory holds::

    measurement.scms   compressed image
    masks.scmk         mask stack
    frames.sctf        ground-truth frames, f32 (N, H, W, 3)
    poses.txt          ground-truth pose of every frame
    trajectory.txt     ground-truth start and end pose
    reference.txt      reference pose the trainer perturbs around
    dataset.ini        camera, sampling and generation parameters
"""
from __future__ import annotations

import configparser
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional

import numpy as np

from .geometry import Intrinsics, Pose, read_poses, trajectory_poses, write_poses
from .io import read_tensor, write_tensor
from .radiance_field import RadianceGrid, SamplingConfig, render_frame
from .scenes import ToyScene, bake_scene
from .sci_model import (MaskStack, Measurement, encode_measurement, generate_masks, load_masks,
                        load_measurement, save_masks, save_measurement)

DEFAULT_REFERENCE = Pose.from_translation((0.0, 0.0, -4.0))
DEFAULT_SAMPLING = SamplingConfig(t_near=2.5, t_far=5.5, n_samples=64)


def default_intrinsics(size: int = 64, fov_deg: float = 30.0) -> Intrinsics:
    return Intrinsics.from_fov(size, size, fov_deg)


def linear_trajectory(reference: Pose = DEFAULT_REFERENCE, length: float = 0.2,
                      axis=(1.0, 0.0, 0.0)) -> tuple[Pose, Pose]:
    """Straight camera-frame translation of ``length`` centred on the reference."""
    a = np.asarray(axis, dtype=np.float64)
    a = a / np.linalg.norm(a)
    return (reference @ Pose.from_translation(-0.5 * length * a),
            reference @ Pose.from_translation(0.5 * length * a))


@dataclass
class Dataset:
    measurement: Measurement
    masks: MaskStack
    frames: np.ndarray            # (N, H, W, 3) float32
    poses: list
    trajectory: tuple
    intrinsics: Intrinsics
    sampling: SamplingConfig
    reference: Pose = DEFAULT_REFERENCE
    grid: Optional[RadianceGrid] = None
    meta: Optional[dict] = None


def make_dataset(scene: ToyScene, trajectory: tuple[Pose, Pose], intr: Intrinsics, n: int,
                 overlap_rate: float, noise_sigma: float = 0.0, seed: int = 0,
                 sampling: SamplingConfig = DEFAULT_SAMPLING, bake_resolution: int = 32,
                 reference: Pose = DEFAULT_REFERENCE, mask_mode: str = "exact") -> Dataset:
    """Bake ``scene``, render N ground-truth frames along ``trajectory`` and encode them."""
    grid = bake_scene(scene, bake_resolution)
    det = replace(sampling, stratified=False)
    poses = trajectory_poses(trajectory[0], trajectory[1], n)
    frames = np.stack([render_frame(grid, p, intr, det) for p in poses]).astype(np.float32)
    stack = generate_masks(intr.height, intr.width, n, overlap_rate, seed, mode=mask_mode)
    meas = encode_measurement(frames, stack, noise_sigma, seed=seed + 1)
    meta = dict(n=n, overlap_rate=overlap_rate, noise_sigma=noise_sigma, seed=seed,
                bake_resolution=bake_resolution)
    return Dataset(meas, stack, frames, poses, tuple(trajectory), intr, sampling, reference,
                   grid, meta)


def camera_config(intr: Intrinsics, sampling: SamplingConfig) -> configparser.ConfigParser:
    """``[camera]`` and ``[sampling]`` sections shared by datasets and checkpoints."""
    cp = configparser.ConfigParser()
    cp["camera"] = dict(fx=repr(float(intr.fx)), fy=repr(float(intr.fy)),
                        cx=repr(float(intr.cx)), cy=repr(float(intr.cy)),
                        width=str(intr.width), height=str(intr.height))
    s = sampling
    cp["sampling"] = dict(t_near=repr(float(s.t_near)), t_far=repr(float(s.t_far)),
                          n_samples=str(s.n_samples), stratified=str(s.stratified),
                          background=" ".join(repr(float(v)) for v in s.background),
                          min_transmittance=repr(float(s.min_transmittance)))
    return cp


def parse_camera(cp: configparser.ConfigParser) -> tuple[Intrinsics, SamplingConfig]:
    c = cp["camera"]
    intr = Intrinsics(c.getfloat("fx"), c.getfloat("fy"), c.getfloat("cx"), c.getfloat("cy"),
                      c.getint("width"), c.getint("height"))
    s = cp["sampling"]
    sampling = SamplingConfig(s.getfloat("t_near"), s.getfloat("t_far"), s.getint("n_samples"),
                              s.getboolean("stratified"),
                              tuple(float(v) for v in s.get("background").split()),
                              s.getfloat("min_transmittance", 0.0))
    return intr, sampling


def save_dataset(path, ds: Dataset) -> None:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    save_measurement(path / "measurement.scms", ds.measurement)
    save_masks(path / "masks.scmk", ds.masks)
    write_tensor(path / "frames.sctf", ds.frames)
    write_poses(path / "poses.txt", ds.poses)
    write_poses(path / "trajectory.txt", ds.trajectory)
    write_poses(path / "reference.txt", [ds.reference])
    cp = camera_config(ds.intrinsics, ds.sampling)
    cp["sci"] = {k: str(v) for k, v in (ds.meta or {}).items()}
    with open(path / "dataset.ini", "w") as f:
        cp.write(f)


def load_dataset(path) -> Dataset:
    path = Path(path)
    cp = configparser.ConfigParser()
    if not cp.read(path / "dataset.ini"):
        raise FileNotFoundError(path / "dataset.ini")
    intr, sampling = parse_camera(cp)
    frames_path = path / "frames.sctf"
    return Dataset(
        load_measurement(path / "measurement.scms"),
        load_masks(path / "masks.scmk"),
        read_tensor(frames_path) if frames_path.exists() else None,
        read_poses(path / "poses.txt") if (path / "poses.txt").exists() else [],
        tuple(read_poses(path / "trajectory.txt")) if (path / "trajectory.txt").exists() else (),
        intr, sampling,
        read_poses(path / "reference.txt")[0] if (path / "reference.txt").exists() else DEFAULT_REFERENCE,
        None, dict(cp["sci"]) if cp.has_section("sci") else {},
    )
