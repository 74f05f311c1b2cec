"""``snapfield`` command line.

Every subcommand accepts ``--config FILE`` (INI, one section per module) and
any number of ``--set section.key=value`` overrides.  Exit status is 0 on
success, 1 on usage errors and 2 on data errors.
"""
from __future__ import annotations

import argparse
import configparser
import csv
import dataclasses
import logging
import sys
from pathlib import Path

import numpy as np

from . import dataset as dsmod
from .errors import SnapfieldError
from .gaptv import GapTvConfig, gap_tv_decode
from .geometry import read_poses, write_poses
from .io import load_config, read_tensor, save_png, write_tensor
from .metrics import frame_metrics
from .radiance_field import SamplingConfig, load_grid, render_frame, save_grid
from .scenes import preset_scene
from .sci_model import encode_measurement, load_masks, save_measurement
from .trainer import (TrainConfig, TrajectoryParams, render_trajectory, save_optimizer_state,
                      train, write_history)



class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _coerce(value: str, like):
    if isinstance(like, bool):
        v = value.strip().lower()
        if v in ("1", "true", "yes", "on"):
            return True
        if v in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {value!r}")
    if isinstance(like, int):
        return int(value)
    if isinstance(like, float):
        return float(value)
    if isinstance(like, tuple):
        parts = value.replace(",", " ").split()
        if len(parts) == 1 and not parts[0][0].isdigit():
            return parts[0]          # named value such as background = white
        return tuple(float(v) for v in parts)
    return value


def _section(cp: configparser.ConfigParser, name: str, cls, **base):
    """Build dataclass ``cls`` from ``base`` values updated by section ``name``."""
    inst = cls(**base)
    if not cp.has_section(name):
        return inst
    known = {f.name for f in dataclasses.fields(cls)}
    updates = {}
    for key, raw in cp.items(name):
        if key not in known:
            raise UsageError(f"unknown key {name}.{key}")
        try:
            updates[key] = _coerce(raw, getattr(inst, key))
        except ValueError as exc:
            raise UsageError(f"bad value for {name}.{key}: {exc}") from None
    try:
        return dataclasses.replace(inst, **updates)
    except ValueError as exc:
        raise UsageError(f"[{name}] {exc}") from None


def _get(cp, section, key, default, kind=str):
    if not cp.has_option(section, key):
        return default
    raw = cp.get(section, key)
    try:
        return _coerce(raw, kind(default)) if kind is not str else raw
    except ValueError as exc:
        raise UsageError(f"bad value for {section}.{key}: {exc}") from None


def cmd_make_dataset(args, cp):
    scene_name = _get(cp, "dataset", "scene", "simple")
    try:
        scene = preset_scene(scene_name)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    size = _get(cp, "dataset", "size", 64, int)
    intr = dsmod.default_intrinsics(size, _get(cp, "dataset", "fov_deg", 30.0, float))
    length = _get(cp, "dataset", "trajectory_length", 0.2, float)
    traj = dsmod.linear_trajectory(dsmod.DEFAULT_REFERENCE, length)
    sampling = _section(cp, "sampling", SamplingConfig, **dataclasses.asdict(dsmod.DEFAULT_SAMPLING))
    ds = dsmod.make_dataset(
        scene, traj, intr,
        n=_get(cp, "dataset", "n", 8, int),
        overlap_rate=_get(cp, "dataset", "overlap_rate", 0.25, float),
        noise_sigma=_get(cp, "dataset", "noise_sigma", 0.0, float),
        seed=_get(cp, "dataset", "seed", 0, int),
        sampling=sampling,
        bake_resolution=_get(cp, "dataset", "bake_resolution", 32, int),
        mask_mode=_get(cp, "dataset", "mask_mode", "exact"))
    dsmod.save_dataset(args.out, ds)
    if args.png:
        save_png(Path(args.out) / "measurement.png", ds.measurement.pixels / max(ds.masks.counts().max(), 1))
        for i, f in enumerate(ds.frames):
            save_png(Path(args.out) / f"frame_{i:03d}.png", f)
    print(f"wrote dataset with {ds.masks.n} frames to {args.out}")


def cmd_encode(args, cp):
    frames = read_tensor(args.frames)
    stack = load_masks(args.masks)
    if frames.ndim == 3:
        frames = frames[..., None]
    meas = encode_measurement(frames, stack, _get(cp, "encode", "noise_sigma", 0.0, float),
                              seed=_get(cp, "encode", "seed", 0, int))
    save_measurement(args.out, meas)
    print(f"wrote measurement {meas.shape} to {args.out}")


def _train_config(cp, sampling):
    base = {f.name: getattr(TrainConfig(), f.name) for f in dataclasses.fields(TrainConfig)}
    base["sampling"] = _section(cp, "sampling", SamplingConfig, **dataclasses.asdict(sampling))
    return _section(cp, "train", TrainConfig, **base)


def cmd_train(args, cp):
    ds = dsmod.load_dataset(args.data)
    cfg = _train_config(cp, ds.sampling)
    traj = None
    if args.known_poses:
        if not ds.trajectory:
            raise SnapfieldError("dataset has no ground-truth trajectory")
        traj = TrajectoryParams.from_poses(*ds.trajectory, ds.reference)
    res = train(ds.measurement, ds.masks, ds.intrinsics, cfg, reference=ds.reference,
                trajectory=traj)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_grid(out / "grid.scgr", res.grid)
    write_poses(out / "trajectory.txt", res.trajectory.endpoints())
    write_poses(out / "poses.txt", res.trajectory.poses(ds.masks.n, cfg.literal_interpolation))
    save_optimizer_state(out / "optimizer.npz", res.optimizer)
    write_history(out / "loss.csv", res.history)
    with open(out / "camera.ini", "w") as f:
        dsmod.camera_config(ds.intrinsics, cfg.sampling).write(f)
    frames = render_trajectory(res.grid, res.trajectory, ds.masks.n, ds.intrinsics, cfg.sampling,
                               cfg.literal_interpolation)
    write_tensor(out / "frames.sctf", frames)
    print(f"trained {cfg.iterations} iterations in {res.seconds:.1f}s; checkpoint in {out}")


def cmd_decode_gaptv(args, cp):
    ds = dsmod.load_dataset(args.data)
    cfg = _section(cp, "gaptv", GapTvConfig)
    frames = gap_tv_decode(ds.measurement, ds.masks, cfg)
    write_tensor(args.out, frames)
    print(f"wrote {len(frames)} GAP-TV frames to {args.out}")


def cmd_render(args, cp):
    ck = Path(args.checkpoint)
    grid = load_grid(ck / "grid.scgr")
    cam = configparser.ConfigParser()
    if not cam.read(ck / "camera.ini"):
        raise FileNotFoundError(ck / "camera.ini")
    intr, sampling = dsmod.parse_camera(cam)
    sampling = _section(cp, "sampling", SamplingConfig, **dataclasses.asdict(sampling))
    poses = read_poses(args.poses) if args.poses else read_poses(ck / "poses.txt")
    if not poses:
        raise SnapfieldError("no poses to render")
    det = dataclasses.replace(sampling, stratified=False)
    frames = np.stack([render_frame(grid, p, intr, det) for p in poses])
    write_tensor(args.out, frames)
    if args.png_dir:
        Path(args.png_dir).mkdir(parents=True, exist_ok=True)
        for i, f in enumerate(frames):
            save_png(Path(args.png_dir) / f"view_{i:03d}.png", f)
    print(f"rendered {len(frames)} views to {args.out}")


def _as_stack(a):
    # a single (H, W) or (H, W, C) image becomes a one-frame stack
    if a.ndim == 2 or (a.ndim == 3 and a.shape[-1] in (1, 3)):
        return a[None]
    return a


def cmd_eval(args, cp):
    rows = frame_metrics(_as_stack(read_tensor(args.ref)), _as_stack(read_tensor(args.cand)))
    stream = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        w = csv.writer(stream)
        w.writerow(["frame_index", "psnr_db", "ssim"])
        for i, p, s in rows:
            w.writerow([i, repr(p), repr(s)])
    finally:
        if args.out:
            stream.close()


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="snapfield", description="Radiance fields from a single snapshot-compressed image.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)

    def add(name, func, help_):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--config", help="INI config file")
        sp.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                        help="override a config value (repeatable)")
        sp.set_defaults(func=func)
        return sp

    sp = add("make-dataset", cmd_make_dataset, "render a toy scene and encode it")
    sp.add_argument("--out", required=True, help="output dataset directory")
    sp.add_argument("--png", action="store_true", help="also write 8-bit previews")
    sp = add("encode", cmd_encode, "encode frames with a mask stack")
    sp.add_argument("--frames", required=True, help="frames tensor (N,H,W[,C])")
    sp.add_argument("--masks", required=True, help="mask file")
    sp.add_argument("--out", required=True, help="measurement file to write")
    sp = add("train", cmd_train, "fit a radiance grid (and poses) to a dataset")
    sp.add_argument("--data", required=True, help="dataset directory")
    sp.add_argument("--out", required=True, help="checkpoint directory")
    sp.add_argument("--known-poses", action="store_true",
                    help="start from the ground-truth trajectory (combine with train.optimize_poses=false)")
    sp = add("decode-gaptv", cmd_decode_gaptv, "GAP-TV baseline reconstruction")
    sp.add_argument("--data", required=True, help="dataset directory")
    sp.add_argument("--out", required=True, help="frames tensor to write")
    sp = add("render", cmd_render, "render views from a checkpoint")
    sp.add_argument("--checkpoint", required=True, help="checkpoint directory")
    sp.add_argument("--poses", help="pose file (default: the checkpoint's frame poses)")
    sp.add_argument("--out", required=True, help="frames tensor to write")
    sp.add_argument("--png-dir", help="also write 8-bit previews here")
    sp = add("eval", cmd_eval, "per-frame PSNR and SSIM as CSV")
    sp.add_argument("--ref", required=True, help="reference frames tensor")
    sp.add_argument("--cand", required=True, help="candidate frames tensor")
    sp.add_argument("--out", help="CSV path (default: stdout)")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.command is None:
        parser.print_usage(sys.stderr)
        print("snapfield: error: a command is required", file=sys.stderr)
        return 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(name)s: %(message)s")
    try:
        cp = load_config(args.config, args.set)
    except (ValueError, OSError, configparser.Error) as exc:
        print(f"snapfield: error: {exc}", file=sys.stderr)
        return 1
    try:
        args.func(args, cp)
    except UsageError as exc:
        print(f"snapfield: error: {exc}", file=sys.stderr)
        return 1
    except (SnapfieldError, OSError, ValueError) as exc:
        print(f"snapfield: data error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
