"""Radiance fields recovered from a single snapshot-compressed image."""
from .errors import *  # noqa: F401,F403
from ._backend import NAME as backend_name
from .geometry import Intrinsics, Pose, interpolate_pose, se3_exp, se3_log
from .radiance_field import RadianceGrid, SamplingConfig, render_rays, render_rays_backward
from .sci_model import MaskStack, Measurement, encode_measurement, generate_masks, sci_loss
from .gaptv import GapTvConfig, gap_tv_decode
from .metrics import psnr, ssim
from .trainer import TrainConfig, TrajectoryParams, train

__version__ = "0.1.0"
