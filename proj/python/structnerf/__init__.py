"""Python bindings for the structnerf C++ library."""

from ._core import (
    depth_rmse,
    desk_config,
    gradient_check,
    ground_truth,
    keypoint_weight,
    make_scene,
    plane_area_threshold,
    psnr,
    read_sparse_points,
    segment,
    ssim,
    train,
    version,
)

__version__ = "0.1.0"
