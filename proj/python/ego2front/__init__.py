"""Python bindings for the ego2front core library."""

import torch  # noqa: F401  loads libtorch before the extension

from ._core import (  # noqa: F401
    NoiseSchedule,
    RangeError,
    ShapeError,
    UserError,
    assign_split,
    augment_ego,
    augment_frontal,
    borda_aggregate,
    clothing_accuracy,
    config_digest,
    forward_noise,
    pair_samples,
    perceptual_distance,
    predict_x0_from_eps,
    psnr,
    sampling_timesteps,
    split_regions,
    ssim,
)
