"""Tensor math for the networks: layer forward/backward passes, seeded RNG, gradient checks."""

from hybridx.numerics.gradcheck import LAYER_TYPES, gradcheck, relative_error
from hybridx.numerics.layers import (
    avgpool2x2_backward,
    avgpool2x2_forward,
    concat_channels_backward,
    concat_channels_forward,
    conv2d_backward,
    conv2d_forward,
    dense_backward,
    dense_forward,
    global_avg_pool_backward,
    global_avg_pool_forward,
    relu_backward,
    relu_forward,
    sgd_step,
    softmax,
    softmax_crossentropy,
)
from hybridx.numerics.rng import derive_seed, make_rng

__all__ = [
    "LAYER_TYPES",
    "avgpool2x2_backward",
    "avgpool2x2_forward",
    "concat_channels_backward",
    "concat_channels_forward",
    "conv2d_backward",
    "conv2d_forward",
    "dense_backward",
    "dense_forward",
    "derive_seed",
    "global_avg_pool_backward",
    "global_avg_pool_forward",
    "gradcheck",
    "make_rng",
    "relative_error",
    "relu_backward",
    "relu_forward",
    "sgd_step",
    "softmax",
    "softmax_crossentropy",
]
