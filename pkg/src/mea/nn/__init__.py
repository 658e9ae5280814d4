"""Small numpy layer engine with hand-written backward passes."""
from .checkpoint import Checkpoint
from .functional import (batchnorm_backward, batchnorm_forward, concat_channels, conv2d_backward,
                         conv2d_forward, dense_backward, dense_forward, mse_loss, relu_backward,
                         relu_forward, split_channels, swish, swish_backward, swish_forward,
                         upsample_backward, upsample_forward)
from .layers import (BatchNorm2d, Conv2d, Dense, Layer, ReLU, Sequential, Swish, UpsampleTo,
                     conv_bn_relu)
from .params import Param, ParamStore, adam_step, count_params

__all__ = [
    "BatchNorm2d", "Checkpoint", "Conv2d", "Dense", "Layer", "Param", "ParamStore", "ReLU",
    "Sequential", "Swish", "UpsampleTo", "adam_step", "batchnorm_backward", "batchnorm_forward",
    "concat_channels", "conv2d_backward", "conv2d_forward", "conv_bn_relu", "count_params",
    "dense_backward", "dense_forward", "mse_loss", "relu_backward", "relu_forward",
    "split_channels", "swish", "swish_backward", "swish_forward", "upsample_backward",
    "upsample_forward",
]
