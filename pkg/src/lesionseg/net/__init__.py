from .gradcheck import grad_check
from .layers import (
    batchnorm2d_backward,
    batchnorm2d_forward,
    conv2d_backward,
    conv2d_forward,
    maxpool2_backward,
    maxpool2_forward,
    relu_backward,
    relu_forward,
    sigmoid,
    sigmoid_backward,
    sigmoid_forward,
    upsample_bilinear_backward,
    upsample_bilinear_forward,
    upsample_nearest2_backward,
    upsample_nearest2_forward,
)
from .unet import (
    UNetConfig,
    architecture,
    infer_config,
    is_learnable,
    predict_proba,
    unet_backward,
    unet_forward,
    unet_init,
)

__all__ = [
    "UNetConfig",
    "architecture",
    "batchnorm2d_backward",
    "batchnorm2d_forward",
    "conv2d_backward",
    "conv2d_forward",
    "grad_check",
    "infer_config",
    "is_learnable",
    "maxpool2_backward",
    "maxpool2_forward",
    "predict_proba",
    "relu_backward",
    "relu_forward",
    "sigmoid",
    "sigmoid_backward",
    "sigmoid_forward",
    "unet_backward",
    "unet_forward",
    "unet_init",
    "upsample_bilinear_backward",
    "upsample_bilinear_forward",
    "upsample_nearest2_backward",
    "upsample_nearest2_forward",
]
