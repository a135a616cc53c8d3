"""Minimal reverse-mode autodiff with the layers the surrogate needs."""
from .layers import (KINDS, LayerSpec, ParamStore, ShapeError, avgpool1d, batchnorm1d,
                     concat, conv1d, dense, flatten, forward, init_params, leakyrelu,
                     param_count, upsample1d)
from .optim import AdamState, LrSchedule, adam_step, lr_at
from .tensor import Tensor

__all__ = [
    "KINDS", "LayerSpec", "ParamStore", "ShapeError", "Tensor", "AdamState", "LrSchedule",
    "adam_step", "lr_at", "forward", "init_params", "param_count",
    "dense", "conv1d", "avgpool1d", "upsample1d", "batchnorm1d", "leakyrelu", "concat",
    "flatten",
]
