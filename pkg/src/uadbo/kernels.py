"""Kernel backend selection.

The compiled extension is used when importable; set ``UA_DBO_PURE=1`` to force
the numpy fallback. ``BACKEND`` names the active one.

With the extension present, convolutions above ``CONV_SMALL_WORK``
multiply-adds still go to the numpy version: its einsum reaches BLAS and beats
the compiled loops there (see benchmarks/bench_kernels.py). Crowding distance
is a few vectorized numpy calls and always uses the fallback.
"""
import os

from . import _pykernels

if os.environ.get("UA_DBO_PURE", "") not in ("", "0"):
    _impl = _pykernels
    BACKEND = "python"
else:
    try:
        from . import _ckernels as _impl
        BACKEND = "cython"
    except ImportError:
        _impl = _pykernels
        BACKEND = "python"

CONV_SMALL_WORK = 250_000


def _small(xp, w, lout):
    return xp.shape[0] * w.shape[0] * w.shape[1] * w.shape[2] * lout <= CONV_SMALL_WORK


def conv1d_forward(xp, w, b, stride):
    if _impl is not _pykernels and _small(xp, w, (xp.shape[2] - w.shape[2]) // stride + 1):
        return _impl.conv1d_forward(xp, w, b, stride)
    return _pykernels.conv1d_forward(xp, w, b, stride)


def conv1d_backward(xp, w, gout, stride):
    if _impl is not _pykernels and _small(xp, w, gout.shape[2]):
        return _impl.conv1d_backward(xp, w, gout, stride)
    return _pykernels.conv1d_backward(xp, w, gout, stride)


nondominated_ranks = _impl.nondominated_ranks
crowding_distance = _pykernels.crowding_distance

__all__ = ["BACKEND", "conv1d_forward", "conv1d_backward",
           "nondominated_ranks", "crowding_distance"]
