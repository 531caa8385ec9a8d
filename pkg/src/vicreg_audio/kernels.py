"""Kernel backend selection.

The compiled extension is preferred; the numpy fallback is used when it is
missing or when ``VICREG_AUDIO_PURE_PYTHON`` is set to a non-empty value
other than ``0``.
"""

import os

from . import _kernels_py

_force_python = os.environ.get("VICREG_AUDIO_PURE_PYTHON", "") not in ("", "0")

if _force_python:
    _impl = _kernels_py
    BACKEND = "python"
else:
    try:
        from . import _kernels as _impl  # type: ignore[attr-defined]

        BACKEND = "cython"
    except ImportError:
        _impl = _kernels_py
        BACKEND = "python"

im2col = _impl.im2col
col2im = _impl.col2im
phase_vocoder = _impl.phase_vocoder
sinc_resample = _impl.sinc_resample
conv_output_size = _kernels_py.conv_output_size

__all__ = [
    "BACKEND",
    "im2col",
    "col2im",
    "phase_vocoder",
    "sinc_resample",
    "conv_output_size",
]
