"""Modular multilingual NMT with per-language encoders and decoders."""

__version__ = "0.1.0"

from ._kernels import BACKEND as KERNEL_BACKEND
