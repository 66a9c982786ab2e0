"""Kernel backend selection.

The compiled ``_kernels`` extension is used when importable; otherwise the
numpy/pure-Python ``_pykernels`` module is. Set ``ILTBER_PURE_PYTHON=1`` to
force the fallback.
"""

from __future__ import annotations

import os

from . import _pykernels

if os.environ.get("ILTBER_PURE_PYTHON", "") not in ("", "0"):
    _impl = _pykernels
    BACKEND = "python"
else:
    try:
        from . import _kernels as _impl  # type: ignore[no-redef]
        BACKEND = "cython"
    except ImportError:
        _impl = _pykernels
        BACKEND = "python"

mix64 = _impl.mix64
mix64_block = _impl.mix64_block
uniforms = _impl.uniforms
normals = _impl.normals
ppnd = _impl.ppnd
ppnd_array = _impl.ppnd_array
ln_erfc = _impl.ln_erfc
tail_counts = _impl.tail_counts
normal_tail_quad = _impl.normal_tail_quad

GAMMA = _pykernels.GAMMA
MASK64 = _pykernels.MASK64

__all__ = [
    "BACKEND", "GAMMA", "MASK64", "mix64", "mix64_block", "uniforms", "normals",
    "ppnd", "ppnd_array", "ln_erfc", "tail_counts", "normal_tail_quad",
]
