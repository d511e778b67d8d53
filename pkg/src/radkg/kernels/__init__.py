"""Kernel backend selection.

The compiled extension is preferred when present; otherwise the numpy
fallback is used. `RADKG_KERNELS=c` or `RADKG_KERNELS=py` forces a
backend, and forcing `c` when the extension is missing is an import
error rather than a silent downgrade.

Every consumer imports the kernel functions from this module, so the
two backends are interchangeable everywhere.
"""

from __future__ import annotations

import os

from radkg.kernels import _pykernels

_FORCED = os.environ.get("RADKG_KERNELS", "").strip().lower()

if _FORCED not in ("", "c", "py"):
    raise ImportError(f"RADKG_KERNELS must be 'c' or 'py', got {_FORCED!r}")

if _FORCED == "py":
    _impl = _pykernels
    BACKEND = "py"
else:
    try:
        from radkg.kernels import _ckernels as _impl

        BACKEND = "c"
    except ImportError:
        if _FORCED == "c":
            raise ImportError(
                "RADKG_KERNELS=c but the compiled extension is not built; "
                "reinstall the package or unset RADKG_KERNELS"
            )
        _impl = _pykernels
        BACKEND = "py"

softmax_fwd = _impl.softmax_fwd
softmax_bwd = _impl.softmax_bwd
layer_norm_fwd = _impl.layer_norm_fwd
layer_norm_bwd = _impl.layer_norm_bwd
gelu_fwd = _impl.gelu_fwd
gelu_bwd = _impl.gelu_bwd
cross_entropy_fwd = _impl.cross_entropy_fwd
cross_entropy_bwd = _impl.cross_entropy_bwd
adamw_update = _impl.adamw_update
lcs_length = _impl.lcs_length

__all__ = [
    "BACKEND",
    "softmax_fwd",
    "softmax_bwd",
    "layer_norm_fwd",
    "layer_norm_bwd",
    "gelu_fwd",
    "gelu_bwd",
    "cross_entropy_fwd",
    "cross_entropy_bwd",
    "adamw_update",
    "lcs_length",
]
