"""Hot-loop kernels, compiled when available.

The Cython extension ``kjepa._kernels`` is used if it imports; otherwise the
numpy implementations in ``kjepa._fallback`` are used. Set
``KJEPA_PURE_PYTHON=1`` to force the fallback.
"""
import os

from . import _fallback

BACKEND = "python"
_impl = _fallback

if os.environ.get("KJEPA_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:
        _impl = _fallback

arma_filter = _impl.arma_filter
hessenberg = _impl.hessenberg
hqr = _impl.hqr
im2col = _impl.im2col
col2im = _impl.col2im

__all__ = ["BACKEND", "arma_filter", "hessenberg", "hqr", "im2col", "col2im"]
