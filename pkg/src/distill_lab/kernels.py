"""Backend selection for the mixture kernels.

The compiled core is used when it imports; otherwise the numpy fallback.
Set ``DISTILL_LAB_PURE=1`` to force the fallback.
"""

import os

from . import _kernels_py

BACKEND = "python"
mixture_eps = _kernels_py.mixture_eps
mixture_logpdf = _kernels_py.mixture_logpdf

if os.environ.get("DISTILL_LAB_PURE", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as _compiled
    except ImportError:  # extension not built
        _compiled = None
    if _compiled is not None:
        BACKEND = "cython"
        mixture_eps = _compiled.mixture_eps
        mixture_logpdf = _compiled.mixture_logpdf

__all__ = ["BACKEND", "mixture_eps", "mixture_logpdf"]
