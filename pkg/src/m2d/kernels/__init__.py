"""Hot conv kernels with a compiled core and a pure-numpy fallback.

The Cython extension is picked at import time when present; setting
``M2D_NO_EXT=1`` forces the numpy backend.  Both backends implement the same
im2col/col2im contract and agree to float rounding, so everything above this
layer is backend-agnostic.
"""

import os

from . import numpy_backend

if os.environ.get("M2D_NO_EXT", "") == "1":
    _impl = numpy_backend
else:
    try:
        from . import _ckernels as _impl  # type: ignore[no-redef]
    except ImportError:
        _impl = numpy_backend

im2col = _impl.im2col
col2im = _impl.col2im


def backend_name() -> str:
    return _impl.name


def backends() -> dict:
    """All importable backends, keyed by name (used by tests and the bench)."""
    out = {"numpy": numpy_backend}
    try:
        from . import _ckernels

        out["compiled"] = _ckernels
    except ImportError:
        pass
    return out
