"""Hot-loop kernels with a compiled core and a NumPy fallback.

The Cython extension is preferred when importable; set the environment
variable ``DIENGMF_PURE_PYTHON=1`` to force the fallback (used by the
benchmark and the backend-equivalence tests).
"""

import os

from . import _fallback

if os.environ.get("DIENGMF_PURE_PYTHON", "") == "1":
    _impl = _fallback
    HAVE_NATIVE = False
else:
    try:
        from . import _native as _impl  # type: ignore[attr-defined]

        HAVE_NATIVE = True
    except ImportError:
        _impl = _fallback
        HAVE_NATIVE = False

BACKEND = "native" if HAVE_NATIVE else "python"

ikeda_map = _impl.ikeda_map
ikeda_inverse_map = _impl.ikeda_inverse_map
lorenz_rk4 = _impl.lorenz_rk4
rqs_forward = _impl.rqs_forward
rqs_inverse = _impl.rqs_inverse
