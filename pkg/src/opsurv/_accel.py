"""Backend selection for the compiled kernels.

Numba is used when it is importable and ``OPSURV_DISABLE_NUMBA`` is unset
(or set to ``0``/``false``). The flag is read once, at import time.
"""

import os

_FLAG = os.environ.get("OPSURV_DISABLE_NUMBA", "").strip().lower()
_DISABLED = _FLAG not in ("", "0", "false", "no")

try:
    if _DISABLED:
        raise ImportError("numba disabled by OPSURV_DISABLE_NUMBA")
    from numba import njit

    HAVE_NUMBA = True
except ImportError:
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        if len(args) == 1 and callable(args[0]) and not kwargs:
            return args[0]
        return lambda fn: fn


USE_NUMBA = HAVE_NUMBA
BACKEND = "numba" if USE_NUMBA else "numpy"

# fastmath stays off: results must be reproducible bit for bit.
JIT_OPTIONS = {"cache": True, "nogil": True}
