"""Backend selection for the hot loops.

The compiled extension is used when importable; setting ``FRI_LAB_PURE=1``
forces the pure-Python fallback. Both produce identical results.
"""
import os

if os.environ.get("FRI_LAB_PURE", "") not in ("", "0"):
    from ._pykernels import *  # noqa: F401,F403
    BACKEND = "python"
else:
    try:
        from ._ckernels import *  # noqa: F401,F403
        BACKEND = "cython"
    except ImportError:  # extension not built
        from ._pykernels import *  # noqa: F401,F403
        BACKEND = "python"

from ._pykernels import GOLDEN, OCC, child_key, draw, mix64, site_key, u01  # noqa: E402,F401
