"""Backend selection for the compiled kernels.

The hot kernels in :mod:`scene_cluster.kernels` exist twice: a numba
``@njit`` build and a pure-numpy build.  Which one runs is decided once at
import time:

* ``SCENE_CLUSTER_NUMBA=0`` forces the numpy path,
* ``SCENE_CLUSTER_NUMBA=1`` requires numba (import error if missing),
* unset: numba when importable, numpy otherwise.
"""

import importlib.util
import os

_FLAG = os.environ.get("SCENE_CLUSTER_NUMBA", "").strip().lower()

if _FLAG in ("0", "false", "no", "off"):
    # find_spec keeps startup light: availability is reported truthfully
    # without paying for the numba import nobody asked for
    NUMBA_AVAILABLE = importlib.util.find_spec("numba") is not None
    USE_NUMBA = False
else:
    try:
        from numba import njit  # noqa: F401

        NUMBA_AVAILABLE = True
    except ImportError:
        NUMBA_AVAILABLE = False
    if _FLAG in ("1", "true", "yes", "on"):
        if not NUMBA_AVAILABLE:
            raise ImportError(
                "SCENE_CLUSTER_NUMBA=1 but numba is not importable"
            )
        USE_NUMBA = True
    else:
        USE_NUMBA = NUMBA_AVAILABLE


def backend_name() -> str:
    """Name of the active kernel backend, ``"numba"`` or ``"numpy"``."""
    return "numba" if USE_NUMBA else "numpy"
