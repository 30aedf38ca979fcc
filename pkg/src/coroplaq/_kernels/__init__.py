"""Backend dispatch for the numeric kernels.

Two interchangeable implementations exist: a numba-compiled one and a pure
NumPy one.  The numba backend is the default when numba imports cleanly;
the environment variable COROPLAQ_NUMBA=0 (or "false"/"off"/"no") forces
the NumPy fallback.  `python -m coroplaq.benchmark` compares the two.
"""

import os

from . import numpy_impl

try:
    from . import numba_impl
except ImportError:
    numba_impl = None


def _env_wants_numba():
    val = os.environ.get("COROPLAQ_NUMBA", "").strip().lower()
    return val not in ("0", "false", "off", "no")


HAS_NUMBA = numba_impl is not None
USE_NUMBA = HAS_NUMBA and _env_wants_numba()

_impl = numba_impl if USE_NUMBA else numpy_impl


def backend_name():
    return "numba" if USE_NUMBA else "numpy"


NEIGHBOR_OFFSETS = numpy_impl.NEIGHBOR_OFFSETS

trilinear_many = _impl.trilinear_many
frob2_field = _impl.frob2_field
frangi_from_frob2 = _impl.frangi_from_frob2
dijkstra_grid = _impl.dijkstra_grid
mrf_cycle = _impl.mrf_cycle
