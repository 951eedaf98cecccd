"""Backend selection for the assembly kernels.

The compiled backend is used when available; set the environment
variable FRACFLOOD_DISABLE_NUMBA to any non-empty value to force the
pure-vectorized backend (useful for debugging and timing comparisons).
"""

from __future__ import annotations

import os

from . import _kernels_numpy

BACKEND = "numpy"
cell_tables = _kernels_numpy.cell_tables
conn_assemble = _kernels_numpy.conn_assemble

if not os.environ.get("FRACFLOOD_DISABLE_NUMBA"):
    try:
        from . import _kernels_numba

        cell_tables = _kernels_numba.cell_tables
        conn_assemble = _kernels_numba.conn_assemble
        BACKEND = "numba"
    except ImportError:  # pragma: no cover - numba is an install dependency
        pass
