"""Simulation and verification lab for transient one-dimensional random walks in random environment."""
import os as _os

# allow thread counts above the core count so results can be compared across them
_os.environ.setdefault("NUMBA_NUM_THREADS", str(max(8, _os.cpu_count() or 1)))

# the bundled TBB is too old for numba; skip probing it
_os.environ.setdefault("NUMBA_THREADING_LAYER", "workqueue")

__version__ = "0.1.0"
