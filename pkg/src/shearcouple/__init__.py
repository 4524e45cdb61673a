"""Optimal bang-bang diffusion control for hitting the origin in shear flows."""

import numba as _numba

# skip the TBB layer (the system copy is too old and only emits a warning)
_numba.config.THREADING_LAYER_PRIORITY = ["omp", "workqueue", "tbb"]

__version__ = "0.1.0"
