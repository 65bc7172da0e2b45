"""TraceFEM for Cahn-Hilliard phase separation on evolving surfaces."""
import os

# the TBB layer shipped in some images is too old for numba; prefer OpenMP
os.environ.setdefault("NUMBA_THREADING_LAYER", "omp")

__version__ = "0.1.0"
