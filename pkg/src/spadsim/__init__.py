"""Time-gated SPAD image sensor simulator with HDR and gate-scan ToF reconstruction."""

import numba

# Counter-based streams make results independent of the threading layer; avoid
# the TBB layer so old system TBB builds do not emit warnings.
numba.config.THREADING_LAYER_PRIORITY = ["omp", "workqueue", "tbb"]

__version__ = "0.1.0"
