"""Geometry-aware graph transformers on constant-curvature manifolds."""

import os as _os

# Cap BLAS parallelism before numpy loads so repeated runs are deterministic.
# GEOFORMER_THREADS overrides; the default of 1 favors reproducibility.
_threads = _os.environ.get("GEOFORMER_THREADS", "1")
for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS",
             "NUMEXPR_NUM_THREADS"):
    _os.environ.setdefault(_var, _threads)

__version__ = "0.1.0"

from . import backbone, graphdata, manifolds, model, moe, numerics, optim  # noqa: E402,F401
