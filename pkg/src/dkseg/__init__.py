"""Polyp-style segmentation with encoder attention and dynamic kernels on a small numpy autodiff core."""

import os

# BLAS thread count must be fixed before numpy loads; one thread keeps runs bitwise reproducible.
_threads = os.environ.get("DKSG_THREADS", "1")
for _var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(_var, _threads)

__version__ = "0.1.0"
