"""Pin BLAS to one thread before numpy loads.

The dense factorizations here are small; thread fan-out only adds variance
(and the CI sandbox has a single core anyway).
"""

import os

for var in (
    "OMP_NUM_THREADS",
    "OPENBLAS_NUM_THREADS",
    "MKL_NUM_THREADS",
    "NUMEXPR_NUM_THREADS",
):
    os.environ.setdefault(var, "1")
