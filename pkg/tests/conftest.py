import os

# Pin BLAS threading before numpy loads anywhere in the test process.
# Reduction order inside gemm depends on the thread count, and several
# suites compare training artifacts bit-for-bit.
for _var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ[_var] = "1"
