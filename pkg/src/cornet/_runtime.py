"""Process-level performance knobs for training and inference.

Two adjustments matter on small CPU hosts:

* BLAS pools fight with the numba thread pool when both spin on the same
  cores; pinning BLAS to one thread removes the contention (the convolution
  kernels own the parallelism, BLAS only sees pointwise matmuls).
* glibc returns large freed buffers to the OS by default, so every fresh
  activation allocation page-faults; raising the mmap/trim thresholds keeps
  those buffers on the heap for reuse.

Both are opt-in via tune_runtime(), called by the CLI and the trainer.
"""

import ctypes
import ctypes.util

_tuned = False
_limits_handle = None


def tune_runtime():
    """Apply the knobs once per process; safe to call repeatedly."""
    global _tuned, _limits_handle
    if _tuned:
        return
    _tuned = True
    try:
        import threadpoolctl

        _limits_handle = threadpoolctl.threadpool_limits(limits=1, user_api="blas")
    except Exception:
        pass
    try:
        libc = ctypes.CDLL(ctypes.util.find_library("c"))
        M_TRIM_THRESHOLD, M_MMAP_THRESHOLD = -1, -3
        libc.mallopt(M_MMAP_THRESHOLD, 1 << 30)
        libc.mallopt(M_TRIM_THRESHOLD, 1 << 30)
    except Exception:
        pass
