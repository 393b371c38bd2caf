"""Corneal OCT interface segmentation toolkit.

A dense encoder/decoder segmentation network built on a self-contained
differentiable tensor engine, with width-wise slice inference, robust
boundary curve fitting, boundary-distance metrics, and a synthetic
corneal phantom generator for end-to-end exercise.
"""

import os

# The convolution kernels own the cores; a multi-threaded BLAS pool only adds
# spin-wait contention next to them. Honoured only if numpy is not yet loaded
# and the user has not chosen a value.
os.environ.setdefault("OPENBLAS_NUM_THREADS", "1")

__version__ = "0.1.0"
