import os

os.environ.setdefault("OPENBLAS_NUM_THREADS", "1")

import numpy as np
import pytest

from cornet._runtime import tune_runtime

tune_runtime()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def unit_profile():
    from cornet.data import DeviceProfile

    return DeviceProfile("unit", 1.0, 1.0, 64, 64, 2)
