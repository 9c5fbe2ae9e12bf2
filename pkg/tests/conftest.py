import logging

import numpy as np
import pytest


@pytest.fixture(autouse=True)
def _quiet_alignment_warnings(caplog):
    # Early-training batches can be degenerate; the loop logs and skips the
    # alignment term.  Keep those warnings out of the test output.
    logging.getLogger("linalign.training").setLevel(logging.ERROR)
    yield


def random_spd(rng, d, scale=1.0):
    m = rng.standard_normal((d, d))
    return scale * (m @ m.T) + 0.1 * np.eye(d)


@pytest.fixture
def rng():
    return np.random.default_rng(0)
