import numpy as np
import pytest

from bipedmhe.model import GeneralizedState, default_model


@pytest.fixture(scope="session")
def biped():
    """Reference biped; session-scoped so the symbolic build runs once."""
    return default_model()


@pytest.fixture()
def rng():
    return np.random.default_rng(12345)


def random_state(model, rng, q_scale=1.0, qd_scale=1.0):
    nq = model.n_coords
    q = rng.uniform(-q_scale, q_scale, size=nq)
    qd = rng.uniform(-qd_scale, qd_scale, size=nq)
    return GeneralizedState(q, qd)
