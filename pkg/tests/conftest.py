import numpy as np
import pytest
from hypothesis import settings

from gramphase.repspec import RepSpec, cryoem_rep_spec, zn_rep_spec

settings.register_profile("default", deadline=None, max_examples=40)
settings.load_profile("default")

SPECS = [
    zn_rep_spec(8),
    cryoem_rep_spec(2, 5),
    RepSpec(((2, 3), (4, 2))),
    RepSpec(((3, 1), (1, 2), (5, 5))),
    RepSpec(((1, 1),) * 6),
]


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(params=SPECS, ids=lambda s: "x".join(f"{n}{r}" for n, r in s.blocks))
def spec(request):
    return request.param
