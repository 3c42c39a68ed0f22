from __future__ import annotations

import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("esfem", deadline=None, max_examples=40)
settings.load_profile("esfem")


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def sphere_points(rng, n, radius=1.0):
    v = rng.normal(size=(n, 3))
    return radius * v / np.linalg.norm(v, axis=1)[:, None]
