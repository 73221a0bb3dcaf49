from __future__ import annotations

import numpy as np
import pytest

from gils.model import ModelParams, init_params


def random_params(rng: np.random.Generator, d_in: int, hidden: list[int], k: int, scale: float = 1.0) -> ModelParams:
    """Seeded MLP with every weight multiplied by ``scale``."""
    p = init_params([d_in, *hidden], k, int(rng.integers(2**31)))
    return p.with_flat(p.ravel() * scale)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
