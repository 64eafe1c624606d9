import numpy as np
import pytest

from hoiground.decoder import TextEmbeddingBank
from hoiground.grounding import FeatureMap
from hoiground.params import init_params


def random_bank(rng, n_objects=3, n_actions=3, dim=16, hoi=False):
    rows = rng.standard_normal((1 + n_objects + n_actions, dim))
    rows /= np.linalg.norm(rows, axis=1, keepdims=True)
    hoi_rows, pairs = None, None
    if hoi:
        pairs = [(a, o) for a in range(n_actions) for o in range(n_objects)]
        hoi_rows = np.stack(
            [rows[1 + n_objects + a] + rows[1 + o] for a, o in pairs]
        )
        hoi_rows /= np.linalg.norm(hoi_rows, axis=1, keepdims=True)
    return TextEmbeddingBank(
        human=rows[0],
        objects=rows[1 : 1 + n_objects],
        actions=rows[1 + n_objects :],
        hoi=hoi_rows,
        hoi_pairs=pairs,
    )


@pytest.fixture
def toy():
    """Small random instance shared by decoder/interactiveness/detection tests."""
    rng = np.random.default_rng(1234)
    fm = FeatureMap(4, 5, rng.standard_normal((20, 16)))
    bank = random_bank(rng, dim=16, hoi=True)
    params = init_params({"d_v": 16, "d_t": 16}, seed=99)
    return fm, bank, params


@pytest.fixture
def rng():
    return np.random.default_rng(777)
