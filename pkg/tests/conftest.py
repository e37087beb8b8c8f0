import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from paracosm import AblationConfig, Backends, EmbeddingVector
from paracosm.fusion import GalleryFeature


@pytest.fixture
def mock_backends(tmp_path):
    return Backends.mock(seed=0, dim=16, generation_size=24, cache_dir=tmp_path / "cache")


@pytest.fixture
def full_config():
    return AblationConfig()


def make_vec(values, encoder="mock:image"):
    return EmbeddingVector(np.asarray(values, dtype=float), encoder)


def random_gallery(rng, n, dim, encoder="mock:image"):
    """Random unit-vector gallery features with zero-padded numeric ids."""
    out = []
    for i in range(n):
        v = rng.standard_normal(dim)
        v /= np.linalg.norm(v)
        out.append(
            GalleryFeature(
                phi=EmbeddingVector(v, encoder), image_id=f"g{i:03d}", beta=0.5
            )
        )
    return out
