import numpy as np
import pytest
from hypothesis import settings

from pointssl.data import PointAnnotation, FeatureGridSample
from pointssl.model import ModelArch, init_params

settings.register_profile("suite", deadline=None)
settings.load_profile("suite")


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_arch() -> ModelArch:
    arch = ModelArch(
        num_classes=3, feature_dim=4, patch_radius=1, hidden_dim=6, anchor_stride=3
    )
    arch.validate()
    return arch


@pytest.fixture
def tiny_params(tiny_arch, rng) -> np.ndarray:
    return init_params(tiny_arch, rng)


def make_sample(
    rng: np.random.Generator,
    *,
    height: int = 12,
    width: int = 12,
    feature_dim: int = 4,
    annotations: list[tuple[float, float, int]] | None = None,
    sample_id: str = "s0",
) -> FeatureGridSample:
    """A sample with random features and the given annotation triples."""
    features = rng.normal(size=(height, width, feature_dim)).astype(np.float32)
    anns = tuple(
        PointAnnotation(x=np.float32(x), y=np.float32(y), class_id=c)
        for x, y, c in (annotations or [])
    )
    return FeatureGridSample(id=sample_id, features=features, annotations=anns)
