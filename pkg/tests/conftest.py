import numpy as np
import pytest
from proposal_toolkit.config.models import DatasetConfig, HeadSpec, LayerSpec, NetworkSpec
from proposal_toolkit.core.synthdata import generate


def _trunk():
    return [
        LayerSpec(out_channels=3, kernel_size=3, stride=2, padding=1),
        LayerSpec(out_channels=4, kernel_size=3, stride=1, padding=2, dilation=2),
    ]


@pytest.fixture
def tiny_localization_spec() -> NetworkSpec:
    return NetworkSpec(
        kind="localization",
        trunk=_trunk(),
        heads={"coords": HeadSpec(
            layers=[LayerSpec(out_channels=4, kernel_size=1, nonlinearity="none")], output="offsets"
        )},
    )


@pytest.fixture
def tiny_confidence_spec() -> NetworkSpec:
    def branch():
        return HeadSpec(
            layers=[
                LayerSpec(out_channels=3, kernel_size=3, padding=1),
                LayerSpec(out_channels=2, kernel_size=1, nonlinearity="none"),
            ],
            output="softmax",
        )

    return NetworkSpec(kind="confidence", trunk=_trunk(), heads={"objectness": branch(), "size": branch()})


@pytest.fixture
def small_dataset() -> DatasetConfig:
    return DatasetConfig(image_size=16, scene_count=4, objects_per_scene=(1, 2), area_range=(4, 30), seed=3)


@pytest.fixture
def small_scenes(small_dataset):
    return generate(small_dataset)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)
