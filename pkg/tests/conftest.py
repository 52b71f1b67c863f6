import os

import numpy as np
import pytest

from src.config import RunConfig
from src.models.nn import ModelDims, init_state
from src.services.data import DatasetSpec, generate_dataset, split


def pytest_collection_modifyitems(config, items):
    if os.getenv("HYCORE_RUN_SLOW") == "1":
        return
    skip_slow = pytest.mark.skip(reason="set HYCORE_RUN_SLOW=1 to run acceptance-scale experiments")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def rng():
    return np.random.default_rng(42)


@pytest.fixture
def tiny_dims():
    return ModelDims(hidden1=8, hidden2=8, feature_dim=8, embed_dim=4)


@pytest.fixture
def tiny_spec():
    return DatasetSpec(classes=["sphere", "cube", "torus"], per_class_train=4, per_class_test=2, points_per_cloud=64, seed=3)


@pytest.fixture
def tiny_dataset(tiny_spec):
    clouds, class_names = generate_dataset(tiny_spec)
    train, test = split(clouds, tiny_spec)
    return train, test, class_names


@pytest.fixture
def tiny_state(tiny_dims):
    return init_state(tiny_dims, num_classes=3, curvature=1.0, seed=0, class_names=["sphere", "cube", "torus"])


@pytest.fixture
def tiny_config(tiny_spec, tiny_dims, tmp_path):
    return RunConfig.model_validate({
        "dataset": tiny_spec.model_dump(),
        "dims": tiny_dims.model_dump(),
        "optim": {"epochs": 2, "batch_size": 4, "lr": 0.05},
        "sampling": {"whole_min": 40, "whole_max": 64, "part_min": 10, "part_max": 20},
        "output_dir": str(tmp_path / "run"),
        "seed": 7,
    })


def random_ball_points(rng, n, dim, c=1.0, max_frac=0.9):
    """n points uniformly spread in radius up to max_frac of the ball"""
    directions = rng.normal(size=(n, dim))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    radii = rng.uniform(0.0, max_frac, size=(n, 1)) / np.sqrt(c)
    return directions * radii
