import numpy as np
import pytest

from dsvs.dataset import SYNTHETIC_CLASSES, augment, fit_to_box, resample, synthetic_planar
from dsvs.vision import default_scene


@pytest.fixture(scope="session")
def scene():
    return default_scene()


def make_demos(scene, name, n_demos=3, N=100, seed=0):
    planar, _ = fit_to_box(synthetic_planar(name, n_demos, 1000, seed=seed), 0.5)
    return [resample(augment(p, scene, 1.0, class_name=name, index=i), N, scene)
            for i, p in enumerate(planar)]


@pytest.fixture(scope="session")
def class_demos(scene):
    return {name: make_demos(scene, name) for name in SYNTHETIC_CLASSES}


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
