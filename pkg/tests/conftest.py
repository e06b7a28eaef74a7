import json
from importlib import resources

import numpy as np
import pytest

from cbmm.mixture import Cbmm


def load_builtin(name):
    text = resources.files("cbmm").joinpath("scenarios", f"{name}.json").read_text("utf-8")
    return Cbmm.from_dict(json.loads(text)["model"])


@pytest.fixture(scope="session")
def nongaussian_model():
    return load_builtin("nongaussian")


@pytest.fixture(scope="session")
def gaussian_model():
    return load_builtin("gaussian")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
