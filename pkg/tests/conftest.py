from pathlib import Path

import numpy as np
import pytest

from reps.priors import load_prior

FIXTURES = Path(__file__).resolve().parent.parent / "fixtures"
CONFIGS = Path(__file__).resolve().parent.parent / "configs"


@pytest.fixture(scope="session")
def fixtures_dir() -> Path:
    return FIXTURES


@pytest.fixture(scope="session")
def configs_dir() -> Path:
    return CONFIGS


@pytest.fixture(scope="session")
def gmm_fixture():
    """(prior, tuned params) from the d=2 three-component fixture file."""
    return load_prior(FIXTURES / "gmm_d2.txt")


@pytest.fixture(scope="session")
def gauss8_fixture():
    prior, _ = load_prior(FIXTURES / "gaussian_d8.txt")
    return prior


def rng_of(*key):
    return np.random.default_rng(key)
