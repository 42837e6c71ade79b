import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

from src.synth import GeneratorConfig, generate  # noqa: E402


def pytest_addoption(parser):
    parser.addoption(
        "--runslow",
        action="store_true",
        default=False,
        help="Executa os testes estatísticos longos (marcados como slow)",
    )


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: verificação estatística longa (opt-in com --runslow)")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="use --runslow para executar")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


def tiny_generator_config(**overrides) -> GeneratorConfig:
    """Benchmark 16×16 com partições pequenas e os quatro quadrantes populados."""
    params = dict(
        n_train=64,
        n_val=16,
        n_holdout=32,
        height=16,
        width=16,
        radius_min=2.5,
        radius_max=4.0,
        seed=0,
    )
    params.update(overrides)
    return GeneratorConfig(**params)


@pytest.fixture(scope="session")
def tiny_data():
    return generate(tiny_generator_config())


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def make_generator_config():
    return tiny_generator_config
