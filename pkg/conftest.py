import os
import sys

import pytest

sys.path.insert(0, os.path.join(os.path.dirname(os.path.abspath(__file__)), "app"))

from run_config import RunConfig  # noqa: E402
from synthetic_dataset import GeneratorConfig, generate  # noqa: E402


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run slow end-to-end tests")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: desk-scale end-to-end run, needs --runslow")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


def tiny_run_config(**sections) -> RunConfig:
    """A run config small enough for unit tests; keyword args override whole sections."""
    raw = {
        "data": {"n": 88, "seed": 3, "split_seed": 3},
        "vit": {"image_side": 16, "patch_side": 8, "embed_dim": 8, "layers": 1, "heads": 2, "mlp_ratio": 2},
        "fusion": {"heads": 2, "stages": 2, "fused_dim": 16},
        "head": {"hidden": [8, 8]},
        "train": {"epochs": 2, "warmup_epochs": 1, "batch_size": 16, "restart_period": 2},
        "runtime": {"progress": False},
    }
    for name, values in sections.items():
        raw.setdefault(name, {}).update(values)
    return RunConfig.from_dict(raw).validate()


@pytest.fixture
def tiny_config() -> RunConfig:
    return tiny_run_config()


@pytest.fixture(scope="session")
def generator_config() -> GeneratorConfig:
    return GeneratorConfig.load()


@pytest.fixture(scope="session")
def small_records(generator_config):
    return generate(generator_config, 88, seed=3, side=16)
