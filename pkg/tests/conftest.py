"""
Shared pytest fixtures and configuration for all tests.
"""
import pytest
import tempfile
import shutil
from pathlib import Path
from typing import Generator

import numpy as np
import torch
import yaml

from aggregate_decouple.core.data import make_synthetic
from aggregate_decouple.core.models import (
    DatasetSplit, LabelMap, SyntheticSpec, TaskConfig, Volume
)


@pytest.fixture
def temp_workspace() -> Generator[Path, None, None]:
    """Create a temporary workspace directory for testing."""
    temp_dir = tempfile.mkdtemp(prefix="aggregate_decouple_test_")
    workspace = Path(temp_dir)
    yield workspace
    shutil.rmtree(temp_dir, ignore_errors=True)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_config() -> TaskConfig:
    """Smallest configuration that exercises every flow."""
    return TaskConfig(
        patch_size=(16, 16, 16),
        batch_size=1,
        feature_size=4,
        num_classes=2,
        diffusion_steps=20,
        ddim_steps=2,
        max_iterations=4,
        validation_interval=100,
        log_interval=1,
        tau=3,
    )


@pytest.fixture
def tiny_split() -> DatasetSplit:
    """One domain, 16^3 grid: one labeled, one unlabeled and one test volume."""
    return make_synthetic(SyntheticSpec(num_domains=1, volumes_per_domain=2,
                                        labeled_fraction=0.5, grid_size=(16, 16, 16),
                                        num_classes=2, seed=3, test_per_domain=1))


@pytest.fixture
def cube_pair() -> tuple:
    """20^3 volume holding a bright cube with its label."""
    label = np.zeros((20, 20, 20), dtype=np.int64)
    label[6:14, 5:13, 7:15] = 1
    volume = 0.2 + 0.6 * label.astype(np.float32)
    return Volume(volume), LabelMap(label, num_classes=2)


@pytest.fixture
def desk_config_file(temp_workspace) -> Path:
    """Flat YAML config selecting the desk preset with a short run."""
    path = temp_workspace / "desk.yaml"
    with open(path, "w", encoding="utf-8") as f:
        yaml.safe_dump({
            "preset": "desk",
            "max_iterations": 6,
            "feature_size": 4,
            "diffusion_steps": 20,
            "ddim_steps": 2,
            "validation_interval": 3,
            "log_interval": 3,
            "tau": 3,
        }, f)
    return path


@pytest.fixture(autouse=True)
def single_thread(monkeypatch):
    """Keep torch and the loaders single-threaded so results are reproducible."""
    monkeypatch.setenv("AD_NUM_WORKERS", "1")
    threads = torch.get_num_threads()
    torch.set_num_threads(1)
    yield
    torch.set_num_threads(threads)
