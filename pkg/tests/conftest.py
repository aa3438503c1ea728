"""Shared fixtures. Thread caps are set before numpy loads: the tiny f64
matmuls in this workload run ~2x faster single-threaded."""

import os

os.environ.setdefault("OMP_NUM_THREADS", "1")
os.environ.setdefault("OPENBLAS_NUM_THREADS", "1")
os.environ.setdefault("MKL_NUM_THREADS", "1")

import pytest

from airgap import envgen


@pytest.fixture(scope="session")
def desk_empty_config():
    return envgen.validate_config({"arena_size": [25, 25, 5], "seed": 11})


@pytest.fixture(scope="session")
def desk_static_config():
    return envgen.validate_config({
        "arena_size": [25, 25, 5],
        "seed": 23,
        "num_static_obstacles": 5,
        "minimum_distance": 3,
    })
