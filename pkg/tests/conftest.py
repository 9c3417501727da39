"""
Pytest configuration and shared fixtures for the ParaGraph pipeline tests.

This module provides source snippets, small synthetic datasets and tiny
model configurations that can be used across all test modules.
"""

import pytest
import os
import sys

# Add parent directory to path to import modules
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from paragraph_pipeline.config import get_training_config
from paragraph_pipeline.dataset import DataPoint, synthetic_label, variant_graph
from paragraph_pipeline.kernels import MATMUL, MATVEC
from paragraph_pipeline.variantgen import enumerate_dataset_points

FIXTURES_DIR = os.path.join(os.path.dirname(os.path.abspath(__file__)), "fixtures")


# ============================================================================
# Fixture Files
# ============================================================================

@pytest.fixture(scope="session")
def fixtures_dir():
    """Directory holding committed sources and golden outputs."""
    return FIXTURES_DIR


@pytest.fixture
def read_fixture():
    """Read a fixture file as text."""
    def _read(name):
        with open(os.path.join(FIXTURES_DIR, name), "r", encoding="utf-8") as handle:
            return handle.read()
    return _read


# ============================================================================
# Source Snippets
# ============================================================================

@pytest.fixture
def assign_source():
    return "void f() {\n    int x;\n    x = 50;\n}\n"


@pytest.fixture
def parallel_loop_source():
    """A 100-trip loop shared statically among four threads."""
    return (
        "void scale(double a[100]) {\n"
        "    #pragma omp parallel for num_threads(4)\n"
        "    for (int i = 0; i < 100; i++) {\n"
        "        a[i] = a[i] * 2.0;\n"
        "    }\n"
        "}\n"
    )


@pytest.fixture
def symbolic_loop_source():
    return (
        "void fill(int N, double a[N]) {\n"
        "    for (int i = 0; i < N; i++) {\n"
        "        a[i] = 1.0;\n"
        "    }\n"
        "}\n"
    )


# ============================================================================
# Datasets and Models
# ============================================================================

def make_points(spec=MATVEC, sizes=(8, 16), teams=(1, 2), threads=(1, 2), platform="desk"):
    """Synthetically labeled data points for every variant of one kernel."""
    points = []
    for index, variant in enumerate(enumerate_dataset_points(spec, list(sizes), list(teams), list(threads))):
        graph = variant_graph(variant)
        points.append(DataPoint(
            graph=graph,
            app_name=variant.app_name,
            variant_kind=variant.kind.value,
            runtime_us=synthetic_label(graph, noise_seed=[0, index], sigma=0.0),
            platform_tag=platform,
            kernel_name=variant.kernel_name,
            params=variant.params,
        ))
    return points


@pytest.fixture
def small_points():
    """Twenty matvec data points (cpu, gpu and gpu_mem variants)."""
    return make_points()


@pytest.fixture
def mixed_points():
    """Points from two applications."""
    return make_points() + make_points(MATMUL, sizes=(8,), teams=(1, 2), threads=(1, 2))


@pytest.fixture
def tiny_config():
    """A training configuration small enough for unit tests."""
    return get_training_config({
        "hidden": 8,
        "head": [8, 4],
        "feature_hidden": 4,
        "epochs": 2,
        "batch": 4,
        "lr": 1e-2,
        "seed": 7,
        "jobs": 1,
    })


@pytest.fixture(scope="session")
def point_factory():
    """The make_points builder, for tests that need their own grids."""
    return make_points
