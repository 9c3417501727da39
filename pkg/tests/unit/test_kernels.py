"""
Unit tests for paragraph_pipeline.kernels module.

Every built-in kernel must parse, carry a kernel marker, declare its
collapsibility correctly and yield variants with compilable harnesses.
"""

import pytest

from paragraph_pipeline.errors import VariantError
from paragraph_pipeline.frontend import parse_source
from paragraph_pipeline.kernels import CATALOG, get_kernel, kernels_for, list_kernels
from paragraph_pipeline.variantgen import (
    applicable_kinds,
    detect_collapsible,
    find_kernel_loop,
    generate_variant,
    harness_source,
)

pytestmark = pytest.mark.unit


@pytest.mark.parametrize("name", sorted(CATALOG))
class TestCatalogKernel:
    """Per-kernel consistency checks."""

    def test_parses_with_marker(self, name):
        spec = CATALOG[name]
        ast = parse_source(spec.source)
        loop = find_kernel_loop(ast, spec.source)
        assert loop.line > 1

    def test_collapsible_flag_matches_source(self, name):
        spec = CATALOG[name]
        ast = parse_source(spec.source)
        assert detect_collapsible(ast, find_kernel_loop(ast, spec.source).id) == spec.collapsible

    def test_every_kind_generates(self, name):
        """Test each applicable kind yields a variant and a harness."""
        spec = CATALOG[name]
        sizes = {size: 8 for size in spec.size_params}
        for kind in applicable_kinds(spec):
            variant = generate_variant(spec, kind, {"sizes": sizes, "num_teams": 2, "num_threads": 2})
            harness = harness_source(spec, variant)
            assert f"{spec.kernel_name}(" in harness
            assert "KERNEL_TIME_US" in harness


class TestCatalogLookup:
    """Tests for kernel selection."""

    def test_list_sorted(self):
        assert list_kernels() == sorted(CATALOG)
        assert len(list_kernels()) == 12

    def test_get_unknown(self):
        with pytest.raises(VariantError):
            get_kernel("fft")

    def test_all(self):
        assert [spec.kernel_name for spec in kernels_for(["all"])] == list_kernels()

    def test_application_name_expands(self):
        """Test an application name selects all of its kernels."""
        names = {spec.kernel_name for spec in kernels_for(["covariance"])}
        assert names == {"covariance_mean", "covariance_cov"}

    def test_kernel_name_with_same_app(self):
        assert [spec.kernel_name for spec in kernels_for(["matmul"])] == ["matmul"]

    def test_apps_group_kernels(self):
        assert {spec.app for spec in CATALOG.values()} == {
            "correlation", "covariance", "gauss_seidel", "knn", "laplace", "matmul", "matvec",
            "particle_filter", "transpose",
        }
