"""
Integration tests for runtime measurement through real subprocesses.

A shell stub stands in for the compiler and the binary, so these tests
exercise templating, temporary directories, retries and failure records
without an OpenMP toolchain.
"""

import json
import os
import shutil

import pytest

from paragraph_pipeline.cli import main, write_variants
from paragraph_pipeline.dataset import (
    ExecutorConfig,
    build_dataset,
    executor_labeler,
    load_dataset,
    load_manifest_specs,
    measure_runtime,
)
from paragraph_pipeline.errors import MeasureError, VariantError
from paragraph_pipeline.kernels import MATVEC
from paragraph_pipeline.variantgen import generate_variant, load_kernel_spec

pytestmark = [
    pytest.mark.integration,
    pytest.mark.skipif(shutil.which("sh") is None, reason="needs a POSIX shell"),
]


@pytest.fixture
def variant():
    return generate_variant(MATVEC, "gpu_mem", {"sizes": {"N": 8}, "num_teams": 2, "num_threads": 4})


@pytest.fixture
def variant_dir(tmp_path):
    out = tmp_path / "variants"
    write_variants([MATVEC], {"sizes": [8], "teams": [1], "threads": [1, 2]}, str(out))
    return str(out)


class TestMeasureRuntime:
    """Tests for measure_runtime with shell stubs."""

    def test_reads_marker(self, variant):
        executor = ExecutorConfig.from_dict({"compile": "", "run": "sh -c 'echo KERNEL_TIME_US=123.5'"})
        assert measure_runtime(variant, executor) == 123.5

    def test_placeholders_reach_the_command(self, variant):
        """Test teams and threads are substituted and files exist in the work directory."""
        executor = {
            "compile": "sh -c 'test -f {harness} && cp {harness} {binary}'",
            "run": "sh -c 'test -f {binary} && echo KERNEL_TIME_US={teams}{threads}'",
        }
        assert measure_runtime(variant, executor) == 24.0

    def test_harness_contains_kernel(self, variant, tmp_path):
        copy = tmp_path / "seen.c"
        executor = {"compile": f"cp {{harness}} {copy}", "run": "sh -c 'echo KERNEL_TIME_US=1'"}
        measure_runtime(variant, executor)
        text = copy.read_text()
        assert "KERNEL_TIME_US" in text
        assert "matvec(" in text

    def test_temporary_directory_removed(self, variant, tmp_path):
        executor = {"compile": "", "run": "sh -c 'echo KERNEL_TIME_US=1'"}
        measure_runtime(variant, executor, workdir=str(tmp_path))
        assert os.listdir(tmp_path) == []

    def test_failing_run(self, variant):
        with pytest.raises(MeasureError) as exc:
            measure_runtime(variant, {"compile": "", "run": "sh -c 'echo oops >&2; exit 4'", "retries": 1})
        assert exc.value.stage == "run"
        assert "oops" in exc.value.stderr

    def test_timeout(self, variant):
        with pytest.raises(MeasureError) as exc:
            measure_runtime(variant, {"compile": "", "run": "sleep 5", "timeout_s": 1, "retries": 0})
        assert exc.value.stage == "timeout"

    def test_missing_binary(self, variant):
        with pytest.raises(MeasureError) as exc:
            measure_runtime(variant, {"compile": "", "run": "/nonexistent/kernel.bin", "retries": 0})
        assert exc.value.stage == "run"


class TestBuildDataset:
    """Tests for build_dataset with executor labels."""

    def test_all_points_labeled(self, variant_dir, tmp_path):
        out = str(tmp_path / "data.jsonl")
        labeler = executor_labeler({"compile": "", "run": "sh -c 'echo KERNEL_TIME_US=7{threads}'"})
        points, failures = build_dataset(variant_dir, labeler, out, platform="stub", jobs=2)
        assert failures == []
        assert len(points) == 6
        assert sorted({p.runtime_us for p in points}) == [71.0, 72.0]
        assert load_dataset(out) == points

    def test_failures_recorded(self, variant_dir, tmp_path):
        """Test failing variants are logged to the failures file and skipped."""
        out = str(tmp_path / "data.jsonl")
        run = "sh -c 'test {threads} = 1 && echo KERNEL_TIME_US=5'"
        points, failures = build_dataset(variant_dir, executor_labeler({"compile": "", "run": run, "retries": 0}), out)
        assert len(points) == 3
        assert len(failures) == 3
        with open(out + ".failures.jsonl", "r", encoding="utf-8") as handle:
            records = [json.loads(line) for line in handle]
        assert {record["error"] for record in records} == {"MeasureError"}
        assert {record["stage"] for record in records} == {"run"}
        assert all(record["file"].endswith("_t2.c") for record in records)

    def test_stale_failures_removed(self, variant_dir, tmp_path):
        out = str(tmp_path / "data.jsonl")
        with open(out + ".failures.jsonl", "w", encoding="utf-8") as handle:
            handle.write("{}\n")
        build_dataset(variant_dir, executor_labeler({"compile": "", "run": "sh -c 'echo KERNEL_TIME_US=1'"}), out)
        assert not os.path.exists(out + ".failures.jsonl")


class TestUserKernelMeasurement:
    """Tests for measuring variants of kernels loaded from spec files."""

    # The stub compiler only accepts a timed harness around the kernel call
    COMPILE = "sh -c 'grep -q \"int main\" {harness} && grep -q KERNEL_TIME_US {harness} && cp {harness} {binary}'"
    RUN = "sh -c 'grep -q \"vecadd(N, a, b);\" {binary} && echo KERNEL_TIME_US=9{threads}'"

    @pytest.fixture
    def vecadd_dir(self, fixtures_dir, tmp_path):
        spec = load_kernel_spec(os.path.join(fixtures_dir, "vecadd_kernel.yaml"))
        out = tmp_path / "variants"
        write_variants([spec], {"sizes": [{"N": 32}], "teams": [1], "threads": [1, 2]}, str(out))
        return str(out)

    def test_manifest_keeps_spec(self, vecadd_dir):
        specs = load_manifest_specs(vecadd_dir)
        assert list(specs) == ["vecadd"]
        assert specs["vecadd"].size_params == ("N",)
        assert [array.name for array in specs["vecadd"].data_arrays] == ["a", "b"]

    def test_measures_every_variant(self, vecadd_dir, tmp_path):
        out = str(tmp_path / "data.jsonl")
        labeler = executor_labeler({"compile": self.COMPILE, "run": self.RUN, "retries": 0},
                                   specs=load_manifest_specs(vecadd_dir))
        points, failures = build_dataset(vecadd_dir, labeler, out)
        assert failures == []
        assert len(points) == 6
        assert {p.variant_kind for p in points} == {"cpu", "gpu", "gpu_mem"}
        assert sorted({p.runtime_us for p in points}) == [91.0, 92.0]

    def test_missing_spec_is_a_typed_failure(self, vecadd_dir, tmp_path):
        """Test variants of an unknown kernel fail without invoking the compiler."""
        out = str(tmp_path / "data.jsonl")
        marker = tmp_path / "compiled"
        labeler = executor_labeler({"compile": f"touch {marker}", "run": self.RUN, "retries": 0})
        points, failures = build_dataset(vecadd_dir, labeler, out)
        assert points == []
        assert len(failures) == 6
        assert {record["error"] for record in failures} == {"VariantError"}
        assert not marker.exists()

    def test_measure_runtime_needs_a_spec(self, fixtures_dir):
        spec = load_kernel_spec(os.path.join(fixtures_dir, "vecadd_kernel.yaml"))
        variant = generate_variant(spec, "cpu", {"sizes": {"N": 8}, "num_threads": 1})
        with pytest.raises(VariantError):
            measure_runtime(variant, {"compile": "", "run": self.RUN})

    def test_cli_dataset_build_with_executor(self, vecadd_dir, tmp_path):
        config = tmp_path / "executor.json"
        config.write_text(json.dumps({"compile": self.COMPILE, "run": self.RUN, "retries": 0}))
        out = tmp_path / "data.jsonl"
        assert main(["dataset", "build", "--variants", vecadd_dir, "--executor", str(config), "-o", str(out)]) == 0
        assert len(load_dataset(str(out))) == 6
        assert not os.path.exists(str(out) + ".failures.jsonl")
