"""
Built-in serial benchmark kernels.

Each kernel is a single C function in the front-end subset with a ``// @kernel``
marker above its outermost loop. Problem sizes are passed as int parameters.
"""

import logging
from typing import Dict, List

from .errors import VariantError
from .variantgen import DataArray, KernelSpec

logger = logging.getLogger(__name__)


def _arr(name: str, *extent: str, direction: str = "tofrom") -> DataArray:
    return DataArray(name=name, element_type="double", extent=tuple(extent), direction=direction)


MATMUL = KernelSpec(
    kernel_name="matmul",
    app_name="matmul",
    loop_nest_depth=3,
    collapsible=True,
    size_params=("N",),
    data_arrays=(_arr("A", "N", "N", direction="to"), _arr("B", "N", "N", direction="to"), _arr("C", "N", "N")),
    source="""\
void matmul(int N, double A[N][N], double B[N][N], double C[N][N]) {
    // @kernel
    for (int i = 0; i < N; i++) {
        for (int j = 0; j < N; j++) {
            double sum = 0.0;
            for (int k = 0; k < N; k++) {
                sum += A[i][k] * B[k][j];
            }
            C[i][j] = sum;
        }
    }
}
""",
)

MATVEC = KernelSpec(
    kernel_name="matvec",
    app_name="matvec",
    loop_nest_depth=2,
    collapsible=False,
    size_params=("N",),
    data_arrays=(_arr("A", "N", "N", direction="to"), _arr("x", "N", direction="to"), _arr("y", "N", direction="from")),
    source="""\
void matvec(int N, double A[N][N], double x[N], double y[N]) {
    // @kernel
    for (int i = 0; i < N; i++) {
        double sum = 0.0;
        for (int j = 0; j < N; j++) {
            sum += A[i][j] * x[j];
        }
        y[i] = sum;
    }
}
""",
)

TRANSPOSE = KernelSpec(
    kernel_name="transpose",
    app_name="transpose",
    loop_nest_depth=2,
    collapsible=True,
    size_params=("N",),
    data_arrays=(_arr("A", "N", "N", direction="to"), _arr("B", "N", "N", direction="from")),
    source="""\
void transpose(int N, double A[N][N], double B[N][N]) {
    // @kernel
    for (int i = 0; i < N; i++) {
        for (int j = 0; j < N; j++) {
            B[j][i] = A[i][j];
        }
    }
}
""",
)

LAPLACE_UPDATE = KernelSpec(
    kernel_name="laplace_update",
    app_name="laplace",
    loop_nest_depth=2,
    collapsible=True,
    size_params=("N",),
    data_arrays=(_arr("T", "N", "N", direction="to"), _arr("Tnew", "N", "N")),
    source="""\
void laplace_update(int N, double T[N][N], double Tnew[N][N]) {
    // @kernel
    for (int i = 1; i < N - 1; i++) {
        for (int j = 1; j < N - 1; j++) {
            Tnew[i][j] = 0.25 * (T[i + 1][j] + T[i - 1][j] + T[i][j + 1] + T[i][j - 1]);
        }
    }
}
""",
)

LAPLACE_COPY = KernelSpec(
    kernel_name="laplace_copy",
    app_name="laplace",
    loop_nest_depth=2,
    collapsible=True,
    size_params=("N",),
    data_arrays=(_arr("T", "N", "N", direction="from"), _arr("Tnew", "N", "N", direction="to")),
    source="""\
void laplace_copy(int N, double T[N][N], double Tnew[N][N]) {
    // @kernel
    for (int i = 1; i < N - 1; i++) {
        for (int j = 1; j < N - 1; j++) {
            T[i][j] = Tnew[i][j];
        }
    }
}
""",
)

GAUSS_SEIDEL = KernelSpec(
    kernel_name="gauss_seidel",
    app_name="gauss_seidel",
    loop_nest_depth=2,
    collapsible=True,
    size_params=("N",),
    data_arrays=(_arr("A", "N", "N", direction="to"), _arr("B", "N", "N")),
    source="""\
void gauss_seidel(int N, double A[N][N], double B[N][N]) {
    // @kernel
    for (int i = 1; i < N - 1; i++) {
        for (int j = 1; j < N - 1; j++) {
            B[i][j] = (A[i - 1][j] + A[i + 1][j] + A[i][j - 1] + A[i][j + 1] + A[i][j]) / 5.0;
        }
    }
}
""",
)

CORRELATION = KernelSpec(
    kernel_name="correlation",
    app_name="correlation",
    loop_nest_depth=3,
    collapsible=False,
    size_params=("N", "M"),
    data_arrays=(
        _arr("data", "N", "M", direction="to"),
        _arr("mean", "M", direction="to"),
        _arr("stddev", "M", direction="to"),
        _arr("corr", "M", "M"),
    ),
    source="""\
void correlation(int N, int M, double data[N][M], double mean[M], double stddev[M], double corr[M][M]) {
    // @kernel
    for (int i = 0; i < M - 1; i++) {
        corr[i][i] = 1.0;
        for (int j = i + 1; j < M; j++) {
            double s = 0.0;
            for (int k = 0; k < N; k++) {
                s += (data[k][i] - mean[i]) * (data[k][j] - mean[j]);
            }
            corr[i][j] = s / (N * stddev[i] * stddev[j]);
            corr[j][i] = corr[i][j];
        }
    }
}
""",
)

COVARIANCE_MEAN = KernelSpec(
    kernel_name="covariance_mean",
    app_name="covariance",
    loop_nest_depth=2,
    collapsible=False,
    size_params=("N", "M"),
    data_arrays=(_arr("data", "N", "M", direction="to"), _arr("mean", "M", direction="from")),
    source="""\
void covariance_mean(int N, int M, double data[N][M], double mean[M]) {
    // @kernel
    for (int j = 0; j < M; j++) {
        mean[j] = 0.0;
        for (int i = 0; i < N; i++) {
            mean[j] += data[i][j];
        }
        mean[j] = mean[j] / N;
    }
}
""",
)

COVARIANCE_COV = KernelSpec(
    kernel_name="covariance_cov",
    app_name="covariance",
    loop_nest_depth=3,
    collapsible=False,
    size_params=("N", "M"),
    data_arrays=(_arr("data", "N", "M", direction="to"), _arr("cov", "M", "M")),
    source="""\
void covariance_cov(int N, int M, double data[N][M], double cov[M][M]) {
    // @kernel
    for (int i = 0; i < M; i++) {
        for (int j = i; j < M; j++) {
            double s = 0.0;
            for (int k = 0; k < N; k++) {
                s += data[k][i] * data[k][j];
            }
            cov[i][j] = s / (N - 1);
            cov[j][i] = cov[i][j];
        }
    }
}
""",
)

KNN = KernelSpec(
    kernel_name="knn",
    app_name="knn",
    loop_nest_depth=3,
    collapsible=True,
    size_params=("N", "Q", "D"),
    data_arrays=(
        _arr("ref", "N", "D", direction="to"),
        _arr("query", "Q", "D", direction="to"),
        _arr("dist", "Q", "N", direction="from"),
    ),
    source="""\
void knn(int N, int Q, int D, double ref[N][D], double query[Q][D], double dist[Q][N]) {
    // @kernel
    for (int q = 0; q < Q; q++) {
        for (int r = 0; r < N; r++) {
            double d = 0.0;
            for (int k = 0; k < D; k++) {
                double diff = query[q][k] - ref[r][k];
                d += diff * diff;
            }
            dist[q][r] = sqrt(d);
        }
    }
}
""",
)

PARTICLE_FILTER_LIKELIHOOD = KernelSpec(
    kernel_name="particle_filter_likelihood",
    app_name="particle_filter",
    loop_nest_depth=2,
    collapsible=False,
    size_params=("N", "K"),
    data_arrays=(
        _arr("particles", "N", "2", direction="to"),
        _arr("observations", "K", "2", direction="to"),
        _arr("weights", "N", direction="from"),
    ),
    source="""\
void particle_filter_likelihood(int N, int K, double particles[N][2], double observations[K][2], double weights[N]) {
    // @kernel
    for (int p = 0; p < N; p++) {
        double likelihood = 0.0;
        for (int k = 0; k < K; k++) {
            double dx = particles[p][0] - observations[k][0];
            double dy = particles[p][1] - observations[k][1];
            if (dx * dx + dy * dy < 1.0) {
                likelihood += 1.0;
            } else {
                likelihood -= 0.1;
            }
        }
        weights[p] = exp(likelihood / K);
    }
}
""",
)

PARTICLE_FILTER_NORMALIZE = KernelSpec(
    kernel_name="particle_filter_normalize",
    app_name="particle_filter",
    loop_nest_depth=1,
    collapsible=False,
    size_params=("N",),
    data_arrays=(_arr("weights", "N"), _arr("particles", "N", "2")),
    source="""\
void particle_filter_normalize(int N, double weights[N], double total, double particles[N][2]) {
    // @kernel
    for (int p = 0; p < N; p++) {
        weights[p] = weights[p] / total;
        particles[p][0] = particles[p][0] * weights[p];
        particles[p][1] = particles[p][1] * weights[p];
    }
}
""",
)

CATALOG: Dict[str, KernelSpec] = {
    spec.kernel_name: spec
    for spec in (
        CORRELATION,
        COVARIANCE_MEAN,
        COVARIANCE_COV,
        GAUSS_SEIDEL,
        KNN,
        LAPLACE_UPDATE,
        LAPLACE_COPY,
        MATMUL,
        MATVEC,
        TRANSPOSE,
        PARTICLE_FILTER_LIKELIHOOD,
        PARTICLE_FILTER_NORMALIZE,
    )
}


def list_kernels() -> List[str]:
    return sorted(CATALOG)


def get_kernel(name: str) -> KernelSpec:
    """Look up a catalog kernel by kernel name."""
    if name in CATALOG:
        return CATALOG[name]
    raise VariantError(f"unknown kernel '{name}'; available: {', '.join(list_kernels())}")


def kernels_for(names: List[str]) -> List[KernelSpec]:
    """Resolve kernel or application names; ``all`` selects the whole catalog."""
    if names == ["all"]:
        return [CATALOG[name] for name in list_kernels()]
    specs: List[KernelSpec] = []
    for name in names:
        by_app = [spec for spec in CATALOG.values() if spec.app_name == name and spec.kernel_name != name]
        if name not in CATALOG and by_app:
            specs.extend(by_app)
        else:
            specs.append(get_kernel(name))
    logger.debug(f"[VARIANTS] selected kernels: {[spec.kernel_name for spec in specs]}")
    return specs
