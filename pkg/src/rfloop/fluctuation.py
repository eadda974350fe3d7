"""Monte-Carlo estimation of the ensemble moments feeding the loop formulas.

The loop corrections never need the dense fourth-moment tensor: every term is
an expectation of the form E[Delta A Delta] (a "sandwich" over kernel
fluctuations), which is estimated by streaming over retained per-sample
fluctuations.  The explicit vertex tensor exists only for small point sets,
where it validates the sandwich path entry by entry.

Three kinds of per-sample statistics are collected from each network draw:
the train kernel K_s, the test-measure second moment C_s of the kernel
vectors, and the test-measure target moment b_s.  Centered copies of these
triples form the sample store used by the sandwich estimators; the matched
per-sample pairing (same network in both factors) is what captures the mixed
train-test fluctuation structure.
"""

from __future__ import annotations

import io
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .ensemble import EnsembleSpec, derive_seed, forward_features, sample_network
from .errors import BudgetError, ContractError, NumericError, ShapeError
from .kernelcore import stabilized_inverse

MEAN_PSD_RTOL = 1e-8

VERTEX_MAX_POINTS = 64
VERTEX_MEMORY_BUDGET = 2 << 30  # bytes


@dataclass(frozen=True)
class MomentSet:
    """Ensemble means plus an optional store of centered per-sample triples.

    ``mean_K``/``mean_C``/``mean_b``/``c_scalar`` estimate the mean kernel
    and the population operators of the test-error quadratic form.  When the
    store is retained, ``delta_K[s]`` etc. are the per-sample fluctuations
    centered at the store ensemble's own sample mean, which makes the
    (S - 1)-normalized sandwich estimators unbiased.

    The means and the store may come from independent ensembles (see
    ``with_store_from``); experiment drivers use disjoint seed streams for
    the two.
    """

    mean_K: np.ndarray
    mean_C: np.ndarray
    mean_b: np.ndarray
    c_scalar: float
    num_samples: int
    width: int
    mean_kx: np.ndarray | None = None
    delta_K: np.ndarray | None = None
    delta_C: np.ndarray | None = None
    delta_b: np.ndarray | None = None

    def __post_init__(self):
        N = self.mean_K.shape[0]
        _check_mean_psd(self.mean_K, "mean_K")
        _check_mean_psd(self.mean_C, "mean_C")
        if self.mean_C.shape != (N, N) or self.mean_b.shape != (N,):
            raise ShapeError("mean_C / mean_b shapes inconsistent with mean_K")
        if self.width < 1:
            raise ContractError("width must be positive")
        store = (self.delta_K, self.delta_C, self.delta_b)
        if any(d is not None for d in store):
            if any(d is None for d in store):
                raise ContractError("store must retain all of delta_K, delta_C, delta_b")
            S = self.delta_K.shape[0]
            if self.delta_K.shape != (S, N, N) or self.delta_C.shape != (S, N, N) \
                    or self.delta_b.shape != (S, N):
                raise ShapeError("store shapes inconsistent with mean_K")

    @property
    def num_points(self) -> int:
        return self.mean_K.shape[0]

    @property
    def num_store_samples(self) -> int:
        return 0 if self.delta_K is None else self.delta_K.shape[0]

    def require_store(self) -> None:
        if self.delta_K is None:
            raise ContractError(
                "this MomentSet retained no sample store; "
                "re-estimate with retain_samples=True"
            )

    def with_store_from(self, other: "MomentSet") -> "MomentSet":
        """Means from self, fluctuation store from an independent ensemble."""
        other.require_store()
        if other.num_points != self.num_points:
            raise ShapeError("store ensemble has a different point count")
        if other.width != self.width:
            raise ContractError("store ensemble was drawn at a different width")
        return replace(
            self, delta_K=other.delta_K, delta_C=other.delta_C, delta_b=other.delta_b
        )

    @classmethod
    def from_samples(
        cls,
        K_samples: np.ndarray,
        C_samples: np.ndarray,
        b_samples: np.ndarray,
        c_scalar: float,
        width: int,
        retain_samples: bool = True,
        mean_kx: np.ndarray | None = None,
    ) -> "MomentSet":
        """Build means (and centered store) from stacked per-sample statistics."""
        K_samples = np.asarray(K_samples, float)
        C_samples = np.asarray(C_samples, float)
        b_samples = np.asarray(b_samples, float)
        S = K_samples.shape[0]
        if S < 2 and retain_samples:
            raise ContractError("at least 2 samples are needed to retain a store")
        mean_K = K_samples.mean(axis=0)
        mean_C = C_samples.mean(axis=0)
        mean_b = b_samples.mean(axis=0)
        kwargs = {}
        if retain_samples:
            kwargs = dict(
                delta_K=K_samples - mean_K,
                delta_C=C_samples - mean_C,
                delta_b=b_samples - mean_b,
            )
        return cls(
            mean_K=mean_K, mean_C=mean_C, mean_b=mean_b, c_scalar=float(c_scalar),
            num_samples=S, width=int(width), mean_kx=mean_kx, **kwargs,
        )

    @classmethod
    def from_fluctuations(
        cls,
        mean_K: np.ndarray,
        mean_C: np.ndarray,
        mean_b: np.ndarray,
        c_scalar: float,
        width: int,
        delta_K: np.ndarray,
        delta_C: np.ndarray,
        delta_b: np.ndarray,
    ) -> "MomentSet":
        """Hand-built moments with explicitly specified fluctuations.

        Test-oriented constructor: the deltas are stored as given, without
        re-centering, so single-sample and synthetic fluctuation sets can be
        expressed directly.
        """
        return cls(
            mean_K=np.asarray(mean_K, float), mean_C=np.asarray(mean_C, float),
            mean_b=np.asarray(mean_b, float), c_scalar=float(c_scalar),
            num_samples=int(delta_K.shape[0]), width=int(width),
            delta_K=np.asarray(delta_K, float), delta_C=np.asarray(delta_C, float),
            delta_b=np.asarray(delta_b, float),
        )


def _check_mean_psd(M: np.ndarray, what: str) -> None:
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ShapeError(f"{what} must be square, got {M.shape}")
    if not np.all(np.isfinite(M)):
        raise NumericError(f"{what} contains non-finite entries")
    scale = max(1.0, float(np.max(np.abs(M))))
    if float(np.max(np.abs(M - M.T))) > MEAN_PSD_RTOL * scale:
        raise ContractError(f"{what} is not symmetric within tolerance")
    eigs = np.linalg.eigvalsh((M + M.T) / 2.0)
    if eigs[0] < -MEAN_PSD_RTOL * max(1.0, float(eigs[-1])):
        raise ContractError(f"{what} is not PSD within tolerance: min eig {eigs[0]:.3e}")


def _sample_statistics(spec, X_train, X_test, y_test, seed):
    params = sample_network(spec, seed)
    phi_tr = forward_features(params, X_train, "train").values
    phi_te = forward_features(params, X_test, "test").values
    n = spec.width
    M = X_test.shape[0]
    K = phi_tr @ phi_tr.T / n
    K = (K + K.T) / 2.0
    kx = phi_tr @ phi_te.T / n
    C = kx @ kx.T / M
    C = (C + C.T) / 2.0
    b = kx @ y_test / M
    return K, C, b, kx


def estimate_moments(
    spec: EnsembleSpec,
    X_train: np.ndarray,
    X_test: np.ndarray,
    y_test: np.ndarray,
    num_samples: int,
    seed: int,
    retain_samples: bool = False,
    workers: int = 1,
) -> MomentSet:
    """Estimate mean kernel and population operators over fresh network draws.

    Per draw s: K_s = Phi Phi^T / n on the training set, C_s and b_s are the
    test-set averages of k_s(x) k_s(x)^T and y(x) k_s(x), and c is the mean
    squared test target.  With ``retain_samples`` the centered triples are
    kept for sandwich contraction estimates (requires num_samples >= 2).

    Replicate draws are seeded independently from ``seed``, so the result is
    identical for any ``workers`` count.
    """
    if num_samples < 1:
        raise ContractError("num_samples must be positive")
    if retain_samples and num_samples < 2:
        raise ContractError("sandwich retention requires num_samples >= 2")
    X_train = np.asarray(X_train, float)
    X_test = np.asarray(X_test, float)
    y_test = np.asarray(y_test, float)
    if y_test.shape != (X_test.shape[0],):
        raise ShapeError("y_test length must match X_test rows")

    N, M = X_train.shape[0], X_test.shape[0]
    K_stack = np.empty((num_samples, N, N))
    C_stack = np.empty((num_samples, N, N))
    b_stack = np.empty((num_samples, N))
    kx_sum = np.zeros((N, M))

    seeds = [derive_seed(seed, s) for s in range(num_samples)]

    def work(s):
        return _sample_statistics(spec, X_train, X_test, y_test, seeds[s])

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = pool.map(work, range(num_samples))
            # Accumulate in submission order: bitwise independent of scheduling.
            for s, (K, C, b, kx) in enumerate(results):
                K_stack[s], C_stack[s], b_stack[s] = K, C, b
                kx_sum += kx
    else:
        for s in range(num_samples):
            K, C, b, kx = work(s)
            K_stack[s], C_stack[s], b_stack[s] = K, C, b
            kx_sum += kx

    return MomentSet.from_samples(
        K_stack, C_stack, b_stack,
        c_scalar=float(y_test @ y_test) / M,
        width=spec.width,
        retain_samples=retain_samples,
        mean_kx=kx_sum / num_samples,
    )


# ---------------------------------------------------------------------------
# Sandwich contractions
# ---------------------------------------------------------------------------

def _check_contraction_matrix(A: np.ndarray, N: int) -> np.ndarray:
    A = np.asarray(A, float)
    if A.shape != (N, N):
        raise ShapeError(f"A must be {N}x{N}, got {A.shape}")
    return A


def _require_pairs(moments: MomentSet) -> None:
    moments.require_store()
    if moments.num_store_samples < 2:
        raise ContractError(
            "second-order sandwich estimates need at least 2 retained samples"
        )


def sandwich_kk(moments: MomentSet, A: np.ndarray) -> np.ndarray:
    """Unbiased estimate of E[Delta_K A Delta_K] over the retained store.

    Uses the (S - 1) normalization; the inverse-width suppression of the
    fluctuations is carried by the samples themselves, so no explicit 1/n
    factor appears downstream.
    """
    _require_pairs(moments)
    A = _check_contraction_matrix(A, moments.num_points)
    dK = moments.delta_K
    S = dK.shape[0]
    out = np.einsum("sij,sjk->ik", dK @ A, dK) / (S - 1)
    if np.allclose(A, A.T):
        out = (out + out.T) / 2.0
    return out


def sandwich_kc(moments: MomentSet, A: np.ndarray) -> np.ndarray:
    """Estimate of E[Delta_K A Delta_C] with matched per-sample pairing."""
    _require_pairs(moments)
    A = _check_contraction_matrix(A, moments.num_points)
    dK, dC = moments.delta_K, moments.delta_C
    S = dK.shape[0]
    return np.einsum("sij,sjk->ik", dK @ A, dC) / (S - 1)


def sandwich_ck(moments: MomentSet, A: np.ndarray) -> np.ndarray:
    """Estimate of E[Delta_C A Delta_K] with matched per-sample pairing."""
    _require_pairs(moments)
    A = _check_contraction_matrix(A, moments.num_points)
    dK, dC = moments.delta_K, moments.delta_C
    S = dK.shape[0]
    return np.einsum("sij,sjk->ik", dC @ A, dK) / (S - 1)


def sandwich_bk(moments: MomentSet, A: np.ndarray) -> np.ndarray:
    """Estimate of the row vector E[Delta_b^T A Delta_K]."""
    _require_pairs(moments)
    A = _check_contraction_matrix(A, moments.num_points)
    dK, db = moments.delta_K, moments.delta_b
    S = dK.shape[0]
    return np.einsum("sj,sjk->k", db @ A, dK) / (S - 1)


def sandwich_kkk(moments: MomentSet, A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Estimate of the third-order insertion E[Delta_K A Delta_K B Delta_K].

    Plain 1/S average of the per-sample products (a single retained sample
    reproduces Delta A Delta B Delta exactly).  Contributes at the
    O(n^{-3/2}) scale of the power counting, one order below the quadratic
    sandwiches.
    """
    moments.require_store()
    N = moments.num_points
    A = _check_contraction_matrix(A, N)
    B = _check_contraction_matrix(B, N)
    dK = moments.delta_K
    S = dK.shape[0]
    inner = (dK @ A) @ dK @ B
    return np.einsum("sij,sjk->ik", inner, dK) / S


# ---------------------------------------------------------------------------
# Explicit vertex tensor (small point sets only)
# ---------------------------------------------------------------------------

_VERTEX_TRANSPOSES = (
    (0, 1, 2, 3), (1, 0, 2, 3), (0, 1, 3, 2), (1, 0, 3, 2),
    (2, 3, 0, 1), (3, 2, 0, 1), (2, 3, 1, 0), (3, 2, 1, 0),
)


@dataclass(frozen=True)
class VertexTensor:
    """Width-scaled fourth moment of kernel fluctuations.

    ``values[a, b, c, d]`` estimates n * Cov(K_ab, K_cd); dividing by the
    width recovers E[Delta_ab Delta_cd].  The full 8-element index symmetry
    group is enforced by symmetrization.
    """

    values: np.ndarray
    width_used: int

    def __post_init__(self):
        v = self.values
        if v.ndim != 4 or len(set(v.shape)) != 1:
            raise ShapeError(f"vertex tensor must be (N,N,N,N), got {v.shape}")

    @property
    def num_points(self) -> int:
        return self.values.shape[0]

    def pair_matrix(self) -> np.ndarray:
        """The tensor as an (N^2 x N^2) matrix over index pairs."""
        N = self.num_points
        return self.values.reshape(N * N, N * N)


def symmetrize_vertex(values: np.ndarray) -> np.ndarray:
    """Average over the 8 index symmetries (within-pair swaps, pair exchange)."""
    out = np.zeros_like(values)
    for perm in _VERTEX_TRANSPOSES:
        out += values.transpose(perm)
    return out / len(_VERTEX_TRANSPOSES)


def _vertex_budget_check(N: int, max_points: int, memory_budget: int) -> None:
    need = 8 * N**4
    if N > max_points or need > memory_budget:
        raise BudgetError(
            f"explicit vertex for N={N} needs {need / 2**20:.0f} MiB "
            f"(cap: N <= {max_points}, {memory_budget / 2**30:.1f} GiB); "
            "use the sandwich contractions instead"
        )


def vertex_from_moments(
    moments: MomentSet,
    max_points: int = VERTEX_MAX_POINTS,
    memory_budget: int = VERTEX_MEMORY_BUDGET,
) -> VertexTensor:
    """Explicit vertex from an already-retained fluctuation store.

    Shares the exact sample set with the sandwich estimators, so
    ``width * sandwich_kk(A)`` equals ``vertex_contract(., A)`` up to
    floating-point reassociation.
    """
    _require_pairs(moments)
    N = moments.num_points
    _vertex_budget_check(N, max_points, memory_budget)
    dK = moments.delta_K
    S = dK.shape[0]
    cov = np.einsum("sab,scd->abcd", dK, dK) / (S - 1)
    return VertexTensor(values=symmetrize_vertex(moments.width * cov),
                        width_used=moments.width)


def estimate_vertex(
    spec: EnsembleSpec,
    X: np.ndarray,
    num_samples: int,
    seed: int,
    max_points: int = VERTEX_MAX_POINTS,
    memory_budget: int = VERTEX_MEMORY_BUDGET,
) -> VertexTensor:
    """Estimate the vertex tensor on a small point set from fresh draws."""
    X = np.asarray(X, float)
    N = X.shape[0]
    _vertex_budget_check(N, max_points, memory_budget)
    if num_samples < 2:
        raise ContractError("vertex estimation requires num_samples >= 2")
    n = spec.width
    K_stack = np.empty((num_samples, N, N))
    for s in range(num_samples):
        phi = forward_features(sample_network(spec, derive_seed(seed, s)), X).values
        K = phi @ phi.T / n
        K_stack[s] = (K + K.T) / 2.0
    dK = K_stack - K_stack.mean(axis=0)
    cov = np.einsum("sab,scd->abcd", dK, dK) / (num_samples - 1)
    return VertexTensor(values=symmetrize_vertex(n * cov), width_used=n)


def vertex_contract(vertex: VertexTensor, A: np.ndarray) -> np.ndarray:
    """Exact contraction (V * A)_ad = sum_bc V_(ab)(cd) A_bc."""
    A = _check_contraction_matrix(A, vertex.num_points)
    return np.einsum("abcd,bc->ad", vertex.values, A)


# ---------------------------------------------------------------------------
# Perturbative control parameter
# ---------------------------------------------------------------------------

def control_parameter_stats(moments: MomentSet, gamma: float) -> tuple[float, float]:
    """Mean and standard error of the spectral norms ||G0 Delta_K,s||_2."""
    moments.require_store()
    g0 = stabilized_inverse(moments.mean_K, gamma)
    norms = np.linalg.svd(g0 @ moments.delta_K, compute_uv=False)[:, 0]
    S = norms.shape[0]
    stderr = float(norms.std(ddof=1) / np.sqrt(S)) if S > 1 else 0.0
    return float(norms.mean()), stderr


def control_parameter(moments: MomentSet, gamma: float) -> float:
    """E||G0 Delta_K||_2: the expansion is trusted while this stays below 1."""
    mean, _ = control_parameter_stats(moments, gamma)
    return mean


# ---------------------------------------------------------------------------
# Binary snapshot
# ---------------------------------------------------------------------------

_SNAPSHOT_MAGIC = b"RFMS"
_SNAPSHOT_VERSION = 1


def _write_array(buf: io.BufferedIOBase, arr: np.ndarray) -> None:
    arr = np.ascontiguousarray(arr, dtype="<f8")
    buf.write(struct.pack("<I", arr.ndim))
    buf.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
    buf.write(arr.tobytes(order="C"))


def _read_array(buf: io.BufferedIOBase) -> np.ndarray:
    (ndim,) = struct.unpack("<I", buf.read(4))
    shape = struct.unpack(f"<{ndim}Q", buf.read(8 * ndim))
    count = int(np.prod(shape)) if shape else 1
    data = np.frombuffer(buf.read(8 * count), dtype="<f8")
    return data.reshape(shape).astype(float)


def save_moments(moments: MomentSet, path) -> None:
    """Snapshot a MomentSet (little-endian float64, row-major) for reuse."""
    flags = (1 if moments.mean_kx is not None else 0) \
        | (2 if moments.delta_K is not None else 0)
    with open(path, "wb") as fh:
        fh.write(_SNAPSHOT_MAGIC)
        fh.write(struct.pack("<IIQQ", _SNAPSHOT_VERSION, flags,
                             moments.num_samples, moments.width))
        fh.write(struct.pack("<d", moments.c_scalar))
        _write_array(fh, moments.mean_K)
        _write_array(fh, moments.mean_C)
        _write_array(fh, moments.mean_b)
        if moments.mean_kx is not None:
            _write_array(fh, moments.mean_kx)
        if moments.delta_K is not None:
            _write_array(fh, moments.delta_K)
            _write_array(fh, moments.delta_C)
            _write_array(fh, moments.delta_b)


def load_moments(path) -> MomentSet:
    """Load a snapshot written by :func:`save_moments`."""
    with open(path, "rb") as fh:
        if fh.read(4) != _SNAPSHOT_MAGIC:
            raise ContractError(f"{path} is not a moment snapshot")
        version, flags, num_samples, width = struct.unpack("<IIQQ", fh.read(24))
        if version != _SNAPSHOT_VERSION:
            raise ContractError(f"unsupported snapshot version {version}")
        (c_scalar,) = struct.unpack("<d", fh.read(8))
        mean_K = _read_array(fh)
        mean_C = _read_array(fh)
        mean_b = _read_array(fh)
        mean_kx = _read_array(fh) if flags & 1 else None
        store = {}
        if flags & 2:
            store = dict(delta_K=_read_array(fh), delta_C=_read_array(fh),
                         delta_b=_read_array(fh))
    return MomentSet(
        mean_K=mean_K, mean_C=mean_C, mean_b=mean_b, c_scalar=c_scalar,
        num_samples=int(num_samples), width=int(width), mean_kx=mean_kx, **store,
    )
