"""Normalized kernels, ridge regression, and per-realization observables.

All kernels use the 1/width normalization K = Phi Phi^T / n so that they stay
O(1) as the feature width grows.  The ridge strength enters everywhere as the
kernel-level parameter ``gamma`` = N * lambda / n; the primal penalty is never
stored separately.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ensemble import FeatureMatrix
from .errors import ContractError, NumericError, ShapeError

# Relative tolerances for the structural checks on kernel matrices.
SYMMETRY_RTOL = 1e-10
PSD_EIG_TOL = 1e-10


@dataclass(frozen=True)
class InverseInfo:
    """Diagnostics from one stabilized inversion."""

    jitter: float
    eigenvalues: np.ndarray  # clipped spectrum of M, before the gamma shift

    @property
    def jitter_engaged(self) -> bool:
        return self.jitter > 0.0


def _check_square_symmetric(M: np.ndarray, what: str) -> np.ndarray:
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ShapeError(f"{what} must be square, got shape {M.shape}")
    if not np.all(np.isfinite(M)):
        raise NumericError(f"{what} contains non-finite entries")
    scale = max(1.0, float(np.max(np.abs(M))))
    asym = float(np.max(np.abs(M - M.T)))
    if asym > SYMMETRY_RTOL * scale:
        raise ContractError(f"{what} is not symmetric: max asymmetry {asym:.3e}")
    return M


def stabilized_inverse_info(M: np.ndarray, gamma: float) -> tuple[np.ndarray, InverseInfo]:
    """(M + gamma I)^-1 by eigendecomposition, with diagnostics.

    Negative eigenvalues of M (noise on a PSD estimate) are clipped to zero.
    If the gamma shift alone leaves the smallest shifted eigenvalue below
    1e-14 of the largest, an adaptive jitter starting at 1e-10 is added and
    doubled until every shifted eigenvalue clears machine-epsilon scale.
    """
    M = _check_square_symmetric(M, "M")
    if gamma < 0:
        raise ContractError(f"gamma must be non-negative, got {gamma}")
    w, Q = np.linalg.eigh((M + M.T) / 2.0)
    w = np.clip(w, 0.0, None)
    shifted = w + gamma
    smin, smax = float(shifted[0]), float(shifted[-1])
    jitter = 0.0
    if smax == 0.0 or smin < 1e-14 * smax:
        jitter = 1e-10
        eps = np.finfo(float).eps
        while smin + jitter <= eps * (smax + jitter):
            jitter *= 2.0
    inv = (Q / (shifted + jitter)) @ Q.T
    inv = (inv + inv.T) / 2.0
    return inv, InverseInfo(jitter=jitter, eigenvalues=w)


def stabilized_inverse(M: np.ndarray, gamma: float) -> np.ndarray:
    """(M + gamma I)^-1 via the eigendecomposition-based stabilized path."""
    inv, _ = stabilized_inverse_info(M, gamma)
    return inv


def _feature_values(phi: FeatureMatrix | np.ndarray) -> np.ndarray:
    values = phi.values if isinstance(phi, FeatureMatrix) else np.asarray(phi, float)
    if values.ndim != 2:
        raise ShapeError("feature matrix must be 2-D (points x width)")
    return values


@dataclass(frozen=True)
class KernelBundle:
    """Train kernel, train-test cross kernel, and the ridge level for one draw.

    K is N x N with K = Phi Phi^T / n; column t of ``k_cross`` is the kernel
    vector of test point t, Phi phi(x_t) / n.
    """

    K: np.ndarray
    k_cross: np.ndarray
    gamma: float

    def __post_init__(self):
        K = _check_square_symmetric(self.K, "K")
        if self.k_cross.ndim != 2 or self.k_cross.shape[0] != K.shape[0]:
            raise ShapeError(
                f"k_cross must be (N x M) with N={K.shape[0]}, got {self.k_cross.shape}"
            )
        if not np.all(np.isfinite(self.k_cross)):
            raise NumericError("k_cross contains non-finite entries")
        # gamma = 0 is admitted for interpolation-limit checks; experiment
        # configs enforce strictly positive values.
        if self.gamma < 0:
            raise ContractError(f"gamma must be non-negative, got {self.gamma}")
        eigs = np.linalg.eigvalsh(K)
        scale = max(1.0, float(eigs[-1]))
        if eigs[0] < -PSD_EIG_TOL * scale:
            raise ContractError(f"K is not PSD within tolerance: min eig {eigs[0]:.3e}")

    @property
    def num_train(self) -> int:
        return self.K.shape[0]

    @property
    def num_test(self) -> int:
        return self.k_cross.shape[1]


def build_kernel_bundle(
    phi_train: FeatureMatrix | np.ndarray,
    phi_test: FeatureMatrix | np.ndarray,
    gamma: float,
) -> KernelBundle:
    """Form the normalized kernels of one feature realization."""
    train = _feature_values(phi_train)
    test = _feature_values(phi_test)
    if train.shape[1] != test.shape[1]:
        raise ShapeError("train and test features must share the same width")
    n = train.shape[1]
    K = train @ train.T / n
    K = (K + K.T) / 2.0
    k_cross = train @ test.T / n
    return KernelBundle(K=K, k_cross=k_cross, gamma=float(gamma))


def ridge_predict(bundle: KernelBundle, y: np.ndarray) -> np.ndarray:
    """Kernel-form ridge prediction k_cross^T (K + gamma I)^-1 y at the test points."""
    y = _check_vector(y, bundle.num_train, "y")
    inv = stabilized_inverse(bundle.K, bundle.gamma)
    return bundle.k_cross.T @ (inv @ y)


def train_error_direct(
    bundle: KernelBundle, phi: FeatureMatrix | np.ndarray, y: np.ndarray
) -> float:
    """Training error from the literal ridge solution in feature space.

    Solves the primal problem for the readout weights,
    w = (Phi^T Phi + N lambda I)^-1 Phi^T y with N lambda = gamma * n,
    and returns mean squared residual of Phi w against y.
    """
    values = _feature_values(phi)
    y = _check_vector(y, bundle.num_train, "y")
    if values.shape[0] != y.shape[0]:
        raise ShapeError("feature rows and y length differ")
    n = values.shape[1]
    gram = values.T @ values
    gram = (gram + gram.T) / 2.0
    inv = stabilized_inverse(gram, bundle.gamma * n)
    w = inv @ (values.T @ y)
    resid = values @ w - y
    return float(resid @ resid) / y.shape[0]


def train_error_resolvent(bundle: KernelBundle, y: np.ndarray) -> float:
    """Closed-form training error (gamma^2 / N) y^T (K + gamma I)^-2 y."""
    y = _check_vector(y, bundle.num_train, "y")
    inv = stabilized_inverse(bundle.K, bundle.gamma)
    v = inv @ y
    return bundle.gamma**2 / y.shape[0] * float(v @ v)


def test_error_direct(bundle: KernelBundle, y: np.ndarray, y_test: np.ndarray) -> float:
    """Mean squared prediction error over the fixed test points."""
    y_test = _check_vector(y_test, bundle.num_test, "y_test")
    resid = ridge_predict(bundle, y) - y_test
    return float(resid @ resid) / y_test.shape[0]


test_error_direct.__test__ = False  # not a pytest case despite the name


@dataclass(frozen=True)
class Observables:
    """Per-realization errors; gap is always the stored test - train difference."""

    train_error: float
    test_error: float
    gap: float


def evaluate_observables(
    bundle: KernelBundle, y: np.ndarray, y_test: np.ndarray
) -> Observables:
    """All three observables from a single stabilized inversion.

    Training error uses the closed resolvent form (exactly equal to the
    direct definition; see train_error_direct / train_error_resolvent).
    """
    y = _check_vector(y, bundle.num_train, "y")
    y_test = _check_vector(y_test, bundle.num_test, "y_test")
    inv = stabilized_inverse(bundle.K, bundle.gamma)
    v = inv @ y
    train = bundle.gamma**2 / y.shape[0] * float(v @ v)
    resid = bundle.k_cross.T @ v - y_test
    test = float(resid @ resid) / y_test.shape[0]
    return Observables(train_error=train, test_error=test, gap=test - train)


def _check_vector(y: np.ndarray, length: int, what: str) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    if y.ndim != 1 or y.shape[0] != length:
        raise ShapeError(f"{what} must be a vector of length {length}, got {y.shape}")
    return y
