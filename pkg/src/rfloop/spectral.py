"""Eigenbasis forms of the tree and one-loop quantities.

Diagonalizing the mean kernel turns the resolvent into scalar weights
1 / (rho_i + gamma), which makes the loop structure explicit: the tree-level
training error is a single eigen-sum, while the one-loop correction couples
eigenmodes pairwise through the vertex projected into the eigenbasis.  These
forms double as an independent evaluation path for the matrix-space results
and as the source of the resolvent scaling bounds.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError, ShapeError
from .fluctuation import MomentSet, VertexTensor, symmetrize_vertex
from .kernelcore import _check_square_symmetric

EIG_NEG_TOL = 1e-10
ORTHO_TOL = 1e-10
RECON_RTOL = 1e-8


@dataclass(frozen=True)
class SpectralBasis:
    """Eigensystem of a mean kernel together with its resolvent weights.

    Eigenvalues are sorted non-increasing; small negative estimates (MC noise
    on a PSD matrix) are clipped to zero before the resolvent weights
    1 / (rho_i + gamma) are formed.
    """

    eigenvalues: np.ndarray
    basis: np.ndarray
    resolvent_weights: np.ndarray
    gamma: float

    @property
    def size(self) -> int:
        return self.eigenvalues.shape[0]

    def rotate(self, a: np.ndarray) -> np.ndarray:
        """Coordinates of a vector (or the congruence of a matrix) in the eigenbasis."""
        if a.ndim == 1:
            return self.basis.T @ a
        return self.basis.T @ a @ self.basis


def spectral_decompose(mean_K: np.ndarray, gamma: float) -> SpectralBasis:
    """Eigendecomposition of the mean kernel with validated reconstruction."""
    mean_K = _check_square_symmetric(mean_K, "mean_K")
    if gamma < 0:
        raise ContractError(f"gamma must be non-negative, got {gamma}")
    w, Q = np.linalg.eigh((mean_K + mean_K.T) / 2.0)
    rho = w[::-1].copy()
    U = Q[:, ::-1].copy()
    scale = max(1.0, float(np.abs(rho).max()))
    if rho[-1] < -max(EIG_NEG_TOL, 1e-12 * scale):
        raise ContractError(f"mean_K is not PSD within tolerance: min eig {rho[-1]:.3e}")
    ortho = float(np.max(np.abs(U.T @ U - np.eye(U.shape[0]))))
    if ortho > ORTHO_TOL:
        raise ContractError(f"eigenbasis lost orthogonality: {ortho:.3e}")
    recon = float(np.max(np.abs((U * rho) @ U.T - mean_K)))
    if recon > RECON_RTOL * max(1.0, float(np.max(np.abs(mean_K)))):
        raise ContractError(f"eigendecomposition reconstruction error {recon:.3e}")
    weights = 1.0 / (np.clip(rho, 0.0, None) + gamma)
    return SpectralBasis(eigenvalues=rho, basis=U, resolvent_weights=weights,
                         gamma=float(gamma))


@dataclass(frozen=True)
class SpectralVertex:
    """Vertex tensor rotated into the mean-kernel eigenbasis (small N only)."""

    values: np.ndarray

    @property
    def size(self) -> int:
        return self.values.shape[0]

    def middle_trace(self) -> np.ndarray:
        """T[i, j, k] = V~_(ik)(kj): the contraction pattern of the loop sums."""
        return np.einsum("ikkj->ijk", self.values)


def vertex_to_eigenbasis(vertex: VertexTensor, basis: SpectralBasis) -> SpectralVertex:
    """Rotate all four vertex indices into the eigenbasis."""
    if vertex.num_points != basis.size:
        raise ShapeError("vertex and basis sizes differ")
    U = basis.basis
    rotated = np.einsum("abcd,ai,bj,ck,dl->ijkl", vertex.values, U, U, U, U,
                        optimize=True)
    return SpectralVertex(values=symmetrize_vertex(rotated))


def spectral_train_tree(basis: SpectralBasis, y: np.ndarray, N: int) -> float:
    """(gamma^2 / N) * sum_i y~_i^2 / (rho_i + gamma)^2."""
    yt = basis.rotate(np.asarray(y, float))
    lam = basis.resolvent_weights
    return basis.gamma**2 / N * float(np.sum(yt**2 * lam**2))


def _loop_weight_sum(yt, lam, T) -> float:
    # sum_ijk y~_i y~_j T_ijk (l_i^2 l_j l_k + l_i l_j^2 l_k + l_i l_j l_k^2)
    w = (
        np.einsum("i,j,k->ijk", lam**2, lam, lam)
        + np.einsum("i,j,k->ijk", lam, lam**2, lam)
        + np.einsum("i,j,k->ijk", lam, lam, lam**2)
    )
    return float(np.einsum("i,j,ijk,ijk->", yt, yt, T, w))


def spectral_train_oneloop(
    basis: SpectralBasis,
    spectral_vertex: SpectralVertex,
    y: np.ndarray,
    n: int,
    N: int,
    gamma: float,
) -> float:
    """One-loop training correction as a triple eigen-sum.

    The vertex tensor carries the n-scaled covariance convention
    (values = n * Cov), so the 1/n here restores the physical fluctuation
    scale and the result matches the matrix-space sandwich path exactly.
    """
    _check_gamma(basis, gamma)
    if spectral_vertex.size != basis.size:
        raise ShapeError("vertex and basis sizes differ")
    yt = basis.rotate(np.asarray(y, float))
    total = _loop_weight_sum(yt, basis.resolvent_weights, spectral_vertex.middle_trace())
    return gamma**2 / (N * n) * total


def resolvent_bound(
    basis: SpectralBasis,
    spectral_vertex: SpectralVertex,
    y: np.ndarray,
    n: int,
    N: int,
    gamma: float,
) -> tuple[float, float]:
    """Upper bounds on the tree and one-loop training terms.

    tree <= gamma^2 ||y||^2 / (N (rho_min + gamma)^2), and the one-loop
    magnitude is bounded by 3 gamma^2 V* / (N n) times the k-summed
    |y~_i||y~_j| mass over (rho_min + gamma)^4, with V* the largest
    middle-trace vertex entry.
    """
    _check_gamma(basis, gamma)
    y = np.asarray(y, float)
    yt = basis.rotate(y)
    rho_min = float(np.clip(basis.eigenvalues, 0.0, None).min())
    denom = rho_min + gamma
    bound_tree = gamma**2 * float(y @ y) / (N * denom**2)
    v_star = float(np.abs(spectral_vertex.middle_trace()).max())
    mass = basis.size * float(np.abs(yt).sum()) ** 2
    bound_oneloop = 3.0 * gamma**2 / (N * n) * v_star * mass / denom**4
    return bound_tree, bound_oneloop


def spectral_test_tree(basis: SpectralBasis, moments: MomentSet, y: np.ndarray) -> float:
    """Tree-level test error as eigen-sums of the projected population operators."""
    if moments.num_points != basis.size:
        raise ShapeError("moments and basis sizes differ")
    yt = basis.rotate(np.asarray(y, float))
    ct = basis.rotate(moments.mean_C)
    bt = basis.rotate(moments.mean_b)
    u = basis.resolvent_weights * yt
    return float(u @ (ct @ u)) - 2.0 * float(bt @ u) + moments.c_scalar


def population_split(moments: MomentSet) -> tuple[np.ndarray, np.ndarray]:
    """Split the empirical population operator into its mean-kernel part and
    the width-scaled remainder.

    C0 is built from the Monte-Carlo mean train-test kernel; C1 is
    n * (mean_C - C0), the estimate of the width-suppressed correction.
    """
    if moments.mean_kx is None:
        raise ContractError("population_split needs the retained mean cross kernel")
    M = moments.mean_kx.shape[1]
    c0 = moments.mean_kx @ moments.mean_kx.T / M
    c0 = (c0 + c0.T) / 2.0
    c1 = moments.width * (moments.mean_C - c0)
    return c0, c1


def c1_spectral_term(
    basis: SpectralBasis, moments_small_m: MomentSet, y: np.ndarray, n: int
) -> float:
    """Eigen-sum of the population-operator correction (validation only).

    (1/n) sum_ij y~_i C1~_ij y~_j / ((rho_i + gamma)(rho_j + gamma)); equals
    the difference between the empirical-operator and split-operator test
    tree conventions, confirming the two agree to the retained order.
    """
    if moments_small_m.num_points != basis.size:
        raise ShapeError("moments and basis sizes differ")
    _, c1 = population_split(moments_small_m)
    yt = basis.rotate(np.asarray(y, float))
    u = basis.resolvent_weights * yt
    c1t = basis.rotate(c1)
    return float(u @ (c1t @ u)) / n


def _check_gamma(basis: SpectralBasis, gamma: float) -> None:
    if abs(gamma - basis.gamma) > 1e-15 * max(1.0, abs(gamma)):
        raise ContractError(
            f"gamma {gamma} differs from the basis gamma {basis.gamma}"
        )
