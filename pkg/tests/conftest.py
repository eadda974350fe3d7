"""Shared oracle helpers for the test suite.

These are intentionally independent of the library's own evaluation paths:
analytic Gaussian kernels, Wick-factorized vertices, and literal index-loop
contractions that the fast einsum implementations are checked against.
"""

from __future__ import annotations

import numpy as np
import pytest

from rfloop import EnsembleSpec, derive_seed, forward_features, sample_network


def rand_psd(rng: np.random.Generator, size: int, scale: float = 1.0) -> np.ndarray:
    """Random symmetric PSD matrix with O(scale) spectrum."""
    A = rng.standard_normal((size, size))
    M = A @ A.T * (scale / size)
    return (M + M.T) / 2.0


def analytic_gauss_kernel(X1: np.ndarray, X2: np.ndarray, weight_scale: float,
                          bias_scale: float) -> np.ndarray:
    """Exact mean kernel of depth-1 features: C_W <x, x'> / n0 + C_b."""
    n0 = X1.shape[1]
    return weight_scale * (X1 @ X2.T) / n0 + bias_scale


def wick_vertex(G: np.ndarray) -> np.ndarray:
    """Gaussian-feature vertex V_(ab)(cd) = G_ac G_bd + G_ad G_bc."""
    return np.einsum("ac,bd->abcd", G, G) + np.einsum("ad,bc->abcd", G, G)


def wick_vertex_entry(G: np.ndarray, a: int, b: int, c: int, d: int) -> float:
    """Single Wick entry over a joint index set (train and test points alike)."""
    return G[a, c] * G[b, d] + G[a, d] * G[b, c]


def kernel_sample_stack(
    spec: EnsembleSpec,
    X: np.ndarray,
    num_samples: int,
    seed: int,
) -> np.ndarray:
    """Stack of normalized train kernels from independent draws (test-side path)."""
    N = X.shape[0]
    out = np.empty((num_samples, N, N))
    for s in range(num_samples):
        phi = forward_features(sample_network(spec, derive_seed(seed, s)), X).values
        K = phi @ phi.T / spec.width
        out[s] = (K + K.T) / 2.0
    return out


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20240817)
