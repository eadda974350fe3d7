"""Kernel construction, stabilized inversion, and the error identities."""

import numpy as np
import pytest

from conftest import rand_psd
from rfloop import (
    ContractError,
    EnsembleSpec,
    KernelBundle,
    NumericError,
    ShapeError,
    build_kernel_bundle,
    evaluate_observables,
    forward_features,
    ridge_predict,
    sample_network,
    stabilized_inverse,
    test_error_direct,
    train_error_direct,
    train_error_resolvent,
)
from rfloop.kernelcore import stabilized_inverse_info


def _random_bundle(rng, N=5, M=7, n=12, gamma=0.2):
    phi_tr = rng.standard_normal((N, n))
    phi_te = rng.standard_normal((M, n))
    bundle = build_kernel_bundle(phi_tr, phi_te, gamma)
    return bundle, phi_tr, rng.standard_normal(N), rng.standard_normal(M)


class TestStabilizedInverse:
    def test_identity_with_unit_gamma(self):
        assert np.allclose(stabilized_inverse(np.eye(3), 1.0), 0.5 * np.eye(3))

    def test_identity_with_zero_gamma(self):
        assert np.allclose(stabilized_inverse(np.eye(3), 0.0), np.eye(3))

    def test_multiply_back_on_random_psd(self, rng):
        M = rand_psd(rng, 8)
        gamma = 0.3
        inv = stabilized_inverse(M, gamma)
        assert np.allclose(inv @ (M + gamma * np.eye(8)), np.eye(8), atol=1e-8)

    def test_jitter_starts_at_1e10th(self):
        # Fully singular input with gamma = 0: the first jitter value is used
        # as-is, so the inverse is exactly 1e10 on the diagonal.
        inv, info = stabilized_inverse_info(np.zeros((2, 2)), 0.0)
        assert info.jitter == 1e-10
        assert np.allclose(inv, 1e10 * np.eye(2))

    def test_no_jitter_when_gamma_dominates(self, rng):
        _, info = stabilized_inverse_info(rand_psd(rng, 5), 0.1)
        assert not info.jitter_engaged

    def test_rejects_asymmetric_input(self):
        with pytest.raises(ContractError):
            stabilized_inverse(np.array([[1.0, 0.5], [0.0, 1.0]]), 0.1)

    def test_rejects_non_finite_input(self):
        M = np.array([[1.0, np.inf], [np.inf, 1.0]])
        with pytest.raises(NumericError):
            stabilized_inverse(M, 0.1)


class TestRidgePredict:
    def test_interpolation_limit(self):
        bundle = KernelBundle(K=np.eye(4), k_cross=np.eye(4), gamma=0.0)
        y = np.array([1.0, -2.0, 0.5, 3.0])
        assert np.allclose(ridge_predict(bundle, y), y)

    def test_null_kernel_vector_predicts_zero(self, rng):
        bundle = KernelBundle(K=rand_psd(rng, 4), k_cross=np.zeros((4, 6)), gamma=0.1)
        assert np.allclose(ridge_predict(bundle, rng.standard_normal(4)), 0.0)

    def test_kernel_form_equals_primal_solution(self, rng):
        # Independent oracle: explicit primal weights via a dense solve.
        N, M, n, gamma = 4, 5, 9, 0.17
        phi_tr = rng.standard_normal((N, n))
        phi_te = rng.standard_normal((M, n))
        y = rng.standard_normal(N)
        bundle = build_kernel_bundle(phi_tr, phi_te, gamma)
        lam_N = gamma * n  # N * lambda
        w = np.linalg.solve(phi_tr.T @ phi_tr + lam_N * np.eye(n), phi_tr.T @ y)
        expected = phi_te @ w
        got = ridge_predict(bundle, y)
        assert np.allclose(got, expected, rtol=1e-8, atol=1e-10)

    def test_rejects_wrong_length_targets(self, rng):
        bundle, _, _, _ = _random_bundle(rng)
        with pytest.raises(ShapeError):
            ridge_predict(bundle, np.zeros(bundle.num_train + 1))


class TestTrainError:
    def test_zero_features_leave_full_residual(self):
        y = np.array([1.0, 2.0, -1.0])
        phi = np.zeros((3, 4))
        bundle = build_kernel_bundle(phi, np.zeros((2, 4)), 0.3)
        assert train_error_direct(bundle, phi, y) == pytest.approx(y @ y / 3)
        assert train_error_resolvent(bundle, y) == pytest.approx(y @ y / 3)

    def test_zero_gamma_interpolates(self, rng):
        # More features than points and an invertible K: exact interpolation.
        phi = rng.standard_normal((4, 16))
        bundle = build_kernel_bundle(phi, rng.standard_normal((2, 16)), 0.0)
        y = rng.standard_normal(4)
        assert train_error_direct(bundle, phi, y) < 1e-8
        assert train_error_resolvent(bundle, y) < 1e-8

    def test_diagonal_arithmetic_case(self):
        bundle = KernelBundle(K=np.eye(2), k_cross=np.zeros((2, 1)), gamma=1.0)
        y = np.array([2.0, 0.0])
        # (gamma^2 / N) * y^T (K + I)^-2 y = (1/2) * (4/4)
        assert train_error_resolvent(bundle, y) == pytest.approx(0.5)

    @pytest.mark.parametrize("trial", range(8))
    def test_direct_equals_resolvent(self, rng, trial):
        bundle, phi, y, _ = _random_bundle(rng, N=5 + trial % 3, n=8 + trial)
        direct = train_error_direct(bundle, phi, y)
        resolvent = train_error_resolvent(bundle, y)
        assert abs(direct - resolvent) <= 1e-10 * (1.0 + direct)

    def test_monotone_in_gamma(self, rng):
        for _ in range(20):
            phi = rng.standard_normal((6, 10))
            y = rng.standard_normal(6)
            grid = np.logspace(-3, 1, 9)
            errors = [
                train_error_resolvent(build_kernel_bundle(phi, phi, g), y)
                for g in grid
            ]
            diffs = np.diff(errors)
            assert np.all(diffs >= -1e-12)


class TestTestError:
    def test_perfect_predictions_give_zero(self):
        bundle = KernelBundle(K=np.eye(3), k_cross=np.eye(3), gamma=0.0)
        y = np.array([0.3, -1.0, 2.0])
        assert test_error_direct(bundle, y, y) == pytest.approx(0.0, abs=1e-28)

    def test_null_predictor_gives_second_moment(self, rng):
        bundle = KernelBundle(K=rand_psd(rng, 3), k_cross=np.zeros((3, 5)), gamma=0.2)
        y_test = rng.standard_normal(5)
        got = test_error_direct(bundle, rng.standard_normal(3), y_test)
        assert got == pytest.approx(y_test @ y_test / 5)

    @pytest.mark.parametrize("trial", range(6))
    def test_expand_the_square_oracle(self, rng, trial):
        # Quadratic form with C, b, c built from the same empirical measure.
        bundle, _, y, y_test = _random_bundle(rng, N=4, M=8, n=10, gamma=0.11)
        M = y_test.shape[0]
        C = bundle.k_cross @ bundle.k_cross.T / M
        b = bundle.k_cross @ y_test / M
        c = y_test @ y_test / M
        G = stabilized_inverse(bundle.K, bundle.gamma)
        v = G @ y
        quad = v @ (C @ v) - 2.0 * (b @ v) + c
        direct = test_error_direct(bundle, y, y_test)
        assert abs(direct - quad) <= 1e-10 * (1.0 + direct)


def test_gap_is_exact_difference(rng):
    bundle, _, y, y_test = _random_bundle(rng)
    obs = evaluate_observables(bundle, y, y_test)
    assert obs.gap == obs.test_error - obs.train_error


def test_gamma_convention_width_rescaling(rng):
    # Doubling the width while scaling the primal penalty as gamma*n/N keeps
    # gamma, and with it the kernel-level solution, unchanged.
    spec_small = EnsembleSpec(input_dim=1, depth=1, width=32)
    spec_large = EnsembleSpec(input_dim=1, depth=1, width=64)
    gamma, N = 0.05, 6
    assert gamma * spec_large.width / N == 2 * (gamma * spec_small.width / N)
    X = rng.standard_normal((N, 1))
    for spec in (spec_small, spec_large):
        phi = forward_features(sample_network(spec, 5), X)
        bundle = build_kernel_bundle(phi, phi, gamma)
        assert bundle.gamma == gamma


def test_bundle_rejects_negative_gamma(rng):
    with pytest.raises(ContractError):
        KernelBundle(K=np.eye(2), k_cross=np.zeros((2, 1)), gamma=-0.1)


def test_bundle_rejects_indefinite_kernel():
    K = np.array([[1.0, 0.0], [0.0, -0.5]])
    with pytest.raises(ContractError):
        KernelBundle(K=K, k_cross=np.zeros((2, 1)), gamma=0.1)
