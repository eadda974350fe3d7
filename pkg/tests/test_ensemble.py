"""Sampling and feature-map contracts."""

import numpy as np
import pytest

from conftest import analytic_gauss_kernel
from rfloop import (
    ContractError,
    EnsembleSpec,
    NetworkParams,
    NumericError,
    ShapeError,
    derive_seed,
    forward_features,
    sample_network,
)


def test_zero_scales_give_exactly_zero_parameters():
    spec = EnsembleSpec(input_dim=3, depth=2, width=5, weight_scale=0.0, bias_scale=0.0)
    params = sample_network(spec, seed=12345)
    for w, b in zip(params.weights, params.biases):
        assert np.all(w == 0.0)
        assert np.all(b == 0.0)


def test_layer1_weight_variance_matches_scale():
    # ~1e5 weight entries in layer 1; sample variance of iid normals has
    # stderr sigma^2 * sqrt(2 / (m - 1)).
    n0 = 98
    spec = EnsembleSpec(input_dim=n0, depth=1, width=1024,
                        weight_scale=1.0, bias_scale=0.05)
    w = sample_network(spec, seed=7).weights[0]
    target = 1.0 / n0
    m = w.size
    stderr = target * np.sqrt(2.0 / (m - 1))
    assert abs(w.var() - target) < 5 * stderr


def test_sampling_is_bitwise_deterministic():
    spec = EnsembleSpec(input_dim=2, depth=3, width=16)
    a = sample_network(spec, seed=99)
    b = sample_network(spec, seed=99)
    for wa, wb in zip(a.weights, b.weights):
        assert np.array_equal(wa, wb)
    for ba, bb in zip(a.biases, b.biases):
        assert np.array_equal(ba, bb)
    c = sample_network(spec, seed=100)
    assert not np.array_equal(a.weights[0], c.weights[0])


def test_forward_features_deterministic_given_spec_and_seed(rng):
    spec = EnsembleSpec(input_dim=2, depth=2, width=8)
    X = rng.standard_normal((5, 2))
    f1 = forward_features(sample_network(spec, 3), X).values
    f2 = forward_features(sample_network(spec, 3), X).values
    assert np.array_equal(f1, f2)


def test_single_linear_layer_on_identity_inputs(rng):
    W = rng.standard_normal((6, 4))
    params = NetworkParams(weights=(W,), biases=(np.zeros(6),), seed=0,
                           activation="identity")
    feats = forward_features(params, np.eye(4)).values
    assert np.allclose(feats, W.T, atol=0, rtol=0)


def test_all_zero_parameters_give_zero_tanh_features(rng):
    spec = EnsembleSpec(input_dim=2, depth=2, width=4,
                        weight_scale=0.0, bias_scale=0.0, activation="tanh")
    feats = forward_features(sample_network(spec, 1), rng.standard_normal((3, 2)))
    assert np.all(feats.values == 0.0)


def test_depth2_tanh_matches_scalar_loop_oracle(rng):
    spec = EnsembleSpec(input_dim=2, depth=2, width=7, activation="tanh")
    params = sample_network(spec, seed=11)
    X = rng.standard_normal((3, 2))
    fast = forward_features(params, X).values

    # Hand-rolled evaluation, one scalar at a time.
    expected = np.zeros((3, 7))
    for j in range(3):
        z1 = [
            sum(params.weights[0][i, k] * X[j, k] for k in range(2))
            + params.biases[0][i]
            for i in range(7)
        ]
        for i in range(7):
            expected[j, i] = (
                sum(params.weights[1][i, k] * np.tanh(z1[k]) for k in range(7))
                + params.biases[1][i]
            )
    assert np.allclose(fast, expected, rtol=1e-12, atol=1e-14)


def test_depth1_mean_kernel_matches_analytic_within_5_stderr():
    spec = EnsembleSpec(input_dim=3, depth=1, width=8,
                        weight_scale=1.0, bias_scale=0.05)
    rng = np.random.default_rng(5)
    X = rng.standard_normal((2, 3))
    expected = analytic_gauss_kernel(X, X, spec.weight_scale, spec.bias_scale)[0, 1]

    reps = 10_000
    vals = np.empty(reps)
    for r in range(reps):
        phi = forward_features(sample_network(spec, derive_seed(77, r)), X).values
        vals[r] = phi[0] @ phi[1] / spec.width
    stderr = vals.std(ddof=1) / np.sqrt(reps)
    assert abs(vals.mean() - expected) < 5 * stderr


def test_input_scaling_scales_linear_kernel_quadratically(rng):
    spec = EnsembleSpec(input_dim=2, depth=1, width=16,
                        weight_scale=1.3, bias_scale=0.0, activation="identity")
    params = sample_network(spec, 21)
    X = rng.standard_normal((4, 2))
    c = 3.7
    K1 = forward_features(params, X).values @ forward_features(params, X).values.T
    K2 = forward_features(params, c * X).values @ forward_features(params, c * X).values.T
    assert np.allclose(K2, c**2 * K1, rtol=1e-12)
    # ... and the analytic mean kernel scales the same way.
    G1 = analytic_gauss_kernel(X, X, 1.3, 0.0)
    G2 = analytic_gauss_kernel(c * X, c * X, 1.3, 0.0)
    assert np.allclose(G2, c**2 * G1, rtol=1e-14)


def test_forward_rejects_wrong_input_width(rng):
    params = sample_network(EnsembleSpec(input_dim=3, depth=1, width=4), 0)
    with pytest.raises(ShapeError):
        forward_features(params, rng.standard_normal((5, 2)))


def test_forward_rejects_non_finite_inputs():
    params = sample_network(EnsembleSpec(input_dim=2, depth=1, width=4), 0)
    X = np.array([[1.0, np.nan]])
    with pytest.raises(NumericError):
        forward_features(params, X)


def test_spec_validation_rejects_bad_values():
    with pytest.raises(ContractError):
        EnsembleSpec(input_dim=0, depth=1, width=4)
    with pytest.raises(ContractError):
        EnsembleSpec(input_dim=1, depth=1, width=4, weight_scale=-0.1)
    with pytest.raises(ContractError):
        EnsembleSpec(input_dim=1, depth=1, width=4, activation="selu")


def test_derive_seed_is_stable_and_stream_sensitive():
    a = derive_seed(123, 1, 2)
    assert a == derive_seed(123, 1, 2)
    assert a != derive_seed(123, 2, 1)
    assert a != derive_seed(124, 1, 2)
