"""Frozen random networks used as feature maps.

A network is sampled once from a Gaussian ensemble (layer-k weight entries
with variance ``weight_scale / fan_in``, bias entries with variance
``bias_scale``) and never trained.  Features are the final-layer
preactivations: the activation is applied between layers only, so a depth-1
network is a plain random affine map.

Sampling is counter-based: every layer of every network draws from its own
Philox stream keyed by ``(seed, layer)``, so replicates can be generated in
any order, or in parallel, without shared RNG state.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError, NumericError, ShapeError

ACTIVATIONS = {
    "tanh": np.tanh,
    "relu": lambda z: np.maximum(z, 0.0),
    "identity": lambda z: z,
}

_U64 = (1 << 64) - 1


def derive_seed(master_seed: int, *stream: int) -> int:
    """Derive an independent 64-bit seed for a named sub-stream.

    ``stream`` components identify the consumer (block tag, replicate index,
    grid coordinates, ...).  Distinct tuples give statistically independent
    seeds; the same tuple always gives the same seed.
    """
    words = []
    for part in stream:
        part = int(part) & _U64
        words.extend((part & 0xFFFFFFFF, part >> 32))
    ss = np.random.SeedSequence(entropy=int(master_seed) & _U64, spawn_key=tuple(words))
    return int(ss.generate_state(1, np.uint64)[0])


def _layer_rng(seed: int, layer: int) -> np.random.Generator:
    # 128-bit Philox key: high word = network seed, low word = layer index.
    key = ((int(seed) & _U64) << 64) | (int(layer) & _U64)
    return np.random.Generator(np.random.Philox(key=key))


@dataclass(frozen=True)
class EnsembleSpec:
    """Architecture and initialization scales of the frozen-network ensemble."""

    input_dim: int
    depth: int
    width: int
    weight_scale: float = 1.0
    bias_scale: float = 0.05
    activation: str = "tanh"

    def __post_init__(self):
        for name in ("input_dim", "depth", "width"):
            value = getattr(self, name)
            if not isinstance(value, (int, np.integer)) or value < 1:
                raise ContractError(f"{name} must be a positive integer, got {value!r}")
        if self.weight_scale < 0 or self.bias_scale < 0:
            raise ContractError("weight_scale and bias_scale must be non-negative")
        if self.activation not in ACTIVATIONS:
            raise ContractError(
                f"unknown activation {self.activation!r}; options: {sorted(ACTIVATIONS)}"
            )

    def layer_dims(self) -> list[tuple[int, int]]:
        """(fan_out, fan_in) for each of the ``depth`` layers."""
        dims = []
        fan_in = self.input_dim
        for _ in range(self.depth):
            dims.append((self.width, fan_in))
            fan_in = self.width
        return dims


@dataclass(frozen=True)
class NetworkParams:
    """One frozen draw: per-layer weight matrices and bias vectors."""

    weights: tuple[np.ndarray, ...]
    biases: tuple[np.ndarray, ...]
    seed: int
    activation: str = "tanh"

    def __post_init__(self):
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ShapeError("weights and biases must be non-empty, equal-length lists")
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.ndim != 1 or w.shape[0] != b.shape[0]:
                raise ShapeError(f"layer {k + 1} weight/bias shapes are inconsistent")
            if k > 0 and w.shape[1] != self.weights[k - 1].shape[0]:
                raise ShapeError(f"layer {k + 1} fan-in does not match layer {k} fan-out")
        if self.activation not in ACTIVATIONS:
            raise ContractError(f"unknown activation {self.activation!r}")

    @property
    def depth(self) -> int:
        return len(self.weights)

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[1]


@dataclass(frozen=True)
class FeatureMatrix:
    """Feature evaluations on a point set; row j holds phi(x_j)."""

    values: np.ndarray
    point_set_id: str = ""

    def __post_init__(self):
        if self.values.ndim != 2:
            raise ShapeError("feature values must be a 2-D (points x width) array")

    @property
    def num_points(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]


def sample_network(spec: EnsembleSpec, seed: int) -> NetworkParams:
    """Draw one network from the ensemble, bit-reproducibly in (spec, seed).

    Layer-k weight entries are i.i.d. N(0, weight_scale / fan_in) and bias
    entries i.i.d. N(0, bias_scale).  Each layer consumes its own keyed
    stream, so the draw does not depend on evaluation order.
    """
    weights, biases = [], []
    w_scale = float(spec.weight_scale)
    b_scale = float(spec.bias_scale)
    for layer, (fan_out, fan_in) in enumerate(spec.layer_dims()):
        rng = _layer_rng(seed, layer)
        w = rng.standard_normal((fan_out, fan_in)) * np.sqrt(w_scale / fan_in)
        b = rng.standard_normal(fan_out) * np.sqrt(b_scale)
        weights.append(w)
        biases.append(b)
    return NetworkParams(
        weights=tuple(weights), biases=tuple(biases), seed=int(seed),
        activation=spec.activation,
    )


def forward_features(
    params: NetworkParams, X: np.ndarray, point_set_id: str = ""
) -> FeatureMatrix:
    """Evaluate the feature map on a point set (rows of ``X``).

    Implements z1 = W1 x + b1, z_{k+1} = W_{k+1} sigma(z_k) + b_{k+1} and
    returns the final preactivation z_L row-wise; sigma is never applied to
    the last layer's output.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise ShapeError(f"X must be 2-D (points x input_dim), got ndim={X.ndim}")
    if X.shape[1] != params.input_dim:
        raise ShapeError(
            f"X has {X.shape[1]} columns but the network expects {params.input_dim}"
        )
    if not np.all(np.isfinite(X)):
        raise NumericError("X contains non-finite entries")

    act = ACTIVATIONS[params.activation]
    z = X @ params.weights[0].T + params.biases[0]
    _check_finite(z, layer=1)
    for k in range(1, params.depth):
        z = act(z) @ params.weights[k].T + params.biases[k]
        _check_finite(z, layer=k + 1)
    return FeatureMatrix(values=z, point_set_id=point_set_id)


def _check_finite(z: np.ndarray, layer: int) -> None:
    if not np.all(np.isfinite(z)):
        raise NumericError(f"non-finite preactivations at layer {layer}")
