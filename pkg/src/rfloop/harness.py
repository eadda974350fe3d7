"""Experiment drivers: datasets, sweep loops, fits, persistence, validation.

A sweep point runs three independent Monte-Carlo loops from disjoint seed
streams: (1) the empirical loop averages per-realization observables, (2) the
moment loop estimates the mean kernel and population operators, and (3) the
contraction loop retains centered fluctuations for the sandwich estimators.
Every value a sweep writes is a pure function of (config, master_seed), so a
rerun reproduces the CSV byte for byte.
"""

from __future__ import annotations

import json
import math
import platform
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import __version__
from .ensemble import (
    ACTIVATIONS,
    EnsembleSpec,
    derive_seed,
    forward_features,
    sample_network,
)
from .errors import ConfigError, ContractError, NumericError
from .fluctuation import (
    MomentSet,
    VertexTensor,
    control_parameter_stats,
    estimate_moments,
    estimate_vertex,
    symmetrize_vertex,
    vertex_contract,
    vertex_from_moments,
)
from .kernelcore import (
    Observables,
    build_kernel_bundle,
    evaluate_observables,
    stabilized_inverse,
    stabilized_inverse_info,
    test_error_direct,
    train_error_direct,
    train_error_resolvent,
)
from .loopexpand import LoopBreakdown, oneloop_train, predict, tree_test, tree_train
from .spectral import (
    resolvent_bound,
    spectral_decompose,
    spectral_test_tree,
    spectral_train_oneloop,
    spectral_train_tree,
    vertex_to_eigenbasis,
)

OBSERVABLES = ("train", "test", "gap")

TARGETS = {
    "sin2x": lambda x: np.sin(2.0 * x),
    "poly": lambda x: 0.4 * x**3 - 0.6 * x**2 + 0.2 * x,
    "abs": np.abs,
}

CSV_HEADER = (
    "sweep_kind,value_n,value_L,value_gamma,value_N,obs,"
    "emp_mean,emp_stderr,tree,one_loop,second_loop,total,control,flagged"
)

# Seed-stream tags; every Monte-Carlo loop of every sweep point gets its own.
_BLOCK_DATA = 0
_BLOCK_EMPIRICAL = 1
_BLOCK_MEAN = 2
_BLOCK_CONTRACTION = 3
_BLOCK_POINT_ID = 4


def _default_gammas() -> tuple[float, ...]:
    # The regularization sweep grid is a choice: 12 log-spaced points per decade
    # span between 1e-4 and 1.
    return tuple(float(g) for g in np.logspace(-4, 0, 12))


@dataclass(frozen=True)
class ExperimentConfig:
    """Resolved experiment parameters; defaults reproduce the full protocol.

    The ``fast`` profile (see :func:`apply_fast_profile`) shrinks replicate
    counts to 100/100/150 and caps widths at 1024 so that sweeps finish in
    minutes; the defaults here are the slow, full-scale settings.
    """

    target: str = "sin2x"
    n_train: int = 64
    n_test: int = 1024
    input_dim: int = 1
    depth: int = 2
    width: int = 1024
    weight_scale: float = 1.0
    bias_scale: float = 0.05
    activation: str = "tanh"
    gamma: float = 5e-3
    reps_empirical: int = 400
    reps_mean: int = 400
    reps_contraction: int = 600
    master_seed: int = 0
    widths: tuple[int, ...] = (256, 384, 512, 768, 1024, 1536, 2048)
    depths: tuple[int, ...] = (1, 2, 3)
    gammas: tuple[float, ...] = field(default_factory=_default_gammas)
    nn_train_sizes: tuple[int, ...] = (16, 32, 64, 128)
    nn_widths: tuple[int, ...] = (128, 256, 512, 1024)
    output_dir: str = "out"
    second_loop: bool = False
    workers: int = 1

    def __post_init__(self):
        if self.target not in TARGETS:
            raise ConfigError(f"unknown target {self.target!r}; options: {sorted(TARGETS)}")
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"unknown activation {self.activation!r}")
        for name in ("n_train", "n_test", "input_dim", "depth", "width",
                     "reps_empirical", "reps_mean", "reps_contraction", "workers"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be positive")
        if self.gamma <= 0:
            raise ConfigError("gamma must be positive")
        for name in ("widths", "depths", "gammas", "nn_train_sizes", "nn_widths"):
            values = getattr(self, name)
            if len(values) == 0:
                raise ConfigError(f"sweep list {name} must be non-empty")
            if any(b <= a for a, b in zip(values, values[1:])):
                raise ConfigError(f"sweep list {name} must be strictly increasing")
            if min(values) <= 0:
                raise ConfigError(f"sweep list {name} must be positive")

    def ensemble_spec(self, width: int | None = None, depth: int | None = None) -> EnsembleSpec:
        return EnsembleSpec(
            input_dim=self.input_dim,
            depth=self.depth if depth is None else depth,
            width=self.width if width is None else width,
            weight_scale=self.weight_scale,
            bias_scale=self.bias_scale,
            activation=self.activation,
        )

    @classmethod
    def from_json(cls, path) -> "ExperimentConfig":
        with open(path) as fh:
            raw = json.load(fh)
        return cls.from_dict(raw)

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        clean = dict(raw)
        for name in ("widths", "depths", "gammas", "nn_train_sizes", "nn_widths"):
            if name in clean:
                clean[name] = tuple(clean[name])
        return cls(**clean)

    def to_dict(self) -> dict:
        out = asdict(self)
        for name in ("widths", "depths", "gammas", "nn_train_sizes", "nn_widths"):
            out[name] = list(out[name])
        return out


def apply_fast_profile(config: ExperimentConfig) -> ExperimentConfig:
    """Desk-scale profile: replicate counts 100/100/150, widths capped at 1024."""
    widths = tuple(n for n in config.widths if n <= 1024) or (1024,)
    nn_widths = tuple(n for n in config.nn_widths if n <= 1024) or (1024,)
    return replace(
        config,
        reps_empirical=min(config.reps_empirical, 100),
        reps_mean=min(config.reps_mean, 100),
        reps_contraction=min(config.reps_contraction, 150),
        width=min(config.width, 1024),
        widths=widths,
        nn_widths=nn_widths,
    )


# ---------------------------------------------------------------------------
# Dataset
# ---------------------------------------------------------------------------

def make_dataset(
    config: ExperimentConfig,
    seed: int,
    n_train: int | None = None,
    n_test: int | None = None,
):
    """Standard-normal 1-D inputs with train-normalized targets.

    Targets are computed from the configured formula and then affinely mapped
    with the training-set mean and standard deviation; the same map is applied
    to the test targets.  Deterministic in ``seed``.
    """
    N = config.n_train if n_train is None else int(n_train)
    M = config.n_test if n_test is None else int(n_test)
    rng = np.random.default_rng(seed)
    X_train = rng.standard_normal((N, config.input_dim))
    X_test = rng.standard_normal((M, config.input_dim))
    f = TARGETS[config.target]
    y_train = f(X_train[:, 0])
    y_test = f(X_test[:, 0])
    mu = float(y_train.mean())
    sd = float(y_train.std())
    if sd == 0.0 or not math.isfinite(sd):
        raise ConfigError(
            f"training targets have zero variance (N={N}, target={config.target})"
        )
    return X_train, (y_train - mu) / sd, X_test, (y_test - mu) / sd


# ---------------------------------------------------------------------------
# Sweep records
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SweepRecord:
    """One sweep point: empirical statistics, predictions, and diagnostics."""

    sweep_kind: str
    n: int
    depth: int
    gamma: float
    n_train: int
    emp_mean: dict[str, float]
    emp_stderr: dict[str, float]
    breakdowns: dict[str, LoopBreakdown]
    control: float
    control_stderr: float
    flagged: bool
    wall_time: float
    seeds: dict[str, int]

    def rows(self) -> list[str]:
        """CSV rows (one per observable) under :data:`CSV_HEADER`."""
        rows = []
        for obs in OBSERVABLES:
            br = self.breakdowns[obs]
            second = "" if br.second_loop is None else _fmt(br.second_loop)
            rows.append(",".join([
                self.sweep_kind,
                str(self.n),
                str(self.depth),
                _fmt(self.gamma),
                str(self.n_train),
                obs,
                _fmt(self.emp_mean[obs]),
                _fmt(self.emp_stderr[obs]),
                _fmt(br.tree),
                _fmt(br.one_loop),
                second,
                _fmt(br.total),
                _fmt(self.control),
                "true" if self.flagged else "false",
            ]))
        return rows


def _fmt(x: float) -> str:
    return repr(float(x))


def _gamma_bits(gamma: float) -> int:
    return int(np.float64(gamma).view(np.uint64))


def run_point(
    config: ExperimentConfig,
    n: int,
    L: int,
    gamma: float,
    N: int,
    sweep_kind: str = "point",
) -> SweepRecord:
    """Evaluate one parameter point: empirical ensemble plus predictions.

    Non-finite realizations and points with control >= 1 are flagged but
    retained, so unstable corners (e.g. scale-invariant activations on
    non-smooth targets) show up in the output instead of vanishing from it.
    """
    t0 = time.perf_counter()
    spec = config.ensemble_spec(width=n, depth=L)
    gbits = _gamma_bits(gamma)
    seeds = {
        "data": derive_seed(config.master_seed, _BLOCK_DATA, N, config.n_test),
        "empirical": derive_seed(config.master_seed, _BLOCK_EMPIRICAL, n, L, gbits, N),
        "mean": derive_seed(config.master_seed, _BLOCK_MEAN, n, L, gbits, N),
        "contraction": derive_seed(config.master_seed, _BLOCK_CONTRACTION, n, L, gbits, N),
        "point": derive_seed(config.master_seed, _BLOCK_POINT_ID, n, L, gbits, N),
    }
    X_train, y_train, X_test, y_test = make_dataset(config, seeds["data"], n_train=N)

    emp = _empirical_loop(spec, X_train, y_train, X_test, y_test, gamma,
                          config.reps_empirical, seeds["empirical"], config.workers)
    emp_mean = {obs: float(np.mean(emp[obs])) for obs in OBSERVABLES}
    emp_stderr = {
        obs: float(np.std(emp[obs], ddof=1) / np.sqrt(len(emp[obs])))
        if len(emp[obs]) > 1 else 0.0
        for obs in OBSERVABLES
    }

    moments_mean = estimate_moments(
        spec, X_train, X_test, y_test, config.reps_mean, seeds["mean"],
        retain_samples=False, workers=config.workers,
    )
    moments_contr = estimate_moments(
        spec, X_train, X_test, y_test, config.reps_contraction, seeds["contraction"],
        retain_samples=True, workers=config.workers,
    )
    moments = moments_mean.with_store_from(moments_contr)

    control, control_stderr = control_parameter_stats(moments, gamma)
    breakdowns = predict(
        moments, y_train, gamma, include_second_loop=config.second_loop,
        seed_block=seeds["point"], control=control,
    )

    values = [control] + [emp_mean[o] for o in OBSERVABLES]
    for br in breakdowns.values():
        values += [br.tree, br.one_loop, br.total]
    flagged = control >= 1.0 or not all(math.isfinite(v) for v in values)

    return SweepRecord(
        sweep_kind=sweep_kind, n=n, depth=L, gamma=float(gamma), n_train=N,
        emp_mean=emp_mean, emp_stderr=emp_stderr, breakdowns=breakdowns,
        control=control, control_stderr=control_stderr, flagged=flagged,
        wall_time=time.perf_counter() - t0, seeds=seeds,
    )


def _empirical_loop(spec, X_train, y_train, X_test, y_test, gamma, reps, seed, workers):
    def one(r: int) -> Observables:
        params = sample_network(spec, derive_seed(seed, r))
        try:
            phi_tr = forward_features(params, X_train, "train")
            phi_te = forward_features(params, X_test, "test")
            bundle = build_kernel_bundle(phi_tr, phi_te, gamma)
            return evaluate_observables(bundle, y_train, y_test)
        except NumericError:
            return Observables(train_error=math.nan, test_error=math.nan, gap=math.nan)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(one, range(reps)))
    else:
        results = [one(r) for r in range(reps)]
    return {
        "train": np.array([o.train_error for o in results]),
        "test": np.array([o.test_error for o in results]),
        "gap": np.array([o.gap for o in results]),
    }


def sweep_width(config: ExperimentConfig) -> list[SweepRecord]:
    """Width sweep at fixed gamma (the primal penalty scales as gamma*n/N)."""
    return [
        run_point(config, n=n, L=config.depth, gamma=config.gamma,
                  N=config.n_train, sweep_kind="width")
        for n in config.widths
    ]


def sweep_depth(config: ExperimentConfig) -> list[SweepRecord]:
    """Depth sweep at fixed width."""
    return [
        run_point(config, n=config.width, L=L, gamma=config.gamma,
                  N=config.n_train, sweep_kind="depth")
        for L in config.depths
    ]


def sweep_gamma(config: ExperimentConfig) -> list[SweepRecord]:
    """Regularization sweep at fixed width and depth."""
    return [
        run_point(config, n=config.width, L=config.depth, gamma=g,
                  N=config.n_train, sweep_kind="gamma")
        for g in config.gammas
    ]


def sweep_nn(config: ExperimentConfig) -> list[SweepRecord]:
    """Joint grid over training-set size and feature width."""
    return [
        run_point(config, n=n, L=config.depth, gamma=config.gamma,
                  N=N, sweep_kind="nn")
        for N in config.nn_train_sizes
        for n in config.nn_widths
    ]


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------

def write_sweep_csv(records: list[SweepRecord], path) -> None:
    lines = [CSV_HEADER]
    for record in records:
        lines.extend(record.rows())
    with open(path, "w", newline="") as fh:
        fh.write("\n".join(lines) + "\n")


def write_manifest(config: ExperimentConfig, records: list[SweepRecord],
                   csv_name: str, path) -> None:
    manifest = {
        "config": config.to_dict(),
        "csv": csv_name,
        "versions": {
            "rfloop": __version__,
            "numpy": np.__version__,
            "python": platform.python_version(),
        },
        "records": [
            {
                "sweep_kind": r.sweep_kind, "n": r.n, "L": r.depth,
                "gamma": r.gamma, "N": r.n_train, "seeds": r.seeds,
                "control": r.control, "control_stderr": r.control_stderr,
                "flagged": r.flagged, "wall_time": r.wall_time,
            }
            for r in records
        ],
    }
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


# ---------------------------------------------------------------------------
# Power-law fitting
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PowerLawFit:
    slope: float
    intercept: float
    r_squared: float
    points_used: int


def fit_power_law(xs, ys) -> PowerLawFit:
    """Least-squares line on (log x, log y).

    Callers fitting signed corrections must pass magnitudes and drop exact
    zeros first; non-positive values are rejected here.
    """
    xs = np.asarray(xs, float)
    ys = np.asarray(ys, float)
    if xs.shape != ys.shape or xs.ndim != 1:
        raise ContractError("xs and ys must be 1-D arrays of equal length")
    if xs.shape[0] < 3:
        raise ContractError("power-law fit needs at least 3 points")
    if np.any(xs <= 0) or np.any(ys <= 0) or not np.all(np.isfinite(xs)) \
            or not np.all(np.isfinite(ys)):
        raise ContractError("power-law fit requires positive finite values")
    lx, ly = np.log(xs), np.log(ys)
    slope, intercept = np.polyfit(lx, ly, 1)
    resid = ly - (slope * lx + intercept)
    ss_res = float(resid @ resid)
    ss_tot = float(np.sum((ly - ly.mean()) ** 2))
    r2 = 1.0 if ss_tot == 0.0 else 1.0 - ss_res / ss_tot
    return PowerLawFit(slope=float(slope), intercept=float(intercept),
                       r_squared=r2, points_used=xs.shape[0])


# ---------------------------------------------------------------------------
# Validation battery
# ---------------------------------------------------------------------------

def validate(config: ExperimentConfig) -> dict:
    """Desk-scale identity and oracle battery; failures become report entries."""
    checks = []

    def check(name: str, fn) -> None:
        try:
            passed, detail = fn()
        except Exception as exc:  # a crashed check is a failed check
            passed, detail = False, f"raised {type(exc).__name__}: {exc}"
        checks.append({"name": name, "passed": bool(passed), "detail": detail})

    seed = derive_seed(config.master_seed, 1000)
    check("closed_form_identity", lambda: _check_train_identity(seed))
    check("quadratic_form_identity", lambda: _check_test_identity(seed))
    check("two_path_oneloop", lambda: _check_two_path(seed))
    check("wick_depth1_vertex", lambda: _check_wick(seed))
    check("spectral_tree_equality", lambda: _check_spectral_equality(seed))
    check("bound_soundness", lambda: _check_bounds(seed))
    check("gap_bitwise", lambda: _check_gap(seed))
    check("symmetry_negative_control", lambda: _check_asymmetry_detected())
    check("jitter_near_singular", lambda: _check_jitter_path())

    return {"checks": checks, "all_passed": all(c["passed"] for c in checks)}


def _random_instance(rng, activation):
    N = int(rng.integers(4, 12))
    M = int(rng.integers(4, 12))
    n = int(rng.integers(8, 64))
    gamma = float(10 ** rng.uniform(-3, 0))
    spec = EnsembleSpec(input_dim=2, depth=int(rng.integers(1, 4)), width=n,
                        weight_scale=1.0, bias_scale=0.05, activation=activation)
    params = sample_network(spec, int(rng.integers(0, 2**63)))
    X_tr = rng.standard_normal((N, 2))
    X_te = rng.standard_normal((M, 2))
    y = rng.standard_normal(N)
    y_te = rng.standard_normal(M)
    phi_tr = forward_features(params, X_tr)
    phi_te = forward_features(params, X_te)
    bundle = build_kernel_bundle(phi_tr, phi_te, gamma)
    return bundle, phi_tr, y, y_te


def _check_train_identity(seed):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for activation in ACTIVATIONS:
        for _ in range(6):
            bundle, phi, y, _ = _random_instance(rng, activation)
            direct = train_error_direct(bundle, phi, y)
            resolvent = train_error_resolvent(bundle, y)
            worst = max(worst, abs(direct - resolvent) / (1.0 + direct))
    return worst <= 1e-10, f"max relative deviation {worst:.3e}"


def _check_test_identity(seed):
    rng = np.random.default_rng(seed + 1)
    worst = 0.0
    for activation in ACTIVATIONS:
        for _ in range(6):
            bundle, _, y, y_te = _random_instance(rng, activation)
            direct = test_error_direct(bundle, y, y_te)
            M = y_te.shape[0]
            C = bundle.k_cross @ bundle.k_cross.T / M
            b = bundle.k_cross @ y_te / M
            c = float(y_te @ y_te) / M
            g = stabilized_inverse(bundle.K, bundle.gamma)
            v = g @ y
            quad = float(v @ (C @ v)) - 2.0 * float(b @ v) + c
            worst = max(worst, abs(direct - quad) / (1.0 + direct))
    return worst <= 1e-10, f"max relative deviation {worst:.3e}"


def _desk_moments(seed, N=6, M=8, n=24, S=48):
    spec = EnsembleSpec(input_dim=1, depth=2, width=n)
    rng = np.random.default_rng(seed)
    X_tr = rng.standard_normal((N, 1))
    X_te = rng.standard_normal((M, 1))
    y = rng.standard_normal(N)
    y_te = rng.standard_normal(M)
    moments = estimate_moments(spec, X_tr, X_te, y_te, S, derive_seed(seed, 7),
                               retain_samples=True)
    return moments, y


def _check_two_path(seed):
    moments, y = _desk_moments(seed + 2)
    gamma = 0.05
    n, N = moments.width, moments.num_points
    sandwich_path = oneloop_train(moments, y, gamma)
    vertex = vertex_from_moments(moments)
    g0 = stabilized_inverse(moments.mean_K, gamma)
    g0sq = g0 @ g0
    s1 = vertex_contract(vertex, g0) / n
    s2 = vertex_contract(vertex, g0sq) / n
    v, u = g0 @ y, g0sq @ y
    vertex_path = gamma**2 / N * float(u @ (s1 @ v) + v @ (s2 @ v) + v @ (s1 @ u))
    basis = spectral_decompose(moments.mean_K, gamma)
    spectral_path = spectral_train_oneloop(
        basis, vertex_to_eigenbasis(vertex, basis), y, n, N, gamma)
    scale = max(1.0, abs(sandwich_path))
    dev = max(abs(sandwich_path - vertex_path), abs(sandwich_path - spectral_path))
    return dev <= 1e-10 * scale, f"max path deviation {dev:.3e}"


def _check_wick(seed):
    rng = np.random.default_rng(seed + 3)
    N, n, S = 5, 96, 1500
    spec = EnsembleSpec(input_dim=3, depth=1, width=n, weight_scale=1.3,
                        bias_scale=0.1, activation="identity")
    X = rng.standard_normal((N, 3))
    G = spec.weight_scale * (X @ X.T) / spec.input_dim + spec.bias_scale
    vertex = estimate_vertex(spec, X, S, derive_seed(seed, 11))
    wick = np.einsum("ac,bd->abcd", G, G) + np.einsum("ad,bc->abcd", G, G)
    # Leading-order variance of one product n*Delta_ab*Delta_cd when the
    # scaled fluctuations are jointly Gaussian with covariance `wick`:
    # Var(xy) = E[x^2] E[y^2] + E[xy]^2.
    v_aabb = np.einsum("abab->ab", wick)
    var = np.multiply.outer(v_aabb, v_aabb) + wick**2
    stderr = np.sqrt(var / S) + 1e-12
    dev = float(np.max(np.abs(vertex.values - wick) / (5.0 * stderr)))
    return dev < 1.0, f"worst entry at {dev:.2f} of the 5-stderr budget"


def _check_spectral_equality(seed):
    moments, y = _desk_moments(seed + 4)
    gamma = 0.02
    basis = spectral_decompose(moments.mean_K, gamma)
    N = moments.num_points
    d1 = abs(spectral_train_tree(basis, y, N) - tree_train(moments, y, gamma))
    d2 = abs(spectral_test_tree(basis, moments, y) - tree_test(moments, y, gamma))
    return max(d1, d2) <= 1e-8, f"max tree path deviation {max(d1, d2):.3e}"


def _check_bounds(seed):
    rng = np.random.default_rng(seed + 5)
    violations = 0
    for _ in range(200):
        N, n = 5, 32
        A = rng.standard_normal((N, N))
        mean_K = A @ A.T / N
        gamma = float(10 ** rng.uniform(-3, 0))
        y = rng.standard_normal(N)
        raw = rng.standard_normal((N, N, N, N))
        vertex = VertexTensor(values=symmetrize_vertex(raw), width_used=n)
        basis = spectral_decompose(mean_K, gamma)
        sv = vertex_to_eigenbasis(vertex, basis)
        tree = spectral_train_tree(basis, y, N)
        loop = spectral_train_oneloop(basis, sv, y, n, N, gamma)
        bt, bl = resolvent_bound(basis, sv, y, n, N, gamma)
        if tree > bt * (1 + 1e-12) or abs(loop) > bl * (1 + 1e-12):
            violations += 1
    return violations == 0, f"{violations} violations in 200 instances"


def _check_gap(seed):
    moments, y = _desk_moments(seed + 6)
    out = predict(moments, y, 0.05)
    ok = (
        out["gap"].tree == out["test"].tree - out["train"].tree
        and out["gap"].one_loop == out["test"].one_loop - out["train"].one_loop
    )
    return ok, "gap terms are exact test - train differences"


def _check_asymmetry_detected():
    bad = np.array([[1.0, 0.5], [0.0, 1.0]])
    try:
        stabilized_inverse(bad, 0.1)
    except ContractError:
        return True, "asymmetric input rejected"
    return False, "asymmetric input was accepted"


def _check_jitter_path():
    v = np.array([1.0, 0.0, 0.0])
    # Rank 1 with a large top eigenvalue: at gamma = 1e-12 the zero modes sit
    # below the relative floor and the adaptive jitter must engage.
    K = 1e3 * np.outer(v, v)
    inv, info = stabilized_inverse_info(K, 1e-12)
    finite = bool(np.all(np.isfinite(inv)))
    return finite and info.jitter_engaged, f"jitter={info.jitter:.3e}"
