"""Loop-corrected error predictions for frozen random-feature ridge regression.

Computes training error, test error, and generalization gap three ways:
empirical ensemble averages over frozen-network draws, tree-level mean-kernel
predictions, and tree-plus-one-loop predictions built from Monte-Carlo
estimates of the kernel fluctuation moments.
"""

__version__ = "0.1.0"

from .ensemble import (
    EnsembleSpec,
    FeatureMatrix,
    NetworkParams,
    derive_seed,
    forward_features,
    sample_network,
)
from .errors import BudgetError, ConfigError, ContractError, NumericError, ShapeError
from .fluctuation import (
    MomentSet,
    VertexTensor,
    control_parameter,
    control_parameter_stats,
    estimate_moments,
    estimate_vertex,
    load_moments,
    sandwich_bk,
    sandwich_ck,
    sandwich_kc,
    sandwich_kk,
    sandwich_kkk,
    save_moments,
    vertex_contract,
    vertex_from_moments,
)
from .kernelcore import (
    KernelBundle,
    Observables,
    build_kernel_bundle,
    evaluate_observables,
    ridge_predict,
    stabilized_inverse,
    test_error_direct,
    train_error_direct,
    train_error_resolvent,
)
from .loopexpand import (
    LoopBreakdown,
    oneloop_test,
    oneloop_train,
    predict,
    secondloop_train,
    tree_test,
    tree_train,
)
from .spectral import (
    SpectralBasis,
    SpectralVertex,
    c1_spectral_term,
    population_split,
    resolvent_bound,
    spectral_decompose,
    spectral_test_tree,
    spectral_train_oneloop,
    spectral_train_tree,
    vertex_to_eigenbasis,
)

# Imported last: harness reads __version__ from this module during import.
from .harness import (
    ExperimentConfig,
    PowerLawFit,
    SweepRecord,
    apply_fast_profile,
    fit_power_law,
    make_dataset,
    run_point,
    sweep_depth,
    sweep_gamma,
    sweep_nn,
    sweep_width,
    validate,
)
