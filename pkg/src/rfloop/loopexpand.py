"""Tree-level and loop-corrected predictions for the three observables.

Every formula is built around the bare resolvent G0 = (mean_K + gamma I)^-1
of the estimated mean kernel.  Tree level replaces the random kernel by its
mean everywhere; the one-loop terms insert quadratic kernel fluctuations via
the sandwich estimators of :mod:`rfloop.fluctuation`, which already carry the
inverse-width suppression, so no explicit 1/n factor appears here.

Within one prediction the resolvent (including any stabilization jitter) is
computed once and reused across every term, and the gap terms are formed as
exact floating-point differences of the test and train terms.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError
from .fluctuation import (
    MomentSet,
    control_parameter,
    sandwich_bk,
    sandwich_ck,
    sandwich_kc,
    sandwich_kk,
    sandwich_kkk,
)
from .kernelcore import stabilized_inverse


@dataclass(frozen=True)
class LoopBreakdown:
    """One observable's prediction split into loop orders.

    ``total`` is the exact sum of the included terms.  ``second_loop`` is a
    train-only diagnostic and stays None for the test and gap observables.
    """

    observable: str
    tree: float
    one_loop: float
    second_loop: float | None
    total: float
    control: float
    n_used: int
    N_used: int
    gamma_used: float
    seed_block: int | None = None

    def to_json(self) -> dict:
        """Flat JSON object for persistence."""
        return {
            "observable": self.observable,
            "tree": self.tree,
            "one_loop": self.one_loop,
            "second_loop": self.second_loop,
            "total": self.total,
            "control": self.control,
            "n": self.n_used,
            "N": self.N_used,
            "gamma": self.gamma_used,
            "seed_block": self.seed_block,
        }


def _check_targets(moments: MomentSet, y: np.ndarray) -> np.ndarray:
    y = np.asarray(y, float)
    if y.ndim != 1 or y.shape[0] != moments.num_points:
        raise ShapeError(
            f"y must have length {moments.num_points}, got shape {y.shape}"
        )
    return y


def _resolvent(moments: MomentSet, gamma: float) -> np.ndarray:
    return stabilized_inverse(moments.mean_K, gamma)


def tree_train(moments: MomentSet, y: np.ndarray, gamma: float) -> float:
    """Mean-kernel training error (gamma^2 / N) y^T G0^2 y."""
    y = _check_targets(moments, y)
    v = _resolvent(moments, gamma) @ y
    return gamma**2 / y.shape[0] * float(v @ v)


def _oneloop_train_from(y, gamma, g0, g0sq, s_g0, s_g0sq) -> float:
    v = g0 @ y
    u = g0sq @ y
    term = u @ (s_g0 @ v) + v @ (s_g0sq @ v) + v @ (s_g0 @ u)
    return gamma**2 / y.shape[0] * float(term)


def oneloop_train(moments: MomentSet, y: np.ndarray, gamma: float) -> float:
    """Leading finite-width training correction.

    (gamma^2 / N) y^T [G0^2 S(G0) G0 + G0 S(G0^2) G0 + G0 S(G0) G0^2] y with
    S(A) the sandwich estimate of E[Delta_K A Delta_K].
    """
    y = _check_targets(moments, y)
    g0 = _resolvent(moments, gamma)
    g0sq = g0 @ g0
    return _oneloop_train_from(
        y, gamma, g0, g0sq, sandwich_kk(moments, g0), sandwich_kk(moments, g0sq)
    )


def secondloop_train(moments: MomentSet, y: np.ndarray, gamma: float) -> float:
    """Cubic-insertion training correction, an O(n^{-3/2})-scale diagnostic."""
    y = _check_targets(moments, y)
    g0 = _resolvent(moments, gamma)
    g0sq = g0 @ g0
    t11 = sandwich_kkk(moments, g0, g0)
    t21 = sandwich_kkk(moments, g0sq, g0)
    t12 = sandwich_kkk(moments, g0, g0sq)
    v = g0 @ y
    u = g0sq @ y
    term = u @ (t11 @ v) + v @ (t21 @ v) + v @ (t12 @ v) + v @ (t11 @ u)
    return -(gamma**2) / y.shape[0] * float(term)


def _tree_test_from(moments, y, g0) -> float:
    v = g0 @ y
    return float(v @ (moments.mean_C @ v)) - 2.0 * float(moments.mean_b @ v) \
        + moments.c_scalar


def tree_test(moments: MomentSet, y: np.ndarray, gamma: float) -> float:
    """Mean-kernel test error y^T G0 C G0 y - 2 b^T G0 y + c."""
    y = _check_targets(moments, y)
    return _tree_test_from(moments, y, _resolvent(moments, gamma))


def _oneloop_test_from(moments, y, g0, s_g0) -> float:
    v = g0 @ y                      # G0 y
    w = g0 @ (moments.mean_C @ v)   # G0 C G0 y
    inner = g0 @ (moments.mean_C @ g0)
    inner = (inner + inner.T) / 2.0
    s_mid = sandwich_kk(moments, inner)
    term = float(v @ (s_g0 @ w))
    term += float(w @ (s_g0 @ v))
    term += float(v @ (s_mid @ v))
    term -= float(v @ (sandwich_kc(moments, g0) @ v))
    term -= float(v @ (sandwich_ck(moments, g0) @ v))
    term -= 2.0 * float(moments.mean_b @ (g0 @ (s_g0 @ v)))
    term += 2.0 * float(sandwich_bk(moments, g0) @ v)
    return term


def oneloop_test(moments: MomentSet, y: np.ndarray, gamma: float) -> float:
    """Leading finite-width test correction.

    Seven terms: three pure kernel-fluctuation insertions around the
    population operator, two mixed kernel/population-operator contractions
    (with a minus sign), and the two target-moment terms.  The empirical
    mean_C / mean_b enter directly; their own finite-width shift is thereby
    absorbed to the retained order.
    """
    y = _check_targets(moments, y)
    g0 = _resolvent(moments, gamma)
    return _oneloop_test_from(moments, y, g0, sandwich_kk(moments, g0))


def predict(
    moments: MomentSet,
    y: np.ndarray,
    gamma: float,
    include_second_loop: bool = False,
    seed_block: int | None = None,
    control: float | None = None,
) -> dict[str, LoopBreakdown]:
    """Train/test/gap breakdowns sharing one resolvent and one sandwich set.

    The gap entries are constructed as the exact differences of the test and
    train terms, so gap.tree == test.tree - train.tree bitwise (and likewise
    for one_loop).  ``control`` may be supplied to avoid recomputing it; by
    default it is estimated from the same store and resolvent.
    """
    y = _check_targets(moments, y)
    gamma = float(gamma)
    g0 = _resolvent(moments, gamma)
    g0sq = g0 @ g0
    s_g0 = sandwich_kk(moments, g0)
    s_g0sq = sandwich_kk(moments, g0sq)
    if control is None:
        control = control_parameter(moments, gamma)

    tree_tr = gamma**2 / y.shape[0] * float((g0 @ y) @ (g0 @ y))
    one_tr = _oneloop_train_from(y, gamma, g0, g0sq, s_g0, s_g0sq)
    two_tr = secondloop_train(moments, y, gamma) if include_second_loop else None

    tree_te = _tree_test_from(moments, y, g0)
    one_te = _oneloop_test_from(moments, y, g0, s_g0)

    common = dict(control=control, n_used=moments.width, N_used=y.shape[0],
                  gamma_used=gamma, seed_block=seed_block)
    train = LoopBreakdown(
        observable="train", tree=tree_tr, one_loop=one_tr, second_loop=two_tr,
        total=tree_tr + one_tr + (two_tr if two_tr is not None else 0.0), **common,
    )
    test = LoopBreakdown(
        observable="test", tree=tree_te, one_loop=one_te, second_loop=None,
        total=tree_te + one_te, **common,
    )
    gap_tree = tree_te - tree_tr
    gap_one = one_te - one_tr
    gap = LoopBreakdown(
        observable="gap", tree=gap_tree, one_loop=gap_one, second_loop=None,
        total=gap_tree + gap_one, **common,
    )
    return {"train": train, "test": test, "gap": gap}
