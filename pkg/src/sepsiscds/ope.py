"""Weighted importance sampling with percentile-bootstrap confidence
intervals.

Weights are per-trajectory products of action-probability ratios, and the
estimate is the self-normalized weighted mean of the terminal returns.
Greedy target policies must be softened (a deterministic target puts zero
weight on almost every real trajectory); behavior probabilities may be
Laplace-smoothed from visit counts before the ratio computation.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .actions import ActionSpace, N_ACTIONS
from .cohort import PatientTrajectory
from .errors import NoOverlapError, ValidationError
from .mdp import REWARD_DIE, REWARD_SURVIVE, trajectory_state_actions
from .statespace import StateModel


@dataclass
class WisEstimate:
    value: float
    ci_lo: float | None
    ci_hi: float | None
    n_boot: int
    n_trajectories: int
    ess: float
    n_failed_replicates: int = 0
    config: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "value": self.value,
            "ci_lo": self.ci_lo,
            "ci_hi": self.ci_hi,
            "n_boot": self.n_boot,
            "n_traj": self.n_trajectories,
            "ess": self.ess,
            "n_failed_replicates": self.n_failed_replicates,
            "config": dict(self.config),
        }


def soften_policy(policy: np.ndarray, n_actions: int = N_ACTIONS,
                  epsilon: float = 0.01) -> np.ndarray:
    """Greedy per-state actions -> distribution with (1 - eps) on the greedy
    action and eps/(A-1) elsewhere."""
    k = policy.shape[0]
    probs = np.full((k, n_actions), epsilon / (n_actions - 1))
    probs[np.arange(k), policy] = 1.0 - epsilon
    return probs


def smooth_behavior(visit_counts: np.ndarray, alpha: float = 0.5) -> np.ndarray:
    """Laplace smoothing: add alpha pseudo-visits per action."""
    smoothed = visit_counts.astype(np.float64) + alpha
    return smoothed / smoothed.sum(axis=1, keepdims=True)


def _as_distribution(eval_policy: np.ndarray, epsilon: float) -> np.ndarray:
    eval_policy = np.asarray(eval_policy)
    if eval_policy.ndim == 1:
        return soften_policy(eval_policy.astype(np.int64), epsilon=epsilon)
    return eval_policy.astype(np.float64)


def trajectory_weights_returns(
    eval_probs: np.ndarray,
    behavior_probs: np.ndarray,
    test_cohort: Sequence[PatientTrajectory],
    state_model: StateModel,
    space: ActionSpace,
    gamma: float,
    max_weight: float | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Per-trajectory importance weights and discounted terminal returns."""
    weights = np.empty(len(test_cohort))
    returns = np.empty(len(test_cohort))
    for i, (s, a, died) in enumerate(
            trajectory_state_actions(test_cohort, state_model, space)):
        num = eval_probs[s, a]
        den = behavior_probs[s, a]
        with np.errstate(divide="ignore", invalid="ignore"):
            w = float(np.prod(num / den))
        if not np.isfinite(w):
            raise ValidationError(
                f"non-finite importance weight for trajectory "
                f"{test_cohort[i].patient_id!r}: behavior probability zero "
                f"for an observed (state, action)")
        if max_weight is not None:
            w = min(w, max_weight)
        weights[i] = w
        returns[i] = gamma ** (len(s) - 1) * (REWARD_DIE if died else REWARD_SURVIVE)
    return weights, returns


def _weighted_value(weights: np.ndarray, returns: np.ndarray) -> float:
    total = weights.sum()
    if not np.isfinite(total):
        raise ValidationError("non-finite weight sum")
    if total <= 0.0:
        raise NoOverlapError("no overlap: all importance weights are zero")
    return float(np.dot(weights, returns) / total)


def wis_value(
    eval_policy: np.ndarray,
    behavior_probs: np.ndarray,
    test_cohort: Sequence[PatientTrajectory],
    state_model: StateModel,
    space: ActionSpace,
    gamma: float,
    epsilon: float = 0.01,
    max_weight: float | None = None,
) -> float:
    """Point WIS estimate. eval_policy is a (k, A) distribution, or a (k,)
    greedy action vector softened with epsilon."""
    eval_probs = _as_distribution(eval_policy, epsilon)
    weights, returns = trajectory_weights_returns(
        eval_probs, behavior_probs, test_cohort, state_model, space, gamma,
        max_weight=max_weight)
    return _weighted_value(weights, returns)


def wis_bootstrap(
    eval_policy: np.ndarray,
    behavior_probs: np.ndarray,
    test_cohort: Sequence[PatientTrajectory],
    state_model: StateModel,
    space: ActionSpace,
    gamma: float,
    n_boot: int = 500,
    seed: int = 0,
    epsilon: float = 0.01,
    max_weight: float | None = None,
) -> WisEstimate:
    """Resample trajectories with replacement; CI from the 2.5/97.5
    percentiles of replicate values. Replicate r draws its indices from
    default_rng([seed, r]), so results are deterministic and replicates are
    independent of evaluation order."""
    if n_boot < 1:
        raise ValidationError("n_boot must be >= 1")
    eval_probs = _as_distribution(eval_policy, epsilon)
    weights, returns = trajectory_weights_returns(
        eval_probs, behavior_probs, test_cohort, state_model, space, gamma,
        max_weight=max_weight)
    value = _weighted_value(weights, returns)
    n = len(weights)
    replicate_values = []
    failed = 0
    for r in range(n_boot):
        idx = np.random.default_rng([seed, r]).integers(0, n, size=n)
        try:
            replicate_values.append(_weighted_value(weights[idx], returns[idx]))
        except NoOverlapError:
            failed += 1
    if not replicate_values:
        raise NoOverlapError("every bootstrap replicate had zero total weight")
    ci_lo, ci_hi = np.percentile(replicate_values, [2.5, 97.5])
    return WisEstimate(
        value=value,
        ci_lo=float(ci_lo),
        ci_hi=float(ci_hi),
        n_boot=n_boot,
        n_trajectories=n,
        ess=float(weights.sum() ** 2 / np.dot(weights, weights)),
        n_failed_replicates=failed,
        config={
            "gamma": gamma,
            "epsilon": epsilon,
            "max_weight": max_weight,
            "seed": seed,
        },
    )
