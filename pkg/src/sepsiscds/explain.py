"""Per-state interpretations: one-vs-rest membership classifiers, Shapley
feature attributions, and historical mortality.

Attributions use permutation-sampling Shapley values with the background
sample defining absent-feature marginalization; instances with at most
EXACT_ENUMERATION_LIMIT features switch to exact subset enumeration. Both
estimators satisfy efficiency (attributions sum to the instance score minus
the mean background score) by telescoping.
"""
from __future__ import annotations

import math
import threading
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .boost import GradientBoostedClassifier
from .cohort import PatientTrajectory, TimestepRecord
from .errors import ValidationError
from .statespace import StateModel, assign_cohort, cohort_matrix, feature_value

EXACT_ENUMERATION_LIMIT = 10
TOP_FEATURES = 5

ScoreFn = Callable[[np.ndarray], np.ndarray]


@dataclass
class ShapleyResult:
    values: np.ndarray
    standard_errors: np.ndarray
    baseline: float             # mean background score
    instance_score: float
    method: str

    @property
    def efficiency_gap(self) -> float:
        return float(abs(self.values.sum() - (self.instance_score - self.baseline)))


@dataclass
class StateExplanation:
    state_id: int
    top_features: list[tuple[str, float, str]]   # (name, attribution, direction)
    baseline_score: float
    mortality_rate: float
    n_support: int

    def to_json(self) -> dict:
        return {
            "state_id": self.state_id,
            "features": [
                {"name": n, "attribution": a, "direction": d}
                for n, a, d in self.top_features],
            "baseline_score": self.baseline_score,
            "mortality_rate": self.mortality_rate,
            "n_support": self.n_support,
        }


def exact_shapley(score_fn: ScoreFn, instance: np.ndarray,
                  background: np.ndarray) -> tuple[np.ndarray, float, float]:
    """Shapley values by full subset enumeration (d <= 10)."""
    instance = np.asarray(instance, dtype=np.float64)
    background = np.atleast_2d(np.asarray(background, dtype=np.float64))
    d = instance.shape[0]
    if d > EXACT_ENUMERATION_LIMIT:
        raise ValidationError(f"exact enumeration limited to d <= {EXACT_ENUMERATION_LIMIT}")
    m = background.shape[0]
    n_masks = 1 << d
    rows = np.repeat(background[None, :, :], n_masks, axis=0)  # (masks, m, d)
    for mask in range(n_masks):
        for j in range(d):
            if mask >> j & 1:
                rows[mask, :, j] = instance[j]
    scores = np.asarray(score_fn(rows.reshape(n_masks * m, d)), dtype=np.float64)
    v = scores.reshape(n_masks, m).mean(axis=1)

    fact = [math.factorial(i) for i in range(d + 1)]
    weights = [fact[s] * fact[d - s - 1] / fact[d] for s in range(d)]
    phi = np.zeros(d)
    for mask in range(n_masks):
        size = bin(mask).count("1")
        for j in range(d):
            if mask >> j & 1:
                continue
            phi[j] += weights[size] * (v[mask | (1 << j)] - v[mask])
    return phi, float(v[0]), float(v[n_masks - 1])


def permutation_shapley(score_fn: ScoreFn, instance: np.ndarray,
                        background: np.ndarray, n_perm: int, seed: int
                        ) -> tuple[np.ndarray, np.ndarray, float, float]:
    """Monte-Carlo permutation sampling; deterministic given seed."""
    instance = np.asarray(instance, dtype=np.float64)
    background = np.atleast_2d(np.asarray(background, dtype=np.float64))
    d = instance.shape[0]
    m = background.shape[0]
    rng = np.random.default_rng(seed)
    base = float(np.mean(score_fn(background)))
    contribs = np.zeros((n_perm, d))
    full = base
    for p in range(n_perm):
        order = rng.permutation(d)
        steps = np.repeat(background[None, :, :], d, axis=0)  # (d, m, d)
        for t in range(d):
            steps[t:, :, order[t]] = instance[order[t]]
        scores = np.asarray(score_fn(steps.reshape(d * m, d)), dtype=np.float64)
        v = scores.reshape(d, m).mean(axis=1)
        prev = base
        for t in range(d):
            contribs[p, order[t]] = v[t] - prev
            prev = v[t]
        full = float(v[-1])
    phi = contribs.mean(axis=0)
    if n_perm > 1:
        se = contribs.std(axis=0, ddof=1) / math.sqrt(n_perm)
    else:
        se = np.zeros(d)
    return phi, se, base, full


def shapley_attribution(score_fn: ScoreFn, instance: np.ndarray,
                        background: np.ndarray, n_perm: int = 128,
                        seed: int = 0, method: str = "auto") -> ShapleyResult:
    """Per-feature attributions of score_fn(instance) against the background.

    method: "exact" (subset enumeration, d <= 10), "permutation", or "auto"
    (exact when it is affordable).
    """
    instance = np.asarray(instance, dtype=np.float64)
    background = np.atleast_2d(np.asarray(background, dtype=np.float64))
    if background.shape[0] == 0:
        raise ValidationError("background must be non-empty")
    if n_perm < 1:
        raise ValidationError("n_perm must be >= 1")
    d = instance.shape[0]
    if method == "auto":
        method = "exact" if d <= EXACT_ENUMERATION_LIMIT else "permutation"
    if method == "exact":
        phi, base, full = exact_shapley(score_fn, instance, background)
        se = np.zeros(d)
    elif method == "permutation":
        phi, se, base, full = permutation_shapley(score_fn, instance, background, n_perm, seed)
    else:
        raise ValidationError(f"unknown shapley method {method!r}")
    return ShapleyResult(values=phi, standard_errors=se, baseline=base,
                         instance_score=full, method=method)


def fit_state_classifier(
    train_cohort: Sequence[PatientTrajectory],
    state_model: StateModel,
    state_id: int,
    seed: int = 0,
    **classifier_params,
) -> GradientBoostedClassifier:
    """One-vs-rest membership classifier for a state, trained on standardized
    clustering features."""
    X = cohort_matrix(train_cohort, state_model.feature_names)
    Z = state_model.standardize(X)
    labels = np.concatenate(assign_cohort(state_model, train_cohort))
    y = (labels == state_id).astype(np.float64)
    if y.sum() == 0:
        raise ValidationError(f"unsupported state {state_id}: no supporting timesteps")
    params = {"n_trees": 100, "max_depth": 3, "seed": seed}
    params.update(classifier_params)
    return GradientBoostedClassifier(**params).fit(Z, y)


def state_mortality(cohort: Sequence[PatientTrajectory],
                    assignments: Sequence[np.ndarray], k: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per state: (patients visiting, deaths among them, timestep support).

    Mortality counts unique patients, not timesteps, so long stays do not
    bias the rate."""
    visitors = np.zeros(k, dtype=np.int64)
    deaths = np.zeros(k, dtype=np.int64)
    support = np.zeros(k, dtype=np.int64)
    for traj, states in zip(cohort, assignments):
        for s in states:
            support[s] += 1
        for s in np.unique(states):
            visitors[s] += 1
            if traj.died:
                deaths[s] += 1
    return visitors, deaths, support


def describe_state(
    state_id: int,
    feature_names: Sequence[str],
    shapley: ShapleyResult,
    z_instance: np.ndarray,
    mortality_rate: float,
    n_support: int,
) -> StateExplanation:
    """Top-5 features by |attribution|; direction is the instance's side of
    the cohort average (standardized sign)."""
    order = np.argsort(-np.abs(shapley.values), kind="stable")[:TOP_FEATURES]
    top = []
    for j in order:
        z = z_instance[j]
        direction = "above" if z > 0 else ("below" if z < 0 else "at")
        top.append((feature_names[j], float(shapley.values[j]), direction))
    return StateExplanation(
        state_id=state_id,
        top_features=top,
        baseline_score=shapley.baseline,
        mortality_rate=mortality_rate,
        n_support=n_support,
    )


class StateExplainer:
    """Lazily fits and caches one membership classifier per state.

    Cache access is safe for concurrent readers with single-writer insertion.
    """

    def __init__(self, train_cohort: Sequence[PatientTrajectory],
                 state_model: StateModel, seed: int = 0,
                 background_size: int = 256, n_perm: int = 128,
                 classifier_params: dict | None = None):
        self.state_model = state_model
        self.seed = seed
        self.n_perm = n_perm
        self.classifier_params = dict(classifier_params or {})
        X = cohort_matrix(train_cohort, state_model.feature_names)
        self._Z = state_model.standardize(X)
        self._assignments = assign_cohort(state_model, train_cohort)
        self._labels = np.concatenate(self._assignments)
        visitors, deaths, support = state_mortality(
            train_cohort, self._assignments, state_model.k)
        self._visitors = visitors
        self._deaths = deaths
        self._support = support
        # stratified, deterministic background: order by (state, row) and
        # take evenly spaced rows
        order = np.lexsort((np.arange(self._Z.shape[0]), self._labels))
        take = min(background_size, self._Z.shape[0])
        picks = np.linspace(0, self._Z.shape[0] - 1, take).astype(np.int64)
        self.background = self._Z[order[picks]]
        self._classifiers: dict[int, GradientBoostedClassifier] = {}
        self._lock = threading.Lock()

    def classifier(self, state_id: int) -> GradientBoostedClassifier:
        clf = self._classifiers.get(state_id)
        if clf is not None:
            return clf
        with self._lock:
            clf = self._classifiers.get(state_id)
            if clf is None:
                y = (self._labels == state_id).astype(np.float64)
                if y.sum() == 0:
                    raise ValidationError(
                        f"unsupported state {state_id}: no supporting timesteps")
                params = {"n_trees": 100, "max_depth": 3, "seed": self.seed}
                params.update(self.classifier_params)
                clf = GradientBoostedClassifier(**params).fit(self._Z, y)
                self._classifiers[state_id] = clf
        return clf

    def mortality_rate(self, state_id: int) -> float:
        v = self._visitors[state_id]
        return float(self._deaths[state_id] / v) if v else 0.0

    def explain_instance(self, state_id: int, z_instance: np.ndarray) -> StateExplanation:
        clf = self.classifier(state_id)
        result = shapley_attribution(
            clf.decision_scores, z_instance, self.background,
            n_perm=self.n_perm, seed=self.seed)
        return describe_state(
            state_id=state_id,
            feature_names=self.state_model.feature_names,
            shapley=result,
            z_instance=z_instance,
            mortality_rate=self.mortality_rate(state_id),
            n_support=int(self._support[state_id]),
        )

    def explain_record(self, traj: PatientTrajectory, rec: TimestepRecord,
                       state_id: int) -> StateExplanation:
        vals = np.array([feature_value(traj, rec, n) for n in self.state_model.feature_names])
        z = self.state_model.standardize(vals)
        return self.explain_instance(state_id, z)
