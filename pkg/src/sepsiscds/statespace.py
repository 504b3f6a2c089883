"""Discrete patient-state abstraction: z-scoring plus k-means.

Clustering runs on all schema features in the vitals/labs/ventilation groups
plus age and weight; the retained feature list is recorded on the model.
Constant features are dropped with a recorded warning rather than failing,
since small synthetic cohorts produce them routinely.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import kernels
from .cohort import FeatureSchema, PatientTrajectory, TimestepRecord, SCHEMA_VERSION
from .errors import InsufficientDataError, ValidationError

CLUSTER_GROUPS = ("vitals", "labs", "ventilation")
DEMOGRAPHIC_FEATURES = ("age", "weight")


@dataclass
class StateModel:
    feature_names: tuple[str, ...]
    means: np.ndarray
    stds: np.ndarray
    centroids: np.ndarray          # (k, d) in standardized space
    k: int
    seed: int
    n_restarts: int
    dropped_features: tuple[str, ...] = ()
    wcss: float = 0.0
    wcss_trace: tuple[float, ...] = ()
    warnings: tuple[str, ...] = ()

    def standardize(self, X: np.ndarray) -> np.ndarray:
        return (X - self.means) / self.stds

    def to_json(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "feature_names": list(self.feature_names),
            "means": self.means.tolist(),
            "stds": self.stds.tolist(),
            "centroids": self.centroids.tolist(),
            "k": self.k,
            "seed": self.seed,
            "n_restarts": self.n_restarts,
            "dropped_features": list(self.dropped_features),
            "wcss": self.wcss,
        }

    @classmethod
    def from_json(cls, doc: dict) -> "StateModel":
        return cls(
            feature_names=tuple(doc["feature_names"]),
            means=np.asarray(doc["means"], dtype=np.float64),
            stds=np.asarray(doc["stds"], dtype=np.float64),
            centroids=np.asarray(doc["centroids"], dtype=np.float64),
            k=int(doc["k"]),
            seed=int(doc["seed"]),
            n_restarts=int(doc["n_restarts"]),
            dropped_features=tuple(doc.get("dropped_features", ())),
            wcss=float(doc.get("wcss", 0.0)),
        )


def clustering_features(schema: FeatureSchema) -> tuple[str, ...]:
    names = list(DEMOGRAPHIC_FEATURES)
    names += [f.name for f in schema.features if f.group in CLUSTER_GROUPS]
    return tuple(names)


def feature_value(traj: PatientTrajectory, rec: TimestepRecord, name: str) -> float:
    if name == "age":
        return traj.age
    if name == "weight":
        return traj.weight
    try:
        return rec.features[name]
    except KeyError:
        raise ValidationError(
            f"feature {name!r} missing from timestep {rec.bin_index} of {traj.patient_id}")


def cohort_matrix(cohort: Sequence[PatientTrajectory], names: Sequence[str]) -> np.ndarray:
    """Stack every timestep's clustering vector, trajectory order preserved."""
    rows = []
    for traj in cohort:
        for rec in traj.timesteps:
            rows.append([feature_value(traj, rec, n) for n in names])
    return np.asarray(rows, dtype=np.float64)


def _kmeans_pp_init(X: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = X.shape[0]
    centroids = np.empty((k, X.shape[1]), dtype=np.float64)
    first = int(rng.integers(n))
    centroids[0] = X[first]
    sqdist = np.sum((X - centroids[0]) ** 2, axis=1)
    for c in range(1, k):
        total = sqdist.sum()
        if total <= 0.0:
            raise InsufficientDataError(
                f"insufficient data: fewer than {k} distinct feature vectors")
        # D^2 sampling via inverse CDF
        target = rng.random() * total
        idx = int(np.searchsorted(np.cumsum(sqdist), target, side="right"))
        idx = min(idx, n - 1)
        centroids[c] = X[idx]
        np.minimum(sqdist, np.sum((X - centroids[c]) ** 2, axis=1), out=sqdist)
    return centroids


def _lloyd(X: np.ndarray, centroids: np.ndarray, max_iter: int):
    k = centroids.shape[0]
    labels = None
    trace = []
    for _ in range(max_iter):
        new_labels, best = kernels.assign_nearest(X, centroids)
        # repair empty clusters with the farthest points, one per cluster
        counts = np.bincount(new_labels, minlength=k)
        empties = np.flatnonzero(counts == 0)
        if empties.size:
            order = np.argsort(-best, kind="stable")
            pos = 0
            for c in empties:
                new_labels[order[pos]] = c
                best[order[pos]] = 0.0
                pos += 1
        trace.append(float(best.sum()))
        if labels is not None and np.array_equal(new_labels, labels):
            break
        labels = new_labels
        sums, counts = kernels.centroid_sums(X, labels, k)
        nonzero = counts > 0
        centroids[nonzero] = sums[nonzero] / counts[nonzero, None]
    return centroids, labels, trace[-1], trace


def fit_states(
    train_cohort: Sequence[PatientTrajectory],
    k: int,
    seed: int,
    n_restarts: int = 10,
    *,
    schema: FeatureSchema | None = None,
    feature_names: Sequence[str] | None = None,
    max_iter: int = 300,
) -> StateModel:
    """k-means++ with independent restarts; keeps the lowest-WCSS run.

    Deterministic given (seed, n_restarts): restart r draws from
    default_rng([seed, r]) and ties prefer the earlier restart.
    """
    if k < 2:
        raise ValidationError("k must be >= 2")
    if feature_names is None:
        if schema is None:
            raise ValidationError("fit_states needs schema or explicit feature_names")
        feature_names = clustering_features(schema)
    names = tuple(feature_names)
    X = cohort_matrix(train_cohort, names)
    if not np.isfinite(X).all():
        raise ValidationError("non-finite feature values in training cohort")
    if X.shape[0] < k:
        raise InsufficientDataError(
            f"insufficient data: {X.shape[0]} timesteps for k={k}")

    means = X.mean(axis=0)
    stds = X.std(axis=0)
    keep = stds > 0.0
    warnings = []
    dropped = tuple(n for n, kp in zip(names, keep) if not kp)
    if dropped:
        warnings.append(f"dropped constant features: {', '.join(dropped)}")
        names = tuple(n for n, kp in zip(names, keep) if kp)
        X = X[:, keep]
        means = means[keep]
        stds = stds[keep]
    if X.shape[1] == 0:
        raise InsufficientDataError("all clustering features are constant")

    Z = (X - means) / stds

    best_wcss = np.inf
    best = None
    for restart in range(n_restarts):
        rng = np.random.default_rng([seed, restart])
        centroids = _kmeans_pp_init(Z, k, rng)
        centroids, labels, wcss, trace = _lloyd(Z, centroids, max_iter)
        if wcss < best_wcss:
            best_wcss = wcss
            best = (centroids.copy(), trace)
    centroids, trace = best
    return StateModel(
        feature_names=names,
        means=means,
        stds=stds,
        centroids=centroids,
        k=k,
        seed=seed,
        n_restarts=n_restarts,
        dropped_features=dropped,
        wcss=best_wcss,
        wcss_trace=tuple(trace),
        warnings=tuple(warnings),
    )


def assign_vector(model: StateModel, z: np.ndarray) -> int:
    """Nearest centroid in standardized space, exact distances, ties to the
    lowest state id."""
    d = np.sum((model.centroids - z) ** 2, axis=1)
    return int(np.argmin(d))


def assign_state(model: StateModel, record: TimestepRecord,
                 traj: PatientTrajectory | None = None) -> int:
    """State id for one timestep. Demographic features (age, weight) come
    from `traj` when given, else must be present in record.features."""
    vals = []
    for name in model.feature_names:
        if traj is not None and name in DEMOGRAPHIC_FEATURES:
            vals.append(feature_value(traj, record, name))
        else:
            if name not in record.features:
                raise ValidationError(f"record lacks feature {name!r}")
            vals.append(record.features[name])
    z = model.standardize(np.asarray(vals, dtype=np.float64))
    return assign_vector(model, z)


def assign_cohort(model: StateModel, cohort: Sequence[PatientTrajectory]) -> list[np.ndarray]:
    """Per-trajectory arrays of state ids (batch path used by training)."""
    X = cohort_matrix(cohort, model.feature_names)
    Z = (X - model.means) / model.stds
    labels, _ = kernels.assign_nearest(Z, model.centroids)
    out = []
    pos = 0
    for traj in cohort:
        n = len(traj.timesteps)
        out.append(labels[pos:pos + n].copy())
        pos += n
    return out


def save_state_model(model: StateModel, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(model.to_json(), fh)


def load_state_model(path) -> StateModel:
    with open(path, encoding="utf-8") as fh:
        return StateModel.from_json(json.load(fh))
