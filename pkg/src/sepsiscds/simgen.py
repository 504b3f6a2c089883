"""Synthetic cohorts from a fully specified ground-truth MDP.

Every downstream component gets an analytic oracle this way: transition
probabilities, the behavior policy, emission means, and dose levels are all
known, so learned models can be checked against exact values.

Two design points matter for round-tripping through the learning pipeline:

* Emission means are mutually separated one-hot vectors (separation is a
  config knob in noise units), so k-means can recover the latent states.
* Doses are synthesized as one fixed representative dose per action bin,
  with the behavior policy giving slightly more mass to lower bins. The
  empirical 25/50/75 quantile edges then land exactly on the lower three
  dose levels and discretization recovers every sampled action index.
  Drawing doses from wide intervals instead would put quantile edges inside
  the intervals and misbin boundary doses.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
import numpy as np

from .cohort import FeatureSchema, FeatureSpec, PatientTrajectory, TimestepRecord
from .errors import NonContractiveError, ValidationError

SURVIVE = "survive"
DIE = "die"

REWARD_SURVIVE = 100.0
REWARD_DIE = -100.0

# per-bin representative doses (bin 0 = no treatment)
FLUID_LEVELS = (0.0, 50.0, 150.0, 350.0, 750.0)
VASO_LEVELS = (0.0, 0.05, 0.15, 0.35, 0.75)

# nonzero-bin behavior mass, front-loaded so empirical dose quantiles land
# on the representative levels (cumulative 0.30/0.56/0.80 vs 0.25/0.50/0.75)
_NONZERO_BIN_WEIGHTS = (0.30, 0.26, 0.24, 0.20)
_ZERO_BIN_WEIGHT = 0.2


@dataclass
class GroundTruthMdp:
    n_states: int
    n_actions: int
    transitions: np.ndarray     # (S, A, S + 2); columns S, S+1 = survive, die
    behavior: np.ndarray        # (S, A)
    start_probs: np.ndarray     # (S,)
    emission_means: np.ndarray  # (S, d)
    emission_scale: float
    feature_names: tuple[str, ...]
    gamma: float
    fluid_levels: tuple[float, ...] = FLUID_LEVELS
    vaso_levels: tuple[float, ...] = VASO_LEVELS

    def __post_init__(self):
        self.transitions = np.asarray(self.transitions, dtype=np.float64)
        self.behavior = np.asarray(self.behavior, dtype=np.float64)
        self.start_probs = np.asarray(self.start_probs, dtype=np.float64)
        self.emission_means = np.asarray(self.emission_means, dtype=np.float64)
        S, A = self.n_states, self.n_actions
        if self.transitions.shape != (S, A, S + 2):
            raise ValidationError(f"transitions must be (S, A, S+2), got {self.transitions.shape}")
        if not np.allclose(self.transitions.sum(axis=2), 1.0, atol=1e-9):
            raise ValidationError("transition rows must sum to 1 within 1e-9")
        if not np.allclose(self.behavior.sum(axis=1), 1.0, atol=1e-9):
            raise ValidationError("behavior rows must sum to 1 within 1e-9")
        if not np.isclose(self.start_probs.sum(), 1.0, atol=1e-9):
            raise ValidationError("start probabilities must sum to 1")
        if not 0.0 < self.gamma <= 1.0:
            raise ValidationError(f"gamma must be in (0, 1], got {self.gamma}")

    def to_json(self) -> dict:
        return {
            "schema_version": 1,
            "n_states": self.n_states,
            "n_actions": self.n_actions,
            "transitions": self.transitions.tolist(),
            "behavior": self.behavior.tolist(),
            "start_probs": self.start_probs.tolist(),
            "emission_means": self.emission_means.tolist(),
            "emission_scale": self.emission_scale,
            "feature_names": list(self.feature_names),
            "gamma": self.gamma,
            "fluid_levels": list(self.fluid_levels),
            "vaso_levels": list(self.vaso_levels),
        }

    @classmethod
    def from_json(cls, doc: dict) -> "GroundTruthMdp":
        return cls(
            n_states=int(doc["n_states"]),
            n_actions=int(doc["n_actions"]),
            transitions=np.asarray(doc["transitions"]),
            behavior=np.asarray(doc["behavior"]),
            start_probs=np.asarray(doc["start_probs"]),
            emission_means=np.asarray(doc["emission_means"]),
            emission_scale=float(doc["emission_scale"]),
            feature_names=tuple(doc["feature_names"]),
            gamma=float(doc["gamma"]),
            fluid_levels=tuple(doc["fluid_levels"]),
            vaso_levels=tuple(doc["vaso_levels"]),
        )

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json(), fh)

    @classmethod
    def load(cls, path) -> "GroundTruthMdp":
        with open(path, encoding="utf-8") as fh:
            return cls.from_json(json.load(fh))


def factorized_behavior(n_states: int, n_actions: int = 25) -> np.ndarray:
    """State-independent behavior with front-loaded nonzero dose bins."""
    w = np.array([_ZERO_BIN_WEIGHT] + [x * (1 - _ZERO_BIN_WEIGHT) for x in _NONZERO_BIN_WEIGHTS])
    per_action = np.outer(w, w).reshape(-1)
    return np.tile(per_action, (n_states, 1))


def make_oracle_mdp(
    n_states: int = 6,
    seed: int = 0,
    separation: float = 8.0,
    noise_scale: float = 1.0,
    absorb_prob: float = 0.35,
    gamma: float = 0.99,
    n_actions: int = 25,
) -> GroundTruthMdp:
    """Random oracle with action-dependent survival odds, quick absorption,
    and emission means pairwise `separation` noise units apart."""
    rng = np.random.default_rng(seed)
    S = n_states
    T = np.empty((S, n_actions, S + 2))
    quality = rng.uniform(0.1, 0.9, size=(S, n_actions))
    for s in range(S):
        for a in range(n_actions):
            cont = rng.dirichlet(np.ones(S)) * (1.0 - absorb_prob)
            T[s, a, :S] = cont
            T[s, a, S] = absorb_prob * quality[s, a]
            T[s, a, S + 1] = absorb_prob * (1.0 - quality[s, a])
    behavior = factorized_behavior(S, n_actions)
    means = np.eye(S) * (separation * noise_scale / np.sqrt(2.0))
    return GroundTruthMdp(
        n_states=S,
        n_actions=n_actions,
        transitions=T,
        behavior=behavior,
        start_probs=np.full(S, 1.0 / S),
        emission_means=means,
        emission_scale=noise_scale,
        feature_names=tuple(f"feat_{i}" for i in range(S)),
        gamma=gamma,
    )


def canonical_action_space(mdp: GroundTruthMdp):
    """Action space implied by the oracle's representative dose levels: the
    lower three nonzero levels are the quantile edges by construction."""
    from .actions import ActionSpace
    return ActionSpace(
        fluid_edges=tuple(mdp.fluid_levels[1:4]),
        vaso_edges=tuple(mdp.vaso_levels[1:4]),
        fluid_top=mdp.fluid_levels[4],
        vaso_top=mdp.vaso_levels[4],
    )


def tilt_behavior_toward(mdp: GroundTruthMdp, policy: np.ndarray,
                         weight: float = 0.6, epsilon: float = 0.05) -> GroundTruthMdp:
    """Oracle variant whose behavior mixes a softened version of `policy`
    with the original behavior. Keeps dynamics and emissions unchanged;
    useful when importance-sampling evaluation needs decent overlap with a
    near-greedy target."""
    S, A = mdp.n_states, mdp.n_actions
    soft = np.full((S, A), epsilon / (A - 1))
    soft[np.arange(S), np.asarray(policy, dtype=np.int64)] = 1.0 - epsilon
    behavior = weight * soft + (1.0 - weight) * mdp.behavior
    return GroundTruthMdp(
        n_states=S, n_actions=A, transitions=mdp.transitions.copy(),
        behavior=behavior, start_probs=mdp.start_probs.copy(),
        emission_means=mdp.emission_means.copy(),
        emission_scale=mdp.emission_scale,
        feature_names=mdp.feature_names, gamma=mdp.gamma,
        fluid_levels=mdp.fluid_levels, vaso_levels=mdp.vaso_levels)


def schema_for(mdp: GroundTruthMdp) -> FeatureSchema:
    lo = float(mdp.emission_means.min() - 3 * mdp.emission_scale)
    hi = float(mdp.emission_means.max() + 3 * mdp.emission_scale)
    return FeatureSchema(tuple(
        FeatureSpec(name, "vitals", lo, hi) for name in mdp.feature_names))


def sample_cohort(
    mdp: GroundTruthMdp,
    n_patients: int,
    seed: int,
    max_len: int = 40,
    return_latent: bool = False,
):
    """Sample trajectories under the behavior policy.

    Patient i draws from default_rng([seed, i]), so the cohort is
    deterministic given the seed under any parallel split. died is true iff
    the chain absorbs in the die state; truncation at max_len counts as
    survival.
    """
    if n_patients < 1 or max_len < 1:
        raise ValidationError("n_patients and max_len must be >= 1")
    S = mdp.n_states
    cum_start = np.cumsum(mdp.start_probs)
    cum_b = np.cumsum(mdp.behavior, axis=1)
    cum_t = np.cumsum(mdp.transitions, axis=2)
    d = mdp.emission_means.shape[1]
    genders = ("F", "M")
    cohort = []
    latents = []
    for i in range(n_patients):
        rng = np.random.default_rng([seed, i])
        u = rng.random(2 * max_len + 1)
        s = int(np.searchsorted(cum_start, u[0], side="right"))
        states = []
        acts = []
        died = False
        for t in range(max_len):
            a = int(np.searchsorted(cum_b[s], u[1 + 2 * t], side="right"))
            states.append(s)
            acts.append(a)
            nxt = int(np.searchsorted(cum_t[s, a], u[2 + 2 * t], side="right"))
            if nxt >= S:
                died = nxt == S + 1
                break
            s = nxt
        n_steps = len(states)
        noise = rng.standard_normal((n_steps, d)) * mdp.emission_scale
        feats = mdp.emission_means[states] + noise
        sofa = rng.integers(0, 25, size=n_steps)
        sirs = rng.integers(0, 5, size=n_steps)
        gender = genders[int(rng.integers(2))]
        comorb = {"diabetes": bool(rng.integers(2)), "chf": bool(rng.integers(2))}
        timesteps = [
            TimestepRecord(
                bin_index=t,
                features={name: float(feats[t, j]) for j, name in enumerate(mdp.feature_names)},
                fluid_dose=mdp.fluid_levels[acts[t] // 5],
                vaso_dose=mdp.vaso_levels[acts[t] % 5],
                mech_vent=False,
                sofa=int(sofa[t]),
                sirs=int(sirs[t]),
            )
            for t in range(n_steps)
        ]
        cohort.append(PatientTrajectory(
            patient_id=f"sim{i:06d}",
            age=60.0,
            gender=gender,
            weight=80.0,
            comorbidities=comorb,
            died=died,
            timesteps=timesteps,
        ))
        if return_latent:
            latents.append(np.array(states, dtype=np.int64))
    if return_latent:
        return cohort, latents
    return cohort


def _policy_transition(mdp: GroundTruthMdp, policy: np.ndarray) -> np.ndarray:
    policy = np.asarray(policy)
    if policy.ndim == 1:
        return mdp.transitions[np.arange(mdp.n_states), policy.astype(np.int64)]
    return np.einsum("sa,sat->st", policy.astype(np.float64), mdp.transitions)


def exact_policy_value(mdp: GroundTruthMdp, policy: np.ndarray) -> float:
    """Start-distribution value by solving the Bellman system on the known
    dynamics. policy is per-state actions (S,) or a distribution (S, A)."""
    S = mdp.n_states
    P = _policy_transition(mdp, policy)
    A = np.eye(S) - mdp.gamma * P[:, :S]
    b = P[:, S] * REWARD_SURVIVE + P[:, S + 1] * REWARD_DIE
    try:
        V = np.linalg.solve(A, b)
    except np.linalg.LinAlgError as exc:
        raise NonContractiveError(
            f"non-contractive: Bellman system singular ({exc})") from exc
    return float(mdp.start_probs @ V)


def exact_state_values(mdp: GroundTruthMdp, policy: np.ndarray) -> np.ndarray:
    S = mdp.n_states
    P = _policy_transition(mdp, policy)
    A = np.eye(S) - mdp.gamma * P[:, :S]
    b = P[:, S] * REWARD_SURVIVE + P[:, S + 1] * REWARD_DIE
    return np.linalg.solve(A, b)


def optimal_policy(mdp: GroundTruthMdp, max_sweeps: int = 200) -> tuple[np.ndarray, float]:
    """Exact policy iteration on the true dynamics."""
    S, A = mdp.n_states, mdp.n_actions
    policy = np.zeros(S, dtype=np.int64)
    for _ in range(max_sweeps):
        V = exact_state_values(mdp, policy)
        u = np.concatenate([mdp.gamma * V, [REWARD_SURVIVE, REWARD_DIE]])
        q = mdp.transitions.reshape(S * A, S + 2) @ u
        new_policy = np.argmax(q.reshape(S, A), axis=1)
        if np.array_equal(new_policy, policy):
            break
        policy = new_policy
    return policy, exact_policy_value(mdp, policy)
