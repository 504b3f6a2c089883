import itertools
import json

import numpy as np
import pytest

from sepsiscds.cohort import trajectory_to_dict
from sepsiscds.errors import NonContractiveError, ValidationError
from sepsiscds.simgen import (GroundTruthMdp, exact_policy_value,
                              exact_state_values, make_oracle_mdp,
                              optimal_policy, sample_cohort, schema_for)


def single_state_mdp(target: str, gamma: float = 1.0) -> GroundTruthMdp:
    # one non-terminal state, one action, absorbs immediately
    T = np.zeros((1, 25, 3))
    T[:, :, 1 if target == "survive" else 2] = 1.0
    B = np.full((1, 25), 1 / 25)
    return GroundTruthMdp(
        n_states=1, n_actions=25, transitions=T, behavior=B,
        start_probs=np.array([1.0]), emission_means=np.zeros((1, 2)),
        emission_scale=1.0, feature_names=("feat_0", "feat_1"), gamma=gamma)


def test_exact_value_single_state_survive():
    assert exact_policy_value(single_state_mdp("survive"), np.array([0])) == pytest.approx(100.0, abs=1e-10)


def test_exact_value_single_state_die():
    assert exact_policy_value(single_state_mdp("die"), np.array([0])) == pytest.approx(-100.0, abs=1e-10)


def test_degenerate_dynamics_all_survive_in_one_step():
    mdp = single_state_mdp("survive")
    # behavior forcing action 0
    mdp.behavior = np.zeros((1, 25))
    mdp.behavior[0, 0] = 1.0
    cohort = sample_cohort(mdp, 50, seed=3)
    assert all(len(t.timesteps) == 1 and not t.died for t in cohort)


def test_sampling_deterministic(oracle_mdp):
    schema = schema_for(oracle_mdp)
    a = sample_cohort(oracle_mdp, 40, seed=5)
    b = sample_cohort(oracle_mdp, 40, seed=5)
    assert [trajectory_to_dict(t, schema) for t in a] == \
           [trajectory_to_dict(t, schema) for t in b]
    c = sample_cohort(oracle_mdp, 40, seed=6)
    assert [trajectory_to_dict(t, schema) for t in a] != \
           [trajectory_to_dict(t, schema) for t in c]


def test_empirical_transition_frequencies_match_truth():
    # law of large numbers against the specified transition tensor; a small
    # action set and slow absorption keep every (s, a) pair well visited
    S, A = 6, 2
    rng = np.random.default_rng(0)
    cont = rng.dirichlet(np.ones(S), size=(S, A)) * 0.88
    absorb = rng.dirichlet(np.ones(2), size=(S, A)) * 0.12
    T = np.concatenate([cont, absorb], axis=2)
    B = np.full((S, A), 1 / A)
    mdp = GroundTruthMdp(
        n_states=S, n_actions=A, transitions=T, behavior=B,
        start_probs=np.full(S, 1 / S), emission_means=np.eye(S) * 6,
        emission_scale=1.0, feature_names=tuple(f"feat_{i}" for i in range(S)),
        gamma=0.99)
    cohort, latents = sample_cohort(mdp, 10_000, seed=1, return_latent=True)

    counts = np.zeros((S, A, S + 2))
    for traj, states in zip(cohort, latents):
        # recover sampled actions from the exact dose levels
        for t, rec in enumerate(traj.timesteps):
            a = (mdp.fluid_levels.index(rec.fluid_dose) * 5
                 + mdp.vaso_levels.index(rec.vaso_dose))
            s = states[t]
            if t + 1 < len(states):
                counts[s, a, states[t + 1]] += 1
            else:
                counts[s, a, S + 1 if traj.died else S] += 1
    n = counts.sum(axis=2, keepdims=True)
    freq = counts / np.maximum(n, 1)
    assert n[:, :, 0].min() >= 2000
    err = np.abs(freq - T).max(axis=2)
    assert err.max() < 0.02


def test_exact_value_matches_monte_carlo(oracle_mdp):
    policy, _ = optimal_policy(oracle_mdp)
    exact = exact_policy_value(oracle_mdp, policy)

    # independent Monte-Carlo oracle: vectorized rollouts of the chain
    n = 1_000_000
    rng = np.random.default_rng(42)
    S = oracle_mdp.n_states
    cum_start = np.cumsum(oracle_mdp.start_probs)
    states = np.searchsorted(cum_start, rng.random(n), side="right")
    returns = np.zeros(n)
    discount = np.ones(n)
    alive = np.ones(n, dtype=bool)
    cum_t = np.cumsum(oracle_mdp.transitions, axis=2)
    for _ in range(200):
        if not alive.any():
            break
        idx = np.flatnonzero(alive)
        rows = cum_t[states[idx], policy[states[idx]]]
        u = rng.random(idx.size)
        nxt = (rows < u[:, None]).sum(axis=1)
        absorbed = nxt >= S
        surv = nxt == S
        died = nxt == S + 1
        returns[idx[surv]] = discount[idx[surv]] * 100.0
        returns[idx[died]] = discount[idx[died]] * -100.0
        states[idx[~absorbed]] = nxt[~absorbed]
        discount[idx[~absorbed]] *= oracle_mdp.gamma
        alive[idx[absorbed]] = False
    assert abs(returns.mean() - exact) < 0.5


def test_values_bounded(oracle_mdp):
    rng = np.random.default_rng(9)
    for _ in range(10):
        policy = rng.integers(0, oracle_mdp.n_actions, size=oracle_mdp.n_states)
        v = exact_policy_value(oracle_mdp, policy)
        assert -100.0 <= v <= 100.0


def test_enumerated_argmax_policy_dominates():
    # small instance: exhaustive policy enumeration; the best enumerated
    # policy must match optimal_policy and dominate every other policy
    S, A = 3, 2
    rng = np.random.default_rng(5)
    T = rng.dirichlet(np.ones(S + 2), size=(S, A))
    mdp = GroundTruthMdp(
        n_states=S, n_actions=A, transitions=T, behavior=np.full((S, A), 1 / A),
        start_probs=np.full(S, 1 / S), emission_means=np.eye(S),
        emission_scale=1.0, feature_names=("a", "b", "c"), gamma=0.95)
    values = {}
    for assignment in itertools.product(range(A), repeat=S):
        values[assignment] = exact_policy_value(mdp, np.array(assignment))
    best = max(values, key=values.get)
    pi, v = optimal_policy(mdp)
    assert values[best] == pytest.approx(v, abs=1e-9)
    assert all(values[best] >= val - 1e-12 for val in values.values())


def test_truncation_counts_as_survival():
    # a chain that never absorbs within the horizon
    T = np.zeros((1, 25, 3))
    T[:, :, 0] = 1.0
    mdp = GroundTruthMdp(
        n_states=1, n_actions=25, transitions=T, behavior=np.full((1, 25), 1 / 25),
        start_probs=np.array([1.0]), emission_means=np.zeros((1, 2)),
        emission_scale=1.0, feature_names=("x", "y"), gamma=0.99)
    cohort = sample_cohort(mdp, 5, seed=0, max_len=7)
    assert all(len(t.timesteps) == 7 and not t.died for t in cohort)


def test_noncontractive_error():
    T = np.zeros((1, 25, 3))
    T[:, :, 0] = 1.0  # self-loop forever
    mdp = GroundTruthMdp(
        n_states=1, n_actions=25, transitions=T, behavior=np.full((1, 25), 1 / 25),
        start_probs=np.array([1.0]), emission_means=np.zeros((1, 2)),
        emission_scale=1.0, feature_names=("x", "y"), gamma=1.0)
    with pytest.raises(NonContractiveError):
        exact_policy_value(mdp, np.array([0]))


def test_invalid_mdp_rejected():
    T = np.zeros((1, 25, 3))
    T[:, :, 1] = 0.5  # rows sum to 0.5
    with pytest.raises(ValidationError):
        GroundTruthMdp(
            n_states=1, n_actions=25, transitions=T, behavior=np.full((1, 25), 1 / 25),
            start_probs=np.array([1.0]), emission_means=np.zeros((1, 2)),
            emission_scale=1.0, feature_names=("x", "y"), gamma=0.99)


def test_json_round_trip(oracle_mdp, tmp_path):
    path = tmp_path / "mdp.json"
    oracle_mdp.save(path)
    loaded = GroundTruthMdp.load(path)
    np.testing.assert_array_equal(loaded.transitions, oracle_mdp.transitions)
    np.testing.assert_array_equal(loaded.behavior, oracle_mdp.behavior)
    assert loaded.feature_names == oracle_mdp.feature_names
    assert loaded.gamma == oracle_mdp.gamma
