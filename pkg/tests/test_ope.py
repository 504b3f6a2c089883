import numpy as np
import pytest

from sepsiscds.actions import ActionSpace, fit_action_space
from sepsiscds.cohort import PatientTrajectory, TimestepRecord
from sepsiscds.errors import NoOverlapError, ValidationError
from sepsiscds.mdp import estimate_mdp, policy_iteration
from sepsiscds.ope import (smooth_behavior, soften_policy, wis_bootstrap,
                           wis_value)
from sepsiscds.statespace import StateModel

SPACE = ActionSpace((10.0, 20.0, 30.0), (0.1, 0.2, 0.3), 40.0, 0.4)


def one_state_model():
    return StateModel(feature_names=("x",), means=np.zeros(1), stds=np.ones(1),
                      centroids=np.zeros((1, 1)), k=1, seed=0, n_restarts=1)


def two_state_model():
    return StateModel(feature_names=("x",), means=np.zeros(1), stds=np.ones(1),
                      centroids=np.array([[-1.0], [1.0]]), k=2, seed=0,
                      n_restarts=1)


def traj(pid, x_values, actions, died):
    """actions as (fluid_dose, vaso_dose) pairs."""
    steps = [
        TimestepRecord(i, {"x": float(x)}, float(f), float(v), False, 0, 0)
        for i, (x, (f, v)) in enumerate(zip(x_values, actions))]
    return PatientTrajectory(pid, 50.0, "F", 70.0, {}, died, steps)


def random_cohort(rng, n=30):
    cohort = []
    for i in range(n):
        length = int(rng.integers(1, 5))
        xs = rng.choice([-1.0, 1.0], size=length)
        doses = [(rng.choice([0.0, 15.0, 25.0]), rng.choice([0.0, 0.15]))
                 for _ in range(length)]
        cohort.append(traj(f"t{i}", xs, doses, bool(rng.integers(2))))
    return cohort


def behavior_for(cohort, model):
    m = estimate_mdp(cohort, model, SPACE, gamma=1.0, min_count=0)
    return m.behavior


def test_identity_eval_equals_behavior():
    rng = np.random.default_rng(0)
    cohort = random_cohort(rng)
    model = two_state_model()
    behavior = behavior_for(cohort, model)
    got = wis_value(behavior, behavior, cohort, model, SPACE, gamma=1.0)
    returns = np.array([100.0 if not t.died else -100.0 for t in cohort])
    assert got == pytest.approx(returns.mean(), abs=1e-12)


def test_two_trajectory_weighted_mean_is_60():
    model = two_state_model()
    # state 0: ratio 2; state 1: ratio 0.5; single-step trajectories
    cohort = [
        traj("a", [-1.0], [(0.0, 0.0)], died=False),   # +100, state 0
        traj("b", [1.0], [(0.0, 0.0)], died=True),      # -100, state 1
    ]
    behavior = np.array([[0.5] + [0.5 / 24] * 24,
                         [0.5] + [0.5 / 24] * 24])
    eval_probs = behavior.copy()
    eval_probs[0, 0] = 1.0   # ratio 2
    eval_probs[1, 0] = 0.25  # ratio 0.5
    got = wis_value(eval_probs, behavior, cohort, model, SPACE, gamma=1.0)
    assert got == 60.0


def test_soften_policy_distributes_epsilon():
    probs = soften_policy(np.array([3]), n_actions=25, epsilon=0.01)
    assert probs[0, 3] == pytest.approx(0.99)
    assert probs[0, 5] == pytest.approx(0.01 / 24)
    assert probs.sum() == pytest.approx(1.0)


def test_smoothed_behavior_strictly_positive():
    counts = np.zeros((2, 25), dtype=np.int64)
    counts[0, 3] = 10
    probs = smooth_behavior(counts, alpha=0.5)
    assert (probs > 0).all()
    np.testing.assert_allclose(probs.sum(axis=1), 1.0)
    assert probs[0, 3] == pytest.approx(10.5 / 22.5)


def test_duplication_invariance():
    rng = np.random.default_rng(1)
    cohort = random_cohort(rng)
    model = two_state_model()
    behavior = behavior_for(cohort, model)
    eval_probs = smooth_behavior((behavior * 100).astype(np.int64), alpha=1.0)
    a = wis_value(eval_probs, behavior, cohort, model, SPACE, gamma=0.97)
    b = wis_value(eval_probs, behavior, cohort + cohort, model, SPACE, gamma=0.97)
    assert b == pytest.approx(a, abs=1e-12)


def test_estimate_within_return_range():
    rng = np.random.default_rng(2)
    cohort = random_cohort(rng, n=50)
    model = two_state_model()
    behavior = behavior_for(cohort, model)
    greedy = np.array([0, 6])
    got = wis_value(greedy, behavior, cohort, model, SPACE, gamma=0.9,
                    epsilon=0.05)
    returns = [0.9 ** (len(t.timesteps) - 1) * (-100 if t.died else 100) for t in cohort]
    assert min(returns) - 1e-9 <= got <= max(returns) + 1e-9


def test_no_overlap_error():
    model = one_state_model()
    cohort = [traj("a", [0.0], [(0.0, 0.0)], died=False)]
    behavior = np.full((1, 25), 1 / 25)
    eval_probs = np.zeros((1, 25))
    eval_probs[0, 24] = 1.0  # never the observed action 0
    with pytest.raises(NoOverlapError):
        wis_value(eval_probs, behavior, cohort, model, SPACE, gamma=1.0)


def test_zero_behavior_probability_names_trajectory():
    model = one_state_model()
    cohort = [traj("bad-traj", [0.0], [(0.0, 0.0)], died=False)]
    behavior = np.zeros((1, 25))
    behavior[0, 5] = 1.0  # observed action 0 has probability zero
    eval_probs = np.full((1, 25), 1 / 25)
    with pytest.raises(ValidationError, match="bad-traj"):
        wis_value(eval_probs, behavior, cohort, model, SPACE, gamma=1.0)


def test_bootstrap_identical_trajectories_zero_width():
    model = one_state_model()
    cohort = [traj(f"t{i}", [0.0], [(0.0, 0.0)], died=False) for i in range(20)]
    behavior = np.full((1, 25), 1 / 25)
    est = wis_bootstrap(behavior, behavior, cohort, model, SPACE, gamma=1.0,
                        n_boot=50, seed=3)
    assert est.ci_lo == est.ci_hi == est.value == 100.0


def test_bootstrap_single_replicate_degenerate():
    rng = np.random.default_rng(4)
    cohort = random_cohort(rng)
    model = two_state_model()
    behavior = behavior_for(cohort, model)
    est = wis_bootstrap(behavior, behavior, cohort, model, SPACE, gamma=1.0,
                        n_boot=1, seed=5)
    assert est.ci_lo == est.ci_hi


def test_bootstrap_matches_independent_resampling_loop():
    rng = np.random.default_rng(6)
    cohort = random_cohort(rng, n=100)
    model = two_state_model()
    behavior = behavior_for(cohort, model)
    greedy = np.array([0, 6])
    seed = 123
    est = wis_bootstrap(greedy, behavior, cohort, model, SPACE, gamma=1.0,
                        n_boot=40, seed=seed, epsilon=0.05)

    # independent oracle sharing only the documented seed schedule
    eval_probs = soften_policy(greedy, epsilon=0.05)
    weights = []
    returns = []
    from sepsiscds.mdp import trajectory_state_actions
    for (s, a, died) in trajectory_state_actions(cohort, model, SPACE):
        w = 1.0
        for t in range(len(s)):
            w *= eval_probs[s[t], a[t]] / behavior[s[t], a[t]]
        weights.append(w)
        returns.append(-100.0 if died else 100.0)
    weights = np.array(weights)
    returns = np.array(returns)
    replicates = []
    for r in range(40):
        idx = np.random.default_rng([seed, r]).integers(0, 100, size=100)
        replicates.append(np.sum(weights[idx] * returns[idx]) / np.sum(weights[idx]))
    lo, hi = np.percentile(replicates, [2.5, 97.5])
    assert est.ci_lo == pytest.approx(lo, abs=1e-12)
    assert est.ci_hi == pytest.approx(hi, abs=1e-12)
    assert est.value == pytest.approx(np.sum(weights * returns) / np.sum(weights), abs=1e-12)


def test_bootstrap_deterministic():
    rng = np.random.default_rng(7)
    cohort = random_cohort(rng, n=40)
    model = two_state_model()
    behavior = behavior_for(cohort, model)
    a = wis_bootstrap(behavior, behavior, cohort, model, SPACE, gamma=1.0,
                      n_boot=25, seed=9)
    b = wis_bootstrap(behavior, behavior, cohort, model, SPACE, gamma=1.0,
                      n_boot=25, seed=9)
    assert (a.value, a.ci_lo, a.ci_hi) == (b.value, b.ci_lo, b.ci_hi)


def test_max_weight_cap_recorded_and_applied():
    model = one_state_model()
    cohort = [
        traj("a", [0.0], [(0.0, 0.0)], died=False),
        traj("b", [0.0], [(8.0, 0.0)], died=True),  # fluid bin 1 -> action 5
    ]
    behavior = np.full((1, 25), 1 / 25)
    eval_probs = np.zeros((1, 25))
    eval_probs[0, 0] = 0.9
    eval_probs[0, 5] = 0.1
    uncapped = wis_value(eval_probs, behavior, cohort, model, SPACE, gamma=1.0)
    capped = wis_value(eval_probs, behavior, cohort, model, SPACE, gamma=1.0,
                       max_weight=2.5)
    # weights 22.5 and 2.5 -> capped weights 2.5 and 2.5 -> plain mean
    assert uncapped == pytest.approx((22.5 * 100 + 2.5 * -100) / 25.0)
    assert capped == pytest.approx(0.0)
