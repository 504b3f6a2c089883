"""Empirical MDP over discrete states and the 5x5 action grid, solved by
policy iteration with exact linear-solve evaluation.

Rewards are terminal-only: +100 into the absorbing survive state, -100 into
die, zero elsewhere, so every estimated value lies in [-100, 100]. Q values
are only estimated for (state, action) pairs with strictly more than
`min_count` observed clinician actions; states with no estimated action fall
back to the behavior-policy plurality action and are listed in the coverage
report.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .actions import ActionSpace, N_ACTIONS, discretize_doses_batch
from .cohort import PatientTrajectory
from .errors import EmptyCohortError, NonContractiveError, ConvergenceError
from .statespace import StateModel, assign_cohort

REWARD_SURVIVE = 100.0
REWARD_DIE = -100.0


@dataclass
class MdpModel:
    k: int
    n_actions: int
    counts: np.ndarray            # (k, A, k + 2) transition counts; successors
                                  # k..k+1 are the absorbing survive/die states
    visit_counts: np.ndarray      # (k, A)
    behavior: np.ndarray          # (k, A) empirical clinician policy
    gamma: float
    min_count: int
    q_values: np.ndarray | None = None    # (k, A), NaN where not estimated
    estimated: np.ndarray | None = None   # (k, A) bool
    policy: np.ndarray | None = None      # (k,) greedy action per state
    fallback_states: list[int] = field(default_factory=list)
    unvisited_states: list[int] = field(default_factory=list)
    values: np.ndarray | None = None      # (k,) state values under the policy
    trace: list[dict] = field(default_factory=list)

    @property
    def survive_index(self) -> int:
        return self.k

    @property
    def die_index(self) -> int:
        return self.k + 1


def trajectory_state_actions(
    cohort: Sequence[PatientTrajectory],
    state_model: StateModel,
    space: ActionSpace,
) -> list[tuple[np.ndarray, np.ndarray, bool]]:
    """Per trajectory: (state ids, action ids, died)."""
    states = assign_cohort(state_model, cohort)
    out = []
    for traj, s in zip(cohort, states):
        fluid = np.array([r.fluid_dose for r in traj.timesteps])
        vaso = np.array([r.vaso_dose for r in traj.timesteps])
        a = discretize_doses_batch(space, fluid, vaso)
        out.append((s, a, traj.died))
    return out


def estimate_mdp(
    train_cohort: Sequence[PatientTrajectory],
    state_model: StateModel,
    space: ActionSpace,
    gamma: float = 0.99,
    min_count: int = 5,
) -> MdpModel:
    """Count transitions and the empirical behavior policy; Q left unsolved.

    Consecutive timesteps (t, t+1) increment counts[s_t, a_t, s_{t+1}]; the
    last timestep transitions into the absorbing survive/die state per the
    trajectory outcome.
    """
    if not train_cohort:
        raise EmptyCohortError("cannot estimate an MDP from an empty cohort")
    k = state_model.k
    counts = np.zeros((k, N_ACTIONS, k + 2), dtype=np.int64)
    for s, a, died in trajectory_state_actions(train_cohort, state_model, space):
        succ = np.empty(len(s), dtype=np.int64)
        succ[:-1] = s[1:]
        succ[-1] = k + 1 if died else k
        np.add.at(counts, (s, a, succ), 1)
    visit = counts.sum(axis=2)
    totals = visit.sum(axis=1, keepdims=True)
    behavior = np.divide(visit, totals, out=np.zeros_like(visit, dtype=np.float64),
                         where=totals > 0)
    return MdpModel(
        k=k,
        n_actions=N_ACTIONS,
        counts=counts,
        visit_counts=visit,
        behavior=behavior,
        gamma=gamma,
        min_count=min_count,
    )


def transition_probs(model: MdpModel, policy: np.ndarray) -> np.ndarray:
    """(k, k+2) count-normalized successor distribution under a deterministic
    policy; rows of never-evaluated states are zero."""
    rows = model.counts[np.arange(model.k), policy].astype(np.float64)
    n = rows.sum(axis=1, keepdims=True)
    return np.divide(rows, n, out=np.zeros_like(rows), where=n > 0)


def _check_terminal_reachability(model: MdpModel) -> None:
    """gamma = 1 requires every visited state to reach a terminal under the
    union of observed actions."""
    k = model.k
    reach = np.zeros(k, dtype=bool)
    support = model.counts.sum(axis=1)  # (k, k+2) pooled over actions
    frontier = list(range(k))
    terminal_mass = support[:, k:].sum(axis=1) > 0
    reach |= terminal_mass
    changed = True
    while changed:
        changed = False
        for s in range(k):
            if reach[s]:
                continue
            succ = np.flatnonzero(support[s, :k])
            if any(reach[t] for t in succ):
                reach[s] = True
                changed = True
    visited = model.visit_counts.sum(axis=1) > 0
    stuck = np.flatnonzero(visited & ~reach)
    if stuck.size:
        raise NonContractiveError(
            f"gamma=1 with states that cannot reach a terminal: {stuck.tolist()}")


def evaluate_policy(model: MdpModel, policy: np.ndarray) -> np.ndarray:
    """Exact policy evaluation: solve (I - gamma * P) V = P_term @ r over the
    visited states; unvisited states get value 0."""
    k = model.k
    visited = model.visit_counts.sum(axis=1) > 0
    P = transition_probs(model, policy)
    idx = np.flatnonzero(visited)
    if idx.size == 0:
        return np.zeros(k)
    A = np.eye(idx.size) - model.gamma * P[np.ix_(idx, idx)]
    b = P[idx, k] * REWARD_SURVIVE + P[idx, k + 1] * REWARD_DIE
    # successors into unvisited states contribute value 0, nothing to add
    try:
        v = np.linalg.solve(A, b)
    except np.linalg.LinAlgError as exc:
        raise NonContractiveError(f"singular Bellman system: {exc}") from exc
    V = np.zeros(k)
    V[idx] = v
    return V


def action_values(model: MdpModel, V: np.ndarray) -> np.ndarray:
    """Q[s, a] = sum_s' P(s'|s,a) (R(s') + gamma V(s')) for observed (s, a)."""
    k = model.k
    u = np.empty(k + 2)
    u[:k] = model.gamma * V
    u[k] = REWARD_SURVIVE
    u[k + 1] = REWARD_DIE
    flat = model.counts.reshape(k * model.n_actions, k + 2).astype(np.float64)
    q = flat @ u
    n = model.visit_counts.reshape(-1).astype(np.float64)
    q = np.divide(q, n, out=np.full_like(q, np.nan), where=n > 0)
    return q.reshape(k, model.n_actions)


def _greedy(model: MdpModel, q_full: np.ndarray, estimated: np.ndarray,
            fallback: np.ndarray) -> np.ndarray:
    """Greedy improvement over estimated actions, ties to the lowest action
    id; states without estimated actions keep their fallback action."""
    q = np.where(estimated, q_full, -np.inf)
    best = np.argmax(q, axis=1)
    has_estimated = estimated.any(axis=1)
    return np.where(has_estimated, best, fallback)


def policy_iteration(model: MdpModel, max_sweeps: int = 500) -> MdpModel:
    """Alternate exact evaluation and greedy improvement until stable.

    Fills q_values (NaN where under the visit threshold), the greedy policy,
    state values, the fallback/unvisited coverage lists, and a per-sweep
    trace usable to assert value monotonicity.
    """
    if model.gamma >= 1.0:
        if model.gamma > 1.0:
            raise NonContractiveError(f"gamma must be <= 1, got {model.gamma}")
        _check_terminal_reachability(model)

    estimated = model.visit_counts > model.min_count
    visited = model.visit_counts.sum(axis=1) > 0
    # fallback: plurality of observed clinician actions (lowest id on ties);
    # argmax over a zero row gives action 0 for never-visited states.
    fallback = np.argmax(model.behavior, axis=1)
    policy = _greedy(model, np.where(model.visit_counts > 0, model.behavior, -np.inf),
                     estimated, fallback)

    model.trace = []
    for sweep in range(max_sweeps):
        V = evaluate_policy(model, policy)
        q_full = action_values(model, V)
        model.trace.append({
            "sweep": sweep,
            "mean_value": float(V[visited].mean()) if visited.any() else 0.0,
            "policy": policy.copy(),
        })
        new_policy = _greedy(model, q_full, estimated, fallback)
        if np.array_equal(new_policy, policy):
            break
        policy = new_policy
    else:
        raise ConvergenceError(f"policy iteration did not stabilize in {max_sweeps} sweeps")

    model.values = V
    model.q_values = np.where(estimated, q_full, np.nan)
    model.estimated = estimated
    model.policy = policy
    model.fallback_states = np.flatnonzero(visited & ~estimated.any(axis=1)).tolist()
    model.unvisited_states = np.flatnonzero(~visited).tolist()
    return model


def coverage_report(model: MdpModel) -> dict:
    return {
        "states": model.k,
        "visited_states": int((model.visit_counts.sum(axis=1) > 0).sum()),
        "estimated_state_actions": int(model.estimated.sum()) if model.estimated is not None else 0,
        "fallback_states": list(model.fallback_states),
        "unvisited_states": list(model.unvisited_states),
    }
