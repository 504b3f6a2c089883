"""Per-timestep recommendation payloads and cohort browsing.

The 5x5 grids are laid out fluid-bin-major: cell (i, j) is action i*5+j,
the layout contract the UI relies on. States where no action clears the
visit threshold get a low_data payload with behavior-frequency alternatives
instead of hiding the timestep.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .actions import (ActionSpace, N_ACTIONS, N_BINS, action_components,
                      bin_dose_midpoints, discretize_action, recommended_delta)
from .cohort import PatientTrajectory
from .errors import ValidationError
from .explain import StateExplainer, StateExplanation
from .mdp import MdpModel, trajectory_state_actions
from .statespace import StateModel, assign_state


@dataclass
class Alternative:
    action_id: int
    q_value: float | None
    clinician_freq: float

    def to_json(self) -> dict:
        fluid_bin, vaso_bin = action_components(self.action_id)
        return {
            "action_id": self.action_id,
            "fluid_bin": fluid_bin,
            "vaso_bin": vaso_bin,
            "q_value": self.q_value,
            "clinician_freq": self.clinician_freq,
        }


@dataclass
class RecommendationPayload:
    state_id: int
    q_heatmap: list[list[float | None]]       # 5x5, fluid-bin-major, None = not estimated
    clinician_probs: list[list[float]]        # 5x5, same layout
    recommended_action: int
    recommended_fluid_bin: int
    recommended_vaso_bin: int
    recommended_fluid_dose: float             # bin midpoint, mL / 4h
    recommended_vaso_dose: float              # bin midpoint, mcg/kg/min
    fluid_delta: str
    vaso_delta: str
    alternatives: list[Alternative]
    low_data: bool
    explanation: StateExplanation | None = None

    def to_json(self) -> dict:
        doc = {
            "schema_version": 1,
            "state_id": self.state_id,
            "q_heatmap": self.q_heatmap,
            "clinician_probs": self.clinician_probs,
            "recommended_action": self.recommended_action,
            "recommended_fluid_bin": self.recommended_fluid_bin,
            "recommended_vaso_bin": self.recommended_vaso_bin,
            "recommended_fluid_dose": self.recommended_fluid_dose,
            "recommended_vaso_dose": self.recommended_vaso_dose,
            "fluid_delta": self.fluid_delta,
            "vaso_delta": self.vaso_delta,
            "alternatives": [a.to_json() for a in self.alternatives],
            "low_data": self.low_data,
        }
        if self.explanation is not None:
            doc["explanation"] = self.explanation.to_json()
        return doc


@dataclass
class CohortFilter:
    age: tuple[float, float] | None = None
    gender: set[str] | None = None
    comorbidities: dict[str, bool] | None = None
    outcome: bool | None = None               # died
    sofa: tuple[int, int] | None = None       # matches if any bin in range
    sirs: tuple[int, int] | None = None
    clinician_actions: set[int] | None = None  # timestep-level predicates
    model_actions: set[int] | None = None

    def __post_init__(self):
        for name, rng in (("age", self.age), ("sofa", self.sofa), ("sirs", self.sirs)):
            if rng is not None and rng[0] > rng[1]:
                raise ValidationError(f"filter range {name} has lo > hi: {rng}")


def _top_actions(scores: np.ndarray, valid: np.ndarray, limit: int = 5) -> list[int]:
    """Indices of the highest scores among valid entries, ties to the lowest
    action id."""
    masked = np.where(valid, scores, -np.inf)
    order = np.argsort(-masked, kind="stable")
    return [int(a) for a in order[:limit] if valid[a]]


def build_payload(
    model: MdpModel,
    state_model: StateModel,
    space: ActionSpace,
    traj: PatientTrajectory,
    t: int,
    explainer: StateExplainer | None = None,
) -> RecommendationPayload:
    """Assemble the full payload for one timestep of one trajectory."""
    if model.q_values is None or model.policy is None:
        raise ValidationError("MdpModel must be solved before building payloads")
    if not 0 <= t < len(traj.timesteps):
        raise ValidationError(f"timestep {t} outside trajectory of {traj.patient_id}")
    rec = traj.timesteps[t]
    s = assign_state(state_model, rec, traj)

    q_row = model.q_values[s]
    est_row = model.estimated[s] if model.estimated is not None else np.zeros(N_ACTIONS, bool)
    b_row = model.behavior[s]

    q_heatmap = [[(float(q_row[i * N_BINS + j]) if est_row[i * N_BINS + j] else None)
                  for j in range(N_BINS)] for i in range(N_BINS)]
    clinician = [[float(b_row[i * N_BINS + j]) for j in range(N_BINS)]
                 for i in range(N_BINS)]

    low_data = not est_row.any()
    recommended = int(model.policy[s])
    if low_data:
        alternatives = [
            Alternative(a, None, float(b_row[a]))
            for a in _top_actions(b_row, b_row > 0)]
        if not alternatives:
            alternatives = [Alternative(recommended, None, 0.0)]
    else:
        alternatives = [
            Alternative(a, float(q_row[a]), float(b_row[a]))
            for a in _top_actions(q_row, est_row)]

    fluid_bin, vaso_bin = action_components(recommended)
    fluid_mid = bin_dose_midpoints(space, "fluid")[fluid_bin]
    vaso_mid = bin_dose_midpoints(space, "vaso")[vaso_bin]

    explanation = None
    if explainer is not None:
        explanation = explainer.explain_record(traj, rec, s)

    return RecommendationPayload(
        state_id=s,
        q_heatmap=q_heatmap,
        clinician_probs=clinician,
        recommended_action=recommended,
        recommended_fluid_bin=fluid_bin,
        recommended_vaso_bin=vaso_bin,
        recommended_fluid_dose=float(fluid_mid),
        recommended_vaso_dose=float(vaso_mid),
        fluid_delta=recommended_delta(space, "fluid", rec.fluid_dose, fluid_bin),
        vaso_delta=recommended_delta(space, "vaso", rec.vaso_dose, vaso_bin),
        alternatives=alternatives,
        low_data=low_data,
        explanation=explanation,
    )


def filter_cohort(
    cohort: Sequence[PatientTrajectory],
    model: MdpModel,
    state_model: StateModel,
    space: ActionSpace,
    f: CohortFilter,
) -> list[tuple[str, list[int]]]:
    """Patient predicates AND-composed; timestep predicates return the
    matching bins. A patient matches iff all patient predicates hold and at
    least one bin matches (all bins when no timestep predicate is set)."""
    needs_actions = f.clinician_actions is not None or f.model_actions is not None
    sa = trajectory_state_actions(cohort, state_model, space) if needs_actions else None
    out = []
    for idx, traj in enumerate(cohort):
        if f.age is not None and not f.age[0] <= traj.age <= f.age[1]:
            continue
        if f.gender is not None and traj.gender not in f.gender:
            continue
        if f.outcome is not None and traj.died != f.outcome:
            continue
        if f.comorbidities is not None:
            if any(traj.comorbidities.get(name) != wanted
                   for name, wanted in f.comorbidities.items()):
                continue
        if f.sofa is not None and not any(
                f.sofa[0] <= r.sofa <= f.sofa[1] for r in traj.timesteps):
            continue
        if f.sirs is not None and not any(
                f.sirs[0] <= r.sirs <= f.sirs[1] for r in traj.timesteps):
            continue
        if needs_actions:
            states, acts, _ = sa[idx]
            bins = []
            for t in range(len(acts)):
                if f.clinician_actions is not None and int(acts[t]) not in f.clinician_actions:
                    continue
                if f.model_actions is not None:
                    if model.policy is None:
                        raise ValidationError("model_actions filter requires a solved model")
                    if int(model.policy[states[t]]) not in f.model_actions:
                        continue
                bins.append(t)
            if not bins:
                continue
        else:
            bins = list(range(len(traj.timesteps)))
        out.append((traj.patient_id, bins))
    return out


@dataclass
class DiscordantCase:
    patient_id: str
    bin_index: int
    clinician_action: int
    model_action: int
    plurality_action: int
    fluid_differs: bool
    vaso_differs: bool

    @property
    def components(self) -> str:
        if self.fluid_differs and self.vaso_differs:
            return "both"
        return "fluid" if self.fluid_differs else "vasopressor"

    def to_json(self) -> dict:
        return {
            "patient_id": self.patient_id,
            "bin": self.bin_index,
            "clinician_action": self.clinician_action,
            "model_action": self.model_action,
            "plurality_action": self.plurality_action,
            "components": self.components,
        }


def find_discordant_cases(
    cohort: Sequence[PatientTrajectory],
    model: MdpModel,
    state_model: StateModel,
    space: ActionSpace,
) -> list[DiscordantCase]:
    """Timesteps whose state has a model action differing from the plurality
    clinician action in either treatment component."""
    if model.policy is None:
        raise ValidationError("model must be solved first")
    plurality = np.argmax(model.behavior, axis=1)
    out = []
    for traj, (states, acts, _) in zip(
            cohort, trajectory_state_actions(cohort, state_model, space)):
        for t in range(len(states)):
            s = int(states[t])
            pa = int(plurality[s])
            ma = int(model.policy[s])
            pf, pv = action_components(pa)
            mf, mv = action_components(ma)
            if pf == mf and pv == mv:
                continue
            out.append(DiscordantCase(
                patient_id=traj.patient_id,
                bin_index=t,
                clinician_action=int(acts[t]),
                model_action=ma,
                plurality_action=pa,
                fluid_differs=pf != mf,
                vaso_differs=pv != mv,
            ))
    return out
