"""The 5x5 treatment action grid: quantile dose bins for IV fluids and
vasopressors. Zero dose is its own bin; quantile edges are computed over
nonzero doses only (a zero-inflated dose distribution would otherwise
collapse the bins). Binning is right-inclusive: dose <= edge1 -> bin 1.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .cohort import PatientTrajectory
from .errors import DegenerateQuantilesError, ValidationError

N_BINS = 5
N_ACTIONS = N_BINS * N_BINS

DELTA_INCREASE = "increase"
DELTA_DECREASE = "decrease"
DELTA_NO_CHANGE = "no_change"


@dataclass(frozen=True)
class ActionSpace:
    fluid_edges: tuple[float, float, float]
    vaso_edges: tuple[float, float, float]
    # 90th percentile of top-bin doses, used when rendering the open-ended bin
    fluid_top: float
    vaso_top: float

    def __post_init__(self):
        for name, edges in (("fluid", self.fluid_edges), ("vaso", self.vaso_edges)):
            if not (0 < edges[0] < edges[1] < edges[2]):
                raise DegenerateQuantilesError(
                    f"degenerate quantiles for {name}: edges {edges} not strictly ascending")

    def edges(self, channel: str) -> tuple[float, float, float]:
        if channel == "fluid":
            return self.fluid_edges
        if channel == "vaso":
            return self.vaso_edges
        raise ValidationError(f"unknown treatment channel {channel!r}")

    def to_json(self) -> dict:
        return {
            "fluid_edges": list(self.fluid_edges),
            "vaso_edges": list(self.vaso_edges),
            "fluid_top": self.fluid_top,
            "vaso_top": self.vaso_top,
        }

    @classmethod
    def from_json(cls, doc: dict) -> "ActionSpace":
        return cls(
            fluid_edges=tuple(doc["fluid_edges"]),
            vaso_edges=tuple(doc["vaso_edges"]),
            fluid_top=float(doc["fluid_top"]),
            vaso_top=float(doc["vaso_top"]),
        )


def _channel_edges(doses: np.ndarray, channel: str) -> tuple[tuple[float, float, float], float]:
    nonzero = doses[doses > 0]
    if nonzero.size == 0:
        raise ValidationError(f"all-zero dose channel: {channel}")
    edges = tuple(float(e) for e in np.percentile(nonzero, [25, 50, 75]))
    if not edges[0] < edges[1] < edges[2]:
        raise DegenerateQuantilesError(
            f"degenerate quantiles for {channel}: edges {edges} not strictly ascending")
    top = nonzero[nonzero > edges[2]]
    top_dose = float(np.percentile(top, 90)) if top.size else edges[2]
    return edges, top_dose


def fit_action_space(train_cohort: Sequence[PatientTrajectory]) -> ActionSpace:
    """Edges at the 25th/50th/75th percentiles (linear interpolation) of the
    nonzero doses per channel."""
    fluids = np.array([r.fluid_dose for t in train_cohort for r in t.timesteps])
    vasos = np.array([r.vaso_dose for t in train_cohort for r in t.timesteps])
    fluid_edges, fluid_top = _channel_edges(fluids, "fluid")
    vaso_edges, vaso_top = _channel_edges(vasos, "vaso")
    return ActionSpace(fluid_edges=fluid_edges, vaso_edges=vaso_edges,
                       fluid_top=fluid_top, vaso_top=vaso_top)


def discretize_dose(edges: Sequence[float], dose: float) -> int:
    """Bin 0 iff dose == 0; else right-inclusive comparison to the edges."""
    if dose < 0:
        raise ValidationError(f"negative dose {dose}")
    if dose == 0:
        return 0
    if dose <= edges[0]:
        return 1
    if dose <= edges[1]:
        return 2
    if dose <= edges[2]:
        return 3
    return 4


def discretize_action(space: ActionSpace, fluid_dose: float, vaso_dose: float) -> int:
    fluid_bin = discretize_dose(space.fluid_edges, fluid_dose)
    vaso_bin = discretize_dose(space.vaso_edges, vaso_dose)
    return fluid_bin * N_BINS + vaso_bin


def discretize_doses_batch(space: ActionSpace, fluid: np.ndarray, vaso: np.ndarray) -> np.ndarray:
    """Vectorized discretize_action over dose arrays."""
    def bins(edges, doses):
        b = np.searchsorted(np.asarray(edges), doses, side="left") + 1
        b[doses > edges[2]] = 4
        b[doses == 0] = 0
        return b
    fb = bins(space.fluid_edges, np.asarray(fluid, dtype=np.float64))
    vb = bins(space.vaso_edges, np.asarray(vaso, dtype=np.float64))
    return fb * N_BINS + vb


def action_components(action_id: int) -> tuple[int, int]:
    """(fluid_bin, vaso_bin) for an action id in [0, 25)."""
    return action_id // N_BINS, action_id % N_BINS


def bin_dose_midpoints(space: ActionSpace, channel: str) -> tuple[float, ...]:
    """Representative dose per bin: 0, then interval midpoints, with the
    open-ended top bin rendered at the 90th percentile of its doses."""
    e1, e2, e3 = space.edges(channel)
    top = space.fluid_top if channel == "fluid" else space.vaso_top
    return (0.0, e1 / 2.0, (e1 + e2) / 2.0, (e2 + e3) / 2.0, top)


def recommended_delta(space: ActionSpace, channel: str, current_dose: float,
                      recommended_bin: int) -> str:
    if not 0 <= recommended_bin < N_BINS:
        raise ValidationError(f"recommended bin {recommended_bin} outside [0,{N_BINS})")
    current_bin = discretize_dose(space.edges(channel), current_dose)
    if recommended_bin > current_bin:
        return DELTA_INCREASE
    if recommended_bin < current_bin:
        return DELTA_DECREASE
    return DELTA_NO_CHANGE
