import numpy as np
import pytest

from sepsiscds.actions import (ActionSpace, N_ACTIONS, action_components,
                               bin_dose_midpoints, discretize_action,
                               discretize_dose, discretize_doses_batch,
                               fit_action_space, recommended_delta)
from sepsiscds.cohort import PatientTrajectory, TimestepRecord
from sepsiscds.errors import DegenerateQuantilesError, ValidationError


def cohort_with_doses(fluid, vaso):
    steps = [
        TimestepRecord(i, {"x": 0.0}, float(f), float(v), False, 0, 0)
        for i, (f, v) in enumerate(zip(fluid, vaso))]
    return [PatientTrajectory("p0", 50.0, "F", 70.0, {}, False, steps)]


SPACE = ActionSpace(fluid_edges=(27.5, 45.0, 62.5), vaso_edges=(0.1, 0.2, 0.3),
                    fluid_top=80.0, vaso_top=0.5)


def test_quantile_edges_linear_interpolation():
    fluids = [10, 20, 30, 40, 50, 60, 70, 80]
    vasos = [0.1, 0.2, 0.3, 0.4]
    cohort = cohort_with_doses(fluids, vasos + [0] * 4)
    space = fit_action_space(cohort)
    assert space.fluid_edges == pytest.approx((27.5, 45.0, 62.5))


def test_degenerate_quantiles_error():
    cohort = cohort_with_doses([5, 5, 5, 5], [0.1, 0.2, 0.3, 0.4])
    with pytest.raises(DegenerateQuantilesError, match="fluid"):
        fit_action_space(cohort)


def test_all_zero_channel_error_names_channel():
    cohort = cohort_with_doses([10, 20, 30, 40], [0, 0, 0, 0])
    with pytest.raises(ValidationError, match="vaso"):
        fit_action_space(cohort)


def test_zero_dose_is_action_zero():
    assert discretize_action(SPACE, 0.0, 0.0) == 0


def test_top_bins_give_action_24():
    assert discretize_action(SPACE, 100.0, 0.4) == 24


def test_right_inclusive_boundary():
    # dose exactly on edge2 falls in bin 2
    assert discretize_dose(SPACE.fluid_edges, 45.0) == 2
    assert discretize_dose(SPACE.fluid_edges, 27.5) == 1
    assert discretize_dose(SPACE.fluid_edges, 62.5) == 3
    assert discretize_dose(SPACE.fluid_edges, 62.6) == 4


def test_action_id_layout():
    assert discretize_action(SPACE, 30.0, 0.15) == 2 * 5 + 2
    assert action_components(13) == (2, 3)


def test_batch_matches_scalar():
    rng = np.random.default_rng(0)
    fluid = np.concatenate([[0, 27.5, 45, 62.5], rng.uniform(0, 100, 200)])
    vaso = np.concatenate([[0, 0.1, 0.2, 0.3], rng.uniform(0, 0.6, 200)])
    batch = discretize_doses_batch(SPACE, fluid, vaso)
    for i in range(len(fluid)):
        assert batch[i] == discretize_action(SPACE, fluid[i], vaso[i])


def test_simgen_round_trip_recovers_actions(oracle_mdp):
    from sepsiscds.simgen import sample_cohort
    cohort = sample_cohort(oracle_mdp, 3000, seed=21)
    space = fit_action_space(cohort)
    # representative dose levels should be recovered exactly as edges
    assert space.fluid_edges == tuple(oracle_mdp.fluid_levels[1:4])
    assert space.vaso_edges == tuple(oracle_mdp.vaso_levels[1:4])
    for traj in cohort:
        for rec in traj.timesteps:
            truth = (oracle_mdp.fluid_levels.index(rec.fluid_dose) * 5
                     + oracle_mdp.vaso_levels.index(rec.vaso_dose))
            assert discretize_action(space, rec.fluid_dose, rec.vaso_dose) == truth


def test_recommended_delta():
    assert recommended_delta(SPACE, "fluid", 0.0, 2) == "increase"
    assert recommended_delta(SPACE, "fluid", 50.0, 3) == "no_change"   # 50 -> bin 3
    assert recommended_delta(SPACE, "fluid", 100.0, 1) == "decrease"   # bin 4 -> 1
    with pytest.raises(ValidationError):
        recommended_delta(SPACE, "fluid", 10.0, 7)


def test_bin_midpoints():
    mids = bin_dose_midpoints(SPACE, "fluid")
    assert mids == (0.0, 13.75, 36.25, 53.75, 80.0)
    assert bin_dose_midpoints(SPACE, "vaso")[4] == 0.5


def test_action_space_json_round_trip():
    doc = SPACE.to_json()
    back = ActionSpace.from_json(doc)
    assert back == SPACE
