import numpy as np
import pytest

from sepsiscds.actions import ActionSpace, action_components, discretize_action
from sepsiscds.cohort import PatientTrajectory, TimestepRecord
from sepsiscds.errors import ValidationError
from sepsiscds.mdp import MdpModel
from sepsiscds.recommend import (CohortFilter, DiscordantCase, build_payload,
                                 filter_cohort, find_discordant_cases)
from sepsiscds.statespace import StateModel

SPACE = ActionSpace((27.5, 45.0, 62.5), (0.1, 0.2, 0.3), 80.0, 0.5)


def two_state_model():
    return StateModel(feature_names=("x",), means=np.zeros(1), stds=np.ones(1),
                      centroids=np.array([[-1.0], [1.0]]), k=2, seed=0,
                      n_restarts=1)


def hand_mdp():
    """State 0: actions 0/3/7 estimated with Q 10/50/50; state 1: only 3
    under-threshold observations of action 6."""
    k = 2
    counts = np.zeros((k, 25, k + 2), dtype=np.int64)
    visit = np.zeros((k, 25), dtype=np.int64)
    visit[0, 0], visit[0, 3], visit[0, 7], visit[0, 12] = 10, 8, 6, 2
    visit[1, 6] = 3
    behavior = visit / visit.sum(axis=1, keepdims=True)
    q = np.full((k, 25), np.nan)
    estimated = np.zeros((k, 25), dtype=bool)
    q[0, 0], q[0, 3], q[0, 7] = 10.0, 50.0, 50.0
    estimated[0, [0, 3, 7]] = True
    model = MdpModel(k=k, n_actions=25, counts=counts, visit_counts=visit,
                     behavior=behavior, gamma=0.99, min_count=5)
    model.q_values = q
    model.estimated = estimated
    model.policy = np.array([3, 6])
    model.fallback_states = [1]
    return model


def record(x, fluid=0.0, vaso=0.0, bin_index=0, sofa=0, sirs=0):
    return TimestepRecord(bin_index, {"x": float(x)}, fluid, vaso, False, sofa, sirs)


def patient(pid, records, died=False, age=50.0, gender="F", comorb=None):
    return PatientTrajectory(pid, age, gender, 70.0, comorb or {}, died, records)


def test_payload_matches_hand_assembled_golden():
    model = hand_mdp()
    traj = patient("p0", [record(-1.0)])
    payload = build_payload(model, two_state_model(), SPACE, traj, 0)
    golden = {
        "schema_version": 1,
        "state_id": 0,
        "q_heatmap": [
            [10.0, None, None, 50.0, None],
            [None, None, 50.0, None, None],
            [None, None, None, None, None],
            [None, None, None, None, None],
            [None, None, None, None, None],
        ],
        "clinician_probs": [
            [10 / 26, 0.0, 0.0, 8 / 26, 0.0],
            [0.0, 0.0, 6 / 26, 0.0, 0.0],
            [0.0, 0.0, 2 / 26, 0.0, 0.0],
            [0.0, 0.0, 0.0, 0.0, 0.0],
            [0.0, 0.0, 0.0, 0.0, 0.0],
        ],
        "recommended_action": 3,
        "recommended_fluid_bin": 0,
        "recommended_vaso_bin": 3,
        "recommended_fluid_dose": 0.0,
        "recommended_vaso_dose": 0.25,
        "fluid_delta": "no_change",
        "vaso_delta": "increase",
        "alternatives": [
            {"action_id": 3, "fluid_bin": 0, "vaso_bin": 3, "q_value": 50.0,
             "clinician_freq": 8 / 26},
            {"action_id": 7, "fluid_bin": 1, "vaso_bin": 2, "q_value": 50.0,
             "clinician_freq": 6 / 26},
            {"action_id": 0, "fluid_bin": 0, "vaso_bin": 0, "q_value": 10.0,
             "clinician_freq": 10 / 26},
        ],
        "low_data": False,
    }
    assert payload.to_json() == golden


def test_heatmap_layout_contract():
    model = hand_mdp()
    traj = patient("p0", [record(-1.0)])
    payload = build_payload(model, two_state_model(), SPACE, traj, 0)
    for i in range(5):
        for j in range(5):
            a = i * 5 + j
            cell = payload.q_heatmap[i][j]
            if model.estimated[0, a]:
                assert cell == model.q_values[0, a]
            else:
                assert cell is None


def test_single_estimated_action():
    model = hand_mdp()
    model.q_values[0] = np.nan
    model.estimated[0] = False
    model.q_values[0, 7] = 33.0
    model.estimated[0, 7] = True
    model.policy[0] = 7
    payload = build_payload(model, two_state_model(), SPACE,
                            patient("p0", [record(-1.0)]), 0)
    assert payload.recommended_action == 7
    assert [a.action_id for a in payload.alternatives] == [7]


def test_q_tie_breaks_to_lower_action_id():
    model = hand_mdp()
    # recompute policy the way the solver would: argmax with lowest-id ties
    q = np.where(model.estimated[0], model.q_values[0], -np.inf)
    assert int(np.argmax(q)) == 3  # ties 3 vs 7 resolve low
    payload = build_payload(model, two_state_model(), SPACE,
                            patient("p0", [record(-1.0)]), 0)
    assert payload.recommended_action == 3


def test_low_data_payload_uses_behavior_frequencies():
    model = hand_mdp()
    payload = build_payload(model, two_state_model(), SPACE,
                            patient("p1", [record(1.0)]), 0)
    assert payload.low_data
    assert payload.recommended_action == 6
    assert [a.action_id for a in payload.alternatives] == [6]
    assert payload.alternatives[0].q_value is None
    assert payload.alternatives[0].clinician_freq == 1.0


def test_payload_bin_out_of_range():
    model = hand_mdp()
    with pytest.raises(ValidationError):
        build_payload(model, two_state_model(), SPACE,
                      patient("p0", [record(-1.0)]), 3)


def make_browse_cohort():
    return [
        patient("alice", [record(-1.0, fluid=0.0, vaso=0.0, sofa=3),
                          record(-1.0, fluid=30.0, vaso=0.15, bin_index=1, sofa=8)],
                died=False, age=40.0, gender="F", comorb={"chf": True}),
        patient("bob", [record(1.0, fluid=0.0, vaso=0.0, sofa=12)],
                died=True, age=70.0, gender="M", comorb={"chf": False}),
        patient("carol", [record(-1.0, fluid=70.0, vaso=0.35, sofa=2)],
                died=False, age=55.0, gender="F", comorb={"chf": False}),
    ]


def test_empty_filter_returns_everyone():
    cohort = make_browse_cohort()
    model = hand_mdp()
    out = filter_cohort(cohort, model, two_state_model(), SPACE, CohortFilter())
    assert [(pid, bins) for pid, bins in out] == [
        ("alice", [0, 1]), ("bob", [0]), ("carol", [0])]


def test_outcome_filter_with_no_matches():
    cohort = [t for t in make_browse_cohort() if not t.died]
    model = hand_mdp()
    out = filter_cohort(cohort, model, two_state_model(), SPACE,
                        CohortFilter(outcome=True))
    assert out == []


def test_patient_level_filters():
    cohort = make_browse_cohort()
    model = hand_mdp()
    out = filter_cohort(cohort, model, two_state_model(), SPACE,
                        CohortFilter(age=(50, 80), gender={"F"}))
    assert [pid for pid, _ in out] == ["carol"]
    out = filter_cohort(cohort, model, two_state_model(), SPACE,
                        CohortFilter(comorbidities={"chf": True}))
    assert [pid for pid, _ in out] == ["alice"]
    out = filter_cohort(cohort, model, two_state_model(), SPACE,
                        CohortFilter(sofa=(10, 24)))
    assert [pid for pid, _ in out] == ["bob"]
    out = filter_cohort(cohort, model, two_state_model(), SPACE,
                        CohortFilter(sofa=(5, 24)))
    assert [pid for pid, _ in out] == ["alice", "bob"]


def test_action_grid_filter_matches_hand_listed_bins():
    cohort = make_browse_cohort()
    model = hand_mdp()
    # clinician gave no vasopressor (column 0) while the model recommends
    # vaso bin >= 1 for the timestep's state
    no_vaso = {a for a in range(25) if a % 5 == 0}
    model_vaso = {a for a in range(25) if a % 5 >= 1}
    f = CohortFilter(clinician_actions=no_vaso, model_actions=model_vaso)
    out = filter_cohort(cohort, model, two_state_model(), SPACE, f)
    # hand scan: alice bin 0 (clinician (0,0), state 0 -> model action 3);
    # alice bin 1 clinician vaso bin 2 -> excluded; bob state 1 -> model 6
    # (vaso bin 1) clinician (0,0) -> included; carol bin 0 clinician vaso
    # bin 4 -> excluded
    assert out == [("alice", [0]), ("bob", [0])]


def test_filter_narrowing_is_monotone():
    cohort = make_browse_cohort()
    model = hand_mdp()
    broad = dict(filter_cohort(cohort, model, two_state_model(), SPACE,
                               CohortFilter(gender={"F"})))
    narrow = dict(filter_cohort(cohort, model, two_state_model(), SPACE,
                                CohortFilter(gender={"F"}, age=(50, 80))))
    assert set(narrow) <= set(broad)
    for pid, bins in narrow.items():
        assert set(bins) <= set(broad[pid])


def test_invalid_filter_range():
    with pytest.raises(ValidationError):
        CohortFilter(age=(80, 40))


def test_no_discordance_when_model_matches_plurality():
    model = hand_mdp()
    model.policy = np.array([0, 6])  # plurality of state 0 is action 0
    cohort = [patient("p0", [record(-1.0)])]
    assert find_discordant_cases(cohort, model, two_state_model(), SPACE) == []


def test_discordant_component_labels():
    model = hand_mdp()
    # state 0 plurality action 0 = (fluid 0, vaso 0); model 3 = (0, 3)
    cohort = [patient("p0", [record(-1.0, fluid=100.0)])]
    cases = find_discordant_cases(cohort, model, two_state_model(), SPACE)
    assert len(cases) == 1
    case = cases[0]
    assert case.components == "vasopressor"
    assert case.model_action == 3
    assert case.plurality_action == 0
    assert case.clinician_action == discretize_action(SPACE, 100.0, 0.0)


def test_discordance_matches_double_loop_oracle():
    rng = np.random.default_rng(3)
    model = hand_mdp()
    model.policy = np.array([3, 6])
    cohort = []
    for i in range(20):
        recs = [record(rng.choice([-1.0, 1.0]),
                       fluid=float(rng.choice([0, 30, 70])),
                       vaso=float(rng.choice([0, 0.15])), bin_index=t)
                for t in range(int(rng.integers(1, 4)))]
        cohort.append(patient(f"p{i}", recs))
    got = find_discordant_cases(cohort, model, two_state_model(), SPACE)
    got_keys = [(c.patient_id, c.bin_index, c.components) for c in got]

    plurality = np.argmax(model.behavior, axis=1)
    expected = []
    for traj in cohort:
        for t, rec in enumerate(traj.timesteps):
            s = 0 if rec.features["x"] < 0 else 1
            pa, ma = int(plurality[s]), int(model.policy[s])
            pf, pv = action_components(pa)
            mf, mv = action_components(ma)
            if (pf, pv) == (mf, mv):
                continue
            label = "both" if (pf != mf and pv != mv) else (
                "fluid" if pf != mf else "vasopressor")
            expected.append((traj.patient_id, t, label))
    assert got_keys == expected
