import json
import os

import numpy as np
import pytest

from sepsiscds.bundle import load_bundle
from sepsiscds.cli import (StageError, TrainConfig, main, split_by_patient,
                           train_pipeline)
from sepsiscds.simgen import make_oracle_mdp


@pytest.fixture(scope="module")
def sim_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("sim")
    mdp = make_oracle_mdp(n_states=6, seed=7)
    mdp_path = out / "mdp.json"
    mdp.save(mdp_path)
    rc = main(["simgen", "--mdp", str(mdp_path), "--n", "500",
               "--seed", "3", "--out", str(out / "cohort")])
    assert rc == 0
    return out / "cohort"


def test_simgen_outputs_exist(sim_dir):
    for name in ("events.csv", "demographics.csv", "schema.json", "ground_truth.json"):
        assert (sim_dir / name).exists()


def test_train_evaluate_round_trip(sim_dir, tmp_path):
    config = {"k": 6, "seed": 0, "n_restarts": 2, "split_fraction": 0.8,
              "n_boot": 25, "min_count": 5}
    config_path = tmp_path / "config.json"
    config_path.write_text(json.dumps(config))
    out = tmp_path / "run"
    rc = main(["train", "--cohort", str(sim_dir), "--config", str(config_path),
               "--out", str(out)])
    assert rc == 0
    report = json.loads((out / "evaluation.json").read_text())
    assert -100.0 <= report["wis"]["value"] <= 100.0
    assert report["cohort"]["patients"] == 500

    # bundle loads and round-trips with identical Q
    b1 = load_bundle(str(out / "bundle"))
    assert b1.mdp.q_values is not None
    rc = main(["evaluate", "--bundle", str(out / "bundle"),
               "--cohort", str(out / "cohort.jsonl"),
               "--out", str(tmp_path / "eval.json")])
    assert rc == 0
    doc = json.loads((tmp_path / "eval.json").read_text())
    assert -100.0 <= doc["value"] <= 100.0


def test_train_aborts_with_stage_name(sim_dir, tmp_path):
    config = TrainConfig(k=100000, n_restarts=1)
    with pytest.raises(StageError, match="fit_states"):
        train_pipeline(str(sim_dir), config, str(tmp_path / "bad"))
    assert not (tmp_path / "bad").exists()


def test_unknown_config_key_rejected(tmp_path):
    p = tmp_path / "config.json"
    p.write_text(json.dumps({"k": 6, "bogus": 1}))
    with pytest.raises(Exception, match="bogus"):
        TrainConfig.load(str(p))


def test_toml_config(tmp_path):
    p = tmp_path / "config.toml"
    p.write_text("k = 12\ngamma = 0.95\n")
    cfg = TrainConfig.load(str(p))
    assert cfg.k == 12 and cfg.gamma == 0.95


def test_split_is_by_patient_and_seeded():
    cohort = list(range(100))
    a_train, a_test = split_by_patient(cohort, 0.8, seed=5)
    b_train, b_test = split_by_patient(cohort, 0.8, seed=5)
    assert a_train == b_train and a_test == b_test
    assert len(a_train) == 80 and len(a_test) == 20
    assert not set(a_train) & set(a_test)
    c_train, _ = split_by_patient(cohort, 0.8, seed=6)
    assert c_train != a_train


def test_report_command(tmp_path):
    decisions = tmp_path / "decisions.jsonl"
    refs = tmp_path / "refs.json"
    records = []
    for pid in ("a", "b", "c"):
        for condition in ("no_ai", "text_only"):
            rec = {
                "schema_version": 1, "record_id": len(records),
                "participant_id": pid, "role": "attending",
                "years_experience": ">10", "case_id": "c1",
                "condition": condition, "fluid_choice": "increase",
                "vaso_choice": "no_change", "confidence": 4, "difficulty": 3,
                "timestamp": "", "idempotency_key": None, "supersedes": None,
            }
            if condition != "no_ai":
                rec["usefulness"] = 4
                rec["ai_confidence_effect"] = 4
            records.append(rec)
    decisions.write_text("\n".join(json.dumps(r) for r in records) + "\n")
    refs.write_text(json.dumps({"cases": {"c1": {
        "ai": {"fluid_delta": "increase", "vaso_delta": "no_change"},
        "clinician": {"fluid_delta": "increase", "vaso_delta": "increase"},
        "majority_attending": {"fluid_delta": "no_change", "vaso_delta": "no_change"},
    }}}))
    rc = main(["report", "--decisions", str(decisions), "--refs", str(refs),
               "--out", str(tmp_path / "rep")])
    assert rc == 0
    report = json.loads((tmp_path / "rep" / "report.json").read_text())
    assert report["concordance"]["no_ai"]["ai"]["full_rate"] == 1.0
    assert (tmp_path / "rep" / "report.txt").exists()
