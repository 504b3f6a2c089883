"""Command-line entry points: train, evaluate, simgen, serve, report.

Config is one JSON or TOML file; environment variables override only the
serve bind address and file paths (SEPSISCDS_HOST, SEPSISCDS_PORT,
SEPSISCDS_TOKEN, SEPSISCDS_BUNDLE, SEPSISCDS_COHORT, SEPSISCDS_DECISIONS,
SEPSISCDS_REFS, SEPSISCDS_CASES).
"""
from __future__ import annotations

import argparse
import json
import os
import shutil
import sys
from dataclasses import dataclass, field

import numpy as np

from . import bundle as bundle_mod
from . import simgen as simgen_mod
from .cohort import (FeatureSchema, load_trajectories, read_demographics_csv,
                     read_events_csv, ingest_events, save_trajectories,
                     trajectories_to_events, validate_cohort)
from .errors import SepsisCdsError
from .mdp import coverage_report, estimate_mdp, policy_iteration
from .ope import smooth_behavior, wis_bootstrap
from .actions import fit_action_space
from .statespace import fit_states
from .studykit import (DecisionLog, ReferenceDecisions, StudyCase,
                       assign_pseudonyms, build_study_report, format_report_text)

# distinct rng substream for the train/test split, far from restart indices
_SPLIT_STREAM = 1_000_003


@dataclass
class TrainConfig:
    k: int = 750
    gamma: float = 0.99
    seed: int = 0
    n_restarts: int = 10
    kmeans_max_iter: int = 300
    min_count: int = 5
    split_fraction: float = 0.8
    epsilon: float = 0.01
    behavior_smoothing: float = 0.5
    n_boot: int = 500

    @classmethod
    def load(cls, path: str) -> "TrainConfig":
        if path.endswith(".toml"):
            try:
                import tomllib
            except ModuleNotFoundError:  # python < 3.11
                import tomli as tomllib
            with open(path, "rb") as fh:
                doc = tomllib.load(fh)
        else:
            with open(path, encoding="utf-8") as fh:
                doc = json.load(fh)
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(doc) - known
        if unknown:
            raise SepsisCdsError(f"unknown config keys: {sorted(unknown)}")
        return cls(**doc)

    def to_json(self) -> dict:
        return {f: getattr(self, f) for f in self.__dataclass_fields__}


class StageError(SepsisCdsError):
    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause


def load_cohort(cohort_path: str, schema_path: str | None = None):
    """Directory with events.csv/demographics.csv/schema.json, or a
    trajectories JSONL next to an explicit schema file."""
    if os.path.isdir(cohort_path):
        schema = FeatureSchema.load(
            schema_path or os.path.join(cohort_path, "schema.json"))
        demo = read_demographics_csv(os.path.join(cohort_path, "demographics.csv"))
        events = read_events_csv(os.path.join(cohort_path, "events.csv"))
        cohort, report = ingest_events(events, schema, demo)
        return cohort, schema, report
    if schema_path is None:
        raise SepsisCdsError("a JSONL cohort needs --schema")
    schema = FeatureSchema.load(schema_path)
    return load_trajectories(cohort_path), schema, None


def split_by_patient(cohort, fraction: float, seed: int):
    rng = np.random.default_rng([seed, _SPLIT_STREAM])
    order = rng.permutation(len(cohort))
    n_train = max(1, int(round(fraction * len(cohort))))
    if len(cohort) > 1:
        n_train = min(n_train, len(cohort) - 1)
    train_idx = np.sort(order[:n_train])
    test_idx = np.sort(order[n_train:])
    return [cohort[i] for i in train_idx], [cohort[i] for i in test_idx]


def train_pipeline(cohort_path: str, config: TrainConfig, out_dir: str,
                   schema_path: str | None = None) -> dict:
    """ingest -> validate -> split -> states -> actions -> mdp -> policy
    iteration -> held-out WIS; writes the bundle and an evaluation report."""
    created = not os.path.exists(out_dir)
    os.makedirs(out_dir, exist_ok=True)

    def fail(stage: str, exc: Exception):
        if created:
            shutil.rmtree(out_dir, ignore_errors=True)
        raise StageError(stage, exc)

    try:
        cohort, schema, ingest_report = load_cohort(cohort_path, schema_path)
    except Exception as exc:
        fail("ingest", exc)
    try:
        summary = validate_cohort(cohort, ingest_report)
        if not summary.ok:
            raise SepsisCdsError(
                f"cohort rejected with {len(summary.violations)} violations; "
                f"first: {summary.violations[0]}")
    except Exception as exc:
        fail("validate", exc)
    try:
        train, test = split_by_patient(cohort, config.split_fraction, config.seed)
    except Exception as exc:
        fail("split", exc)
    try:
        state_model = fit_states(train, config.k, config.seed, config.n_restarts,
                                 schema=schema, max_iter=config.kmeans_max_iter)
    except Exception as exc:
        fail("fit_states", exc)
    try:
        space = fit_action_space(train)
    except Exception as exc:
        fail("fit_action_space", exc)
    try:
        model = estimate_mdp(train, state_model, space,
                             gamma=config.gamma, min_count=config.min_count)
    except Exception as exc:
        fail("estimate_mdp", exc)
    try:
        model = policy_iteration(model)
    except Exception as exc:
        fail("policy_iteration", exc)
    try:
        behavior = smooth_behavior(model.visit_counts, config.behavior_smoothing)
        estimate = wis_bootstrap(
            model.policy, behavior, test, state_model, space,
            gamma=config.gamma, n_boot=config.n_boot, seed=config.seed,
            epsilon=config.epsilon)
    except Exception as exc:
        fail("evaluate", exc)

    cfg = config.to_json()
    provenance = {
        "config_hash": bundle_mod.config_hash(cfg),
        "n_train_patients": len(train),
        "n_test_patients": len(test),
    }
    mb = bundle_mod.ModelBundle(
        schema=schema, state_model=state_model, action_space=space,
        mdp=model, config=cfg, provenance=provenance)
    try:
        bundle_mod.save_bundle(mb, os.path.join(out_dir, "bundle"))
        save_trajectories(cohort, schema, os.path.join(out_dir, "cohort.jsonl"))
        report = {
            "schema_version": 1,
            "cohort": {
                "patients": summary.patients,
                "timesteps": summary.timesteps,
                "deaths": summary.deaths,
            },
            "wis": estimate.to_json(),
            "coverage": coverage_report(model),
            "config": cfg,
            "provenance": provenance,
        }
        with open(os.path.join(out_dir, "evaluation.json"), "w", encoding="utf-8") as fh:
            json.dump(report, fh, indent=2)
    except Exception as exc:
        fail("persist", exc)
    return report


def _cmd_train(args) -> int:
    config = TrainConfig.load(args.config) if args.config else TrainConfig()
    report = train_pipeline(args.cohort, config, args.out, schema_path=args.schema)
    wis = report["wis"]
    print(f"trained bundle at {args.out}; held-out WIS value "
          f"{wis['value']:.2f} [{wis['ci_lo']:.2f}, {wis['ci_hi']:.2f}]")
    return 0


def _cmd_evaluate(args) -> int:
    mb = bundle_mod.load_bundle(args.bundle)
    cohort = load_trajectories(args.cohort)
    cfg = mb.config
    behavior = smooth_behavior(mb.mdp.visit_counts, cfg.get("behavior_smoothing", 0.5))
    estimate = wis_bootstrap(
        mb.mdp.policy, behavior, cohort, mb.state_model, mb.action_space,
        gamma=mb.mdp.gamma, n_boot=int(cfg.get("n_boot", 500)),
        seed=int(cfg.get("seed", 0)), epsilon=float(cfg.get("epsilon", 0.01)))
    doc = estimate.to_json()
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            json.dump(doc, fh, indent=2)
    print(json.dumps(doc, indent=2))
    return 0


def _cmd_simgen(args) -> int:
    if args.mdp:
        mdp = simgen_mod.GroundTruthMdp.load(args.mdp)
    else:
        mdp = simgen_mod.make_oracle_mdp(seed=args.seed)
    cohort = simgen_mod.sample_cohort(mdp, args.n, args.seed, max_len=args.max_len)
    schema = simgen_mod.schema_for(mdp)
    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "schema.json"), "w", encoding="utf-8") as fh:
        json.dump(schema.to_json(), fh, indent=2)
    comorb_names = sorted(cohort[0].comorbidities)
    with open(os.path.join(args.out, "demographics.csv"), "w", encoding="utf-8") as fh:
        fh.write("patient_id,age,gender,weight,died," + ",".join(comorb_names) + "\n")
        for traj in cohort:
            flags = ",".join(str(int(traj.comorbidities[c])) for c in comorb_names)
            fh.write(f"{traj.patient_id},{traj.age},{traj.gender},{traj.weight},"
                     f"{int(traj.died)},{flags}\n")
    with open(os.path.join(args.out, "events.csv"), "w", encoding="utf-8") as fh:
        fh.write("patient_id,timestamp,channel,value\n")
        for pid, ts, channel, value in trajectories_to_events(cohort, schema):
            fh.write(f"{pid},{ts},{channel},{value}\n")
    mdp.save(os.path.join(args.out, "ground_truth.json"))
    print(f"wrote {len(cohort)} synthetic patients to {args.out}")
    return 0


def _load_cases(path: str, seed: int) -> list[StudyCase]:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    cases = [
        StudyCase(
            case_id=c["case_id"],
            patient_id=c["patient_id"],
            bin_index=int(c["bin"]),
            condition=c["condition"],
            pseudonym=c.get("pseudonym", ""),
            vignette=c.get("vignette", ""),
        )
        for c in doc["cases"]]
    if any(not c.pseudonym for c in cases):
        assign_pseudonyms(cases, seed)
    return cases


def _cmd_serve(args) -> int:
    from .service import create_app, serve

    bundle_path = os.environ.get("SEPSISCDS_BUNDLE", args.bundle)
    cohort_path = os.environ.get("SEPSISCDS_COHORT", args.cohort)
    decisions_path = os.environ.get("SEPSISCDS_DECISIONS", args.decisions)
    refs_path = os.environ.get("SEPSISCDS_REFS", args.refs)
    cases_path = os.environ.get("SEPSISCDS_CASES", args.cases)
    host = os.environ.get("SEPSISCDS_HOST", args.host)
    port = int(os.environ.get("SEPSISCDS_PORT", args.port))
    token = os.environ.get("SEPSISCDS_TOKEN", args.token)

    mb = bundle_mod.load_bundle(bundle_path)
    cohort = load_trajectories(cohort_path)
    refs = ReferenceDecisions.load(refs_path) if refs_path else None
    cases = _load_cases(cases_path, int(mb.config.get("seed", 0))) if cases_path else []
    app = create_app(mb, cohort, DecisionLog(decisions_path), refs=refs,
                     cases=cases, token=token)
    print(f"serving on http://{host}:{port}")
    serve(app, host=host, port=port)
    return 0


def _cmd_report(args) -> int:
    log = DecisionLog(args.decisions)
    refs = ReferenceDecisions.load(args.refs)
    report = build_study_report(log.active_records(), refs)
    text = format_report_text(report)
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, "report.json"), "w", encoding="utf-8") as fh:
            json.dump(report, fh, indent=2)
        with open(os.path.join(args.out, "report.txt"), "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    print(text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sepsiscds")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="fit the full model pipeline on a cohort")
    p.add_argument("--cohort", required=True,
                   help="cohort directory (events/demographics/schema) or trajectories JSONL")
    p.add_argument("--schema", default=None, help="schema JSON (needed for JSONL cohorts)")
    p.add_argument("--config", default=None, help="training config JSON/TOML")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("evaluate", help="off-policy evaluation of a trained bundle")
    p.add_argument("--bundle", required=True)
    p.add_argument("--cohort", required=True, help="trajectories JSONL")
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("simgen", help="sample a synthetic cohort from a ground-truth MDP")
    p.add_argument("--mdp", default=None, help="GroundTruthMdp JSON (default: built-in oracle)")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-len", type=int, default=40)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_simgen)

    p = sub.add_parser("serve", help="run the HTTP service")
    p.add_argument("--bundle", default="bundle")
    p.add_argument("--cohort", default="cohort.jsonl")
    p.add_argument("--decisions", default="decisions.jsonl")
    p.add_argument("--refs", default=None)
    p.add_argument("--cases", default=None)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--token", default=None)
    p.set_defaults(func=_cmd_serve)

    p = sub.add_parser("report", help="study concordance and regression report")
    p.add_argument("--decisions", required=True)
    p.add_argument("--refs", required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except SepsisCdsError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
