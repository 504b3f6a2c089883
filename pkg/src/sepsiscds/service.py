"""HTTP service binding the trained bundle, cohort browsing, recommendations,
and study-mode decision capture.

Visualization-condition gating lives here, server-side, so study integrity
does not depend on UI correctness: the no_ai condition gets no
recommendation fields at all, text_only gets the recommendation sentence
without evidence, feature_explanation adds the state explanation, and
alternative_treatments adds the ranked alternatives grid.
"""
from __future__ import annotations

import threading
from typing import Sequence

from fastapi import Depends, FastAPI, Header, HTTPException, Query, Request
from fastapi.responses import JSONResponse

from .cohort import PatientTrajectory, flag_abnormal
from .errors import SepsisCdsError, ValidationError
from .explain import StateExplainer
from .bundle import ModelBundle
from .recommend import CohortFilter, build_payload, filter_cohort, find_discordant_cases
from .studykit import (CONDITIONS, DecisionLog, DecisionRecord, ReferenceDecisions,
                       StudyCase, build_study_report, format_report_text,
                       validate_decision)

SCHEMA_VERSION = 1

RECOMMENDATION_TEMPLATE = (
    "For this patient, the AI recommends {fluid_phrase} and {vaso_phrase}.")

_DELTA_PHRASES = {
    "fluid": {
        "increase": "increasing IV fluids to about {dose:.0f} mL over the next 4 hours",
        "decrease": "decreasing IV fluids to about {dose:.0f} mL over the next 4 hours",
        "no_change": "no change in IV fluids",
    },
    "vaso": {
        "increase": "increasing the vasopressor dose to about {dose:.2f} mcg/kg/min",
        "decrease": "decreasing the vasopressor dose to about {dose:.2f} mcg/kg/min",
        "no_change": "no change in vasopressors",
    },
}


def recommendation_text(payload) -> str:
    fluid = _DELTA_PHRASES["fluid"][payload.fluid_delta].format(
        dose=payload.recommended_fluid_dose)
    vaso = _DELTA_PHRASES["vaso"][payload.vaso_delta].format(
        dose=payload.recommended_vaso_dose)
    return RECOMMENDATION_TEMPLATE.format(fluid_phrase=fluid, vaso_phrase=vaso)


class ServiceState:
    def __init__(self, bundle: ModelBundle, cohort: Sequence[PatientTrajectory],
                 decision_log: DecisionLog, refs: ReferenceDecisions | None,
                 cases: Sequence[StudyCase], token: str | None):
        self.bundle = bundle
        self.cohort = list(cohort)
        self.by_id = {t.patient_id: t for t in self.cohort}
        self.log = decision_log
        self.refs = refs
        self.cases = {c.case_id: c for c in cases}
        self.token = token
        self._explainer: StateExplainer | None = None
        self._explainer_lock = threading.Lock()
        self._discordant_counts: dict[str, int] | None = None
        self._validate_cross()
        for case in self.cases.values():
            traj = self.by_id.get(case.patient_id)
            if traj is None or not 0 <= case.bin_index < len(traj.timesteps):
                raise ValidationError(
                    f"study case {case.case_id!r} references unknown patient/bin")
            rec = traj.timesteps[case.bin_index]
            case.current_fluid_dose = rec.fluid_dose
            case.current_vaso_dose = rec.vaso_dose

    def _validate_cross(self) -> None:
        names = set(self.bundle.schema.names)
        for traj in self.cohort[:50]:
            for rec in traj.timesteps[:1]:
                missing = names - set(rec.features)
                if missing:
                    raise ValidationError(
                        f"cohort does not match bundle schema; {traj.patient_id} "
                        f"lacks features {sorted(missing)}")

    @property
    def explainer(self) -> StateExplainer:
        if self._explainer is None:
            with self._explainer_lock:
                if self._explainer is None:
                    self._explainer = StateExplainer(
                        self.cohort, self.bundle.state_model,
                        seed=int(self.bundle.config.get("seed", 0)))
        return self._explainer

    def discordant_counts(self) -> dict[str, int]:
        if self._discordant_counts is None:
            cases = find_discordant_cases(
                self.cohort, self.bundle.mdp, self.bundle.state_model,
                self.bundle.action_space)
            counts: dict[str, int] = {}
            for c in cases:
                counts[c.patient_id] = counts.get(c.patient_id, 0) + 1
            self._discordant_counts = counts
        return self._discordant_counts


def _parse_range(lo, hi, caster, name):
    if lo is None and hi is None:
        return None
    try:
        lo = caster(lo) if lo is not None else float("-inf")
        hi = caster(hi) if hi is not None else float("inf")
    except ValueError:
        raise HTTPException(400, detail={"field": name, "error": "not a number"})
    if lo > hi:
        raise HTTPException(400, detail={"field": name, "error": "lo > hi"})
    return (lo, hi)


def _parse_action_set(raw: str | None, name: str) -> set[int] | None:
    if raw is None or raw == "":
        return None
    try:
        values = {int(x) for x in raw.split(",")}
    except ValueError:
        raise HTTPException(400, detail={"field": name, "error": "expected comma-separated action ids"})
    bad = [v for v in values if not 0 <= v < 25]
    if bad:
        raise HTTPException(400, detail={"field": name, "error": f"action ids outside [0,25): {bad}"})
    return values


def create_app(
    bundle: ModelBundle,
    cohort: Sequence[PatientTrajectory],
    decision_log: DecisionLog,
    refs: ReferenceDecisions | None = None,
    cases: Sequence[StudyCase] = (),
    token: str | None = None,
) -> FastAPI:
    state = ServiceState(bundle, cohort, decision_log, refs, cases, token)
    app = FastAPI(title="sepsiscds")
    app.state.service = state

    def require_auth(authorization: str | None = Header(default=None)):
        if state.token is None:
            return
        if authorization != f"Bearer {state.token}":
            raise HTTPException(401, detail="missing or invalid bearer token")

    @app.exception_handler(SepsisCdsError)
    async def _domain_error(request: Request, exc: SepsisCdsError):
        return JSONResponse(status_code=422, content={"detail": str(exc)})

    @app.get("/health")
    def health():
        return {"status": "ok", "schema_version": SCHEMA_VERSION,
                "patients": len(state.cohort)}

    @app.get("/patients", dependencies=[Depends(require_auth)])
    def patients(
        age_min: float | None = None, age_max: float | None = None,
        gender: str | None = None,
        outcome: str | None = None,
        sofa_min: int | None = None, sofa_max: int | None = None,
        sirs_min: int | None = None, sirs_max: int | None = None,
        comorbidities: str | None = None,
        clinician_actions: str | None = None,
        model_actions: str | None = None,
        sort: str = "patient_id",
        order: str = "asc",
        limit: int = Query(default=100, ge=1, le=10000),
        offset: int = Query(default=0, ge=0),
    ):
        died = None
        if outcome is not None:
            if outcome not in ("died", "survived"):
                raise HTTPException(400, detail={"field": "outcome",
                                                 "error": "must be died|survived"})
            died = outcome == "died"
        comorb = None
        if comorbidities:
            comorb = {}
            for token_ in comorbidities.split(","):
                name = token_.strip()
                if name.startswith("!"):
                    comorb[name[1:]] = False
                elif name:
                    comorb[name] = True
        try:
            f = CohortFilter(
                age=_parse_range(age_min, age_max, float, "age"),
                gender=set(gender.split(",")) if gender else None,
                comorbidities=comorb,
                outcome=died,
                sofa=_parse_range(sofa_min, sofa_max, int, "sofa"),
                sirs=_parse_range(sirs_min, sirs_max, int, "sirs"),
                clinician_actions=_parse_action_set(clinician_actions, "clinician_actions"),
                model_actions=_parse_action_set(model_actions, "model_actions"),
            )
        except ValidationError as exc:
            raise HTTPException(400, detail=str(exc))
        matches = filter_cohort(state.cohort, state.bundle.mdp,
                                state.bundle.state_model, state.bundle.action_space, f)
        discordant = state.discordant_counts() if sort == "discordant" else {}
        rows = []
        for pid, bins in matches:
            traj = state.by_id[pid]
            rows.append({
                "patient_id": pid,
                "age": traj.age,
                "gender": traj.gender,
                "died": traj.died,
                "n_bins": len(traj.timesteps),
                "max_sofa": max(r.sofa for r in traj.timesteps),
                "matching_bins": bins,
                "discordant_bins": discordant.get(pid, 0) if sort == "discordant" else None,
            })
        keys = {
            "patient_id": lambda r: r["patient_id"],
            "age": lambda r: r["age"],
            "sofa": lambda r: r["max_sofa"],
            "stay_length": lambda r: r["n_bins"],
            "discordant": lambda r: r["discordant_bins"] or 0,
        }
        if sort not in keys:
            raise HTTPException(400, detail={"field": "sort",
                                             "error": f"unknown sort {sort!r}"})
        rows.sort(key=keys[sort], reverse=order == "desc")
        return {"schema_version": SCHEMA_VERSION, "total": len(rows),
                "patients": rows[offset:offset + limit]}

    @app.get("/patients/{patient_id}", dependencies=[Depends(require_auth)])
    def patient_detail(patient_id: str):
        traj = state.by_id.get(patient_id)
        if traj is None:
            raise HTTPException(404, detail=f"unknown patient {patient_id!r}")
        schema = state.bundle.schema
        steps = []
        prev = None
        for rec in traj.timesteps:
            flags = flag_abnormal(rec, schema)
            deltas = {}
            for name in schema.names:
                if prev is None:
                    deltas[name] = None
                else:
                    deltas[name] = rec.features[name] - prev.features[name]
            steps.append({
                "bin": rec.bin_index,
                "features": {n: rec.features[n] for n in schema.names},
                "flags": flags,
                "deltas": deltas,
                "fluid_dose": rec.fluid_dose,
                "vaso_dose": rec.vaso_dose,
                "mech_vent": rec.mech_vent,
                "sofa": rec.sofa,
                "sirs": rec.sirs,
            })
            prev = rec
        groups = {f.name: f.group for f in schema.features}
        return {
            "schema_version": SCHEMA_VERSION,
            "patient_id": traj.patient_id,
            "age": traj.age,
            "gender": traj.gender,
            "weight": traj.weight,
            "comorbidities": traj.comorbidities,
            "died": traj.died,
            "feature_groups": groups,
            "timesteps": steps,
        }

    @app.get("/patients/{patient_id}/timesteps/{t}/recommendation",
             dependencies=[Depends(require_auth)])
    def recommendation(patient_id: str, t: int, condition: str = "alternative_treatments"):
        if condition not in CONDITIONS:
            raise HTTPException(400, detail={"field": "condition",
                                             "error": f"must be one of {CONDITIONS}"})
        traj = state.by_id.get(patient_id)
        if traj is None:
            raise HTTPException(404, detail=f"unknown patient {patient_id!r}")
        if not 0 <= t < len(traj.timesteps):
            raise HTTPException(404, detail=f"patient {patient_id!r} has no bin {t}")
        doc = {"schema_version": SCHEMA_VERSION, "condition": condition}
        if condition == "no_ai":
            return doc
        explainer = state.explainer if condition == "feature_explanation" else None
        payload = build_payload(state.bundle.mdp, state.bundle.state_model,
                                state.bundle.action_space, traj, t,
                                explainer=explainer)
        recommendation = {
            "text": recommendation_text(payload),
            "state_id": payload.state_id,
            "recommended_action": payload.recommended_action,
            "fluid_delta": payload.fluid_delta,
            "vaso_delta": payload.vaso_delta,
            "recommended_fluid_dose": payload.recommended_fluid_dose,
            "recommended_vaso_dose": payload.recommended_vaso_dose,
            "low_data": payload.low_data,
        }
        if condition == "feature_explanation":
            recommendation["explanation"] = payload.explanation.to_json()
        if condition == "alternative_treatments":
            recommendation["alternatives"] = [a.to_json() for a in payload.alternatives]
            recommendation["q_heatmap"] = payload.q_heatmap
            recommendation["clinician_probs"] = payload.clinician_probs
        doc["recommendation"] = recommendation
        return doc

    @app.post("/study/decisions", status_code=201, dependencies=[Depends(require_auth)])
    def post_decision(body: dict):
        try:
            record = DecisionRecord.from_json(body)
        except (KeyError, TypeError, ValueError) as exc:
            raise HTTPException(422, detail=f"malformed decision record: {exc}")
        case = state.cases.get(record.case_id)
        if state.cases and case is None:
            raise HTTPException(422, detail=f"unknown case {record.case_id!r}")
        try:
            validate_decision(record, case)
        except ValidationError as exc:
            raise HTTPException(422, detail=str(exc))
        record_id, duplicate = state.log.append(record)
        return {"schema_version": SCHEMA_VERSION, "record_id": record_id,
                "duplicate": duplicate}

    @app.get("/study/cases", dependencies=[Depends(require_auth)])
    def study_cases():
        return {"schema_version": SCHEMA_VERSION,
                "cases": [c.to_json() for c in state.cases.values()]}

    @app.get("/study/report", dependencies=[Depends(require_auth)])
    def study_report():
        if state.refs is None:
            raise HTTPException(404, detail="no reference decisions configured")
        records = state.log.active_records()
        if not records:
            return {"schema_version": SCHEMA_VERSION, "n_decisions": 0,
                    "concordance": {}, "notes": ["no decisions recorded yet"]}
        report = build_study_report(records, state.refs)
        report["text"] = format_report_text(report)
        return report

    return app


def serve(app: FastAPI, host: str = "127.0.0.1", port: int = 8000) -> None:
    import uvicorn
    uvicorn.run(app, host=host, port=port, log_level="warning")
