"""Human study capture and analysis: decision records under visualization
conditions, concordance against reference decisions, and regression models
with cluster-robust (Huber-White) standard errors.

The decision log is append-only; corrections are new records carrying a
supersedes pointer, never edits, so the audit trail for human-subjects data
stays intact.
"""
from __future__ import annotations

import json
import math
import threading
from dataclasses import dataclass
from datetime import datetime, timezone
from typing import Sequence

import numpy as np
from scipy import stats

from .errors import ConvergenceError, SeparationError, ValidationError

ROLES = ("attending", "fellow", "app")
CONDITIONS = ("no_ai", "text_only", "feature_explanation", "alternative_treatments")
AI_CONDITIONS = CONDITIONS[1:]
CHOICES = ("increase", "decrease", "no_change")
REFERENCE_NAMES = ("ai", "clinician", "majority_attending")

SCHEMA_VERSION = 1


@dataclass
class DecisionRecord:
    participant_id: str
    role: str
    years_experience: str
    case_id: str
    condition: str
    fluid_choice: str
    vaso_choice: str
    confidence: int
    difficulty: int
    usefulness: int | None = None
    ai_confidence_effect: int | None = None
    timestamp: str = ""
    idempotency_key: str | None = None
    supersedes: int | None = None
    record_id: int | None = None

    def to_json(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "record_id": self.record_id,
            "participant_id": self.participant_id,
            "role": self.role,
            "years_experience": self.years_experience,
            "case_id": self.case_id,
            "condition": self.condition,
            "fluid_choice": self.fluid_choice,
            "vaso_choice": self.vaso_choice,
            "confidence": self.confidence,
            "difficulty": self.difficulty,
            "usefulness": self.usefulness,
            "ai_confidence_effect": self.ai_confidence_effect,
            "timestamp": self.timestamp,
            "idempotency_key": self.idempotency_key,
            "supersedes": self.supersedes,
        }

    @classmethod
    def from_json(cls, doc: dict) -> "DecisionRecord":
        return cls(
            participant_id=doc["participant_id"],
            role=doc["role"],
            years_experience=doc["years_experience"],
            case_id=doc["case_id"],
            condition=doc["condition"],
            fluid_choice=doc["fluid_choice"],
            vaso_choice=doc["vaso_choice"],
            confidence=int(doc["confidence"]),
            difficulty=int(doc["difficulty"]),
            usefulness=doc.get("usefulness"),
            ai_confidence_effect=doc.get("ai_confidence_effect"),
            timestamp=doc.get("timestamp", ""),
            idempotency_key=doc.get("idempotency_key"),
            supersedes=doc.get("supersedes"),
            record_id=doc.get("record_id"),
        )


@dataclass
class StudyCase:
    case_id: str
    patient_id: str
    bin_index: int
    condition: str
    pseudonym: str = ""
    vignette: str = ""
    current_fluid_dose: float = 0.0
    current_vaso_dose: float = 0.0

    def to_json(self) -> dict:
        return {
            "case_id": self.case_id,
            "patient_id": self.patient_id,
            "bin": self.bin_index,
            "condition": self.condition,
            "pseudonym": self.pseudonym,
            "vignette": self.vignette,
        }


@dataclass
class ReferenceDecision:
    fluid_delta: str
    vaso_delta: str


@dataclass
class ReferenceDecisions:
    """Per case: AI recommendation, original clinician decision, and the
    majority attending decision from the no-AI condition."""

    by_case: dict[str, dict[str, ReferenceDecision]]

    def get(self, case_id: str, reference: str) -> ReferenceDecision:
        try:
            return self.by_case[case_id][reference]
        except KeyError:
            raise ValidationError(f"no {reference} reference for case {case_id!r}")

    @classmethod
    def from_json(cls, doc: dict) -> "ReferenceDecisions":
        by_case = {}
        for case_id, refs in doc["cases"].items():
            by_case[case_id] = {
                name: ReferenceDecision(r["fluid_delta"], r["vaso_delta"])
                for name, r in refs.items()}
        return cls(by_case)

    @classmethod
    def load(cls, path) -> "ReferenceDecisions":
        with open(path, encoding="utf-8") as fh:
            return cls.from_json(json.load(fh))

    def to_json(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "cases": {
                cid: {name: {"fluid_delta": r.fluid_delta, "vaso_delta": r.vaso_delta}
                      for name, r in refs.items()}
                for cid, refs in self.by_case.items()},
        }


def validate_decision(record: DecisionRecord, case: StudyCase | None = None) -> None:
    """Raise ValidationError naming the violated rule."""
    if record.role not in ROLES:
        raise ValidationError(f"unknown role {record.role!r}")
    if record.condition not in CONDITIONS:
        raise ValidationError(f"unknown condition {record.condition!r}")
    for channel, choice in (("fluid", record.fluid_choice), ("vaso", record.vaso_choice)):
        if choice not in CHOICES:
            raise ValidationError(f"unknown {channel} choice {choice!r}")
    for name, value in (("confidence", record.confidence), ("difficulty", record.difficulty)):
        if not isinstance(value, int) or not 1 <= value <= 7:
            raise ValidationError(f"{name} must be an integer in [1, 7], got {value!r}")
    if record.condition == "no_ai":
        if record.usefulness is not None or record.ai_confidence_effect is not None:
            raise ValidationError(
                "usefulness and ai_confidence_effect must be absent in the no_ai condition")
    else:
        for name, value in (("usefulness", record.usefulness),
                            ("ai_confidence_effect", record.ai_confidence_effect)):
            if not isinstance(value, int) or not 1 <= value <= 7:
                raise ValidationError(
                    f"{name} is required in AI conditions and must be in [1, 7], got {value!r}")
    if case is not None:
        if record.fluid_choice == "decrease" and case.current_fluid_dose == 0:
            raise ValidationError(
                "fluid decrease is not available: no fluids are currently running for this case")
        if record.vaso_choice == "decrease" and case.current_vaso_dose == 0:
            raise ValidationError(
                "vasopressor decrease is not available: no vasopressor is currently running for this case")


# ------------------------------------------------------------- concordance

def concordance(decision, reference) -> dict[str, bool]:
    """full = both channels agree; any = at least one channel agrees.

    Both arguments may be DecisionRecord/ReferenceDecision objects or
    (fluid_delta, vaso_delta) pairs."""
    df, dv = _deltas(decision)
    rf, rv = _deltas(reference)
    fluid = df == rf
    vaso = dv == rv
    return {"full": fluid and vaso, "any": fluid or vaso}


def _deltas(obj) -> tuple[str, str]:
    if isinstance(obj, DecisionRecord):
        return obj.fluid_choice, obj.vaso_choice
    if isinstance(obj, ReferenceDecision):
        return obj.fluid_delta, obj.vaso_delta
    f, v = obj
    return f, v


def proportion_ci(p: float, n: int, method: str = "normal") -> tuple[float, float]:
    """95% CI for a proportion, clamped to [0, 1]."""
    z = 1.959963984540054
    if n == 0:
        return 0.0, 1.0
    if method == "wilson":
        denom = 1 + z * z / n
        center = (p + z * z / (2 * n)) / denom
        half = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / denom
        lo, hi = center - half, center + half
    else:
        half = z * math.sqrt(p * (1 - p) / n)
        lo, hi = p - half, p + half
    return max(0.0, lo), min(1.0, hi)


def concordance_rates(
    log: Sequence[DecisionRecord],
    refs: ReferenceDecisions,
    ci_method: str = "normal",
) -> dict:
    """Per-condition, per-reference full/any rates with 95% CIs. Conditions
    with no decisions are omitted."""
    for rec in log:
        if rec.case_id not in refs.by_case:
            raise ValidationError(
                f"decision by {rec.participant_id!r} references unknown case {rec.case_id!r}")
    out: dict = {}
    for condition in CONDITIONS:
        records = [r for r in log if r.condition == condition]
        if not records:
            continue
        per_ref = {}
        for name in REFERENCE_NAMES:
            scored = [concordance(r, refs.get(r.case_id, name)) for r in records]
            n = len(scored)
            full = sum(s["full"] for s in scored)
            any_ = sum(s["any"] for s in scored)
            full_rate = full / n
            any_rate = any_ / n
            per_ref[name] = {
                "n": n,
                "full_rate": full_rate,
                "full_ci": proportion_ci(full_rate, n, ci_method),
                "any_rate": any_rate,
                "any_ci": proportion_ci(any_rate, n, ci_method),
            }
        out[condition] = per_ref
    return out


# -------------------------------------------------------------- regression

@dataclass
class RegressionResult:
    coef_names: list[str]
    coefficients: np.ndarray
    std_errors: np.ndarray
    vcov: np.ndarray
    n_obs: int
    n_clusters: int
    correction: float
    f_stat: float | None = None
    f_pvalue: float | None = None
    df_num: int = 0
    df_den: int = 0
    n_iter: int = 0

    def to_json(self) -> dict:
        return {
            "coefficients": {n: float(c) for n, c in zip(self.coef_names, self.coefficients)},
            "std_errors": {n: float(s) for n, s in zip(self.coef_names, self.std_errors)},
            "n_obs": self.n_obs,
            "n_clusters": self.n_clusters,
            "small_sample_correction": self.correction,
            "f_stat": self.f_stat,
            "f_pvalue": self.f_pvalue,
            "df": [self.df_num, self.df_den],
        }


def _design_matrix(condition: Sequence[str], extra: dict[str, Sequence[float]] | None,
                   allow_single_level: bool = False):
    levels = sorted(set(condition))
    if len(levels) < 2 and not allow_single_level:
        raise ValidationError("need at least 2 condition levels")
    names = ["intercept"] + [f"condition[{lv}]" for lv in levels[1:]]
    cols = [np.ones(len(condition))]
    for lv in levels[1:]:
        cols.append(np.array([1.0 if c == lv else 0.0 for c in condition]))
    n_condition = len(levels) - 1
    if extra:
        for name, values in extra.items():
            names.append(name)
            cols.append(np.asarray(values, dtype=np.float64))
    X = np.column_stack(cols)
    return X, names, levels, n_condition


def _check_rank(X: np.ndarray, names: list[str]) -> None:
    rank = np.linalg.matrix_rank(X)
    if rank == X.shape[1]:
        return
    collinear = []
    for j in range(X.shape[1]):
        reduced = np.delete(X, j, axis=1)
        if np.linalg.matrix_rank(reduced) == rank:
            collinear.append(names[j])
    raise ValidationError(f"rank-deficient design; collinear columns: {collinear}")


def _cluster_meat(X: np.ndarray, scores: np.ndarray, cluster_ids: Sequence) -> tuple[np.ndarray, int]:
    groups: dict = {}
    for i, c in enumerate(cluster_ids):
        groups.setdefault(c, []).append(i)
    k = X.shape[1]
    meat = np.zeros((k, k))
    for idx in groups.values():
        s = scores[idx].sum(axis=0)
        meat += np.outer(s, s)
    return meat, len(groups)


def ols_cluster(
    outcome: Sequence[float],
    condition: Sequence[str],
    cluster_ids: Sequence,
    extra_columns: dict[str, Sequence[float]] | None = None,
) -> RegressionResult:
    """OLS with dummy-coded condition, cluster-sandwich covariance with the
    small-sample factor (G/(G-1)) * ((N-1)/(N-K)), and a robust F test of the
    joint null on the condition coefficients with (K-1, G-1) style degrees of
    freedom (q condition dummies, G-1 denominator)."""
    y = np.asarray(outcome, dtype=np.float64)
    X, names, levels, q = _design_matrix(condition, extra_columns)
    n, k = X.shape
    if y.shape[0] != n:
        raise ValidationError("outcome length does not match condition length")
    _check_rank(X, names)
    groups = sorted(set(cluster_ids), key=lambda c: str(c))
    G = len(groups)
    if G < 2:
        raise ValidationError("need at least 2 clusters for cluster-robust errors")
    if n <= k:
        raise ValidationError(f"need more observations ({n}) than columns ({k})")

    XtX_inv = np.linalg.inv(X.T @ X)
    beta = XtX_inv @ (X.T @ y)
    resid = y - X @ beta
    scores = X * resid[:, None]
    meat, _ = _cluster_meat(X, scores, list(cluster_ids))
    correction = (G / (G - 1)) * ((n - 1) / (n - k))
    vcov = correction * XtX_inv @ meat @ XtX_inv
    se = np.sqrt(np.clip(np.diag(vcov), 0.0, None))

    f_stat = None
    f_pvalue = None
    if q > 0:
        R = np.zeros((q, k))
        for i in range(q):
            R[i, 1 + i] = 1.0
        rb = R @ beta
        rvr = R @ vcov @ R.T
        if np.allclose(rb, 0.0) and np.allclose(rvr, 0.0):
            f_stat, f_pvalue = 0.0, 1.0
        else:
            try:
                f_stat = float(rb @ np.linalg.solve(rvr, rb) / q)
            except np.linalg.LinAlgError:
                f_stat = float(rb @ np.linalg.pinv(rvr) @ rb / q)
            f_pvalue = float(stats.f.sf(f_stat, q, G - 1))
    return RegressionResult(
        coef_names=names,
        coefficients=beta,
        std_errors=se,
        vcov=vcov,
        n_obs=n,
        n_clusters=G,
        correction=correction,
        f_stat=f_stat,
        f_pvalue=f_pvalue,
        df_num=q,
        df_den=G - 1,
    )


def holm_bonferroni(p_values: Sequence[float], alpha: float = 0.05) -> list[dict]:
    """Step-down Holm procedure. Returns per-hypothesis reject flags and
    monotone adjusted p-values, in the input order."""
    p = np.asarray(p_values, dtype=np.float64)
    if p.size and (p.min() < 0 or p.max() > 1):
        raise ValidationError("p-values must lie in [0, 1]")
    m = p.size
    order = np.argsort(p, kind="stable")
    adjusted = np.empty(m)
    reject = np.zeros(m, dtype=bool)
    running_max = 0.0
    still_rejecting = True
    for rank, idx in enumerate(order):
        raw = min(1.0, (m - rank) * p[idx])
        running_max = max(running_max, raw)
        adjusted[idx] = running_max
        if still_rejecting and p[idx] <= alpha / (m - rank):
            reject[idx] = True
        else:
            still_rejecting = False
    return [{"p": float(p[i]), "adjusted_p": float(adjusted[i]), "reject": bool(reject[i])}
            for i in range(m)]


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def logit_concordance(
    outcome: Sequence[int],
    condition: Sequence[str],
    cluster_ids: Sequence,
    extra_columns: dict[str, Sequence[float]] | None = None,
    tol: float = 1e-8,
    max_iter: int = 100,
) -> RegressionResult:
    """Logistic regression by iteratively reweighted least squares with
    cluster-sandwich standard errors on the score contributions."""
    y = np.asarray(outcome, dtype=np.float64)
    if set(np.unique(y)) - {0.0, 1.0}:
        raise ValidationError("outcome must be binary 0/1")
    if y.min() == y.max():
        raise ValidationError("outcome is constant; logistic fit undefined")
    X, names, levels, q = _design_matrix(condition, extra_columns,
                                         allow_single_level=True)
    _check_rank(X, names)
    n, k = X.shape
    groups = sorted(set(cluster_ids), key=lambda c: str(c))
    G = len(groups)
    if G < 2:
        raise ValidationError("need at least 2 clusters for cluster-robust errors")

    beta = np.zeros(k)
    trace = []
    converged = False
    for it in range(max_iter):
        eta = X @ beta
        if np.max(np.abs(eta)) > 30:
            raise SeparationError(
                "perfect separation detected: fitted log-odds diverged")
        p = _sigmoid(eta)
        w = p * (1.0 - p)
        grad = X.T @ (y - p)
        H = (X * w[:, None]).T @ X
        try:
            step = np.linalg.solve(H, grad)
        except np.linalg.LinAlgError as exc:
            raise SeparationError(f"singular information matrix: {exc}") from exc
        beta = beta + step
        delta = float(np.max(np.abs(step)))
        trace.append(delta)
        if delta < tol:
            converged = True
            break
    if not converged:
        raise ConvergenceError(
            f"IRLS did not converge in {max_iter} iterations; step trace tail: "
            f"{[f'{d:.3g}' for d in trace[-5:]]}")

    p = _sigmoid(X @ beta)
    w = p * (1.0 - p)
    bread = np.linalg.inv((X * w[:, None]).T @ X)
    scores = X * (y - p)[:, None]
    meat, _ = _cluster_meat(X, scores, list(cluster_ids))
    correction = (G / (G - 1)) * ((n - 1) / (n - k))
    vcov = correction * bread @ meat @ bread
    se = np.sqrt(np.clip(np.diag(vcov), 0.0, None))
    return RegressionResult(
        coef_names=names,
        coefficients=beta,
        std_errors=se,
        vcov=vcov,
        n_obs=n,
        n_clusters=G,
        correction=correction,
        n_iter=len(trace),
    )


# ------------------------------------------------------------ decision log

class DecisionLog:
    """Append-only JSONL decision store with idempotency keys.

    Concurrent appends are serialized through one lock; replaying an append
    with an already-seen idempotency key returns the original record id
    without writing."""

    def __init__(self, path):
        self.path = path
        self._lock = threading.Lock()
        self._records: list[DecisionRecord] = []
        self._by_key: dict[str, int] = {}
        try:
            with open(path, encoding="utf-8") as fh:
                for line in fh:
                    line = line.strip()
                    if not line:
                        continue
                    rec = DecisionRecord.from_json(json.loads(line))
                    self._records.append(rec)
                    if rec.idempotency_key:
                        self._by_key[rec.idempotency_key] = rec.record_id
        except FileNotFoundError:
            pass

    def append(self, record: DecisionRecord) -> tuple[int, bool]:
        """Returns (record_id, was_duplicate)."""
        with self._lock:
            if record.idempotency_key and record.idempotency_key in self._by_key:
                return self._by_key[record.idempotency_key], True
            record.record_id = len(self._records)
            if not record.timestamp:
                record.timestamp = datetime.now(timezone.utc).isoformat()
            with open(self.path, "a", encoding="utf-8") as fh:
                fh.write(json.dumps(record.to_json(), separators=(",", ":")))
                fh.write("\n")
            self._records.append(record)
            if record.idempotency_key:
                self._by_key[record.idempotency_key] = record.record_id
            return record.record_id, False

    def records(self) -> list[DecisionRecord]:
        with self._lock:
            return list(self._records)

    def active_records(self) -> list[DecisionRecord]:
        """Records not superseded by a later correction."""
        with self._lock:
            superseded = {r.supersedes for r in self._records if r.supersedes is not None}
            return [r for r in self._records if r.record_id not in superseded]


# ----------------------------------------------------------------- reports

_FIRST_NAMES = ("Ruth", "Loretta", "Jeffrey", "Victoria", "Harold", "Gloria",
                "Marcus", "Elaine", "Walter", "Denise", "Albert", "Janet")
_LAST_NAMES = ("Silva", "Sturtevant", "Williams", "Thompson", "Nakamura",
               "Okafor", "Reyes", "Lindqvist", "Boone", "Castellano")


def assign_pseudonyms(cases: Sequence[StudyCase], seed: int) -> None:
    """Give each case a randomly generated patient name, reproducibly."""
    rng = np.random.default_rng(seed)
    seen = set()
    for case in cases:
        while True:
            name = (f"{_FIRST_NAMES[rng.integers(len(_FIRST_NAMES))]} "
                    f"{_LAST_NAMES[rng.integers(len(_LAST_NAMES))]}")
            if name not in seen:
                break
        seen.add(name)
        case.pseudonym = name


def build_study_report(
    log: Sequence[DecisionRecord],
    refs: ReferenceDecisions,
    alpha: float = 0.05,
) -> dict:
    """Concordance rates plus Likert regressions, with Holm-adjusted pairwise
    condition contrasts. Analysis failures (too little data, separation) are
    reported as notes instead of failing the whole report."""
    report: dict = {
        "schema_version": SCHEMA_VERSION,
        "n_decisions": len(log),
        "concordance": concordance_rates(log, refs),
        "likert_models": {},
        "logit_models": {},
        "notes": [],
    }
    outcomes = {
        "confidence": [r for r in log],
        "difficulty": [r for r in log],
        "usefulness": [r for r in log if r.condition != "no_ai"],
        "ai_confidence_effect": [r for r in log if r.condition != "no_ai"],
    }
    for name, records in outcomes.items():
        values = [getattr(r, name) for r in records]
        if any(v is None for v in values) or len(records) < 3:
            report["notes"].append(f"{name}: insufficient data for regression")
            continue
        try:
            res = ols_cluster(values, [r.condition for r in records],
                              [r.participant_id for r in records])
            doc = res.to_json()
            doc["pairwise"] = _pairwise_contrasts(res, alpha)
            report["likert_models"][name] = doc
        except (ValidationError, np.linalg.LinAlgError) as exc:
            report["notes"].append(f"{name}: {exc}")

    # concordance with the AI recommendation as a binary outcome
    try:
        y = [int(concordance(r, refs.get(r.case_id, "ai"))["full"]) for r in log]
        res = logit_concordance(y, [r.condition for r in log],
                                [r.participant_id for r in log])
        report["logit_models"]["full_concordance_ai"] = res.to_json()
    except (ValidationError, SeparationError, ConvergenceError) as exc:
        report["notes"].append(f"full_concordance_ai: {exc}")
    return report


def _pairwise_contrasts(res: RegressionResult, alpha: float) -> list[dict]:
    """All condition-level contrasts from the fitted model, z-tests on the
    robust covariance, Holm-adjusted."""
    idx = {name: i for i, name in enumerate(res.coef_names)}
    dummies = [n for n in res.coef_names if n.startswith("condition[")]
    baseline = "baseline"
    contrasts = []
    vectors = []
    k = len(res.coef_names)
    for i, a in enumerate(dummies):
        c = np.zeros(k)
        c[idx[a]] = 1.0
        contrasts.append((a, baseline))
        vectors.append(c)
        for b in dummies[i + 1:]:
            c = np.zeros(k)
            c[idx[a]] = 1.0
            c[idx[b]] = -1.0
            contrasts.append((a, b))
            vectors.append(c)
    rows = []
    pvals = []
    for (a, b), c in zip(contrasts, vectors):
        delta = float(c @ res.coefficients)
        se = float(np.sqrt(max(c @ res.vcov @ c, 0.0)))
        z = delta / se if se > 0 else 0.0
        p = 2 * stats.norm.sf(abs(z)) if se > 0 else 1.0
        rows.append({"contrast": f"{a} vs {b}", "delta": delta, "se": se, "p": float(p)})
        pvals.append(float(p))
    for row, adj in zip(rows, holm_bonferroni(pvals, alpha)):
        row["adjusted_p"] = adj["adjusted_p"]
        row["reject"] = adj["reject"]
    return rows


def format_report_text(report: dict) -> str:
    """Human-readable table mirroring the concordance/Likert figure layout."""
    lines = []
    lines.append(f"decisions: {report['n_decisions']}")
    lines.append("")
    lines.append("concordance (full / any, 95% CI)")
    header = f"{'condition':<24}" + "".join(f"{name:>34}" for name in REFERENCE_NAMES)
    lines.append(header)
    for condition, per_ref in report["concordance"].items():
        row = f"{condition:<24}"
        for name in REFERENCE_NAMES:
            cell = per_ref.get(name)
            if cell is None:
                row += f"{'-':>34}"
            else:
                row += (f"  {cell['full_rate']:.2f} [{cell['full_ci'][0]:.2f},{cell['full_ci'][1]:.2f}]"
                        f" / {cell['any_rate']:.2f} [{cell['any_ci'][0]:.2f},{cell['any_ci'][1]:.2f}]")
        lines.append(row)
    for name, model in report.get("likert_models", {}).items():
        lines.append("")
        lines.append(f"{name}: F({model['df'][0]}, {model['df'][1]}) = "
                     f"{model['f_stat']:.3f}, p = {model['f_pvalue']:.3g}")
        for coef, value in model["coefficients"].items():
            se = model["std_errors"][coef]
            lines.append(f"  {coef:<40} {value:+.3f} (SE {se:.3f})")
    for note in report.get("notes", []):
        lines.append(f"note: {note}")
    return "\n".join(lines)
