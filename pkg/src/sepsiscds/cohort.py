"""Trajectory data model and 4-hour binning of raw event streams.

Raw events arrive as (patient_id, timestamp, channel, value) rows. Channels
are either schema features or one of the reserved treatment/score channels.
Binning is anchored at each patient's first event, not at calendar hours, so
ingestion is deterministic without timezone handling.
"""
from __future__ import annotations

import csv
import json
import math
import statistics
from dataclasses import dataclass, field
from datetime import datetime
from typing import Iterable, Iterator, Sequence

from .errors import EmptyCohortError, ValidationError

BIN_SECONDS = 4 * 3600

# channels that are not schema features but carry treatment / score data
RESERVED_CHANNELS = ("fluid_dose", "vaso_dose", "mech_vent", "sofa", "sirs")

DISPLAY_GROUPS = ("demographics", "vitals", "labs", "ventilation", "fluids")

SCHEMA_VERSION = 1


@dataclass(frozen=True)
class FeatureSpec:
    name: str
    group: str
    lo: float
    hi: float


@dataclass(frozen=True)
class FeatureSchema:
    """Ordered feature list with normal reference ranges and display groups."""

    features: tuple[FeatureSpec, ...]

    def __post_init__(self):
        names = [f.name for f in self.features]
        if len(set(names)) != len(names):
            raise ValidationError("duplicate feature names in schema")
        for f in self.features:
            if not f.lo < f.hi:
                raise ValidationError(
                    f"feature {f.name!r}: reference range lo must be < hi")
            if f.group not in DISPLAY_GROUPS:
                raise ValidationError(
                    f"feature {f.name!r}: unknown display group {f.group!r}")

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(f.name for f in self.features)

    def spec(self, name: str) -> FeatureSpec | None:
        for f in self.features:
            if f.name == name:
                return f
        return None

    @classmethod
    def from_json(cls, doc: dict) -> "FeatureSchema":
        feats = tuple(
            FeatureSpec(f["name"], f["group"], float(f["range"][0]), float(f["range"][1]))
            for f in doc["features"])
        return cls(feats)

    @classmethod
    def load(cls, path) -> "FeatureSchema":
        with open(path, encoding="utf-8") as fh:
            return cls.from_json(json.load(fh))

    def to_json(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "features": [
                {"name": f.name, "group": f.group, "range": [f.lo, f.hi]}
                for f in self.features],
        }


@dataclass
class TimestepRecord:
    """One 4-hour bin: observations plus the treatments given during it."""

    bin_index: int
    features: dict[str, float]
    fluid_dose: float
    vaso_dose: float
    mech_vent: bool
    sofa: int
    sirs: int


@dataclass
class PatientTrajectory:
    patient_id: str
    age: float
    gender: str
    weight: float
    comorbidities: dict[str, bool]
    died: bool
    timesteps: list[TimestepRecord]


@dataclass
class Demographics:
    patient_id: str
    age: float
    gender: str
    weight: float
    died: bool
    comorbidities: dict[str, bool]


@dataclass
class IngestReport:
    """Side facts from ingestion: rejections and pre-imputation missingness."""

    n_rows: int = 0
    rejected_rows: list[tuple[int, str]] = field(default_factory=list)
    missingness: dict[str, float] = field(default_factory=dict)
    unknown_channels: dict[str, int] = field(default_factory=dict)


@dataclass
class CohortSummary:
    patients: int
    timesteps: int
    deaths: int
    missingness: dict[str, float]
    violations: list[str]

    @property
    def ok(self) -> bool:
        return not self.violations


def _parse_ts(value) -> datetime:
    if isinstance(value, datetime):
        return value
    text = str(value)
    if text.endswith("Z"):
        text = text[:-1] + "+00:00"
    try:
        return datetime.fromisoformat(text)
    except ValueError as exc:
        raise ValidationError(f"unparseable timestamp {value!r}") from exc


def read_events_csv(path) -> Iterator[tuple[str, str, str, str, int]]:
    """Yield (patient_id, timestamp, channel, value, line_no) from an events CSV."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        required = {"patient_id", "timestamp", "channel", "value"}
        if reader.fieldnames is None or not required.issubset(reader.fieldnames):
            raise ValidationError(
                f"events CSV must have header patient_id,timestamp,channel,value, got {reader.fieldnames}")
        for i, row in enumerate(reader, start=2):
            yield row["patient_id"], row["timestamp"], row["channel"], row["value"], i


def read_demographics_csv(path) -> dict[str, Demographics]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        required = {"patient_id", "age", "gender", "weight", "died"}
        if reader.fieldnames is None or not required.issubset(reader.fieldnames):
            raise ValidationError(
                f"demographics CSV must carry columns {sorted(required)}, got {reader.fieldnames}")
        flags = [c for c in reader.fieldnames if c not in required]
        out = {}
        for row in reader:
            out[row["patient_id"]] = Demographics(
                patient_id=row["patient_id"],
                age=float(row["age"]),
                gender=row["gender"],
                weight=float(row["weight"]),
                died=bool(int(float(row["died"]))),
                comorbidities={c: bool(int(float(row[c]))) for c in flags},
            )
        return out


def ingest_events(
    raw_event_stream: Iterable,
    schema: FeatureSchema,
    demographics: dict[str, Demographics],
) -> tuple[list[PatientTrajectory], IngestReport]:
    """Group events into consecutive 4-hour bins per patient.

    Within a bin: feature observations are averaged, fluid doses summed,
    vasopressor rates reduced by max. mech_vent is any nonzero observation;
    sofa/sirs take the in-bin worst (max). Missing features are
    forward-filled, then imputed with the cohort median of observed per-bin
    values. Bins with no events between populated bins are carried forward
    with zero doses.

    Returns the trajectories plus an IngestReport with rejected rows and
    pre-imputation missingness. Unknown channels are rejected row-by-row;
    a negative dose row is fatal.
    """
    report = IngestReport()
    feature_names = set(schema.names)
    per_patient: dict[str, list[tuple[datetime, str, float]]] = {}
    order: list[str] = []

    for row in raw_event_stream:
        if len(row) == 5:
            pid, ts, channel, value, line_no = row
        else:
            pid, ts, channel, value = row
            line_no = report.n_rows + 2
        report.n_rows += 1
        if channel not in feature_names and channel not in RESERVED_CHANNELS:
            report.rejected_rows.append((line_no, f"unknown channel {channel!r}"))
            report.unknown_channels[channel] = report.unknown_channels.get(channel, 0) + 1
            continue
        value = float(value)
        if channel in ("fluid_dose", "vaso_dose") and value < 0:
            raise ValidationError(
                f"negative dose at row {line_no}: {channel}={value} for patient {pid}")
        if pid not in per_patient:
            per_patient[pid] = []
            order.append(pid)
        per_patient[pid].append((_parse_ts(ts), channel, value))

    if not per_patient:
        raise EmptyCohortError("empty cohort: no usable event rows")

    missing = [p for p in order if p not in demographics]
    if missing:
        raise ValidationError(f"patients without demographics: {missing}")

    # per-patient per-bin raw channel aggregates
    binned: dict[str, dict[int, dict[str, list[float]]]] = {}
    for pid in order:
        events = sorted(per_patient[pid], key=lambda e: e[0])
        t0 = events[0][0]
        bins: dict[int, dict[str, list[float]]] = {}
        for ts, channel, value in events:
            b = int((ts - t0).total_seconds() // BIN_SECONDS)
            bins.setdefault(b, {}).setdefault(channel, []).append(value)
        binned[pid] = bins

    # cohort medians over observed per-bin feature means (imputation pool)
    observed: dict[str, list[float]] = {name: [] for name in schema.names}
    total_bins = 0
    observed_bins = {name: 0 for name in schema.names}
    for pid in order:
        bins = binned[pid]
        total_bins += max(bins) + 1
        for b in bins.values():
            for name in schema.names:
                if name in b:
                    observed[name].append(sum(b[name]) / len(b[name]))
    for pid in order:
        for b in binned[pid].values():
            for name in schema.names:
                if name in b:
                    observed_bins[name] += 1
    medians = {
        name: (statistics.median(vals) if vals else 0.0)
        for name, vals in observed.items()}
    report.missingness = {
        name: 1.0 - observed_bins[name] / total_bins for name in schema.names}

    trajectories = []
    for pid in order:
        bins = binned[pid]
        n_bins = max(bins) + 1
        timesteps: list[TimestepRecord] = []
        last_feat: dict[str, float] = {}
        vent = False
        sofa = 0
        sirs = 0
        for b in range(n_bins):
            raw = bins.get(b, {})
            feats: dict[str, float] = {}
            for name in schema.names:
                if name in raw:
                    feats[name] = sum(raw[name]) / len(raw[name])
                elif name in last_feat:
                    feats[name] = last_feat[name]
                else:
                    feats[name] = medians[name]
            last_feat = feats
            fluid = sum(raw["fluid_dose"]) if "fluid_dose" in raw else 0.0
            vaso = max(raw["vaso_dose"]) if "vaso_dose" in raw else 0.0
            if "mech_vent" in raw:
                vent = any(v != 0 for v in raw["mech_vent"])
            if "sofa" in raw:
                sofa = int(max(raw["sofa"]))
            if "sirs" in raw:
                sirs = int(max(raw["sirs"]))
            timesteps.append(TimestepRecord(
                bin_index=b,
                features={name: float(feats[name]) for name in schema.names},
                fluid_dose=float(fluid),
                vaso_dose=float(vaso),
                mech_vent=vent,
                sofa=sofa,
                sirs=sirs,
            ))
        demo = demographics[pid]
        trajectories.append(PatientTrajectory(
            patient_id=pid,
            age=demo.age,
            gender=demo.gender,
            weight=demo.weight,
            comorbidities=dict(demo.comorbidities),
            died=demo.died,
            timesteps=timesteps,
        ))
    return trajectories, report


def validate_cohort(
    cohort: Sequence[PatientTrajectory],
    report: IngestReport | None = None,
) -> CohortSummary:
    """Report-only validation; non-empty violations mean downstream training
    must reject the cohort."""
    violations: list[str] = []
    n_steps = 0
    deaths = 0
    if not cohort:
        violations.append("cohort empty")
    for traj in cohort:
        pid = traj.patient_id
        if not traj.timesteps:
            violations.append(f"{pid}: no timesteps")
        if traj.weight <= 0:
            violations.append(f"{pid}: weight must be > 0, got {traj.weight}")
        if traj.age < 0:
            violations.append(f"{pid}: age must be >= 0, got {traj.age}")
        deaths += int(traj.died)
        for i, rec in enumerate(traj.timesteps):
            n_steps += 1
            if rec.bin_index != i:
                violations.append(
                    f"{pid}: bin {rec.bin_index} at position {i} (bins must be consecutive from 0)")
            if rec.fluid_dose < 0:
                violations.append(f"{pid} bin {rec.bin_index}: negative fluid_dose")
            if rec.vaso_dose < 0:
                violations.append(f"{pid} bin {rec.bin_index}: negative vaso_dose")
            if not 0 <= rec.sofa <= 24:
                violations.append(f"{pid} bin {rec.bin_index}: sofa {rec.sofa} outside [0,24]")
            if not 0 <= rec.sirs <= 4:
                violations.append(f"{pid} bin {rec.bin_index}: sirs {rec.sirs} outside [0,4]")
            for name, value in rec.features.items():
                if not math.isfinite(value):
                    violations.append(
                        f"{pid} bin {rec.bin_index}: feature {name!r} not finite")
    return CohortSummary(
        patients=len(cohort),
        timesteps=n_steps,
        deaths=deaths,
        missingness=dict(report.missingness) if report else {},
        violations=violations,
    )


def flag_abnormal(
    record: TimestepRecord,
    schema: FeatureSchema,
    tally: dict[str, int] | None = None,
) -> dict[str, str]:
    """Label each feature below/normal/above its reference range.

    Boundary values (== lo or == hi) are normal. Features absent from the
    schema are labeled normal and counted in `tally` when given.
    """
    flags = {}
    for name, value in record.features.items():
        spec = schema.spec(name)
        if spec is None:
            flags[name] = "normal"
            if tally is not None:
                tally[name] = tally.get(name, 0) + 1
            continue
        if value < spec.lo:
            flags[name] = "below"
        elif value > spec.hi:
            flags[name] = "above"
        else:
            flags[name] = "normal"
    return flags


def trajectory_to_dict(traj: PatientTrajectory, schema: FeatureSchema) -> dict:
    """Stable-key-order dict for JSONL serialization."""
    return {
        "schema_version": SCHEMA_VERSION,
        "patient_id": traj.patient_id,
        "age": float(traj.age),
        "gender": traj.gender,
        "weight": float(traj.weight),
        "comorbidities": {k: bool(v) for k, v in traj.comorbidities.items()},
        "died": bool(traj.died),
        "timesteps": [
            {
                "bin": rec.bin_index,
                "features": {name: float(rec.features[name]) for name in schema.names},
                "fluid_dose": float(rec.fluid_dose),
                "vaso_dose": float(rec.vaso_dose),
                "mech_vent": bool(rec.mech_vent),
                "sofa": int(rec.sofa),
                "sirs": int(rec.sirs),
            }
            for rec in traj.timesteps
        ],
    }


def trajectory_from_dict(doc: dict) -> PatientTrajectory:
    return PatientTrajectory(
        patient_id=doc["patient_id"],
        age=float(doc["age"]),
        gender=doc["gender"],
        weight=float(doc["weight"]),
        comorbidities={k: bool(v) for k, v in doc["comorbidities"].items()},
        died=bool(doc["died"]),
        timesteps=[
            TimestepRecord(
                bin_index=int(t["bin"]),
                features={k: float(v) for k, v in t["features"].items()},
                fluid_dose=float(t["fluid_dose"]),
                vaso_dose=float(t["vaso_dose"]),
                mech_vent=bool(t["mech_vent"]),
                sofa=int(t["sofa"]),
                sirs=int(t["sirs"]),
            )
            for t in doc["timesteps"]
        ],
    )


def save_trajectories(cohort: Sequence[PatientTrajectory], schema: FeatureSchema, path) -> None:
    """One patient per line, compact separators, stable key order."""
    with open(path, "w", encoding="utf-8") as fh:
        for traj in cohort:
            fh.write(json.dumps(trajectory_to_dict(traj, schema), separators=(",", ":")))
            fh.write("\n")


def load_trajectories(path) -> list[PatientTrajectory]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                out.append(trajectory_from_dict(json.loads(line)))
    return out


def trajectories_to_events(cohort: Sequence[PatientTrajectory], schema: FeatureSchema,
                           anchor: str = "2000-01-01T00:00:00") -> Iterator[tuple[str, str, str, float]]:
    """Emit one event per populated channel per bin (re-ingestable form)."""
    t0 = datetime.fromisoformat(anchor)
    for traj in cohort:
        for rec in traj.timesteps:
            ts = (t0 + _bin_delta(rec.bin_index)).isoformat()
            for name in schema.names:
                yield traj.patient_id, ts, name, rec.features[name]
            if rec.fluid_dose:
                yield traj.patient_id, ts, "fluid_dose", rec.fluid_dose
            if rec.vaso_dose:
                yield traj.patient_id, ts, "vaso_dose", rec.vaso_dose
            yield traj.patient_id, ts, "mech_vent", float(rec.mech_vent)
            yield traj.patient_id, ts, "sofa", float(rec.sofa)
            yield traj.patient_id, ts, "sirs", float(rec.sirs)


def _bin_delta(bin_index: int):
    from datetime import timedelta
    return timedelta(seconds=bin_index * BIN_SECONDS)
