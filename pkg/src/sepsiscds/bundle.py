"""Trained-model persistence: one JSON manifest plus raw binary matrix blobs.

Blob layout: little-endian, row-major (C order), dtype and shape recorded in
the manifest. Transition counts are stored as COO triplets (state, action,
successor) with int64 counts since the tensor is overwhelmingly sparse.
Round-trips are bit-identical.
"""
from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field
from datetime import datetime, timezone

import numpy as np

from .actions import ActionSpace
from .cohort import FeatureSchema
from .errors import ValidationError
from .mdp import MdpModel
from .statespace import StateModel

BUNDLE_VERSION = 1
_MANIFEST = "bundle.json"


@dataclass
class ModelBundle:
    schema: FeatureSchema
    state_model: StateModel
    action_space: ActionSpace
    mdp: MdpModel
    config: dict = field(default_factory=dict)
    provenance: dict = field(default_factory=dict)


def config_hash(config: dict) -> str:
    canonical = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def _write_blob(directory: str, name: str, arr: np.ndarray) -> dict:
    arr = np.ascontiguousarray(arr)
    le = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
    path = os.path.join(directory, name)
    with open(path, "wb") as fh:
        fh.write(le.tobytes(order="C"))
    return {"file": name, "dtype": arr.dtype.str.replace(">", "<"),
            "shape": list(arr.shape)}


def _read_blob(directory: str, meta: dict) -> np.ndarray:
    path = os.path.join(directory, meta["file"])
    with open(path, "rb") as fh:
        raw = fh.read()
    arr = np.frombuffer(raw, dtype=np.dtype(meta["dtype"]))
    return arr.reshape(meta["shape"]).copy()


def save_bundle(bundle: ModelBundle, directory: str) -> None:
    os.makedirs(directory, exist_ok=True)
    mdp = bundle.mdp
    blobs: dict[str, dict] = {}
    blobs["centroids"] = _write_blob(directory, "centroids.bin", bundle.state_model.centroids)
    blobs["behavior"] = _write_blob(directory, "behavior.bin", mdp.behavior)
    blobs["visit_counts"] = _write_blob(directory, "visit_counts.bin", mdp.visit_counts)
    coords = np.argwhere(mdp.counts > 0)
    values = mdp.counts[coords[:, 0], coords[:, 1], coords[:, 2]]
    blobs["count_coords"] = _write_blob(directory, "count_coords.bin", coords.astype(np.int64))
    blobs["count_values"] = _write_blob(directory, "count_values.bin", values.astype(np.int64))
    if mdp.q_values is not None:
        blobs["q_values"] = _write_blob(directory, "q_values.bin", mdp.q_values)
        blobs["estimated"] = _write_blob(directory, "estimated.bin",
                                         mdp.estimated.astype(np.uint8))
        blobs["policy"] = _write_blob(directory, "policy.bin", mdp.policy.astype(np.int64))
    if mdp.values is not None:
        blobs["values"] = _write_blob(directory, "values.bin", mdp.values)

    state_model_doc = bundle.state_model.to_json()
    state_model_doc["centroids"] = []  # authoritative copy lives in the blob
    manifest = {
        "schema_version": BUNDLE_VERSION,
        "created_at": bundle.provenance.get(
            "created_at", datetime.now(timezone.utc).isoformat()),
        "feature_schema": bundle.schema.to_json(),
        "state_model": state_model_doc,
        "action_space": bundle.action_space.to_json(),
        "mdp": {
            "k": mdp.k,
            "n_actions": mdp.n_actions,
            "gamma": mdp.gamma,
            "min_count": mdp.min_count,
            "fallback_states": list(mdp.fallback_states),
            "unvisited_states": list(mdp.unvisited_states),
        },
        "blobs": blobs,
        "config": bundle.config,
        "provenance": bundle.provenance,
    }
    with open(os.path.join(directory, _MANIFEST), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2)


def load_bundle(directory: str) -> ModelBundle:
    manifest_path = os.path.join(directory, _MANIFEST)
    if not os.path.exists(manifest_path):
        raise ValidationError(f"no bundle manifest at {manifest_path}")
    with open(manifest_path, encoding="utf-8") as fh:
        manifest = json.load(fh)
    if manifest.get("schema_version") != BUNDLE_VERSION:
        raise ValidationError(
            f"unsupported bundle version {manifest.get('schema_version')}")
    blobs = manifest["blobs"]
    schema = FeatureSchema.from_json(manifest["feature_schema"])
    state_model = StateModel.from_json(manifest["state_model"])
    state_model.centroids = _read_blob(directory, blobs["centroids"])
    space = ActionSpace.from_json(manifest["action_space"])

    meta = manifest["mdp"]
    k = int(meta["k"])
    n_actions = int(meta["n_actions"])
    coords = _read_blob(directory, blobs["count_coords"])
    values = _read_blob(directory, blobs["count_values"])
    counts = np.zeros((k, n_actions, k + 2), dtype=np.int64)
    counts[coords[:, 0], coords[:, 1], coords[:, 2]] = values
    mdp = MdpModel(
        k=k,
        n_actions=n_actions,
        counts=counts,
        visit_counts=_read_blob(directory, blobs["visit_counts"]),
        behavior=_read_blob(directory, blobs["behavior"]),
        gamma=float(meta["gamma"]),
        min_count=int(meta["min_count"]),
    )
    if "q_values" in blobs:
        mdp.q_values = _read_blob(directory, blobs["q_values"])
        mdp.estimated = _read_blob(directory, blobs["estimated"]).astype(bool)
        mdp.policy = _read_blob(directory, blobs["policy"])
    if "values" in blobs:
        mdp.values = _read_blob(directory, blobs["values"])
    mdp.fallback_states = list(meta.get("fallback_states", []))
    mdp.unvisited_states = list(meta.get("unvisited_states", []))
    return ModelBundle(
        schema=schema,
        state_model=state_model,
        action_space=space,
        mdp=mdp,
        config=manifest.get("config", {}),
        provenance=manifest.get("provenance", {}),
    )
