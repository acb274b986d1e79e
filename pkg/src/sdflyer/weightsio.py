"""Run configuration and weight-file persistence.

Weights and configs are versioned JSON documents. Weight files carry a
sha256 checksum over the canonical payload; loaders verify it and reject
unknown major schema versions. All writes are atomic (temp file + rename).
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import mlp, sdnn
from .freeflyer import FlyerParams, RewardWeights
from .mathcore import QuantSpec
from .ppo import PpoConfig

SCHEMA_VERSION = "1.0"


class WeightFileError(ValueError):
    """Weight file failed validation; ``reason`` is one of 'missing',
    'schema', 'checksum', 'integrity', or 'activation'."""

    def __init__(self, reason: str, message: str):
        super().__init__(message)
        self.reason = reason


class ConfigError(ValueError):
    pass


def atomic_write_text(path: str | Path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _canonical(payload: dict) -> str:
    return json.dumps(payload, sort_keys=True, separators=(",", ":"))


def _checksum(payload: dict) -> str:
    return hashlib.sha256(_canonical(payload).encode()).hexdigest()


def _write_checksummed(path: str | Path, payload: dict) -> None:
    doc = dict(payload)
    doc["checksum"] = _checksum(payload)
    atomic_write_text(path, json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _read_checksummed(path: str | Path) -> dict:
    path = Path(path)
    if not path.exists():
        raise WeightFileError("missing", f"weight file not found: {path}")
    doc = json.loads(path.read_text())
    stored = doc.pop("checksum", None)
    if stored != _checksum(doc):
        raise WeightFileError("checksum", f"checksum mismatch in {path}")
    major = str(doc.get("schema_version", "")).split(".")[0]
    if major != SCHEMA_VERSION.split(".")[0]:
        raise WeightFileError(
            "schema", f"unsupported schema version {doc.get('schema_version')!r} in {path}"
        )
    return doc


# -- actor checkpoints ---------------------------------------------------


def save_actor(path: str | Path, actor: mlp.DenseNet, head: mlp.GaussianHead) -> None:
    payload = {
        "schema_version": SCHEMA_VERSION,
        "kind": "ann_actor",
        "layer_dims": list(actor.layer_dims),
        "weights": [w.tolist() for w in actor.weights],
        "biases": [b.tolist() for b in actor.biases],
        "activations": ["relu"] * (actor.n_layers - 1) + ["identity"],
        "log_std": head.log_std.tolist(),
    }
    _write_checksummed(path, payload)


def load_actor(path: str | Path) -> tuple[mlp.DenseNet, mlp.GaussianHead]:
    doc = _read_checksummed(path)
    if doc.get("kind") != "ann_actor":
        raise WeightFileError("schema", f"{path} is not an actor weight file")
    acts = doc["activations"]
    if acts[:-1] != ["relu"] * (len(acts) - 1) or acts[-1] != "identity":
        raise WeightFileError(
            "activation", f"unsupported activations {acts}; conversion requires ReLU hidden layers"
        )
    net = mlp.DenseNet(
        list(doc["layer_dims"]),
        [np.asarray(w, dtype=np.float64) for w in doc["weights"]],
        [np.asarray(b, dtype=np.float64) for b in doc["biases"]],
    )
    head = mlp.GaussianHead(np.asarray(doc["log_std"], dtype=np.float64))
    return net, head


# -- converted networks ----------------------------------------------------


def _spec_dict(spec: QuantSpec) -> dict:
    return {"scale": spec.scale, "magnitude_bits": spec.magnitude_bits}


def _spec_from(d: dict) -> QuantSpec:
    return QuantSpec(scale=float(d["scale"]), magnitude_bits=int(d["magnitude_bits"]))


def save_sdnn(path: str | Path, net: sdnn.SdnnNet) -> None:
    payload = {
        "schema_version": SCHEMA_VERSION,
        "kind": "sdnn",
        "mode": net.mode,
        "layer_dims": list(net.layer_dims),
        "weights": [w.tolist() for w in net.weights],
        "biases": [b.tolist() for b in net.biases],
        "weights_int": [w.tolist() for w in net.weights_q],
        "biases_int": [b.tolist() for b in net.biases_q],
        "thresholds": net.thresholds,
        "thresholds_int": net.thresholds_q,
        "scales": {
            "observation": _spec_dict(net.obs_spec),
            "activations": [_spec_dict(s) for s in net.act_specs],
            "action": _spec_dict(net.action_spec),
            "weights": [_spec_dict(s) for s in net.weight_specs],
        },
        "quant": dataclasses.asdict(net.quant),
    }
    _write_checksummed(path, payload)


def load_sdnn(path: str | Path, mode: str | None = None) -> sdnn.SdnnNet:
    doc = _read_checksummed(path)
    if doc.get("kind") != "sdnn":
        raise WeightFileError("schema", f"{path} is not an sdnn weight file")
    scales = doc["scales"]
    net = sdnn.SdnnNet(
        layer_dims=list(doc["layer_dims"]),
        weights=[np.asarray(w, dtype=np.float64) for w in doc["weights"]],
        biases=[np.asarray(b, dtype=np.float64) for b in doc["biases"]],
        thresholds=[float(t) for t in doc["thresholds"]],
        mode=mode or doc["mode"],
        quant=sdnn.QuantConfig(**doc["quant"]),
        obs_spec=_spec_from(scales["observation"]),
        act_specs=[_spec_from(s) for s in scales["activations"]],
        action_spec=_spec_from(scales["action"]),
        weight_specs=[_spec_from(s) for s in scales["weights"]],
    )
    for stored, derived in zip(doc["weights_int"], net.weights_q):
        if not np.array_equal(np.asarray(stored, dtype=np.int64), derived):
            raise WeightFileError("integrity", f"stored integer weights inconsistent in {path}")
    return net


# -- run configuration ------------------------------------------------------


@dataclass
class RunConfig:
    seed: int = 0
    env: FlyerParams = field(default_factory=FlyerParams)
    reward: RewardWeights = field(default_factory=RewardWeights)
    ppo: PpoConfig = field(default_factory=PpoConfig)
    quant: sdnn.QuantConfig = field(default_factory=sdnn.QuantConfig)
    threshold: float = 0.1
    tasks: tuple[str, ...] = ("undock", "random")
    seeds: tuple[int, ...] = tuple(range(10))

    def to_json(self) -> str:
        doc = {"schema_version": SCHEMA_VERSION, **dataclasses.asdict(self)}
        return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def _dataclass_from(cls, d: dict, where: str):
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(d) - names)
    if unknown:
        raise ConfigError(f"unknown key(s) {unknown} in config section {where!r}")
    try:
        return cls(**d)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid config section {where!r}: {exc}") from exc


def config_from_dict(doc: dict) -> RunConfig:
    doc = dict(doc)
    version = str(doc.pop("schema_version", SCHEMA_VERSION))
    if version.split(".")[0] != SCHEMA_VERSION.split(".")[0]:
        raise ConfigError(f"unsupported config schema version {version!r}")
    sections = {
        "env": (FlyerParams, {}),
        "reward": (RewardWeights, {}),
        "ppo": (PpoConfig, {}),
        "quant": (sdnn.QuantConfig, {}),
    }
    kwargs: dict = {}
    for name, (cls, _) in sections.items():
        if name in doc:
            sub = doc.pop(name)
            if not isinstance(sub, dict):
                raise ConfigError(f"config section {name!r} must be an object")
            if name == "env" and "inertia_diag" in sub:
                sub["inertia_diag"] = tuple(sub["inertia_diag"])
            kwargs[name] = _dataclass_from(cls, sub, name)
    for name in ("seed", "threshold"):
        if name in doc:
            kwargs[name] = doc.pop(name)
    if "tasks" in doc:
        kwargs["tasks"] = tuple(doc.pop("tasks"))
    if "seeds" in doc:
        kwargs["seeds"] = tuple(int(s) for s in doc.pop("seeds"))
    if doc:
        raise ConfigError(f"unknown top-level config key(s) {sorted(doc)}")
    return RunConfig(**kwargs)


def load_config(path: str | Path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError(f"config file {path} must contain a JSON object")
    return config_from_dict(doc)


def write_resolved_config(out_dir: str | Path, config: RunConfig) -> Path:
    path = Path(out_dir) / "config.json"
    atomic_write_text(path, config.to_json())
    return path
