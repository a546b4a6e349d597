"""Run configuration: one schema-validated JSON document per experiment."""

import hashlib
import json
from pathlib import Path

import jsonschema

from .data import GroupSpec, SynthConfig
from .errors import ConfigError, IoError, SchemaVersionMismatch
from .experiment import ExperimentSettings, ModelEntry
from .training import LossSpec, TrainConfig

CONFIG_VERSION = 1

_pos_int = {"type": "integer", "minimum": 1}
_pos_num = {"type": "number", "exclusiveMinimum": 0}

SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "additionalProperties": False,
    "required": ["version"],
    "properties": {
        "version": {"const": CONFIG_VERSION},
        "seed": {"type": "integer", "minimum": 0},
        "dataset_name": {"type": "string"},
        "synth": {
            "type": "object",
            "additionalProperties": False,
            "required": ["n", "j", "c", "planted_importance"],
            "properties": {
                "n": _pos_int,
                "j": _pos_int,
                "c": {"type": "integer", "minimum": 2},
                "planted_importance": {"type": "array", "items": {"type": "number", "minimum": 0}},
                "noise_scale": {"type": "number", "minimum": 0},
                "seed": {"type": "integer", "minimum": 0},
                "factor_names": {"type": "array", "items": {"type": "string"}},
                "label_column": {"type": "string"},
            },
        },
        "data": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "label_column": {"type": "string"},
                "num_levels": {"type": "integer", "minimum": 2},
            },
        },
        "groups": {
            "type": "array",
            "items": {
                "type": "object",
                "additionalProperties": False,
                "required": ["name", "factor"],
                "properties": {
                    "name": {"type": "string"},
                    "complement": {"type": "string"},
                    "factor": {"type": "string"},
                    "threshold": {"type": "number"},
                    "side": {"enum": ["le", "gt"]},
                    "levels": {"type": "array", "items": {"type": "number"}, "minItems": 1},
                },
                "oneOf": [{"required": ["threshold"]}, {"required": ["levels"]}],
            },
        },
        "models": {
            "type": "array",
            "items": {
                "type": "object",
                "additionalProperties": False,
                "required": ["name", "kind"],
                "properties": {
                    "name": {"type": "string"},
                    "kind": {"enum": ["LR", "MoMLP", "CNN1D", "WideDeep"]},
                    "hidden": {"type": "array", "items": _pos_int},
                    "channels": _pos_int,
                    "kernel": _pos_int,
                    "layers": {"type": "integer", "minimum": 2},
                },
            },
        },
        "train": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "epochs": _pos_int,
                "batch_size": _pos_int,
                "lr": _pos_num,
                "beta1": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                "beta2": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                "eps": _pos_num,
                "weight_decay": {"type": "number", "minimum": 0},
                "seed": {"type": "integer", "minimum": 0},
            },
        },
        "loss": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "weight": {"type": ["number", "null"], "minimum": 0},
                "probe_size": _pos_int,
                "m_train": _pos_int,
                "period": _pos_int,
                "temperature": _pos_num,
                "transform": {"enum": ["log", "linear"]},
            },
        },
        "experiment": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "k": {"type": "integer", "minimum": 2},
                "valid_fraction": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                "attribution": {"enum": ["exact", "sampled"]},
                "permutations": _pos_int,
                "sample_cap": _pos_int,
                "top_k": _pos_int,
            },
        },
        "paths": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "data": {"type": "string"},
                "out": {"type": "string"},
            },
        },
    },
}


def _field_path(error):
    parts = ["$"] + [f"[{p}]" if isinstance(p, int) else f".{p}" for p in error.absolute_path]
    return "".join(parts)


def validate(doc):
    if isinstance(doc, dict) and "version" in doc and doc["version"] != CONFIG_VERSION:
        raise SchemaVersionMismatch(f"config version {doc['version']!r}, expected {CONFIG_VERSION}")
    validator = jsonschema.Draft202012Validator(SCHEMA)
    errors = sorted(validator.iter_errors(doc), key=lambda e: list(e.absolute_path))
    if errors:
        e = errors[0]
        raise ConfigError(f"{_field_path(e)}: {e.message}")
    return doc


class RunConfig:
    def __init__(self, doc, path=None):
        self.doc = validate(doc)
        self.path = path

    @classmethod
    def load(cls, path):
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise IoError(f"cannot read config {path}: {exc}") from None
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON: {exc}") from None
        return cls(doc, path)

    @property
    def digest(self):
        return hashlib.sha256(json.dumps(self.doc, sort_keys=True).encode()).hexdigest()[:16]

    @property
    def seed(self):
        return self.doc.get("seed", 101)

    @property
    def label_column(self):
        return self.doc.get("data", {}).get("label_column",
                                            self.doc.get("synth", {}).get("label_column", "happiness"))

    @property
    def num_levels(self):
        if "num_levels" in self.doc.get("data", {}):
            return self.doc["data"]["num_levels"]
        return self.doc.get("synth", {}).get("c", 5)

    def synth_config(self, seed=None):
        s = self.doc.get("synth")
        if s is None:
            raise ConfigError("$.synth: section required for synth")
        cfg = SynthConfig(n=s["n"], j=s["j"], c=s["c"], planted_importance=s["planted_importance"],
                          noise_scale=s.get("noise_scale", 0.0),
                          seed=s.get("seed", self.seed) if seed is None else seed,
                          factor_names=s.get("factor_names"))
        try:
            cfg.validate()
        except ConfigError as exc:
            raise ConfigError(f"$.synth: {exc}") from None
        return cfg

    def groups(self):
        """List of (name, GroupSpec, complement name or None); empty means the whole table."""
        out = []
        for i, g in enumerate(self.doc.get("groups", [])):
            try:
                spec = GroupSpec.from_dict(g)
            except ConfigError as exc:
                raise ConfigError(f"$.groups[{i}]: {exc}") from None
            out.append((g["name"], spec, g.get("complement")))
        return out

    def model_entries(self):
        entries = []
        for m in self.doc.get("models", []):
            opts = {k: v for k, v in m.items() if k not in ("name", "kind")}
            if "hidden" in opts:
                opts["hidden"] = tuple(opts["hidden"])
            entries.append(ModelEntry(m["name"], m["kind"], opts))
        return entries

    def train_config(self, seed=None):
        t = dict(self.doc.get("train", {}))
        t.setdefault("seed", self.seed)
        if seed is not None:
            t["seed"] = seed
        return TrainConfig(**t)

    def loss_spec(self):
        return LossSpec(**self.doc.get("loss", {}))

    def experiment_settings(self):
        return ExperimentSettings(**self.doc.get("experiment", {}))
