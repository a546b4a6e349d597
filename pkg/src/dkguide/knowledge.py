"""Fusing per-model factor importance into a shared domain-knowledge artifact."""

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .attribution import rank_factors
from .errors import (
    CorruptArtifact,
    DimensionMismatch,
    EmptySourceSet,
    InvalidK,
    IoError,
    SchemaVersionMismatch,
)

KNOWLEDGE_VERSION = 1
TRANSFORMS = ("log", "linear")
LOG_FLOOR = 1e-12


def transform_importance(exp, transform="log", with_grad=False):
    """Map importance scores to softmax logits: ``log(exp + 1e-12)`` or identity.

    The log map makes the resulting distribution invariant to the overall scale
    of the importance vector; it requires non-negative scores.
    """
    exp = np.asarray(exp, dtype=np.float64)
    if transform == "log":
        if np.any(exp < 0):
            raise ValueError("log transform needs non-negative importance scores")
        out, grad = np.log(exp + LOG_FLOOR), 1.0 / (exp + LOG_FLOOR)
    elif transform == "linear":
        out, grad = exp, np.ones_like(exp)
    else:
        raise ValueError(f"unknown importance transform {transform!r}")
    return (out, grad) if with_grad else out


@dataclass
class DomainKnowledge:
    factor_names: list
    exp: np.ndarray
    dist: np.ndarray
    lambdas: np.ndarray
    sources: list  # [{"id": str, "exp": [...]}]
    k: int
    s_pri: list
    s_sec: list
    temperature: float = 1.0
    transform: str = "log"
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        self.exp = np.asarray(self.exp, dtype=np.float64)
        self.dist = np.asarray(self.dist, dtype=np.float64)
        self.lambdas = np.asarray(self.lambdas, dtype=np.float64)
        j = len(self.factor_names)
        if self.exp.shape != (j,) or self.dist.shape != (j,):
            raise DimensionMismatch("exp and dist must have one entry per factor")
        if not self.sources or len(self.sources) != self.lambdas.size:
            raise EmptySourceSet("knowledge needs >= 1 source with one lambda each")
        if set(self.s_pri) & set(self.s_sec):
            raise InvalidK("primary and secondary factor sets overlap")

    def __eq__(self, other):
        if not isinstance(other, DomainKnowledge):
            return NotImplemented
        return self.to_dict() == other.to_dict()

    def to_dict(self):
        return {
            "version": KNOWLEDGE_VERSION,
            "factor_names": list(self.factor_names),
            "exp": self.exp.tolist(),
            "dist": self.dist.tolist(),
            "temperature": float(self.temperature),
            "transform": self.transform,
            "lambdas": self.lambdas.tolist(),
            "sources": [{"id": s["id"], "exp": [float(v) for v in s["exp"]]} for s in self.sources],
            "k": int(self.k),
            "s_pri": sorted(int(i) for i in self.s_pri),
            "s_sec": sorted(int(i) for i in self.s_sec),
            "provenance": self.provenance,
        }

    @classmethod
    def from_dict(cls, d):
        if d.get("version") != KNOWLEDGE_VERSION:
            raise SchemaVersionMismatch(f"knowledge artifact version {d.get('version')!r}, "
                                        f"expected {KNOWLEDGE_VERSION}")
        try:
            return cls(
                factor_names=list(d["factor_names"]),
                exp=d["exp"], dist=d["dist"], lambdas=d["lambdas"],
                sources=[{"id": s["id"], "exp": list(s["exp"])} for s in d["sources"]],
                k=int(d["k"]), s_pri=list(d["s_pri"]), s_sec=list(d["s_sec"]),
                temperature=float(d.get("temperature", 1.0)),
                transform=d.get("transform", "log"),
                provenance=d.get("provenance", {}),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise CorruptArtifact(f"malformed knowledge artifact: {exc!r}") from None


def combine_importance(exp_vectors, lambdas):
    """Exp = (1/|F|) * sum_f lambda_f * exp_f, with no renormalisation of the lambdas."""
    exp_vectors = np.asarray(exp_vectors, dtype=np.float64)
    lambdas = np.asarray(lambdas, dtype=np.float64)
    if exp_vectors.size == 0 or lambdas.size == 0:
        raise EmptySourceSet("need at least one importance source")
    if exp_vectors.ndim != 2 or lambdas.shape != (exp_vectors.shape[0],):
        raise DimensionMismatch(
            f"expected |F| x J vectors and |F| lambdas, got {exp_vectors.shape} and {lambdas.shape}")
    if np.any(lambdas < 0) or np.any(lambdas > 1):
        raise ValueError("lambdas must lie in [0, 1]")
    return (lambdas @ exp_vectors) / exp_vectors.shape[0]


def normalize_distribution(exp, temperature=1.0):
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    z = np.asarray(exp, dtype=np.float64) / temperature
    z = z - z.max()
    e = np.exp(z)
    # keep every entry strictly positive even when exp() underflows
    return np.maximum(e / e.sum(), np.finfo(np.float64).tiny)


def extract_primary_secondary(rankings, k):
    if not rankings:
        raise EmptySourceSet("need at least one ranking")
    j = rankings[0].order.size
    if not 1 <= k <= j // 2:
        raise InvalidK(f"k must satisfy 1 <= k <= J/2 = {j // 2}, got {k}")
    if any(r.order.size != j for r in rankings):
        raise DimensionMismatch("rankings disagree on the number of factors")
    s_pri = set.intersection(*(r.top(k) for r in rankings))
    s_sec = set.intersection(*(r.bottom(k) for r in rankings))
    return sorted(s_pri), sorted(s_sec)


def build_knowledge(factor_names, source_ids, exp_vectors, lambdas, k, temperature=1.0,
                    transform="log", provenance=None):
    exp = combine_importance(exp_vectors, lambdas)
    rankings = [rank_factors(v) for v in np.asarray(exp_vectors, dtype=np.float64)]
    s_pri, s_sec = extract_primary_secondary(rankings, k)
    return DomainKnowledge(
        factor_names=list(factor_names),
        exp=exp,
        dist=normalize_distribution(transform_importance(exp, transform), temperature),
        lambdas=np.asarray(lambdas, dtype=np.float64),
        sources=[{"id": str(s), "exp": list(map(float, v))} for s, v in zip(source_ids, exp_vectors)],
        k=k, s_pri=s_pri, s_sec=s_sec, temperature=temperature, transform=transform,
        provenance=provenance or {},
    )


def save_knowledge(dk, path):
    try:
        Path(path).write_text(json.dumps(dk.to_dict(), indent=1) + "\n", encoding="utf-8")
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from None


def load_knowledge(path):
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from None
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CorruptArtifact(f"{path}: {exc}") from None
    if not isinstance(doc, dict):
        raise CorruptArtifact(f"{path}: expected a JSON object")
    return DomainKnowledge.from_dict(doc)
