"""Survey-style tabular data: ingestion, group splits, folds, scaling, synthesis.

Labels are 1-based (happiness levels ``1..C``) on every public surface;
``SurveyTable.y0`` exposes the 0-based codes used by models internally.
"""

import csv
import hashlib
import logging
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    EmptyAfterCleaning,
    EmptyGroupWarning,
    InvalidConfig,
    LabelOutOfRange,
    MissingColumn,
    MissingFile,
    NonNumericCell,
    TooFewRows,
    UnknownFactor,
)

log = logging.getLogger(__name__)

MISSING_TOKENS = frozenset({"", "na", "nan", "null", "none", "?"})


@dataclass
class SurveyTable:
    factor_names: list
    rows: np.ndarray
    labels: np.ndarray
    num_levels: int
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.factor_names = [str(n) for n in self.factor_names]
        self.rows = np.asarray(self.rows, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.rows.ndim != 2 or self.rows.shape[1] != len(self.factor_names):
            raise InvalidConfig(
                f"rows must be N x {len(self.factor_names)}, got shape {self.rows.shape}")
        if len(set(self.factor_names)) != len(self.factor_names):
            raise InvalidConfig("factor names must be unique")
        if self.labels.shape != (self.rows.shape[0],):
            raise InvalidConfig("labels must have one entry per row")
        if self.num_levels < 2:
            raise InvalidConfig("num_levels must be >= 2")
        if not np.all(np.isfinite(self.rows)):
            raise InvalidConfig("factor values must be finite")
        if self.labels.size and (self.labels.min() < 1 or self.labels.max() > self.num_levels):
            raise LabelOutOfRange(
                f"labels must lie in 1..{self.num_levels}, "
                f"got range {self.labels.min()}..{self.labels.max()}")

    @property
    def n(self):
        return self.rows.shape[0]

    @property
    def j(self):
        return self.rows.shape[1]

    @property
    def y0(self):
        return self.labels - 1

    def factor_index(self, name):
        try:
            return self.factor_names.index(name)
        except ValueError:
            raise UnknownFactor(f"unknown factor {name!r}") from None

    def take(self, index):
        index = np.asarray(index)
        return SurveyTable(list(self.factor_names), self.rows[index], self.labels[index],
                           self.num_levels, dict(self.meta))

    def label_histogram(self):
        return np.bincount(self.labels, minlength=self.num_levels + 1)[1:]

    def digest(self):
        h = hashlib.sha256()
        h.update("\x1f".join(self.factor_names).encode())
        h.update(np.ascontiguousarray(self.rows, dtype="<f8").tobytes())
        h.update(np.ascontiguousarray(self.labels, dtype="<i8").tobytes())
        h.update(str(self.num_levels).encode())
        return h.hexdigest()


@dataclass(frozen=True)
class GroupSpec:
    """Threshold split (``threshold`` + ``side`` in {"le", "gt"}) or level-set split."""

    factor: str
    threshold: float = None
    side: str = "le"
    levels: tuple = None

    def __post_init__(self):
        if (self.threshold is None) == (self.levels is None):
            raise InvalidConfig("GroupSpec needs exactly one of threshold or levels")
        if self.threshold is not None:
            if not math.isfinite(self.threshold):
                raise InvalidConfig("group threshold must be finite")
            if self.side not in ("le", "gt"):
                raise InvalidConfig(f"group side must be 'le' or 'gt', got {self.side!r}")
        else:
            object.__setattr__(self, "levels", tuple(float(v) for v in self.levels))
            if not self.levels:
                raise InvalidConfig("group level set must be non-empty")

    @classmethod
    def from_dict(cls, d):
        return cls(factor=d["factor"], threshold=d.get("threshold"), side=d.get("side", "le"),
                   levels=d.get("levels"))

    def to_dict(self):
        if self.levels is not None:
            return {"factor": self.factor, "levels": list(self.levels)}
        return {"factor": self.factor, "threshold": self.threshold, "side": self.side}

    def mask(self, values):
        if self.levels is not None:
            return np.isin(values, np.asarray(self.levels))
        if self.side == "le":
            return values <= self.threshold
        return values > self.threshold


@dataclass(frozen=True)
class FoldPlan:
    k: int
    assignments: np.ndarray
    seed: int

    def test_index(self, fold):
        return np.flatnonzero(self.assignments == fold)

    def train_index(self, fold):
        return np.flatnonzero(self.assignments != fold)


@dataclass
class SynthConfig:
    n: int
    j: int
    c: int
    planted_importance: list
    noise_scale: float = 0.0
    seed: int = 101
    factor_names: list = None

    def validate(self):
        if self.j < 1 or self.c < 2:
            raise InvalidConfig("synth needs j >= 1 and c >= 2")
        if self.n < self.c:
            raise InvalidConfig(f"synth needs n >= c so every class appears (n={self.n}, c={self.c})")
        w = np.asarray(self.planted_importance, dtype=np.float64)
        if w.shape != (self.j,):
            raise InvalidConfig(f"planted_importance must have {self.j} entries")
        if np.any(w < 0) or not np.all(np.isfinite(w)):
            raise InvalidConfig("planted_importance entries must be finite and non-negative")
        if abs(w.sum() - 1.0) > 1e-9:
            raise InvalidConfig(f"planted_importance must sum to 1 (sums to {w.sum():.6g})")
        if not self.noise_scale >= 0:
            raise InvalidConfig("noise_scale must be >= 0")
        if self.seed < 0:
            raise InvalidConfig("seed must be non-negative")
        if self.factor_names is not None and len(self.factor_names) != self.j:
            raise InvalidConfig("factor_names must have j entries")


def load_csv(path, label_column, num_levels):
    path = Path(path)
    if not path.is_file():
        raise MissingFile(f"no such file: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        lines = (line for line in fh if not line.startswith("#"))
        reader = csv.reader(lines)
        header = next(reader, None)
        if header is None:
            raise EmptyAfterCleaning(f"{path} has no header row")
        header = [h.strip() for h in header]
        if label_column not in header:
            raise MissingColumn(f"label column {label_column!r} not in header of {path}")
        label_pos = header.index(label_column)
        names = [h for i, h in enumerate(header) if i != label_pos]

        rows, labels = [], []
        dropped = 0
        for line_no, record in enumerate(reader, start=1):
            if not record:
                continue
            if len(record) != len(header):
                raise MissingColumn(
                    f"row {line_no} has {len(record)} cells, header has {len(header)}")
            cells = [c.strip() for c in record]
            if any(c.lower() in MISSING_TOKENS for c in cells):
                dropped += 1
                continue
            values = []
            for i, cell in enumerate(cells):
                try:
                    v = float(cell)
                except ValueError:
                    raise NonNumericCell(line_no, header[i], cell) from None
                if not math.isfinite(v):
                    raise NonNumericCell(line_no, header[i], cell)
                values.append(v)
            lab = values.pop(label_pos)
            if lab != int(lab) or not 1 <= lab <= num_levels:
                raise LabelOutOfRange(f"row {line_no}: label {cell_repr(lab)} outside 1..{num_levels}")
            labels.append(int(lab))
            rows.append(values)

    if dropped:
        log.warning("dropped %d row(s) with missing values from %s", dropped, path)
    if not rows:
        raise EmptyAfterCleaning(f"{path} has no usable rows after cleaning")
    return SurveyTable(names, np.array(rows, dtype=np.float64).reshape(len(rows), len(names)),
                       np.array(labels), num_levels, {"dropped_rows": dropped, "source": str(path)})


def cell_repr(v):
    return str(int(v)) if v == int(v) else repr(v)


def write_csv(table, path, label_column="happiness", header_lines=()):
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(table.factor_names) + [label_column])
        for row, lab in zip(table.rows, table.labels):
            w.writerow([repr(float(v)) for v in row] + [int(lab)])


def split_group(table, spec):
    col = table.factor_index(spec.factor)
    inside = spec.mask(table.rows[:, col])
    in_group, out_group = table.take(np.flatnonzero(inside)), table.take(np.flatnonzero(~inside))
    if in_group.n == 0 or out_group.n == 0:
        warnings.warn(f"group split on {spec.factor!r} leaves one side empty", EmptyGroupWarning,
                      stacklevel=2)
    return in_group, out_group


def kfold_split(table, k, seed):
    n = table.n if isinstance(table, SurveyTable) else int(table)
    if k < 2:
        raise TooFewRows(f"k must be >= 2, got {k}")
    if n < k:
        raise TooFewRows(f"need at least k={k} rows, got {n}")
    order = np.random.default_rng(seed).permutation(n)
    assignments = np.empty(n, dtype=np.int64)
    assignments[order] = np.arange(n) % k
    return FoldPlan(k, assignments, seed)


def standardize(table, stats=None):
    """Return (scaled table, stats). ``stats`` = (mean, std, constant_flags).

    Pass ``stats`` from a training split to apply the same mapping elsewhere.
    Population standard deviation is used.
    """
    if stats is None:
        mean = table.rows.mean(axis=0)
        std = table.rows.std(axis=0)
        constant = std == 0.0
        stats = (mean, np.where(constant, 1.0, std), constant)
    mean, std, constant = stats
    scaled = (table.rows - mean) / std
    scaled[:, constant] = 0.0
    out = SurveyTable(list(table.factor_names), scaled, table.labels.copy(), table.num_levels,
                      dict(table.meta))
    return out, stats


def synth_generate(config):
    config.validate()
    rng = np.random.default_rng(config.seed)
    w = np.asarray(config.planted_importance, dtype=np.float64)
    x = rng.standard_normal((config.n, config.j))
    eps = rng.standard_normal(config.n)
    score = x @ w + config.noise_scale * eps
    # rank-based quantile binning keeps the label marginal near-uniform
    ranks = np.empty(config.n, dtype=np.int64)
    ranks[np.argsort(score, kind="stable")] = np.arange(config.n)
    labels = ranks * config.c // config.n + 1
    names = config.factor_names or [f"x{i + 1}" for i in range(config.j)]
    order = sorted(range(config.j), key=lambda i: (-w[i], i))
    meta = {
        "planted_importance": w.tolist(),
        "planted_ranking": order,
        "noise_scale": config.noise_scale,
        "seed": config.seed,
    }
    return SurveyTable(names, x, labels, config.c, meta)
