"""Shapley attributions against a coalition value oracle.

A value oracle maps coalition masks (``K x J`` booleans, ``True`` = factor
present) to scalar payoffs. :class:`ModelOracle` realises the payoff as the
model's class probability on the instance with absent factors replaced by a
background vector; :class:`TableGame` and :class:`FunctionGame` wrap arbitrary
set functions, which is what the axiom tests use.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .errors import DimensionMismatch, OracleFailure, TooManyFactors
from .models import predict_proba

MAX_EXACT_FACTORS = 20
_CHUNK = 1 << 15


class ModelOracle:
    """v(S) = target probability of ``model`` on ``where(S, x, background)``.

    ``target`` is ``"predicted"`` (class predicted at the full input, fixed for
    all coalitions of that instance) or a 0-based class index.
    """

    def __init__(self, model, background, target="predicted"):
        self.model = model
        self.background = np.asarray(background, dtype=np.float64)
        if self.background.shape != (model.spec.input_dim,):
            raise DimensionMismatch("background must have one value per factor")
        if not np.all(np.isfinite(self.background)):
            raise OracleFailure("background must be finite")
        if target != "predicted" and not 0 <= int(target) < model.spec.num_classes:
            raise DimensionMismatch(f"target class {target} out of range")
        self.target = target
        self.n_players = model.spec.input_dim

    def target_class(self, x):
        if self.target == "predicted":
            return int(np.argmax(predict_proba(self.model, x)))
        return int(self.target)

    def bind(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.shape != (self.n_players,):
            raise DimensionMismatch(f"expected a {self.n_players}-vector, got shape {x.shape}")
        cls = self.target_class(x)
        b = self.background

        def values(masks):
            out = np.empty(masks.shape[0])
            for lo in range(0, masks.shape[0], _CHUNK):
                m = masks[lo:lo + _CHUNK]
                out[lo:lo + _CHUNK] = predict_proba(self.model, np.where(m, x, b))[:, cls]
            return out

        return values


class TableGame:
    """Set function given as a table indexed by coalition bitmask (bit j = factor j)."""

    def __init__(self, table):
        self.table = np.asarray(table, dtype=np.float64)
        n = int(round(math.log2(self.table.size)))
        if self.table.size != 1 << n:
            raise DimensionMismatch("table length must be a power of two")
        self.n_players = n
        self._pow = (1 << np.arange(n, dtype=np.int64))

    def bind(self, x=None):
        def values(masks):
            return self.table[masks.astype(np.int64) @ self._pow]
        return values


class FunctionGame:
    def __init__(self, fn, n_players):
        self.fn = fn
        self.n_players = n_players

    def bind(self, x=None):
        return self.fn


@dataclass
class AttributionVector:
    base: float
    phi: np.ndarray
    full_value: float
    method: str = "exact"
    permutations: int = 0
    seed: int = None
    stderr: np.ndarray = None
    row_index: int = None

    @property
    def efficiency_residual(self):
        return abs(self.base + float(np.sum(self.phi)) - self.full_value)

    def to_dict(self):
        d = {
            "row_index": self.row_index,
            "base": self.base,
            "phi": [float(v) for v in self.phi],
            "method": self.method if self.method == "exact" else f"sampled({self.permutations})",
            "stderr": None if self.stderr is None else [float(v) for v in self.stderr],
        }
        return d


@dataclass
class FactorRanking:
    order: np.ndarray
    scores: np.ndarray
    ties: list = field(default_factory=list)

    @property
    def positions(self):
        pos = np.empty_like(self.order)
        pos[self.order] = np.arange(self.order.size)
        return pos

    def top(self, k):
        return set(int(i) for i in self.order[:k])

    def bottom(self, k):
        return set(int(i) for i in self.order[-k:]) if k else set()


def _evaluate(values_fn, masks, expected):
    try:
        v = np.asarray(values_fn(masks), dtype=np.float64).reshape(-1)
    except OracleFailure:
        raise
    except Exception as exc:
        raise OracleFailure(f"oracle raised {type(exc).__name__}: {exc}") from exc
    if v.shape != (expected,):
        raise OracleFailure(f"oracle returned {v.shape} values for {expected} coalitions")
    if not np.all(np.isfinite(v)):
        raise OracleFailure("oracle returned non-finite values")
    return v


def all_coalitions(n_players):
    idx = np.arange(1 << n_players, dtype=np.int64)
    return ((idx[:, None] >> np.arange(n_players, dtype=np.int64)) & 1).astype(bool)


def shapley_weights(n_players):
    # |S|! (J - |S| - 1)! / J!  ==  1 / (J * C(J-1, |S|))
    return np.array([1.0 / (n_players * math.comb(n_players - 1, s)) for s in range(n_players)])


def shapley_exact(oracle, x=None):
    n = oracle.n_players
    if n > MAX_EXACT_FACTORS:
        raise TooManyFactors(f"exact enumeration needs J <= {MAX_EXACT_FACTORS}, got {n}")
    values = _evaluate(oracle.bind(x), all_coalitions(n), 1 << n)
    phi = _kernels.active.shapley_from_table(values, n, shapley_weights(n))
    return AttributionVector(float(values[0]), np.asarray(phi), float(values[-1]), "exact")


def random_permutations(n_players, m, rng):
    return rng.permuted(np.tile(np.arange(n_players, dtype=np.int64), (m, 1)), axis=1)


def shapley_sampled(oracle, x=None, m=1000, seed=0, permutations=None):
    """Permutation-sampling estimate; pass ``permutations`` (M x J) to fix the sample."""
    n = oracle.n_players
    if permutations is None:
        if m < 1:
            raise ValueError("need at least one permutation")
        permutations = random_permutations(n, m, np.random.default_rng(seed))
    perms = np.asarray(permutations, dtype=np.int64)
    m = perms.shape[0]
    masks = _kernels.active.prefix_masks(perms).reshape(m * (n + 1), n)
    values = _evaluate(oracle.bind(x), masks, m * (n + 1)).reshape(m, n + 1)
    contrib = _kernels.active.permutation_marginals(values, perms)
    phi = contrib.mean(axis=0)
    if m > 1:
        stderr = contrib.std(axis=0, ddof=1) / math.sqrt(m)
    else:
        stderr = np.zeros(n)
    return AttributionVector(float(values[0, 0]), phi, float(values[0, -1]), "sampled", m, seed,
                             stderr)


def row_rng(seed, row_index):
    return np.random.default_rng([int(seed), int(row_index)])


def subsample_rows(n_rows, cap, seed):
    if cap is None or n_rows <= cap:
        return np.arange(n_rows)
    return np.sort(np.random.default_rng([int(seed), 0x5A]).choice(n_rows, cap, replace=False))


def attribute_rows(oracle, rows, method="exact", m=256, seed=0, row_indices=None):
    """Attributions for each row; sampled mode seeds every row from (seed, row index)."""
    rows = np.asarray(rows, dtype=np.float64)
    if row_indices is None:
        row_indices = range(rows.shape[0])
    out = []
    for i, x in zip(row_indices, rows):
        if method == "exact":
            a = shapley_exact(oracle, x)
        else:
            perms = random_permutations(oracle.n_players, m, row_rng(seed, i))
            a = shapley_sampled(oracle, x, permutations=perms)
            a.seed = seed
        a.row_index = int(i)
        out.append(a)
    return out


def group_importance(oracle_factory, table, sample_cap=None, m=256, seed=0, method="sampled"):
    """Mean absolute attribution per factor over (a deterministic subsample of) the table.

    ``oracle_factory`` is either a value oracle or a callable ``table -> oracle``
    (e.g. to set the background from the group's factor means).
    """
    if table.n == 0:
        raise DimensionMismatch("group_importance needs a non-empty table")
    oracle = oracle_factory(table) if callable(oracle_factory) else oracle_factory
    idx = subsample_rows(table.n, sample_cap, seed)
    attrs = attribute_rows(oracle, table.rows[idx], method, m, seed, idx)
    return np.mean(np.abs(np.stack([a.phi for a in attrs])), axis=0)


def mean_background_factory(model, target="predicted"):
    def factory(table):
        return ModelOracle(model, table.rows.mean(axis=0), target)
    return factory


def rank_factors(scores):
    scores = np.asarray(scores, dtype=np.float64)
    if not np.all(np.isfinite(scores)):
        raise ValueError("scores must be finite")
    idx = np.arange(scores.size)
    order = np.lexsort((idx, -scores))
    ties = []
    for value in np.unique(scores):
        members = idx[scores == value]
        if members.size > 1:
            ties.append([int(i) for i in members])
    ties.sort()
    return FactorRanking(order.astype(np.int64), scores.copy(), ties)
