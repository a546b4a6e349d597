"""Label and explanation losses, Adam, and the (optionally knowledge-guided) training loop.

The explanation term compares a model's attribution distribution on a fixed
probe subset against the knowledge distribution. The probe attribution is the
mean absolute permutation-sampled Shapley value per factor; every marginal
contribution is a difference of model outputs, so it is differentiable in the
parameters once the permutations are frozen.
"""

import csv
import logging
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import _kernels
from .attribution import random_permutations
from .knowledge import TRANSFORMS, transform_importance
from .errors import (
    DimensionMismatch,
    EmptySplit,
    FactorMismatch,
    InvalidConfig,
    NonFiniteGradient,
    NonFiniteLoss,
)
from .metrics import confusion_counts, micro_f1
from .models import backward, forward_with_cache, loss_and_grad, predict, softmax

log = logging.getLogger(__name__)

PROB_FLOOR = 1e-12


@dataclass
class LossSpec:
    mode: str = "label_only"
    weight: float = None  # None: model's label-only validation Micro-F1
    probe_size: int = 32
    m_train: int = 8
    period: int = 1
    temperature: float = 1.0
    transform: str = "log"

    def __post_init__(self):
        if self.mode not in ("label_only", "joint"):
            raise InvalidConfig(f"loss mode must be 'label_only' or 'joint', got {self.mode!r}")
        if self.weight is not None and self.weight < 0:
            raise InvalidConfig("explanation weight must be >= 0")
        if self.probe_size < 1 or self.m_train < 1 or self.period < 1:
            raise InvalidConfig("probe_size, m_train and period must be >= 1")
        if not self.temperature > 0:
            raise InvalidConfig("temperature must be > 0")
        if self.transform not in TRANSFORMS:
            raise InvalidConfig(f"transform must be one of {TRANSFORMS}, got {self.transform!r}")


@dataclass
class TrainConfig:
    epochs: int = 100
    batch_size: int = 128
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 1e-4
    seed: int = 101

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise InvalidConfig("epochs and batch_size must be positive")
        if not (self.lr > 0 and self.eps > 0 and self.weight_decay >= 0):
            raise InvalidConfig("lr and eps must be positive, weight_decay non-negative")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise InvalidConfig("Adam betas must lie in (0, 1)")


def cross_entropy_loss(probas, labels0):
    probas = np.asarray(probas, dtype=np.float64)
    labels0 = np.asarray(labels0, dtype=np.int64)
    if probas.ndim != 2 or labels0.shape != (probas.shape[0],):
        raise DimensionMismatch("expected N x C probabilities and N labels")
    p = probas[np.arange(labels0.size), labels0]
    return float(-np.mean(np.log(np.maximum(p, PROB_FLOOR))))


def explanation_kl_loss(model_dist, reference_dist):
    """KL(reference || model), both clamped below at 1e-12."""
    m = np.asarray(model_dist, dtype=np.float64)
    r = np.asarray(reference_dist, dtype=np.float64)
    if m.shape != r.shape:
        raise DimensionMismatch(f"distributions have shapes {m.shape} and {r.shape}")
    r = np.maximum(r, PROB_FLOOR)
    m = np.maximum(m, PROB_FLOOR)
    return float(np.sum(r * (np.log(r) - np.log(m))))


def probe_attribution(model, probe_x, perms, background):
    """Mean |phi_j| over probe rows, plus a closure mapping d(loss)/d(attr) to d(loss)/d(theta).

    ``perms`` has shape (P, M, J): M frozen permutations per probe row.
    """
    p_rows, m, j = perms.shape
    logits_full, _ = forward_with_cache(model, probe_x)
    target = np.argmax(logits_full, axis=1)
    flat_perms = perms.reshape(p_rows * m, j)
    masks = _kernels.active.prefix_masks(flat_perms).reshape(p_rows, m, j + 1, j)
    z = np.where(masks, probe_x[:, None, None, :], background).reshape(-1, j)
    logits, cache = forward_with_cache(model, z)
    probs = softmax(logits)
    tgt = np.repeat(target, m * (j + 1))
    rows = np.arange(tgt.size)
    p_t = probs[rows, tgt]
    contrib = _kernels.active.permutation_marginals(p_t.reshape(p_rows * m, j + 1), flat_perms)
    phi = contrib.reshape(p_rows, m, j).mean(axis=1)
    attr = np.abs(phi).mean(axis=0)

    def pullback(d_attr):
        d_phi = np.sign(phi) * d_attr[None, :] / p_rows
        d_contrib = np.repeat(d_phi[:, None, :] / m, m, axis=1).reshape(p_rows * m, j)
        d_v = _kernels.active.scatter_marginal_grad(d_contrib, flat_perms).reshape(-1)
        d_logits = -probs * (d_v * p_t)[:, None]
        d_logits[rows, tgt] += d_v * p_t
        return backward(model, cache, d_logits)

    return attr, pullback


def _explanation_term(model, probe_x, perms, background, reference, temperature, transform):
    attr, pullback = probe_attribution(model, probe_x, perms, background)
    t, dt = transform_importance(attr, transform, with_grad=True)
    z = t / temperature
    log_m = z - z.max()
    log_m -= np.log(np.exp(log_m).sum())
    r = np.maximum(reference, PROB_FLOOR)
    kl = float(np.sum(r * (np.log(r) - log_m)))
    d_attr = (np.exp(log_m) * r.sum() - r) * dt / temperature
    return kl, pullback, d_attr


def joint_loss(model, x, labels0, probe_x, perms, dk, spec, background=None):
    """L = L_label + weight * KL(dk.dist || softmax(t(probe_attr) / T)); returns (L, grad, parts).

    ``t`` is the importance transform named by ``spec.transform``.
    """
    if dk is not None and len(dk.factor_names) != model.spec.input_dim:
        raise FactorMismatch("knowledge factor count differs from model input size")
    l_label, g_label = loss_and_grad(model, x, labels0)
    weight = spec.weight or 0.0
    if dk is None or spec.mode != "joint":
        return l_label, g_label, {"l_label": l_label, "l_exp": 0.0}
    if background is None:
        background = np.zeros(model.spec.input_dim)
    kl, pullback, d_attr = _explanation_term(model, probe_x, perms, background, dk.dist,
                                             spec.temperature, spec.transform)
    total = l_label + weight * kl
    if weight == 0.0:
        return total, g_label, {"l_label": l_label, "l_exp": kl}
    return total, g_label + weight * pullback(d_attr), {"l_label": l_label, "l_exp": kl}


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros(cls, size):
        return cls(np.zeros(size), np.zeros(size), 0)


def adam_step(theta, grad, state, config):
    """Adam with bias correction plus decoupled weight decay; returns (theta, state)."""
    if grad.shape != theta.shape:
        raise DimensionMismatch("gradient and parameters differ in shape")
    if not np.all(np.isfinite(grad)):
        raise NonFiniteGradient(f"non-finite gradient at step {state.t + 1}")
    t = state.t + 1
    m = config.beta1 * state.m + (1 - config.beta1) * grad
    v = config.beta2 * state.v + (1 - config.beta2) * grad * grad
    m_hat = m / (1 - config.beta1 ** t)
    v_hat = v / (1 - config.beta2 ** t)
    new = theta - config.lr * m_hat / (np.sqrt(v_hat) + config.eps)
    if config.weight_decay:
        new = new - config.lr * config.weight_decay * theta
    return new, AdamState(m, v, t)


def evaluate_micro_f1(model, table):
    pred = predict(model, table.rows)
    return micro_f1(confusion_counts(table.y0, pred, table.num_levels))


@dataclass
class TrainResult:
    model: object
    history: list = field(default_factory=list)
    loss_weight: float = 0.0


def _check_factors(dk, table):
    if dk is not None and list(dk.factor_names) != list(table.factor_names):
        raise FactorMismatch(
            f"knowledge factors {dk.factor_names} do not match data factors {table.factor_names}")


def train(model, train_table, valid_table=None, dk=None, loss=None, config=None, background=None):
    """Minibatch Adam on the label (and optionally explanation) loss.

    Randomness comes from three independent streams derived from ``config.seed``:
    minibatch shuffling, probe selection and permutation sampling. Label-only
    training therefore consumes exactly the same shuffles as joint training.
    """
    loss = loss or LossSpec()
    config = config or TrainConfig()
    if train_table.n == 0:
        raise EmptySplit("training split is empty")
    if valid_table is not None and valid_table.n == 0:
        raise EmptySplit("validation split is empty")
    joint = loss.mode == "joint"
    if joint and dk is None:
        raise InvalidConfig("joint mode needs a domain-knowledge artifact")
    _check_factors(dk, train_table)
    if train_table.j != model.spec.input_dim:
        raise DimensionMismatch("training table width differs from model input size")

    weight = loss.weight
    if joint and weight is None:
        pre = train(model, train_table, valid_table, None, replace(loss, mode="label_only"), config)
        weight = evaluate_micro_f1(pre.model, valid_table if valid_table is not None else train_table)
        log.info("explanation weight from label-only validation Micro-F1: %.4f", weight)
    weight = float(weight or 0.0)
    spec = replace(loss, weight=weight)

    model = model.copy()
    x_all, y_all = train_table.rows, train_table.y0
    n = train_table.n
    shuffle_rng = np.random.default_rng([config.seed, 0])
    probe_rng = np.random.default_rng([config.seed, 1])
    perm_rng = np.random.default_rng([config.seed, 2])
    if background is None:
        background = x_all.mean(axis=0)
    probe_x = perms = None
    if joint:
        probe_idx = np.sort(probe_rng.choice(n, min(spec.probe_size, n), replace=False))
        probe_x = x_all[probe_idx]

    state = AdamState.zeros(model.size)
    history = []
    for epoch in range(config.epochs):
        if joint and epoch % spec.period == 0:
            perms = random_permutations(model.spec.input_dim, probe_x.shape[0] * spec.m_train,
                                        perm_rng).reshape(probe_x.shape[0], spec.m_train, -1)
        order = shuffle_rng.permutation(n)
        label_losses, exp_losses = [], []
        for lo in range(0, n, config.batch_size):
            idx = order[lo:lo + config.batch_size]
            if joint and weight > 0:
                total, grad, parts = joint_loss(model, x_all[idx], y_all[idx], probe_x, perms, dk,
                                                spec, background)
                exp_losses.append(parts["l_exp"])
            else:
                total, grad = loss_and_grad(model, x_all[idx], y_all[idx])
                parts = {"l_label": total}
            if not np.isfinite(total):
                raise NonFiniteLoss(f"loss became {total} at epoch {epoch}, batch starting {lo}")
            label_losses.append(parts["l_label"])
            model.theta, state = adam_step(model.theta, grad, state, config)
        if joint and weight == 0.0:
            kl, _, _ = _explanation_term(model, probe_x, perms, background, dk.dist,
                                         spec.temperature, spec.transform)
            exp_losses.append(kl)
        row = {
            "epoch": epoch + 1,
            "l_label": float(np.mean(label_losses)),
            "l_exp": float(np.mean(exp_losses)) if exp_losses else 0.0,
            "val_micro_f1": (evaluate_micro_f1(model, valid_table)
                             if valid_table is not None else float("nan")),
        }
        if not (np.isfinite(row["l_label"]) and np.isfinite(row["l_exp"])):
            raise NonFiniteLoss(f"non-finite epoch loss: {row}")
        history.append(row)

    model.log = {
        "epochs": config.epochs,
        "mode": loss.mode,
        "loss_weight": weight,
        "final_l_label": history[-1]["l_label"],
        "final_l_exp": history[-1]["l_exp"],
        "train_config": asdict(config),
    }
    return TrainResult(model, history, weight)


HISTORY_COLUMNS = ("epoch", "l_label", "l_exp", "val_micro_f1")


def write_history_csv(history, path, header_lines=()):
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(HISTORY_COLUMNS)
        for row in history:
            w.writerow([row["epoch"]] + [repr(float(row[c])) for c in HISTORY_COLUMNS[1:]])
