"""k-fold with/without-knowledge experiment driver and its report format."""

import csv
import hashlib
import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import __version__, _kernels
from .attribution import ModelOracle, group_importance, rank_factors
from .data import kfold_split, split_group, standardize
from .errors import DKError, InvalidConfig, SchemaVersionMismatch, StageError
from .knowledge import build_knowledge
from .metrics import confusion_counts, macro_f1, micro_f1, pairwise_consistency, stability_summary
from .models import ClassifierSpec, build_model, predict
from .training import LossSpec, TrainConfig, evaluate_micro_f1, train

REPORT_VERSION = 1
CONDITIONS = ("without_dk", "with_dk")
THREADS_ENV = "DKGUIDE_THREADS"


@dataclass
class ModelEntry:
    name: str
    kind: str
    options: dict = field(default_factory=dict)

    def spec(self, input_dim, num_classes, seed):
        return ClassifierSpec(self.kind, input_dim, num_classes, seed=seed, **self.options)


@dataclass
class ExperimentSettings:
    k: int = 5
    valid_fraction: float = 0.2
    attribution: str = "exact"
    permutations: int = 64
    sample_cap: int = 200
    top_k: int = 2

    def __post_init__(self):
        if self.attribution not in ("exact", "sampled"):
            raise InvalidConfig("attribution must be 'exact' or 'sampled'")
        if not 0 < self.valid_fraction < 1:
            raise InvalidConfig("valid_fraction must lie in (0, 1)")


@dataclass
class ExperimentReport:
    dataset: str
    group: str
    models: list
    k: int
    conditions: dict
    folds: list
    provenance: dict

    def to_dict(self):
        return {"version": REPORT_VERSION, **asdict(self)}

    def to_json(self):
        return json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, d):
        if d.get("version") != REPORT_VERSION:
            raise SchemaVersionMismatch(f"report version {d.get('version')!r}")
        d = dict(d)
        d.pop("version")
        return cls(**d)

    def mean_tau(self, condition):
        return self.conditions[condition]["mean_tau"]

    def mean_metric(self, condition, metric="micro_f1"):
        per = self.conditions[condition]["per_model"]
        return float(np.mean([per[m][f"mean_{metric}"] for m in self.models]))

    def mean_iqr(self, condition, metric="micro_f1"):
        per = self.conditions[condition]["per_model"]
        return float(np.mean([per[m]["stability"][metric]["q3"] - per[m]["stability"][metric]["q1"]
                              for m in self.models]))


def derive_seed(*parts):
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(1)[0])


def config_hash(obj):
    return hashlib.sha256(json.dumps(obj, sort_keys=True).encode()).hexdigest()[:16]


def _stage(fold, stage, fn, model=None):
    try:
        return fn()
    except DKError as exc:
        raise StageError(fold, stage, exc, model) from exc


def _importance(model, table, background, settings, seed):
    oracle = ModelOracle(model, background)
    return group_importance(oracle, table, settings.sample_cap, settings.permutations, seed,
                            settings.attribution)


def _evaluate(model, test):
    counts = confusion_counts(test.y0, predict(model, test.rows), test.num_levels)
    return macro_f1(counts), micro_f1(counts)


def run_fold(table, plan, fold, model_entries, train_config, loss_spec, settings, seed):
    test = table.take(plan.test_index(fold))
    rest = table.take(plan.train_index(fold))
    order = np.random.default_rng([seed, fold, 7]).permutation(rest.n)
    n_valid = max(1, int(round(settings.valid_fraction * rest.n)))
    valid, fit = rest.take(np.sort(order[:n_valid])), rest.take(np.sort(order[n_valid:]))
    fit, stats = standardize(fit)
    valid, _ = standardize(valid, stats)
    test, _ = standardize(test, stats)
    background = fit.rows.mean(axis=0)

    label_loss = replace(loss_spec, mode="label_only")
    base_models, lambdas, exps, inits, cfgs = [], [], [], [], []
    for idx, entry in enumerate(model_entries):
        init = _stage(fold, "build", lambda: build_model(
            entry.spec(table.j, table.num_levels, derive_seed(seed, fold, idx, 1))), entry.name)
        cfg = replace(train_config, seed=derive_seed(seed, fold, idx, 2))
        res = _stage(fold, "train_label_only",
                     lambda: train(init, fit, valid, None, label_loss, cfg, background), entry.name)
        lam = evaluate_micro_f1(res.model, valid)
        # importance seeds omit the model index: every model is scored on the same rows
        exp = _stage(fold, "importance_fit", lambda: _importance(
            res.model, fit, background, settings, derive_seed(seed, fold, 3)), entry.name)
        inits.append(init)
        cfgs.append(cfg)
        base_models.append(res.model)
        lambdas.append(lam)
        exps.append(exp)

    dk = _stage(fold, "knowledge", lambda: build_knowledge(
        table.factor_names, [e.name for e in model_entries], exps, lambdas, settings.top_k,
        loss_spec.temperature, loss_spec.transform))

    dk_models = []
    for idx, entry in enumerate(model_entries):
        spec = replace(loss_spec, mode="joint",
                       weight=lambdas[idx] if loss_spec.weight is None else loss_spec.weight)
        res = _stage(fold, "train_joint", lambda: train(
            inits[idx], fit, valid, dk, spec, cfgs[idx], background), entry.name)
        dk_models.append(res.model)

    out = {"fold": fold, "lambdas": [float(v) for v in lambdas], "dk_exp": dk.exp.tolist(),
           "dk_dist": dk.dist.tolist(), "s_pri": dk.s_pri, "s_sec": dk.s_sec,
           "n_fit": fit.n, "n_valid": valid.n, "n_test": test.n}
    for cond, models in zip(CONDITIONS, (base_models, dk_models)):
        scores, rankings, macros, micros = [], [], [], []
        for idx, (entry, model) in enumerate(zip(model_entries, models)):
            ma, mi = _evaluate(model, test)
            macros.append(ma)
            micros.append(mi)
            s = _stage(fold, f"importance_test_{cond}", lambda: _importance(
                model, test, background, settings, derive_seed(seed, fold, 4)), entry.name)
            scores.append(s.tolist())
            rankings.append(rank_factors(s))
        tau_mat, mean_tau = pairwise_consistency(rankings)
        out[cond] = {
            "macro_f1": macros, "micro_f1": micros,
            "importance": scores,
            "rankings": [r.order.tolist() for r in rankings],
            "tau_matrix": tau_mat.tolist(), "mean_tau": mean_tau,
        }
    return out


def run_experiment(table, group=None, model_entries=(), k=None, train_config=None,
                   loss_spec=None, seed=101, settings=None, dataset="data", group_name=None,
                   n_jobs=None, config_digest=None):
    settings = settings or ExperimentSettings()
    if k is not None:
        settings = replace(settings, k=k)
    train_config = train_config or TrainConfig()
    loss_spec = loss_spec or LossSpec()
    model_entries = list(model_entries)
    if len(model_entries) < 2:
        raise InvalidConfig("run_experiment needs at least two models for knowledge fusion")
    if len({e.name for e in model_entries}) != len(model_entries):
        raise InvalidConfig("model names must be unique")
    if group is not None:
        table, _ = split_group(table, group)
        group_name = group_name or f"{group.factor}"
    plan = kfold_split(table, settings.k, seed)

    if n_jobs is None:
        n_jobs = int(os.environ.get(THREADS_ENV, "1") or 1)

    def one(fold):
        return run_fold(table, plan, fold, model_entries, train_config, loss_spec, settings, seed)

    if n_jobs > 1:
        with ThreadPoolExecutor(n_jobs) as pool:
            folds = list(pool.map(one, range(settings.k)))
    else:
        folds = [one(f) for f in range(settings.k)]

    names = [e.name for e in model_entries]
    conditions = {}
    for cond in CONDITIONS:
        per_model = {}
        for i, name in enumerate(names):
            macro = [f[cond]["macro_f1"][i] for f in folds]
            micro = [f[cond]["micro_f1"][i] for f in folds]
            per_model[name] = {
                "macro_f1": macro, "micro_f1": micro,
                "mean_macro_f1": float(np.mean(macro)), "mean_micro_f1": float(np.mean(micro)),
                "stability": {"macro_f1": stability_summary(macro).to_dict(),
                              "micro_f1": stability_summary(micro).to_dict()},
            }
        fold_tau = [f[cond]["mean_tau"] for f in folds]
        conditions[cond] = {
            "per_model": per_model,
            "tau_matrices": [f[cond]["tau_matrix"] for f in folds],
            "fold_mean_tau": fold_tau,
            "mean_tau": float(np.mean(fold_tau)),
            "rankings": [f[cond]["rankings"] for f in folds],
            "importance": [f[cond]["importance"] for f in folds],
        }
    fold_meta = [{key: f[key] for key in ("fold", "lambdas", "dk_exp", "dk_dist", "s_pri", "s_sec",
                                          "n_fit", "n_valid", "n_test")} for f in folds]
    provenance = {
        "tool": "dkguide", "tool_version": __version__,
        "kernel_backend": _kernels.backend_name(),
        "seed": seed, "dataset_hash": table.digest(),
        "config_hash": config_digest or config_hash({
            "models": [asdict(e) for e in model_entries], "train": asdict(train_config),
            "loss": asdict(loss_spec), "settings": asdict(settings),
            "group": None if group is None else group.to_dict()}),
    }
    return ExperimentReport(dataset, group_name, names, settings.k, conditions, fold_meta, provenance)


FOLD_CSV_COLUMNS = ("group", "model", "condition", "fold", "macro_f1", "micro_f1", "mean_tau")


def fold_rows(report):
    for cond in CONDITIONS:
        c = report.conditions[cond]
        for name in report.models:
            for fold in range(report.k):
                yield {
                    "group": report.group or "all", "model": name, "condition": cond,
                    "fold": fold, "macro_f1": c["per_model"][name]["macro_f1"][fold],
                    "micro_f1": c["per_model"][name]["micro_f1"][fold],
                    "mean_tau": c["fold_mean_tau"][fold],
                }


def write_fold_csv(reports, path, header_lines=()):
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        w = csv.DictWriter(fh, FOLD_CSV_COLUMNS, lineterminator="\n")
        w.writeheader()
        for report in reports:
            for row in fold_rows(report):
                w.writerow(row)


def summary_table(reports):
    """Markdown table: rows = group x dataset x condition, columns = model x {Macro, Micro}.

    Within each (group, dataset, model, metric) the better of the two conditions is bolded.
    """
    models = reports[0].models
    head = ["Group", "Dataset", "DK"] + [f"{m} {metric}" for m in models
                                         for metric in ("Macro_F1", "Micro_F1")]
    lines = ["| " + " | ".join(head) + " |", "|" + "---|" * len(head)]
    for rep in reports:
        for cond in CONDITIONS:
            other = CONDITIONS[1 - CONDITIONS.index(cond)]
            cells = [rep.group or "all", rep.dataset, "with" if cond == "with_dk" else "without"]
            for m in models:
                for metric in ("macro_f1", "micro_f1"):
                    v = rep.conditions[cond]["per_model"][m][f"mean_{metric}"]
                    o = rep.conditions[other]["per_model"][m][f"mean_{metric}"]
                    txt = f"{100 * v:.2f}"
                    cells.append(f"**{txt}**" if v >= o else txt)
            lines.append("| " + " | ".join(cells) + " |")
    return "\n".join(lines) + "\n"
