"""Command-line front end: ``dkguide synth|train|explain|knowledge|report``.

Exit codes: 0 success, 2 user/config error, 3 I/O error, 4 numerical failure.
"""

import argparse
import hashlib
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .attribution import MAX_EXACT_FACTORS, ModelOracle, attribute_rows, rank_factors, subsample_rows
from .config import RunConfig
from .data import load_csv, split_group, standardize, synth_generate, write_csv
from .errors import ConfigError, DKError, FactorMismatch, InvalidK, IoError, TooManyFactors
from .experiment import ExperimentReport, REPORT_VERSION, run_experiment, summary_table, write_fold_csv
from .knowledge import build_knowledge, load_knowledge, save_knowledge
from .models import build_model, load_checkpoint, save_checkpoint
from .training import LossSpec, train, write_history_csv

log = logging.getLogger("dkguide")


def _provenance(config_digest, seed):
    return {"tool": "dkguide", "tool_version": __version__, "config_hash": config_digest,
            "seed": seed}


def _header_lines(prov):
    return [f"{prov['tool']} {prov['tool_version']} config_hash={prov['config_hash']} "
            f"seed={prov['seed']}"]


def _sidecar(path, suffix):
    p = Path(path)
    return p.with_name(p.stem + suffix)


def _write_text(path, text):
    try:
        Path(path).write_text(text, encoding="utf-8")
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from None


def _say(args, msg):
    if not args.quiet:
        print(msg)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_synth(args):
    cfg = RunConfig.load(args.config)
    synth = cfg.synth_config(seed=args.seed)
    out = Path(args.out or cfg.doc.get("paths", {}).get("data", "synthetic.csv"))
    prov = _provenance(cfg.digest, synth.seed)
    if args.dry_run:
        _say(args, f"would write {synth.n} x {synth.j} table to {out} (seed {synth.seed})")
        return 0
    table = synth_generate(synth)
    try:
        write_csv(table, out, cfg.label_column, _header_lines(prov))
    except OSError as exc:
        raise IoError(f"cannot write {out}: {exc}") from None
    truth = {"provenance": prov, "factor_names": table.factor_names, **table.meta}
    _write_text(_sidecar(out, ".truth.json"), json.dumps(truth, indent=1) + "\n")
    _say(args, f"wrote {out} ({table.n} rows) and {_sidecar(out, '.truth.json')}")
    return 0


def _pick_model(cfg, name):
    entries = cfg.model_entries()
    if not entries:
        raise ConfigError("$.models: at least one model is required")
    if name is None:
        return entries[0]
    for e in entries:
        if e.name == name:
            return e
    raise ConfigError(f"$.models: no model named {name!r}")


def cmd_train(args):
    cfg = RunConfig.load(args.config)
    tc = cfg.train_config(seed=args.seed)
    entry = _pick_model(cfg, args.model)
    table = load_csv(args.data, cfg.label_column, cfg.num_levels)
    dk = None
    if args.knowledge:
        dk = load_knowledge(args.knowledge)
        if list(dk.factor_names) != table.factor_names:
            raise FactorMismatch(f"knowledge factors {dk.factor_names} do not match data columns "
                                 f"{table.factor_names}")
    loss = cfg.loss_spec()
    loss = LossSpec(**{**loss.__dict__, "mode": "joint" if dk is not None else "label_only"})
    settings = cfg.experiment_settings()
    _say(args, f"dkguide {__version__} train: model={entry.name} ({entry.kind}) mode={loss.mode} "
               f"lr={tc.lr:g} batch={tc.batch_size} epochs={tc.epochs} seed={tc.seed} "
               f"weight_decay={tc.weight_decay:g} beta1={tc.beta1:g}")
    if args.dry_run:
        return 0

    order = np.random.default_rng([tc.seed, 7]).permutation(table.n)
    n_valid = max(1, int(round(settings.valid_fraction * table.n)))
    valid, fit = table.take(np.sort(order[:n_valid])), table.take(np.sort(order[n_valid:]))
    fit, stats = standardize(fit)
    valid, _ = standardize(valid, stats)
    model = build_model(entry.spec(table.j, table.num_levels, tc.seed))
    result = train(model, fit, valid, dk, loss, tc, fit.rows.mean(axis=0))

    prov = _provenance(cfg.digest, tc.seed)
    out = Path(args.out)
    extra = {
        "name": entry.name,
        "factor_names": table.factor_names,
        "label_column": cfg.label_column,
        "num_levels": table.num_levels,
        "standardization": {"mean": stats[0].tolist(), "std": stats[1].tolist(),
                            "constant": stats[2].tolist()},
        "background": fit.rows.mean(axis=0).tolist(),
    }
    try:
        save_checkpoint(result.model, out, prov, extra)
        write_history_csv(result.history, _sidecar(out, ".history.csv"), _header_lines(prov))
    except OSError as exc:
        raise IoError(f"cannot write checkpoint: {exc}") from None
    last = result.history[-1]
    _say(args, f"final l_label={last['l_label']:.4f} l_exp={last['l_exp']:.4f} "
               f"val_micro_f1={last['val_micro_f1']:.4f}; wrote {out}")
    return 0


def _load_for_checkpoint(doc, path):
    table = load_csv(path, doc.get("label_column", "happiness"), doc.get("num_levels", 5))
    if table.factor_names != doc.get("factor_names", table.factor_names):
        raise FactorMismatch("data columns do not match the checkpoint's factors")
    st = doc.get("standardization")
    if st:
        stats = (np.array(st["mean"]), np.array(st["std"]), np.array(st["constant"], dtype=bool))
        table, _ = standardize(table, stats)
    return table


def cmd_explain(args):
    model, doc = load_checkpoint(args.checkpoint)
    method = "sampled" if args.sampled else "exact"
    if method == "exact" and model.spec.input_dim > MAX_EXACT_FACTORS:
        raise TooManyFactors(f"--exact needs J <= {MAX_EXACT_FACTORS}, checkpoint has "
                             f"J = {model.spec.input_dim}; use --sampled M")
    table = _load_for_checkpoint(doc, args.data)
    background = np.array(doc.get("background", table.rows.mean(axis=0)))
    oracle = ModelOracle(model, background)
    idx = subsample_rows(table.n, args.rows, args.seed)
    if args.dry_run:
        _say(args, f"would attribute {idx.size} rows with {method} Shapley values")
        return 0
    attrs = attribute_rows(oracle, table.rows[idx], method, args.sampled or 0, args.seed, idx)
    if method == "exact":
        for a in attrs:
            _say(args, f"row {a.row_index}: efficiency residual {a.efficiency_residual:.3e}")
    scores = np.mean(np.abs(np.stack([a.phi for a in attrs])), axis=0)
    ranking = rank_factors(scores)
    prov = {**doc.get("provenance", {}), "seed": args.seed}
    out = Path(args.out)
    dump = {
        "provenance": prov,
        "model": doc.get("name", model.spec.kind),
        "factor_names": table.factor_names,
        "attributions": [a.to_dict() for a in attrs],
    }
    _write_text(out, json.dumps(dump, indent=1) + "\n")
    lines = [f"# {h}" for h in _header_lines({**prov, "config_hash": prov.get("config_hash", "")})]
    lines.append("rank,factor_index,factor,score")
    for r, i in enumerate(ranking.order):
        lines.append(f"{r + 1},{i},{table.factor_names[i]},{float(scores[i])!r}")
    _write_text(_sidecar(out, ".ranking.csv"), "\n".join(lines) + "\n")
    _say(args, f"wrote {out} and {_sidecar(out, '.ranking.csv')}")
    return 0


def _read_attributions(path):
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from None
    phis = np.array([a["phi"] for a in doc["attributions"]], dtype=np.float64)
    return doc.get("model", Path(path).stem), doc["factor_names"], np.mean(np.abs(phis), axis=0)


def cmd_knowledge(args):
    if len(args.accuracies) != len(args.attributions):
        raise ConfigError("--accuracies needs one value per attribution file")
    sources = [_read_attributions(p) for p in args.attributions]
    names = sources[0][1]
    for _, other, _ in sources[1:]:
        if other != names:
            raise FactorMismatch(f"attribution files disagree on factors: {names} vs {other}")
    if not 1 <= args.k <= len(names) // 2:
        raise InvalidK(f"k must satisfy 1 <= k <= J/2 = {len(names) // 2}")
    ids = [s[0] for s in sources]
    if len(set(ids)) != len(ids):
        ids = [f"{s}#{i}" for i, s in enumerate(ids)]
    digest = hashlib.sha256(b"".join(Path(p).read_bytes() for p in args.attributions)).hexdigest()
    prov = _provenance(digest[:16], args.seed)
    prov["sources"] = [str(p) for p in args.attributions]
    dk = build_knowledge(names, ids, [s[2] for s in sources], args.accuracies, args.k,
                         args.temperature, args.transform, prov)
    if args.dry_run:
        _say(args, f"would write knowledge over {len(names)} factors from {len(ids)} sources")
        return 0
    save_knowledge(dk, args.out)
    _say(args, f"Exp={np.round(dk.exp, 6).tolist()} S_pri={dk.s_pri} S_sec={dk.s_sec}; wrote {args.out}")
    return 0


def cmd_report(args):
    cfg = RunConfig.load(args.config)
    entries = cfg.model_entries()
    if len(entries) < 2:
        raise ConfigError("$.models: report needs at least two models")
    seed = cfg.seed if args.seed is None else args.seed
    tc, loss, settings = cfg.train_config(), cfg.loss_spec(), cfg.experiment_settings()
    data_path = args.data or cfg.doc.get("paths", {}).get("data")
    groups = cfg.groups()
    out = Path(args.out or cfg.doc.get("paths", {}).get("out", "report"))
    plan = [f"models: {', '.join(f'{e.name}({e.kind})' for e in entries)}",
            f"k={settings.k} seed={seed} epochs={tc.epochs} lr={tc.lr:g} batch={tc.batch_size}",
            f"groups: {', '.join(n for g in groups for n in (g[0], g[2]) if n) or 'all'}",
            f"data: {data_path or 'synthesized from $.synth'}",
            f"outputs: {out / 'report.json'}, {out / 'folds.csv'}, {out / 'summary.md'}"]
    if args.dry_run:
        for line in plan:
            _say(args, line)
        return 0

    if data_path:
        table = load_csv(data_path, cfg.label_column, cfg.num_levels)
        dataset = cfg.doc.get("dataset_name", Path(data_path).stem)
    else:
        table = synth_generate(cfg.synth_config())
        dataset = cfg.doc.get("dataset_name", "synthetic")

    parts = []
    if groups:
        for name, spec, complement in groups:
            inside, outside = split_group(table, spec)
            parts.append((name, inside))
            if complement:
                parts.append((complement, outside))
    else:
        parts.append(("all", table))

    reports = []
    for name, part in parts:
        _say(args, f"running group {name!r} ({part.n} rows)")
        reports.append(run_experiment(part, None, entries, None, tc, loss, seed, settings,
                                      dataset=dataset, group_name=name, config_digest=cfg.digest))
    prov = _provenance(cfg.digest, seed)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IoError(f"cannot create {out}: {exc}") from None
    doc = {"version": REPORT_VERSION, "provenance": prov, "reports": [r.to_dict() for r in reports]}
    _write_text(out / "report.json", json.dumps(doc, indent=1, sort_keys=True) + "\n")
    try:
        write_fold_csv(reports, out / "folds.csv", _header_lines(prov))
    except OSError as exc:
        raise IoError(f"cannot write folds.csv: {exc}") from None
    _write_text(out / "summary.md", f"<!-- {_header_lines(prov)[0]} -->\n\n" + summary_table(reports))
    for r in reports:
        _say(args, f"[{r.group}] mean tau without DK {r.mean_tau('without_dk'):.3f}, "
                   f"with DK {r.mean_tau('with_dk'):.3f}")
    _say(args, summary_table(reports))
    return 0


def load_report_file(path):
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    return [ExperimentReport.from_dict(r) for r in doc["reports"]]


# ---------------------------------------------------------------------------

def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration")
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--out", help="output path")
    common.add_argument("--dry-run", action="store_true", help="validate and print the plan only")
    common.add_argument("-q", "--quiet", action="store_true")

    p = argparse.ArgumentParser(prog="dkguide", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"dkguide {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", parents=[common], help="generate a synthetic survey table")
    s.set_defaults(func=cmd_synth, needs_config=True)

    t = sub.add_parser("train", parents=[common], help="train one model (joint if --knowledge)")
    t.add_argument("--data", required=True)
    t.add_argument("--knowledge")
    t.add_argument("--model", help="model name from $.models (default: first)")
    t.set_defaults(func=cmd_train, needs_config=True)

    e = sub.add_parser("explain", parents=[common], help="Shapley attributions for a checkpoint")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True)
    mode = e.add_mutually_exclusive_group()
    mode.add_argument("--exact", action="store_true", default=True)
    mode.add_argument("--sampled", type=int, metavar="M")
    e.add_argument("--rows", type=int, default=None, help="cap on attributed rows")
    e.set_defaults(func=cmd_explain, needs_config=False)

    k = sub.add_parser("knowledge", parents=[common], help="fuse attributions into knowledge")
    k.add_argument("--attributions", nargs="+", required=True)
    k.add_argument("--accuracies", nargs="+", type=float, required=True)
    k.add_argument("--k", type=int, default=2)
    k.add_argument("--temperature", type=float, default=1.0)
    k.add_argument("--transform", choices=("log", "linear"), default="log")
    k.set_defaults(func=cmd_knowledge, needs_config=False)

    r = sub.add_parser("report", parents=[common], help="k-fold with/without knowledge experiment")
    r.add_argument("--data")
    r.set_defaults(func=cmd_report, needs_config=True)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.needs_config and not args.config:
            raise ConfigError("--config is required")
        if args.command in ("explain", "knowledge") and not args.out and not args.dry_run:
            raise ConfigError("--out is required")
        if args.command == "train" and not args.out and not args.dry_run:
            raise ConfigError("--out is required")
        if args.seed is None and args.command == "explain":
            args.seed = 101
        return args.func(args)
    except DKError as exc:
        print(f"dkguide {args.command}: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"dkguide {args.command}: I/O error: {exc}", file=sys.stderr)
        return 3
    except FloatingPointError as exc:
        print(f"dkguide {args.command}: numerical error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
