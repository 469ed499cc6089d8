"""Command-line entry point: train, evaluate, ablate, inspect, plus data utilities."""

from __future__ import annotations

import argparse
import csv
import dataclasses
import datetime as dt
import json
import logging
import sys
import time
from pathlib import Path

from . import __version__
from .alignment import consensus_gap
from .config import (PRESETS, ConfigError, env_overrides, expand_grid, grid_axes, merge_layers, read_config_file,
                     write_config)
from .data import DatasetError, dataset_stats, densify, file_checksums, load_dataset_dir, save_dataset, save_id_map
from .evaluation import DEFAULT_KS, TASKS, EvalReport, evaluate_scorer, popularity_baseline
from .model import AlignGroupModel
from .params import NonFiniteError, TrainConfig, load_checkpoint, save_checkpoint
from .train import TrainResult, evaluate_model, split_validation, test_candidates, train

log = logging.getLogger("aligngroup")


def _now():
    return dt.datetime.now(dt.timezone.utc).isoformat(timespec="seconds")


def _parse_ks(text):
    try:
        ks = tuple(int(k) for k in text.split(",") if k.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad --k value {text!r}") from None
    if not ks or min(ks) < 1:
        raise argparse.ArgumentTypeError("--k needs positive integers")
    return ks


def _tasks(task):
    return TASKS if task == "both" else (task,)


def _add_dataset_args(p):
    p.add_argument("--dataset-dir", required=True, type=Path)
    p.add_argument("--layout", choices=("canonical", "agree"), default="canonical",
                   help="file layout of --dataset-dir (agree = public AGREE-style release)")


def _add_model_args(p):
    p.add_argument("--config", type=Path, help="flat key=value config file; comma lists declare grids")
    p.add_argument("--preset", choices=sorted(PRESETS), help="dataset-specific hyper-parameter defaults")
    p.add_argument("--seed")
    p.add_argument("--mode", dest="bpr_mode", choices=("literal", "log-sigmoid"))
    p.add_argument("--infonce", dest="infonce_mode", choices=("literal", "cross-pair"))
    p.add_argument("--no-interrl", action="store_true")
    p.add_argument("--strategy", choices=("centroid", "barycenter"))
    p.add_argument("--scope", choices=("small", "big"))
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override any config key")


def _add_eval_args(p):
    p.add_argument("--k", type=_parse_ks, default=DEFAULT_KS)
    p.add_argument("--task", choices=("group", "user", "both"), default="both")


def _raw_config(args) -> dict[str, str]:
    layers = [PRESETS[args.preset] if args.preset else {}]
    if args.config:
        layers.append(read_config_file(args.config))
    layers.append(env_overrides())
    flags = {
        "seed": args.seed,
        "bpr_mode": args.bpr_mode,
        "infonce_mode": args.infonce_mode,
        "strategy": args.strategy,
        "scope": args.scope,
        "interrl_enabled": "false" if args.no_interrl else None,
    }
    for item in args.set:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        flags[key] = value
    layers.append(flags)
    return merge_layers(*layers)


def _load(args):
    return load_dataset_dir(args.dataset_dir, args.layout)


# --------------------------------------------------------------------------- #
# train
# --------------------------------------------------------------------------- #


def _train_one(ds, config: TrainConfig, out: Path, checksums, ks, tasks) -> EvalReport:
    out.mkdir(parents=True, exist_ok=True)
    started = _now()
    manifest = {
        "aligngroup_version": __version__,
        "config": config.to_dict(),
        "seed": config.seed,
        "dataset_checksums": checksums,
        "started": started,
    }
    try:
        result = train(ds, config)
    except NonFiniteError as exc:
        manifest.update(finished=_now(), error=str(exc))
        (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
        raise
    report = evaluate_model(result, ds, config, ks, tasks)
    save_checkpoint(out / "checkpoint.npz", result.params, config,
                    rng_state={"seed": config.seed, "epochs_run": len(result.trace)},
                    extra={"best_epoch": result.best_epoch})
    (out / "trace.tsv").write_text(result.trace_text())
    (out / "report.kv").write_text(report.to_kv())
    (out / "timing.kv").write_text("".join(f"{k}={v:.3f}\n" for k, v in sorted(report.timings.items())))
    write_config(config, out / "config.txt")
    manifest.update(
        finished=_now(),
        epochs_run=len(result.trace),
        best_epoch=result.best_epoch,
        stopped_early=result.stopped_early,
        trace="trace.tsv",
        report="report.kv",
        checkpoint="checkpoint.npz",
        timings=report.timings,
    )
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return report


def _run_label(config: TrainConfig, axes):
    return "_".join(f"{k}-{getattr(config, k)}" for k in axes) or "run"


def cmd_train(args) -> int:
    raw = _raw_config(args)
    configs = expand_grid(raw)
    axes = grid_axes(raw)
    ds = _load(args)
    checksums = file_checksums(args.dataset_dir, args.layout)
    tasks = _tasks(args.task)
    failed = []
    rows = []
    for n, config in enumerate(configs):
        out = args.out if len(configs) == 1 else args.out / f"{n:03d}_{_run_label(config, axes)}"
        log.info("run %d/%d -> %s", n + 1, len(configs), out)
        try:
            report = _train_one(ds, config, out, checksums, args.k, tasks)
        except (NonFiniteError, ValueError) as exc:
            log.error("run %s failed: %s", out, exc)
            failed.append((out, str(exc)))
            continue
        rows.append((out.name, config, report))
        print(f"# {out}")
        print(report.to_table())
    if len(configs) > 1:
        _write_grid_summary(args.out / "grid.tsv", axes, rows, args.k)
    if failed:
        for out, msg in failed:
            print(f"FAILED {out}: {msg}", file=sys.stderr)
        return 1
    return 0


def _write_grid_summary(path, axes, rows, ks):
    path.parent.mkdir(parents=True, exist_ok=True)
    metrics = [f"{t}.{m}@{k}" for t in TASKS for m in ("HR", "NDCG") for k in ks]
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\t".join(["run", *axes, *metrics]) + "\n")
        for name, config, report in rows:
            vals = []
            for m in metrics:
                task, key = m.split(".", 1)
                vals.append(f"{report.metrics.get(task, {}).get(key, float('nan')):.4f}")
            fh.write("\t".join([name, *(str(getattr(config, a)) for a in axes), *vals]) + "\n")


# --------------------------------------------------------------------------- #
# evaluate / inspect
# --------------------------------------------------------------------------- #


def _restore(checkpoint, ds):
    params, config, header = load_checkpoint(checkpoint)
    train_ds, _ = split_validation(ds, config.val_fraction, config.seed)
    model = AlignGroupModel(train_ds, config)
    return params, config, model


def cmd_evaluate(args) -> int:
    ds = _load(args)
    tasks = _tasks(args.task)
    if args.pop:
        config = expand_grid(_raw_config(args))[0]
        t0 = time.perf_counter()
        report = evaluate_scorer(popularity_baseline(ds), test_candidates(ds, config, tasks), args.k)
        report.timings = {"eval": time.perf_counter() - t0}
        report.config = {"model": "popularity", "eval_neg_count": config.eval_neg_count, "seed": config.seed}
        protocol = {
            task: ("negatives file" if ds.eval_negatives(task) else f"sampled {config.eval_neg_count} per case")
            for task in tasks
        }
    else:
        if args.checkpoint is None:
            raise SystemExit("evaluate: --checkpoint is required unless --pop is given")
        params, config, model = _restore(args.checkpoint, ds)
        result = TrainResult(params=params, model=model)
        report = evaluate_model(result, ds, config, args.k, tasks)
        report.timings.pop("train", None)
        protocol = None
    print(report.to_table())
    if args.out:
        args.out.mkdir(parents=True, exist_ok=True)
        (args.out / "report.kv").write_text(report.to_kv())
        manifest = {
            "checkpoint": str(args.checkpoint) if args.checkpoint else None,
            "dataset_checksums": file_checksums(args.dataset_dir, args.layout),
            "finished": _now(),
            "timings": report.timings,
        }
        if protocol:
            manifest["negative_protocol"] = protocol
            manifest["note"] = ("published Pop numbers depend on the evaluation negatives; "
                                "differences trace to the candidate protocol recorded here")
        (args.out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return 0


def _write_csv(rows, header, out):
    fh = open(out, "w", encoding="utf-8", newline="") if out else sys.stdout
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
    finally:
        if out:
            fh.close()


def cmd_inspect(args) -> int:
    ds = _load(args)
    params, config, model = _restore(args.checkpoint, ds)
    emb = model.embed(params)
    if args.gap:
        per_group, _ = consensus_gap(emb.groups, emb.users, model.hypergraph)
        _write_csv(([g, f"{v:.10g}"] for g, v in enumerate(per_group)), ["group_id", "gap"], args.out)
    elif args.overlap:
        w = model.ops.overlap
        _write_csv(([g, *(f"{x:.10g}" for x in row)] for g, row in enumerate(w)),
                   ["group_id", *range(len(w))], args.out)
    else:
        table = {"user": emb.users, "item": emb.items, "group": emb.groups}[args.emb]
        _write_csv(([r, *(f"{x:.10g}" for x in row)] for r, row in enumerate(table)),
                   ["id", *(f"d{j}" for j in range(table.shape[1]))], args.out)
    return 0


# --------------------------------------------------------------------------- #
# ablate
# --------------------------------------------------------------------------- #

ABLATION_VARIANTS = [(s, c) for s in ("centroid", "barycenter") for c in ("small", "big")]


def ablation_configs(base: TrainConfig) -> list[tuple[str, TrainConfig]]:
    out = []
    for interrl in (True, False):
        for strategy, scope in ABLATION_VARIANTS:
            name = f"{strategy.capitalize()}-{scope}" + ("" if interrl else " w/o InterRL")
            out.append((name, dataclasses.replace(base, strategy=strategy, scope=scope, interrl_enabled=interrl)))
    return out


def format_ablation(rows, ks=DEFAULT_KS) -> str:
    metrics = [f"{m}@{k}" for m in ("HR", "NDCG") for k in ks]
    lines = ["task\tvariant\t" + "\t".join(metrics)]
    for task in TASKS:
        for name, report in rows:
            if task in report.metrics:
                vals = "\t".join(f"{report.metrics[task][m]:.4f}" for m in metrics)
                lines.append(f"{task}\t{name}\t{vals}")
    return "\n".join(lines) + "\n"


def cmd_ablate(args) -> int:
    raw = _raw_config(args)
    base = expand_grid(raw)
    if len(base) != 1:
        raise ConfigError("ablate takes a single configuration, not a grid")
    ds = _load(args)
    checksums = file_checksums(args.dataset_dir, args.layout)
    rows, failed = [], []
    for n, (name, config) in enumerate(ablation_configs(base[0])):
        out = args.out / f"{n}_{config.strategy}_{config.scope}_{'interrl' if config.interrl_enabled else 'nointerrl'}"
        try:
            rows.append((name, _train_one(ds, config, out, checksums, args.k, _tasks(args.task))))
        except (NonFiniteError, ValueError) as exc:
            failed.append((name, str(exc)))
    table = format_ablation(rows, args.k)
    print(table, end="")
    (args.out / "ablation.tsv").write_text(table)
    for name, msg in failed:
        print(f"FAILED {name}: {msg}", file=sys.stderr)
    return 1 if failed else 0


# --------------------------------------------------------------------------- #
# data utilities
# --------------------------------------------------------------------------- #


def cmd_stats(args) -> int:
    s = dataset_stats(_load(args))
    for k, v in dataclasses.asdict(s).items():
        print(f"{k}={v}")
    return 0


def cmd_convert(args) -> int:
    ds = load_dataset_dir(args.src, args.layout, validate=not args.densify)
    if args.densify:
        ds, maps = densify(ds)
        args.dst.mkdir(parents=True, exist_ok=True)
        save_id_map(maps, args.dst / "id_map.tsv")
    save_dataset(ds, args.dst)
    return 0


def cmd_synth(args) -> int:
    from .synthetic import mafengwo_like, topic_dataset

    if args.preset == "mafengwo":
        ds = mafengwo_like(seed=args.seed)
    else:
        ds = topic_dataset(num_users=600, num_items=300, num_groups=200, user_interactions=4800,
                           group_interactions=800, num_topics=10, seed=args.seed)
    save_dataset(ds, args.out)
    print(f"wrote {args.out}: {dataset_stats(ds)}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="aligngroup", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true", help="log every epoch")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train one run or every point of a grid")
    _add_dataset_args(p)
    _add_model_args(p)
    _add_eval_args(p)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="evaluate a checkpoint or the popularity baseline")
    _add_dataset_args(p)
    _add_model_args(p)
    _add_eval_args(p)
    p.add_argument("--checkpoint", type=Path)
    p.add_argument("--pop", action="store_true", help="evaluate the popularity baseline instead")
    p.add_argument("--out", type=Path)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("ablate", help="InterRL x strategy x scope comparison")
    _add_dataset_args(p)
    _add_model_args(p)
    _add_eval_args(p)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("inspect", help="dump embeddings, overlap matrix or consensus gaps as CSV")
    _add_dataset_args(p)
    p.add_argument("--checkpoint", type=Path, required=True)
    what = p.add_mutually_exclusive_group(required=True)
    what.add_argument("--gap", action="store_true")
    what.add_argument("--overlap", action="store_true")
    what.add_argument("--emb", choices=("user", "item", "group"))
    p.add_argument("--out", type=Path, help="CSV path (default: stdout)")
    p.set_defaults(func=cmd_inspect)

    p = sub.add_parser("stats", help="dataset statistics")
    _add_dataset_args(p)
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("convert", help="rewrite a dataset in the canonical layout")
    p.add_argument("--src", type=Path, required=True)
    p.add_argument("--dst", type=Path, required=True)
    p.add_argument("--layout", choices=("canonical", "agree"), default="agree")
    p.add_argument("--densify", action="store_true", help="relabel ids densely and write id_map.tsv")
    p.set_defaults(func=cmd_convert)

    p = sub.add_parser("synth", help="write a synthetic topic-structured dataset")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--preset", choices=("mafengwo", "small"), default="small")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except (DatasetError, ConfigError, FileNotFoundError) as exc:
        print(f"aligngroup {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
