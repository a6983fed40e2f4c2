"""Command-line entry points: ``cco gen | sa | train-sl | train-s2c | eval | transfer | report``.

Every subcommand takes ``--seed``, ``--config`` (JSON) and ``--out`` (a
directory). Runs are single-threaded by default so that a repeated command
with the same seed reproduces its outputs byte for byte.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

log = logging.getLogger("cco")


class CLIError(Exception):
    pass


def _config(args):
    from .config import Config
    if args.config is None:
        return Config()
    path = Path(args.config)
    if not path.is_file():
        raise CLIError(f"config file not found: {path}")
    return Config.load(path)


def _out(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _need(path, what) -> Path:
    p = Path(path)
    if not p.exists():
        raise CLIError(f"{what} not found: {p}")
    return p


def _load_tasks(path):
    from .scenario import load_tasks
    tasks = load_tasks(_need(path, "task manifest"))
    if not tasks:
        raise CLIError(f"task manifest {path} lists no tasks")
    return tasks


def cmd_gen(args, cfg):
    from .scenario import SuiteConfig, generate_suite, save_tasks
    suite_cfg = cfg.suite
    if args.spec:
        suite_cfg = SuiteConfig.from_dict(json.loads(_need(args.spec, "spec file").read_text()))
    out = _out(args)
    suite = generate_suite(suite_cfg, args.seed)
    for split, tasks in suite.items():
        if tasks:
            save_tasks(tasks, out / f"tasks_{split}.json", out / "networks")
        print(f"{split}: {len(tasks)} tasks")


def cmd_sa(args, cfg):
    from .context import TaskContext
    from .evaluate import TaskResult, EvalReport, digest_config, write_csv, write_json
    from .graphdistill import save_tensors
    from .optimize import extract_labels, sa_optimize

    tasks = _load_tasks(args.tasks)
    out = _out(args)
    sa_cfg = cfg.sa
    tensors, labels, centers, task_ids = [], [], [], []
    rows = []
    with open(out / "sa_results.jsonl", "w") as fh:
        for i, task in enumerate(tasks):
            ctx = TaskContext(task, sa_cfg.top_k, cfg.k_fov, cfg.registry, cfg.reward,
                              with_tensors=not args.no_labels)
            res = sa_optimize(task, sa_cfg, cfg.reward, seed=args.seed * 1_000_003 + i,
                              context=ctx)
            o = ctx.outcome(res.action)
            rows.append(TaskResult(task.task_id, task.network_id,
                                   task.network.propagation.variant, o.global_reward,
                                   o.coverage_delta, o.quality_delta, task.network.n_cells,
                                   task.network.n_ues, len(ctx.cells)))
            fh.write(json.dumps({"task_id": task.task_id, "cells": res.cells,
                                 "deltas": [int(d) for d in res.deltas],
                                 "best_reward": res.best_reward,
                                 "trajectory": res.trajectory}, sort_keys=True) + "\n")
            if not args.no_labels:
                for ex in extract_labels(task, res, cfg.k_fov, cfg.registry, cfg.reward, ctx):
                    tensors.append(ex.tensor)
                    labels.append(ex.label)
                    centers.append(ex.cell)
                    task_ids.append(ex.task_id)
    if not args.no_labels:
        save_tensors(out / "labels.bin", tensors, cfg.channels, centers,
                     {"labels": labels, "task_ids": task_ids})
        print(f"{len(labels)} labeled examples")
    report = EvalReport(rows, "SA 10-shot", digest_config(cfg.to_dict()))
    write_json(report, out / "sa_report.json")
    write_csv(report, out / "sa_report.csv")
    print(f"SA AvgGlobalReward={report.avg_global_reward:.4f} "
          f"RatioPositiveReward={report.ratio_positive_reward:.4f}")


def load_examples(paths):
    from .graphdistill import load_tensors
    from .optimize import LabeledExample
    out = []
    for p in paths:
        arr, meta = load_tensors(_need(p, "label file"))
        for x, y, t, c in zip(arr, meta["labels"], meta["task_ids"], meta["centers"]):
            out.append(LabeledExample(x, int(y), t, int(c)))
    return out


def split_by_task(examples, frac: float, seed: int):
    """Hold out whole tasks so train and hold-out never share a task."""
    ids = sorted({e.task_id for e in examples})
    rng = np.random.default_rng(seed)
    n_hold = int(round(frac * len(ids)))
    held = set(rng.permutation(ids)[:n_hold].tolist()) if n_hold else set()
    train = [e for e in examples if e.task_id not in held]
    hold = [e for e in examples if e.task_id in held]
    return train, hold


def cmd_train_sl(args, cfg):
    from .neural import PolicyNetwork, checkpoint_save
    from .optimize import train_supervised
    examples = load_examples(args.labels)
    if not examples:
        raise CLIError("no labeled examples")
    train, hold = split_by_task(examples, cfg.sl.holdout_frac, args.seed)
    net = PolicyNetwork(cfg.net_config(), seed=args.seed)
    epochs = args.epochs if args.epochs is not None else cfg.sl.epochs
    res = train_supervised(train, net, epochs, hold, cfg.sl.batch_size, cfg.sl.lr,
                           seed=args.seed, progress=lambda r: log.info("%s", r))
    out = _out(args)
    checkpoint_save(net, out / "policy.ckpt")
    metrics = {"within_1deg": res.within_1deg, "within_2deg": res.within_2deg,
               "n_train": len(train), "n_holdout": len(hold), "history": res.history}
    (out / "sl_metrics.json").write_text(json.dumps(metrics, indent=1, sort_keys=True))
    print(f"hold-out within-1deg={res.within_1deg:.4f} within-2deg={res.within_2deg:.4f}")


def _load_net(cfg, path):
    from .neural import PolicyNetwork, checkpoint_load
    p = _need(path, "checkpoint")
    net = PolicyNetwork(cfg.net_config())
    try:
        return checkpoint_load(net, p)
    except ValueError as exc:
        raise CLIError(str(exc)) from exc


def cmd_train_s2c(args, cfg):
    from .neural import PolicyNetwork, checkpoint_save
    from .optimize import s2c_train
    tasks = _load_tasks(args.tasks)
    net = _load_net(cfg, args.init) if args.init else PolicyNetwork(cfg.net_config(), seed=args.seed)
    episodes = args.episodes if args.episodes is not None else cfg.s2c_episodes
    net, tlog, store = s2c_train(tasks, net, cfg.selfplay, episodes, cfg.reward, seed=args.seed)
    out = _out(args)
    checkpoint_save(net, out / "policy.ckpt")
    tlog.write_jsonl(out / "training_log.jsonl")
    store.save(out / "records.jsonl")
    print(f"trained {episodes} episodes on {len(tasks)} tasks")


def _eval_report(args, cfg, transfer=False):
    from .evaluate import (constant_policy, digest_config, digest_file, evaluate_one_shot,
                           evaluate_sa, transfer_eval)
    tasks = _load_tasks(args.tasks)
    policy_kind = args.policy
    ckpt_digest = ""
    if policy_kind == "sa":
        report = evaluate_sa(tasks, cfg.sa, cfg.reward, seed=args.seed)
    else:
        if policy_kind == "net":
            if not args.checkpoint:
                raise CLIError("--checkpoint is required for --policy net")
            policy = _load_net(cfg, args.checkpoint)
            ckpt_digest = digest_file(args.checkpoint)
        else:
            policy = constant_policy(5)
        name = args.name or policy_kind
        if transfer:
            report = transfer_eval(policy, tasks, cfg.reward, cfg.top_k, cfg.k_fov,
                                   cfg.registry, args.source_model, name)
        else:
            report = evaluate_one_shot(policy, tasks, cfg.reward, cfg.top_k, cfg.k_fov,
                                       cfg.registry, name)
    if args.name:
        report.policy = args.name
    report.config_digest = digest_config(cfg.to_dict())
    report.checkpoint_digest = ckpt_digest
    return report


def cmd_eval(args, cfg, transfer=False):
    from .evaluate import emit_report
    report = _eval_report(args, cfg, transfer)
    out = _out(args)
    stem = args.stem or ("transfer" if transfer else "report")
    emit_report(report, "json", out / f"{stem}.json")
    emit_report(report, "csv", out / f"{stem}.csv")
    print(f"{report.policy}: AvgGlobalReward={report.avg_global_reward:.4f} "
          f"RatioPositiveReward={report.ratio_positive_reward:.4f} over {len(report.rows)} tasks")


def cmd_report(args, cfg):
    from .evaluate import emit_report, read_json
    reports = [read_json(_need(p, "report")) for p in args.reports]
    out = _out(args)
    emit_report(reports, "svg", out / "summary.svg")
    with open(out / "summary.csv", "w") as fh:
        fh.write("policy,avg_global_reward,ratio_positive_reward,n_tasks\n")
        for r in reports:
            fh.write(f"{r.policy},{r.avg_global_reward!r},{r.ratio_positive_reward!r},"
                     f"{len(r.rows)}\n")
    print(f"wrote {out / 'summary.svg'}")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--config", default=None, help="JSON config file")
    common.add_argument("--out", default=".", help="output directory")
    common.add_argument("--threads", type=int, default=1,
                        help="BLAS threads (1 = reproducible mode)")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="cco", description="One-shot coverage and capacity optimization.")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", parents=[common], help="generate networks and task manifests")
    g.add_argument("--spec", default=None, help="suite spec JSON")
    g.set_defaults(func=cmd_gen)

    s = sub.add_parser("sa", parents=[common], help="SA multi-shot baseline and labels")
    s.add_argument("--tasks", required=True)
    s.add_argument("--no-labels", action="store_true")
    s.set_defaults(func=cmd_sa)

    t = sub.add_parser("train-sl", parents=[common], help="supervised policy training")
    t.add_argument("--labels", nargs="+", required=True)
    t.add_argument("--epochs", type=int, default=None)
    t.set_defaults(func=cmd_train_sl)

    r = sub.add_parser("train-s2c", parents=[common], help="self-play S2C training")
    r.add_argument("--tasks", required=True)
    r.add_argument("--init", default=None, help="initial checkpoint")
    r.add_argument("--episodes", type=int, default=None)
    r.set_defaults(func=cmd_train_s2c)

    for name, fn in (("eval", cmd_eval),
                     ("transfer", lambda a, c: cmd_eval(a, c, transfer=True))):
        e = sub.add_parser(name, parents=[common], help=f"one-shot {name} evaluation")
        e.add_argument("--tasks", required=True)
        e.add_argument("--checkpoint", default=None)
        e.add_argument("--policy", choices=("net", "sa", "identity"), default="net")
        e.add_argument("--name", default=None, help="policy label in the report")
        e.add_argument("--stem", default=None, help="output file stem")
        e.add_argument("--source-model", default="ModelA")
        e.set_defaults(func=fn)

    rp = sub.add_parser("report", parents=[common], help="merge reports into CSV + SVG")
    rp.add_argument("--reports", nargs="+", required=True)
    rp.set_defaults(func=cmd_report)
    return p


def run_cli(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    from threadpoolctl import threadpool_limits
    try:
        with threadpool_limits(limits=args.threads):
            args.func(args, _config(args))
    except (CLIError, ValueError, OSError) as exc:
        print(f"cco {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


def main():
    sys.exit(run_cli())


if __name__ == "__main__":
    main()
