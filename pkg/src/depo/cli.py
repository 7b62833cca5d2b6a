"""Command-line pipeline: generate -> label -> sft -> kto/depo -> eval.

Every command is a pure function of (config, inputs, seed); identical
invocations produce byte-identical output files. Exit codes: 0 success,
1 runtime failure, 2 configuration or precondition error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from .config import ConfigError, PipelineConfig, load_config
from .envs import ContractViolation, EnvKind, make_task
from .eval import (comparison_text, compute_metrics, report_record, report_text,
                   run_episodes)
from .labeling import build_dataset
from .mcts import search
from .policy import CheckpointError, PolicyModel, load_checkpoint, save_checkpoint
from .train import LossReport, TrajectoryEncoder, train
from .trajectory import read_dataset, write_dataset

SUBSET_FRACTIONS = (0.25, 0.5, 0.75, 1.0)


class CliError(SystemExit):
    pass


def _fail(code: int, message: str) -> int:
    print(f"error: {message}", file=sys.stderr)
    return code


def _load(args) -> PipelineConfig:
    return load_config(args.config)


def _model(cfg: PipelineConfig) -> PolicyModel:
    return PolicyModel(cfg.policy)


def _encoder(cfg: PipelineConfig, model: PolicyModel) -> TrajectoryEncoder:
    envs = {EnvKind.GRID_WORLD: cfg.env.build("grid"),
            EnvKind.SHOP_SIM: cfg.env.build("shop")}
    return TrajectoryEncoder(model, envs)


def _require_file(path, what: str) -> Path:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"{what} not found: {p}")
    return p


def cmd_generate(args) -> int:
    cfg = _load(args)
    seed = args.seed if args.seed is not None else cfg.search.seed
    search_cfg = dataclasses.replace(cfg.search, seed=seed)
    env = cfg.env.build()
    out = Path(args.out) if args.out else Path(cfg.paths.data_dir) / "dataset.jsonl"
    out.parent.mkdir(parents=True, exist_ok=True)
    trajs = []
    for i in range(args.tasks):
        task = make_task(env.kind, seed + i)
        trajs.extend(search(task, env, search_cfg))
    count = write_dataset(trajs, out)
    if args.tasks == 0:
        print("warning: zero tasks requested; wrote an empty dataset")
    rewards = [t.final_reward for t in trajs]
    hist = np.histogram(rewards, bins=10, range=(0.0, 1.0))[0] if rewards else []
    print(f"generated {count} trajectories over {args.tasks} tasks -> {out}")
    if len(hist):
        print("reward histogram [0,1] in 10 bins:", " ".join(str(int(c)) for c in hist))
    return 0


def cmd_label(args) -> int:
    cfg = _load(args)
    data = read_dataset(_require_file(args.input, "dataset"))
    labeled = build_dataset(data, cfg.labeling)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    nd = write_dataset(labeled.desirable, out_dir / "desirable.jsonl")
    nu = write_dataset(labeled.undesirable, out_dir / "undesirable.jsonl")
    print(f"desirable {nd}  undesirable {nu}  discarded {labeled.discarded_count} "
          f"(of {len(data)}) -> {out_dir}")
    return 0


def _write_train_log(path: Path, reports: list[LossReport]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for epoch, rep in enumerate(reports, start=1):
            rec = {"epoch": epoch, **dataclasses.asdict(rep)}
            fh.write(json.dumps(rec, separators=(",", ":")) + "\n")


def _run_training(args, loss_kind: str) -> int:
    cfg = _load(args)
    model = _model(cfg)
    encoder = _encoder(cfg, model)
    seed = args.seed if args.seed is not None else cfg.train.seed
    train_cfg = dataclasses.replace(cfg.train, seed=seed)

    if loss_kind == "sft":
        from .labeling import LabeledDataset
        desirable = read_dataset(_require_file(args.data, "training data"))
        dataset = LabeledDataset(tuple(desirable), (), 0)
        params_ref = None
    else:
        from .labeling import LabeledDataset
        desirable = read_dataset(_require_file(args.desirable, "desirable dataset"))
        undesirable = read_dataset(_require_file(args.undesirable, "undesirable dataset"))
        dataset = LabeledDataset(tuple(desirable), tuple(undesirable), 0)
        ref_path = _require_file(args.ref, "reference (behavioral-cloning) checkpoint")
        _, params_ref = load_checkpoint(ref_path, expect=cfg.policy)

    if args.init:
        _, params_init = load_checkpoint(_require_file(args.init, "init checkpoint"),
                                         expect=cfg.policy)
    elif loss_kind == "sft":
        params_init = model.init_params(seed)
    else:
        params_init = params_ref.copy()

    out = Path(args.out) if args.out else \
        Path(cfg.paths.checkpoint_dir) / f"{loss_kind}.ckpt"
    out.parent.mkdir(parents=True, exist_ok=True)
    epoch_dir = out.parent / f"{out.stem}.epochs"
    epoch_dir.mkdir(parents=True, exist_ok=True)
    params, reports = train(model, params_init, params_ref, dataset, train_cfg,
                            loss_kind, encoder, checkpoint_dir=epoch_dir)
    save_checkpoint(out, cfg.policy, params)
    _write_train_log(out.parent / f"{out.stem}.log.jsonl", reports)
    last = reports[-1].loss if reports else float("nan")
    print(f"{loss_kind} training done: {train_cfg.epochs} epochs, "
          f"final epoch loss {last:.6f} -> {out}")
    return 0


def cmd_sft(args) -> int:
    return _run_training(args, "sft")


def cmd_kto(args) -> int:
    return _run_training(args, "kto")


def cmd_depo(args) -> int:
    return _run_training(args, "depo")


def cmd_eval(args) -> int:
    cfg = _load(args)
    model = _model(cfg)
    env = cfg.env.build()
    seed = args.seed if args.seed is not None else cfg.eval.seed
    episodes = args.episodes if args.episodes is not None else cfg.eval.episodes
    _, params = load_checkpoint(_require_file(args.checkpoint, "checkpoint"),
                                expect=cfg.policy)
    out_dir = Path(args.out) if args.out else Path(cfg.paths.report_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    trajs = run_episodes(model, params, env, episodes, seed,
                         max_step_tokens=cfg.eval.max_step_tokens)
    report = compute_metrics(trajs, cfg.eval.success_threshold, seed=seed)
    (out_dir / "metrics.txt").write_text(report_text(report), encoding="utf-8")
    (out_dir / "metrics.jsonl").write_text(
        report_record(report, name=Path(args.checkpoint).stem) + "\n", encoding="utf-8")
    if args.dump_episodes or cfg.eval.dump_episodes:
        write_dataset(trajs, out_dir / "episodes.jsonl")
    print(report_text(report, title=Path(args.checkpoint).stem), end="")

    if args.compare:
        _, base_params = load_checkpoint(_require_file(args.compare, "baseline checkpoint"),
                                         expect=cfg.policy)
        base_trajs = run_episodes(model, base_params, env, episodes, seed,
                                  max_step_tokens=cfg.eval.max_step_tokens)
        base_report = compute_metrics(base_trajs, cfg.eval.success_threshold, seed=seed)
        text = comparison_text(report, base_report)
        (out_dir / "comparison.txt").write_text(text, encoding="utf-8")
        print(text, end="")
    return 0


def cmd_subset(args) -> int:
    cfg = _load(args)
    if not 0.0 < args.fraction <= 1.0:
        raise ConfigError(f"fraction must be in (0, 1], got {args.fraction}")
    desirable = read_dataset(_require_file(args.desirable, "desirable dataset"))
    undesirable = read_dataset(_require_file(args.undesirable, "undesirable dataset"))
    seed = args.seed if args.seed is not None else cfg.train.seed
    rng = np.random.default_rng(np.random.SeedSequence(entropy=(int(seed), 0x7375)))
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    counts = {}
    # permutation prefixes: one seed yields nested subsets across fractions,
    # so a sample-efficiency sweep compares supersets rather than disjoint draws
    for name, rows in (("desirable", desirable), ("undesirable", undesirable)):
        take = subset_size(len(rows), args.fraction)
        order = rng.permutation(len(rows)) if rows else []
        picked = [rows[i] for i in order[:take]]
        counts[name] = write_dataset(picked, out_dir / f"{name}.jsonl")
    print(f"subset fraction {args.fraction}: desirable {counts['desirable']} "
          f"undesirable {counts['undesirable']} -> {out_dir}")
    return 0


def subset_size(n: int, fraction: float) -> int:
    """Stratified subset size: round-half-up of fraction * n."""
    return int(fraction * n + 0.5)


def cmd_report(args) -> int:
    records = []
    for path in args.metrics:
        for line in _require_file(path, "metrics file").read_text().splitlines():
            if line.strip():
                records.append(json.loads(line))
    if not records:
        raise ConfigError("no metrics records found")
    header = f"{'name':<16}" + "".join(f"{k:>10}" for k in
                                       ("Succ.", "Re.", "T@All", "S@All", "T@Succ.", "S@Succ."))
    print(header)
    for rec in records:
        print(f"{rec.get('name', '')[:16]:<16}"
              f"{rec['success_rate']:>10.4f}{rec['mean_reward']:>10.4f}"
              f"{rec['tokens_all']:>10.2f}{rec['steps_all']:>10.2f}"
              f"{rec['tokens_succ']:>10.2f}{rec['steps_succ']:>10.2f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="depo",
        description="Dual-efficiency preference optimization pipeline")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config=True):
        if config:
            p.add_argument("--config", required=True, help="pipeline config (JSON)")
        p.add_argument("--seed", type=int, default=None,
                       help="override the stage seed")
        return p

    p = common(sub.add_parser("generate", help="run MCTS over a task suite"))
    p.add_argument("--tasks", type=int, required=True)
    p.add_argument("--out", default=None, help="output dataset file")
    p.set_defaults(fn=cmd_generate)

    p = common(sub.add_parser("label", help="split a dataset into desirable/undesirable"))
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(fn=cmd_label)

    p = common(sub.add_parser("sft", help="behavioral cloning on desirable data"))
    p.add_argument("--data", required=True, help="desirable dataset file")
    p.add_argument("--init", default=None, help="initial checkpoint (default: fresh)")
    p.add_argument("--out", default=None)
    p.set_defaults(fn=cmd_sft)

    for name, fn, doc in (("kto", cmd_kto, "vanilla KTO post-training"),
                          ("depo", cmd_depo, "dual-efficiency post-training")):
        p = common(sub.add_parser(name, help=doc))
        p.add_argument("--desirable", required=True)
        p.add_argument("--undesirable", required=True)
        p.add_argument("--ref", required=True, help="frozen BC reference checkpoint")
        p.add_argument("--init", default=None, help="initial checkpoint (default: ref)")
        p.add_argument("--out", default=None)
        p.set_defaults(fn=fn)

    p = common(sub.add_parser("eval", help="run episodes and report metrics"))
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--episodes", type=int, default=None)
    p.add_argument("--out", default=None, help="report directory")
    p.add_argument("--compare", default=None, help="baseline checkpoint for deltas")
    p.add_argument("--dump-episodes", action="store_true")
    p.set_defaults(fn=cmd_eval)

    p = common(sub.add_parser("subset", help="stratified subsample of a labeled set"))
    p.add_argument("--desirable", required=True)
    p.add_argument("--undesirable", required=True)
    p.add_argument("--fraction", type=float, required=True)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(fn=cmd_subset)

    p = sub.add_parser("report", help="pretty-print metrics records")
    p.add_argument("--metrics", nargs="+", required=True)
    p.set_defaults(fn=cmd_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigError, CheckpointError, ContractViolation, FileNotFoundError) as exc:
        return _fail(2, str(exc))
    except Exception as exc:  # runtime failure
        return _fail(1, f"{type(exc).__name__}: {exc}")


if __name__ == "__main__":
    sys.exit(main())
