"""Command-line interface.

Subcommands mirror the pipeline stages (generate-tasks, train-tasks,
select, meta-train, evaluate) plus the orchestrated studies (run, sweep,
ablate, plots).  Global flags: --config, --seed, --workers, --out,
--resume.  Exit codes: 0 success, 2 configuration error, 3 stage failure.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import replace

from .errors import ConfigurationError, MetaselectError
from .experiments import (
    ALL_TASKS,
    VALIDATION_AS_TRAINING,
    config_from_json_dict,
    curve_rows,
    default_config,
    emit_plots,
    epsilon_sweep,
    run_pipeline,
    train_pool_tasks,
    ablation,
    CURVE_COLUMNS,
    _write_csv,
)
from .generators import TaskPool, TaskSpec, build_mdp, build_task_pool
from .metalearn import MetaPolicy, evaluate_meta_policy, meta_train
from .selection import sample_validation_states, select_tasks, shuffled_order
from .training import TrainedTask
from .util import derive_seed, dump_json, load_json


def _add_global_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="experiment config JSON file")
    parser.add_argument("--seed", type=int, help="override the pool master seed")
    parser.add_argument("--workers", type=int, default=1, help="parallel workers for heavy stages")
    parser.add_argument("--out", default="out", help="output directory")
    parser.add_argument("--resume", action="store_true", help="reuse cached stage outputs when inputs match")


def _load_config(args: argparse.Namespace):
    if args.config:
        cfg = config_from_json_dict(load_json(args.config))
    else:
        cfg = default_config(getattr(args, "family", None) or "grid_maze")
    if getattr(args, "family", None) and not args.config:
        cfg = default_config(args.family)
    if args.seed is not None:
        cfg = replace(cfg, pool=replace(cfg.pool, master_seed=args.seed))
    return cfg


def _load_pool(path: str) -> TaskPool:
    return TaskPool.from_json_dict(load_json(path))


def _load_trained(directory: str, pool: TaskPool) -> list[TrainedTask]:
    trained = []
    for i in range(len(pool.training)):
        trained.append(TrainedTask.from_json_dict(load_json(os.path.join(directory, f"task_{i:03d}.json"))))
    return trained


def cmd_generate_tasks(args) -> int:
    cfg = _load_config(args)
    pool = build_task_pool(
        cfg.family,
        cfg.pool.train_count,
        cfg.pool.validation_count,
        cfg.pool.test_count,
        master_seed=cfg.pool.master_seed,
        params=cfg.params,
    )
    path = os.path.join(args.out, "pool.json")
    dump_json(path, pool.to_json_dict())
    print(f"wrote {path}: {len(pool.training)} training, {len(pool.validation)} validation, "
          f"{len(pool.test)} test tasks")
    return 0


def cmd_train_tasks(args) -> int:
    cfg = _load_config(args)
    pool = _load_pool(args.pool)
    base_seed = args.seed if args.seed is not None else cfg.pool.master_seed
    trained = train_pool_tasks(pool, cfg.learner, base_seed, cache=None, workers=args.workers)
    out_dir = os.path.join(args.out, "trained")
    os.makedirs(out_dir, exist_ok=True)
    for i, task in enumerate(trained):
        dump_json(os.path.join(out_dir, f"task_{i:03d}.json"), task.to_json_dict())
    converged = sum(t.converged for t in trained)
    print(f"wrote {len(trained)} trained tasks to {out_dir} ({converged} converged)")
    return 0


def cmd_select(args) -> int:
    cfg = _load_config(args)
    pool = _load_pool(args.pool)
    trained = _load_trained(args.trained, pool)
    sel = cfg.selection
    if args.epsilon is not None:
        sel = replace(sel, epsilon=args.epsilon)
    if args.repeats is not None:
        sel = replace(sel, relevance_repeats=args.repeats)
    if args.episodes is not None:
        sel = replace(sel, learning_episodes=args.episodes)
    if args.states is not None:
        sel = replace(sel, validation_state_count=args.states)
    seed = args.seed if args.seed is not None else cfg.pool.master_seed
    sel = replace(sel, rng_seed=derive_seed(seed, "selection"))

    validation = pool.validation_mdps()
    sample = sample_validation_states(validation, sel.validation_state_count, derive_seed(seed, "validation-sample"))
    if args.order == "shuffled":
        order = shuffled_order(len(trained), derive_seed(seed, "order"))
        trained = [trained[i] for i in order]
    result = select_tasks(
        trained,
        validation,
        sample,
        sel,
        cfg.learner,
        validation_specs=pool.validation,
        force_relevant=args.force_relevant,
        workers=args.workers,
    )
    path = os.path.join(args.out, "selection.json")
    dump_json(path, result.to_json_dict())
    print(f"wrote {path}: selected {len(result.selected_indices)} of {len(trained)} tasks")
    return 0


def _task_set_from_arg(arg: str, pool: TaskPool) -> list[TaskSpec]:
    if arg == "all":
        return list(pool.training)
    if arg == "validation":
        return list(pool.validation)
    data = load_json(arg)
    return [TaskSpec.from_json_dict(d) for d in data["selected"] if d is not None]


def cmd_meta_train(args) -> int:
    cfg = _load_config(args)
    pool = _load_pool(args.pool)
    specs = _task_set_from_arg(args.tasks, pool)
    if not specs:
        raise ConfigurationError("task set is empty; nothing to meta-train on")
    seed = args.seed if args.seed is not None else cfg.pool.master_seed
    meta_cfg = replace(
        cfg.meta,
        tasks_per_meta_batch=min(cfg.meta.tasks_per_meta_batch, len(specs)),
        rng_seed=derive_seed(seed, "meta"),
    )
    meta = meta_train([build_mdp(s) for s in specs], meta_cfg, cfg.learner, task_specs=specs)
    path = os.path.join(args.out, "meta_policy.json")
    dump_json(path, meta.to_json_dict())
    print(f"wrote {path} (meta-trained on {len(specs)} tasks)")
    return 0


def cmd_evaluate(args) -> int:
    cfg = _load_config(args)
    pool = _load_pool(args.pool)
    meta = MetaPolicy.from_json_dict(load_json(args.policy))
    seed = args.seed if args.seed is not None else cfg.pool.master_seed
    eval_cfg = replace(cfg.learner, step_size=cfg.meta.inner_step_size, rng_seed=derive_seed(seed, "eval"))
    curves = evaluate_meta_policy(
        meta, pool.test_mdps(), cfg.evaluation.adaptation_episodes, cfg.evaluation.eval_seeds, eval_cfg
    )
    result = {
        "task_set_id": "cli",
        "curves": [c.to_json_dict() for c in curves],
        "final_returns": [c.final_return for c in curves],
        "mean_final_return": sum(c.final_return for c in curves) / len(curves),
        "meta_seed": None,
        "eval_seed": derive_seed(seed, "eval"),
    }
    dump_json(os.path.join(args.out, "evaluation.json"), result)
    _write_csv(os.path.join(args.out, "curves.csv"), CURVE_COLUMNS, curve_rows(args.baseline, result))
    print(f"wrote curves to {os.path.join(args.out, 'curves.csv')}; "
          f"mean final return {result['mean_final_return']:.4f}")
    return 0


def cmd_run(args) -> int:
    cfg = _load_config(args)
    report = run_pipeline(cfg, out_dir=args.out, workers=args.workers, resume=args.resume)
    print(f"wrote report to {os.path.join(args.out, 'report.json')}")
    for name, summary in sorted(report.summary.items()):
        print(f"  {name}: mean final return {summary['mean_final_return']:.4f} "
              f"[{summary['ci_low']:.4f}, {summary['ci_high']:.4f}]")
    return 0


def cmd_sweep(args) -> int:
    cfg = _load_config(args)
    eps = [float(e) for e in args.epsilons.split(",")] if args.epsilons else None
    report = epsilon_sweep(cfg, epsilon_values=eps, out_dir=args.out, workers=args.workers, resume=args.resume)
    print(f"wrote sweep report to {os.path.join(args.out, 'sweep_report.json')}")
    for row in report["rows"]:
        print(f"  eps={row['epsilon_raw']:.3f}: normalized return {row['mean_return']:.4f} "
              f"subset size {row['subset_size']:.1f}")
    return 0


def cmd_ablate(args) -> int:
    cfg = _load_config(args)
    report = ablation(cfg, out_dir=args.out, workers=args.workers, resume=args.resume)
    print(f"wrote ablation report to {os.path.join(args.out, 'ablation_report.json')}")
    for mode, summary in sorted(report["summary"].items()):
        print(f"  {mode}: mean final return {summary['mean_final_return']:.4f}")
    return 0


def cmd_plots(args) -> int:
    report = load_json(args.report)
    written = emit_plots(report, args.out)
    for path in written:
        print(f"wrote {path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="metaselect",
        description="Task selection for meta-reinforcement learning on tabular task families.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate-tasks", help="write a task pool manifest")
    p.add_argument("--family", choices=["grid_maze", "cartpole"], help="task family (when no --config)")
    _add_global_flags(p)
    p.set_defaults(fn=cmd_generate_tasks)

    p = sub.add_parser("train-tasks", help="train every pool training task to convergence")
    p.add_argument("--pool", required=True, help="pool manifest JSON")
    _add_global_flags(p)
    p.set_defaults(fn=cmd_train_tasks)

    p = sub.add_parser("select", help="select different-and-relevant training tasks")
    p.add_argument("--pool", required=True)
    p.add_argument("--trained", required=True, help="directory of trained-task files")
    p.add_argument("--epsilon", type=float, help="difference threshold")
    p.add_argument("--repeats", type=int, help="relevance repeats per validation task")
    p.add_argument("--episodes", type=int, help="fine-tuning episodes per relevance cycle")
    p.add_argument("--states", type=int, help="validation/on-policy sample size")
    p.add_argument("--order", choices=["given", "shuffled"], default="given")
    p.add_argument("--force-relevant", action="store_true", help="skip the relevance filter")
    _add_global_flags(p)
    p.set_defaults(fn=cmd_select)

    p = sub.add_parser("meta-train", help="meta-train an initialization on a task set")
    p.add_argument("--pool", required=True)
    p.add_argument("--tasks", required=True,
                   help="selection.json path, or 'all' / 'validation'")
    _add_global_flags(p)
    p.set_defaults(fn=cmd_meta_train)

    p = sub.add_parser("evaluate", help="evaluate a meta policy on the pool's test tasks")
    p.add_argument("--pool", required=True)
    p.add_argument("--policy", required=True, help="meta_policy.json path")
    p.add_argument("--baseline", default="itts", help="baseline label for the curves CSV")
    _add_global_flags(p)
    p.set_defaults(fn=cmd_evaluate)

    p = sub.add_parser("run", help="full pipeline: generate, train, select, meta-train, evaluate")
    p.add_argument("--family", choices=["grid_maze", "cartpole"])
    _add_global_flags(p)
    p.set_defaults(fn=cmd_run)

    p = sub.add_parser("sweep", help="sweep the difference threshold")
    p.add_argument("--family", choices=["grid_maze", "cartpole"])
    p.add_argument("--epsilons", help="comma-separated threshold values")
    _add_global_flags(p)
    p.set_defaults(fn=cmd_sweep)

    p = sub.add_parser("ablate", help="filter ablation: both, difference only, relevance only, none")
    p.add_argument("--family", choices=["grid_maze", "cartpole"])
    _add_global_flags(p)
    p.set_defaults(fn=cmd_ablate)

    p = sub.add_parser("plots", help="emit per-figure CSVs and a plotting script from a report")
    p.add_argument("--report", required=True, help="report JSON file")
    _add_global_flags(p)
    p.set_defaults(fn=cmd_plots)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except (MetaselectError, OSError, KeyError, ValueError) as exc:
        print(f"stage failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
