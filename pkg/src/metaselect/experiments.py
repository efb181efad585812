"""Config-driven experiment orchestration.

A full pipeline run is a pure function of its config (including the master
seed): generate a task pool, train every training task to convergence,
resolve each baseline's meta-training set (selection, all tasks, random
subsets, or the validation set), meta-train, and evaluate adaptation on the
held-out test tasks.  Each of ``runs`` repetitions draws a fresh pool and
evaluation seeds from the master seed; within a run, every baseline shares
the trained tasks, test tasks, and meta/eval seeds, so the only variable is
the task set itself.

Three studies are built on top of the pipeline: a sweep over the difference
threshold, an ablation of the two selection filters, and the transfer
comparison against the non-selective baselines.  Stage outputs can be
cached on disk keyed by a content hash of their inputs, which makes re-runs
resumable; reports contain no timestamps or absolute paths, so two runs of
the same config produce byte-identical files.
"""

from __future__ import annotations

import csv
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Any, Callable, Optional, Sequence

import numpy as np

from .errors import ConfigurationError, StageError
from .generators import (
    CARTPOLE,
    GRID_MAZE,
    CartPoleParams,
    FamilyParams,
    GridMazeParams,
    TaskPool,
    TaskSpec,
    build_mdp,
    build_task_pool,
    default_params,
)
from .metalearn import MetaConfig, MetaPolicy, evaluate_meta_policy, meta_train
from .selection import (
    SelectionConfig,
    SelectionResult,
    ValidationStateSample,
    evaluate_all_relevance,
    sample_validation_states,
    select_tasks,
    shuffled_order,
)
from .training import LearnerConfig, TrainedTask, train_to_convergence
from .util import content_hash, derive_seed, dump_json, load_json, mean_ci, rng_from_seed

CONFIG_SCHEMA = "experiment-config/1"
REPORT_SCHEMA = "experiment-report/1"
SWEEP_SCHEMA = "sweep-report/1"
ABLATION_SCHEMA = "ablation-report/1"

ITTS = "itts"
ALL_TASKS = "all_tasks"
RANDOM_SUBSET = "random_subset"
VALIDATION_AS_TRAINING = "validation_as_training"
DIFFERENCE_ONLY = "difference_only"
RELEVANCE_ONLY = "relevance_only"

BASELINE_NAMES = (ITTS, ALL_TASKS, RANDOM_SUBSET, VALIDATION_AS_TRAINING, DIFFERENCE_ONLY, RELEVANCE_ONLY)

CURVE_COLUMNS = ("baseline", "task_set_id", "test_task", "seed", "episode", "return")
SWEEP_COLUMNS = ("epsilon_raw", "epsilon_normalized", "mean_return", "ci_low", "ci_high", "subset_size")


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PoolConfig:
    train_count: int = 12
    validation_count: int = 4
    test_count: int = 5
    master_seed: int = 0

    def __post_init__(self):
        if min(self.train_count, self.validation_count, self.test_count) < 1:
            raise ConfigurationError("pool counts must be at least 1")

    def to_json_dict(self) -> dict:
        return {
            "train_count": self.train_count,
            "validation_count": self.validation_count,
            "test_count": self.test_count,
            "master_seed": self.master_seed,
        }


@dataclass(frozen=True)
class EvalConfig:
    adaptation_episodes: int = 40
    eval_seeds: int = 4

    def __post_init__(self):
        if self.adaptation_episodes < 1 or self.eval_seeds < 1:
            raise ConfigurationError("evaluation counts must be at least 1")

    def to_json_dict(self) -> dict:
        return {"adaptation_episodes": self.adaptation_episodes, "eval_seeds": self.eval_seeds}


@dataclass(frozen=True)
class BaselineSpec:
    name: str
    subset_size: Optional[int] = None  # random_subset: fixed size; None -> random size per draw
    num_draws: int = 4

    def __post_init__(self):
        if self.name not in BASELINE_NAMES:
            raise ConfigurationError(f"unknown baseline {self.name!r}; known: {BASELINE_NAMES}")
        if self.num_draws < 1:
            raise ConfigurationError("num_draws must be at least 1")
        if self.subset_size is not None and self.subset_size < 1:
            raise ConfigurationError("subset_size must be at least 1")

    def to_json_dict(self) -> dict:
        data: dict[str, Any] = {"name": self.name}
        if self.name == RANDOM_SUBSET:
            data["subset_size"] = self.subset_size
            data["num_draws"] = self.num_draws
        return data


@dataclass(frozen=True)
class ExperimentConfig:
    family: str = GRID_MAZE
    family_params: Optional[FamilyParams] = None
    pool: PoolConfig = field(default_factory=PoolConfig)
    learner: LearnerConfig = field(default_factory=LearnerConfig)
    selection: SelectionConfig = field(default_factory=SelectionConfig)
    meta: MetaConfig = field(default_factory=MetaConfig)
    evaluation: EvalConfig = field(default_factory=EvalConfig)
    baselines: tuple[BaselineSpec, ...] = (
        BaselineSpec(ITTS),
        BaselineSpec(ALL_TASKS),
        BaselineSpec(RANDOM_SUBSET),
        BaselineSpec(VALIDATION_AS_TRAINING),
    )
    runs: int = 5
    epsilon_values: tuple[float, ...] = ()
    shuffle_candidates: bool = False
    output_dir: Optional[str] = None

    def __post_init__(self):
        if self.runs < 1:
            raise ConfigurationError("runs must be at least 1")
        if self.family not in (GRID_MAZE, CARTPOLE):
            raise ConfigurationError(f"unknown family {self.family!r}")
        names = [b.name for b in self.baselines]
        if len(set(names)) != len(names):
            raise ConfigurationError("duplicate baseline entries")

    @property
    def params(self) -> FamilyParams:
        return self.family_params or default_params(self.family)

    def to_json_dict(self) -> dict:
        return {
            "schema_version": CONFIG_SCHEMA,
            "family": self.family,
            "family_params": self.params.to_json_dict(),
            "pool": self.pool.to_json_dict(),
            "learner": self.learner.to_json_dict(),
            "selection": {
                **self.selection.to_json_dict(),
                "epsilon_values": list(self.epsilon_values),
                "shuffle_candidates": self.shuffle_candidates,
            },
            "meta": self.meta.to_json_dict(),
            "evaluation": self.evaluation.to_json_dict(),
            "baselines": [b.to_json_dict() for b in self.baselines],
            "runs": self.runs,
            "output_dir": self.output_dir,
        }


def _strict(section: str, data: dict, allowed: set[str]) -> None:
    unknown = set(data) - allowed
    if unknown:
        raise ConfigurationError(f"unknown keys in {section!r} config section: {sorted(unknown)}")


def _parse_baseline(entry: Any) -> BaselineSpec:
    if isinstance(entry, str):
        return BaselineSpec(name=entry)
    if isinstance(entry, dict):
        _strict("baselines[]", entry, {"name", "subset_size", "num_draws"})
        return BaselineSpec(
            name=entry.get("name", ""),
            subset_size=entry.get("subset_size"),
            num_draws=entry.get("num_draws", 4),
        )
    raise ConfigurationError(f"baseline entries must be strings or objects, got {entry!r}")


def config_from_json_dict(data: dict) -> ExperimentConfig:
    """Parse a declarative config document; unknown keys are errors."""
    if not isinstance(data, dict):
        raise ConfigurationError("config document must be a JSON object")
    allowed = {
        "schema_version",
        "family",
        "family_params",
        "pool",
        "learner",
        "selection",
        "meta",
        "evaluation",
        "baselines",
        "runs",
        "output_dir",
    }
    _strict("<root>", data, allowed)
    if "schema_version" in data and data["schema_version"] != CONFIG_SCHEMA:
        raise ConfigurationError(f"expected {CONFIG_SCHEMA}, got {data['schema_version']!r}")

    family = data.get("family", GRID_MAZE)
    family_params: Optional[FamilyParams] = None
    if data.get("family_params") is not None:
        raw_params = dict(data["family_params"])
        try:
            if family == GRID_MAZE:
                family_params = GridMazeParams(**raw_params)
            elif family == CARTPOLE:
                family_params = CartPoleParams(
                    **{k: tuple(v) if isinstance(v, list) else v for k, v in raw_params.items()}
                )
            else:
                raise ConfigurationError(f"unknown family {family!r}")
        except TypeError as exc:
            raise ConfigurationError(f"bad family_params: {exc}") from exc

    def section(name: str, cls, extra: dict | None = None):
        raw = dict(data.get(name, {}))
        fields = {f for f in cls.__dataclass_fields__}
        _strict(name, raw, fields | set(extra or ()))
        for key in extra or ():
            raw.pop(key, None)
        try:
            return cls(**raw)
        except TypeError as exc:
            raise ConfigurationError(f"bad {name} section: {exc}") from exc

    selection_raw = dict(data.get("selection", {}))
    epsilon_values = tuple(float(e) for e in selection_raw.get("epsilon_values", ()))
    shuffle = bool(selection_raw.get("shuffle_candidates", False))

    baselines_raw = data.get(
        "baselines", [ITTS, ALL_TASKS, RANDOM_SUBSET, VALIDATION_AS_TRAINING]
    )

    return ExperimentConfig(
        family=family,
        family_params=family_params,
        pool=section("pool", PoolConfig),
        learner=section("learner", LearnerConfig),
        selection=section("selection", SelectionConfig, extra={"epsilon_values", "shuffle_candidates"}),
        meta=section("meta", MetaConfig),
        evaluation=section("evaluation", EvalConfig),
        baselines=tuple(_parse_baseline(b) for b in baselines_raw),
        runs=int(data.get("runs", 5)),
        epsilon_values=epsilon_values,
        shuffle_candidates=shuffle,
        output_dir=data.get("output_dir"),
    )


def default_config(family: str = GRID_MAZE, master_seed: int = 0) -> ExperimentConfig:
    """Desk-scale defaults per family; a full pipeline stays in the minutes range."""
    if family == GRID_MAZE:
        return ExperimentConfig(
            family=family,
            pool=PoolConfig(train_count=12, validation_count=4, test_count=5, master_seed=master_seed),
            learner=LearnerConfig(step_size=0.3, episodes_per_epoch=30, max_epochs=60,
                                  convergence_window=4, convergence_tolerance=0.05),
            selection=SelectionConfig(epsilon=0.15, relevance_repeats=3, learning_episodes=15,
                                      validation_state_count=40),
            meta=MetaConfig(meta_iterations=50, tasks_per_meta_batch=4, inner_episodes=5,
                            inner_step_size=0.3, meta_step_size=0.5),
            evaluation=EvalConfig(adaptation_episodes=40, eval_seeds=4),
            epsilon_values=(0.0, 0.05, 0.15, 0.4, 1.0, 8.0),
            runs=5,
        )
    if family == CARTPOLE:
        return ExperimentConfig(
            family=family,
            pool=PoolConfig(train_count=16, validation_count=5, test_count=5, master_seed=master_seed),
            learner=LearnerConfig(step_size=0.01, episodes_per_epoch=50, max_epochs=50,
                                  convergence_window=4, convergence_tolerance=4.0),
            selection=SelectionConfig(epsilon=0.1, relevance_repeats=3, learning_episodes=20,
                                      validation_state_count=40),
            meta=MetaConfig(meta_iterations=40, tasks_per_meta_batch=4, inner_episodes=5,
                            inner_step_size=0.01, meta_step_size=0.5),
            evaluation=EvalConfig(adaptation_episodes=200, eval_seeds=3),
            epsilon_values=(0.0, 0.05, 0.1, 0.3, 0.8, 8.0),
            runs=5,
        )
    raise ConfigurationError(f"unknown family {family!r}")


# ---------------------------------------------------------------------------
# Stage cache
# ---------------------------------------------------------------------------


class StageCache:
    """Content-addressed JSON cache for pipeline stage outputs.

    A cached value is reused only when the content hash of all stage inputs
    matches; with ``resume=False`` everything is recomputed (and rewritten),
    which must produce identical bytes for a deterministic pipeline.
    """

    def __init__(self, root: Optional[str], resume: bool):
        self.root = root
        self.resume = resume

    def path(self, stage: str, key: str) -> Optional[str]:
        if self.root is None:
            return None
        return os.path.join(self.root, f"{stage}-{key}.json")

    def get_or_compute(self, stage: str, inputs: Any, compute: Callable[[], Any]) -> Any:
        key = content_hash({"stage": stage, "inputs": inputs})
        path = self.path(stage, key)
        if path is not None and self.resume and os.path.exists(path):
            return load_json(path)
        try:
            value = compute()
        except Exception as exc:
            if isinstance(exc, StageError):
                raise
            raise StageError(stage, str(exc)) from exc
        if path is not None:
            dump_json(path, value)
        return value


# ---------------------------------------------------------------------------
# Pipeline stages
# ---------------------------------------------------------------------------


def _train_job(args: tuple[TaskSpec, LearnerConfig]) -> dict:
    spec, cfg = args
    return train_to_convergence(build_mdp(spec), cfg, spec=spec).to_json_dict()


def train_pool_tasks(
    pool: TaskPool,
    learner_cfg: LearnerConfig,
    base_seed: int,
    cache: StageCache | None = None,
    workers: int = 1,
) -> list[TrainedTask]:
    """Train every training task with per-task derived seeds; parallel when
    ``workers`` > 1 (results are identical either way)."""
    jobs = [
        (spec, replace(learner_cfg, rng_seed=derive_seed(base_seed, "train-task", i)))
        for i, spec in enumerate(pool.training)
    ]

    def compute() -> list[dict]:
        if workers > 1:
            with ProcessPoolExecutor(max_workers=workers) as ex:
                return list(ex.map(_train_job, jobs))
        return [_train_job(job) for job in jobs]

    if cache is None:
        return [TrainedTask.from_json_dict(d) for d in compute()]
    payload = {
        "pool": pool.to_json_dict(),
        "learner": learner_cfg.to_json_dict(),
        "base_seed": base_seed,
    }
    data = cache.get_or_compute("train", payload, compute)
    return [TrainedTask.from_json_dict(d) for d in data]


@dataclass
class _RunContext:
    """Everything one run's baselines share."""

    run_index: int
    run_seed: int
    pool: TaskPool
    trained: list[TrainedTask]
    sample: ValidationStateSample
    meta_seed: int
    eval_seed: int
    metaeval_memo: dict[str, dict] = field(default_factory=dict)


def _prepare_run(
    config: ExperimentConfig, run_index: int, cache: StageCache, workers: int
) -> _RunContext:
    run_seed = derive_seed(config.pool.master_seed, "run", run_index)

    def build_pool() -> dict:
        return build_task_pool(
            config.family,
            config.pool.train_count,
            config.pool.validation_count,
            config.pool.test_count,
            master_seed=run_seed,
            params=config.params,
        ).to_json_dict()

    pool = TaskPool.from_json_dict(cache.get_or_compute("pool", {"run_seed": run_seed, "family": config.family, "params": config.params.to_json_dict(), "counts": config.pool.to_json_dict()}, build_pool))
    trained = train_pool_tasks(pool, config.learner, run_seed, cache, workers)
    sample = sample_validation_states(
        pool.validation_mdps(), config.selection.validation_state_count, derive_seed(run_seed, "validation-sample")
    )
    return _RunContext(
        run_index=run_index,
        run_seed=run_seed,
        pool=pool,
        trained=trained,
        sample=sample,
        meta_seed=derive_seed(run_seed, "meta"),
        eval_seed=derive_seed(run_seed, "eval"),
    )


def _candidate_order(config: ExperimentConfig, ctx: _RunContext) -> list[int]:
    if config.shuffle_candidates:
        return shuffled_order(len(ctx.trained), derive_seed(ctx.run_seed, "order"))
    return list(range(len(ctx.trained)))


def _run_selection(
    config: ExperimentConfig,
    ctx: _RunContext,
    epsilon: float,
    force_relevant: bool,
    workers: int = 1,
    precomputed=None,
) -> tuple[SelectionResult, list[int]]:
    """Selection over the run's trained tasks; returns the result plus the
    selected indices mapped back into pool order."""
    order = _candidate_order(config, ctx)
    candidates = [ctx.trained[i] for i in order]
    sel_cfg = replace(config.selection, epsilon=epsilon, rng_seed=derive_seed(ctx.run_seed, "selection"))
    result = select_tasks(
        candidates,
        ctx.pool.validation_mdps(),
        ctx.sample,
        sel_cfg,
        config.learner,
        validation_specs=ctx.pool.validation,
        force_relevant=force_relevant,
        workers=workers,
        precomputed_relevance=precomputed,
    )
    picked = [order[i] for i in result.selected_indices]
    return result, picked


def _meta_and_eval(
    config: ExperimentConfig,
    ctx: _RunContext,
    task_specs: Sequence[TaskSpec],
) -> dict:
    """Meta-train on a task set and evaluate adaptation on the run's test tasks.

    Seeds are shared per run (not per baseline), so identical task sets give
    identical results and different task sets are compared like for like.
    Output is a JSON-ready dict, memoized per task set within the run.
    """
    set_id = content_hash([s.to_json_dict() for s in task_specs])
    memo = ctx.metaeval_memo
    if set_id in memo:
        return memo[set_id]

    test_tasks = ctx.pool.test_mdps()
    eval_cfg = replace(config.learner, step_size=config.meta.inner_step_size, rng_seed=ctx.eval_seed)
    if task_specs:
        task_set = [build_mdp(s) for s in task_specs]
        meta_cfg = replace(
            config.meta,
            tasks_per_meta_batch=min(config.meta.tasks_per_meta_batch, len(task_set)),
            rng_seed=ctx.meta_seed,
        )
        meta = meta_train(task_set, meta_cfg, config.learner, task_specs=task_specs)
    else:
        # Nothing selected: adaptation starts from the uniform initialization.
        probe = test_tasks[0]
        meta = MetaPolicy(
            init_logits=np.zeros((probe.num_states, probe.num_actions)),
            provenance={"task_set": [], "meta_config": config.meta.to_json_dict(), "seed": ctx.meta_seed,
                        "note": "empty task set; uniform initialization"},
        )
    curves = evaluate_meta_policy(
        meta, test_tasks, config.evaluation.adaptation_episodes, config.evaluation.eval_seeds, eval_cfg
    )
    final_returns = [c.final_return for c in curves]
    out = {
        "task_set_id": set_id,
        "task_set": [s.to_json_dict() for s in task_specs],
        "meta_seed": ctx.meta_seed,
        "eval_seed": ctx.eval_seed,
        "curves": [c.to_json_dict() for c in curves],
        "final_returns": final_returns,
        "mean_final_return": float(np.mean(final_returns)),
    }
    memo[set_id] = out
    return out


def _resolve_baseline(
    config: ExperimentConfig, ctx: _RunContext, spec: BaselineSpec, workers: int
) -> dict:
    name = spec.name
    if name == ALL_TASKS:
        result = _meta_and_eval(config, ctx, ctx.pool.training)
        return {"name": name, **result}
    if name == VALIDATION_AS_TRAINING:
        result = _meta_and_eval(config, ctx, ctx.pool.validation)
        return {"name": name, **result}
    if name == RANDOM_SUBSET:
        draws = []
        train = ctx.pool.training
        for d in range(spec.num_draws):
            rng = rng_from_seed(derive_seed(ctx.run_seed, "random-subset", d))
            size = spec.subset_size or int(rng.integers(1, len(train) + 1))
            size = min(size, len(train))
            picked = sorted(int(i) for i in rng.choice(len(train), size=size, replace=False))
            result = _meta_and_eval(config, ctx, [train[i] for i in picked])
            draws.append({"draw": d, "indices": picked, **result})
        finals = [d["mean_final_return"] for d in draws]
        return {
            "name": name,
            "draws": draws,
            "final_returns": finals,
            "mean_final_return": float(np.mean(finals)),
        }
    if name in (ITTS, DIFFERENCE_ONLY, RELEVANCE_ONLY):
        epsilon = 0.0 if name == RELEVANCE_ONLY else config.selection.epsilon
        selection, picked = _run_selection(
            config, ctx, epsilon, force_relevant=(name == DIFFERENCE_ONLY), workers=workers
        )
        result = _meta_and_eval(config, ctx, [ctx.pool.training[i] for i in picked])
        return {
            "name": name,
            "selected_pool_indices": picked,
            "selection": selection.to_json_dict(),
            **result,
        }
    raise ConfigurationError(f"unknown baseline {name!r}")


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------


def _curve_values(baseline_result: dict) -> list[float]:
    values: list[float] = []
    for entry in baseline_result.get("draws", [baseline_result]):
        for curve in entry.get("curves", ()):
            values.extend(curve["mean_curve"])
    return values


def _normalize(value: float, low: float, high: float) -> float:
    if high - low < 1e-12:
        return 0.0
    return (value - low) / (high - low)


@dataclass(frozen=True)
class ExperimentReport:
    """Transfer-comparison report: per-run detail plus per-baseline summary."""

    family: str
    config: dict
    runs: list[dict]
    summary: dict
    normalization: dict

    def to_json_dict(self) -> dict:
        return {
            "schema_version": REPORT_SCHEMA,
            "family": self.family,
            "config": self.config,
            "normalization": self.normalization,
            "runs": self.runs,
            "summary": self.summary,
        }


def _summarize(per_run: dict[str, list[float]], low: float, high: float) -> dict:
    summary = {}
    for name, finals in per_run.items():
        mean, ci_low, ci_high = mean_ci(finals)
        summary[name] = {
            "per_run_mean_final_return": finals,
            "mean_final_return": mean,
            "ci_low": ci_low,
            "ci_high": ci_high,
            "normalized_mean": _normalize(mean, low, high),
            "runs": len(finals),
        }
    return summary


def run_pipeline(
    config: ExperimentConfig,
    out_dir: Optional[str] = None,
    workers: int = 1,
    resume: bool = False,
) -> ExperimentReport:
    """Execute generate -> train -> (select -> meta-train -> evaluate) per baseline.

    Deterministic given the config; when ``out_dir`` is set, stage outputs
    are cached there and ``report.json`` / ``curves.csv`` / ``summary.csv``
    are written.
    """
    out_dir = out_dir or config.output_dir
    cache = StageCache(os.path.join(out_dir, "cache") if out_dir else None, resume)

    runs: list[dict] = []
    for r in range(config.runs):
        ctx = _prepare_run(config, r, cache, workers)
        baselines: dict[str, dict] = {}
        for spec in config.baselines:
            payload = {
                "run_seed": ctx.run_seed,
                "baseline": spec.to_json_dict(),
                "config": config.to_json_dict(),
            }
            baselines[spec.name] = cache.get_or_compute(
                f"baseline-{spec.name}", payload, lambda s=spec: _resolve_baseline(config, ctx, s, workers)
            )
        shared = {"meta_seed": ctx.meta_seed, "eval_seed": ctx.eval_seed}
        for name, result in baselines.items():
            entries = result.get("draws", [result])
            for entry in entries:
                if entry.get("meta_seed") != shared["meta_seed"] or entry.get("eval_seed") != shared["eval_seed"]:
                    raise StageError("report", f"baseline {name} does not share run seeds; comparability broken")
        runs.append(
            {
                "run_index": r,
                "run_seed": ctx.run_seed,
                "pool": ctx.pool.to_json_dict(),
                "trained": [
                    {
                        "task_index": i,
                        "mean_return_at_convergence": t.mean_return_at_convergence,
                        "training_episodes_used": t.training_episodes_used,
                        "converged": t.converged,
                    }
                    for i, t in enumerate(ctx.trained)
                ],
                "shared": shared,
                "baselines": baselines,
            }
        )

    all_values: list[float] = []
    for run in runs:
        for result in run["baselines"].values():
            all_values.extend(_curve_values(result))
    low, high = (min(all_values), max(all_values)) if all_values else (0.0, 0.0)

    per_run = {
        spec.name: [run["baselines"][spec.name]["mean_final_return"] for run in runs]
        for spec in config.baselines
    }
    report = ExperimentReport(
        family=config.family,
        config=config.to_json_dict(),
        runs=runs,
        summary=_summarize(per_run, low, high),
        normalization={"min": low, "max": high},
    )
    if out_dir:
        write_report_files(report.to_json_dict(), out_dir)
    return report


# ---------------------------------------------------------------------------
# Sweep and ablation
# ---------------------------------------------------------------------------


def epsilon_sweep(
    config: ExperimentConfig,
    epsilon_values: Sequence[float] | None = None,
    out_dir: Optional[str] = None,
    workers: int = 1,
    resume: bool = False,
) -> dict:
    """Run selection + meta-training per threshold with shared trained tasks.

    One relevance pass per run is reused across all thresholds (relevance
    does not depend on the threshold), so the sweep cost is dominated by
    meta-training.  Returns (and writes) a sweep report whose rows carry raw
    and action-normalized thresholds, normalized mean returns with
    confidence intervals, and subset sizes.
    """
    eps_values = list(epsilon_values if epsilon_values is not None else config.epsilon_values)
    if len(eps_values) < 2:
        raise ConfigurationError("a sweep needs at least 2 epsilon values")
    out_dir = out_dir or config.output_dir
    cache = StageCache(os.path.join(out_dir, "cache") if out_dir else None, resume)

    num_actions = build_mdp(
        TaskSpec(family=config.family, seed=derive_seed(0, "probe"), params=config.params)
    ).num_actions

    run_rows: list[dict] = []
    for r in range(config.runs):
        ctx = _prepare_run(config, r, cache, workers)

        def compute_run() -> dict:
            order = _candidate_order(config, ctx)
            candidates = [ctx.trained[i] for i in order]
            sel_cfg = replace(config.selection, rng_seed=derive_seed(ctx.run_seed, "selection"))
            relevance = evaluate_all_relevance(
                candidates,
                ctx.pool.validation_mdps(),
                sel_cfg,
                config.learner,
                validation_specs=ctx.pool.validation,
                workers=workers,
            )
            entries = []
            for eps in eps_values:
                result = select_tasks(
                    candidates,
                    ctx.pool.validation_mdps(),
                    ctx.sample,
                    replace(sel_cfg, epsilon=eps),
                    config.learner,
                    validation_specs=ctx.pool.validation,
                    precomputed_relevance=relevance,
                )
                picked = [order[i] for i in result.selected_indices]
                evaled = _meta_and_eval(config, ctx, [ctx.pool.training[i] for i in picked])
                entries.append(
                    {
                        "epsilon": eps,
                        "selected_pool_indices": picked,
                        "subset_size": len(picked),
                        **evaled,
                    }
                )
            return {"run_index": r, "run_seed": ctx.run_seed, "entries": entries}

        payload = {"run_seed": ctx.run_seed, "epsilons": eps_values, "config": config.to_json_dict()}
        run_rows.append(cache.get_or_compute("sweep-run", payload, compute_run))

    all_values: list[float] = []
    for row in run_rows:
        for entry in row["entries"]:
            all_values.extend(_curve_values(entry))
    low, high = (min(all_values), max(all_values)) if all_values else (0.0, 0.0)

    rows = []
    for k, eps in enumerate(eps_values):
        finals = [row["entries"][k]["mean_final_return"] for row in run_rows]
        sizes = [row["entries"][k]["subset_size"] for row in run_rows]
        mean, ci_low, ci_high = mean_ci(finals)
        rows.append(
            {
                "epsilon_raw": eps,
                "epsilon_normalized": eps / num_actions,
                "mean_return_raw": mean,
                "mean_return": _normalize(mean, low, high),
                "ci_low": _normalize(ci_low, low, high),
                "ci_high": _normalize(ci_high, low, high),
                "subset_size": float(np.mean(sizes)),
                "per_run_mean_final_return": finals,
                "per_run_subset_size": sizes,
            }
        )

    report = {
        "schema_version": SWEEP_SCHEMA,
        "family": config.family,
        "config": config.to_json_dict(),
        "epsilon_values": eps_values,
        "num_actions": num_actions,
        "normalization": {"min": low, "max": high},
        "rows": rows,
        "runs": run_rows,
    }
    if out_dir:
        dump_json(os.path.join(out_dir, "sweep_report.json"), report)
        _write_csv(os.path.join(out_dir, "sweep.csv"), SWEEP_COLUMNS,
                   [[row[c] for c in SWEEP_COLUMNS] for row in rows])
    return report


ABLATION_MODES = (ITTS, DIFFERENCE_ONLY, RELEVANCE_ONLY, ALL_TASKS)


def ablation(
    config: ExperimentConfig,
    out_dir: Optional[str] = None,
    workers: int = 1,
    resume: bool = False,
) -> dict:
    """Compare both selection filters, each filter alone, and no selection,
    with shared trained tasks and seeds."""
    out_dir = out_dir or config.output_dir
    cache = StageCache(os.path.join(out_dir, "cache") if out_dir else None, resume)

    run_rows: list[dict] = []
    for r in range(config.runs):
        ctx = _prepare_run(config, r, cache, workers)

        def compute_run() -> dict:
            modes = {}
            for mode in ABLATION_MODES:
                modes[mode] = _resolve_baseline(config, ctx, BaselineSpec(mode), workers)
            return {"run_index": r, "run_seed": ctx.run_seed, "modes": modes}

        payload = {"run_seed": ctx.run_seed, "config": config.to_json_dict(), "modes": ABLATION_MODES}
        run_rows.append(cache.get_or_compute("ablation-run", payload, compute_run))

    all_values: list[float] = []
    for row in run_rows:
        for result in row["modes"].values():
            all_values.extend(_curve_values(result))
    low, high = (min(all_values), max(all_values)) if all_values else (0.0, 0.0)

    per_run = {mode: [row["modes"][mode]["mean_final_return"] for row in run_rows] for mode in ABLATION_MODES}
    report = {
        "schema_version": ABLATION_SCHEMA,
        "family": config.family,
        "config": config.to_json_dict(),
        "normalization": {"min": low, "max": high},
        "summary": _summarize(per_run, low, high),
        "runs": run_rows,
    }
    if out_dir:
        dump_json(os.path.join(out_dir, "ablation_report.json"), report)
        _write_csv(
            os.path.join(out_dir, "ablation.csv"),
            ("mode", "mean_final_return", "ci_low", "ci_high", "normalized_mean"),
            [
                [m, report["summary"][m]["mean_final_return"], report["summary"][m]["ci_low"],
                 report["summary"][m]["ci_high"], report["summary"][m]["normalized_mean"]]
                for m in ABLATION_MODES
            ],
        )
    return report


# ---------------------------------------------------------------------------
# File emission
# ---------------------------------------------------------------------------


def _write_csv(path: str, columns: Sequence[str], rows: Sequence[Sequence[Any]]) -> None:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(columns)
        for row in rows:
            writer.writerow([repr(v) if isinstance(v, float) else v for v in row])


def curve_rows(baseline_name: str, result: dict, run_index: Optional[int] = None) -> list[list]:
    """Flatten one baseline result into curve CSV rows."""
    rows = []
    for entry in result.get("draws", [result]):
        set_id = entry["task_set_id"]
        for curve in entry["curves"]:
            for seed, per_episode in enumerate(curve["returns"]):
                for episode, value in enumerate(per_episode):
                    row = [baseline_name, set_id, curve["task_index"], seed, episode, value]
                    if run_index is not None:
                        row = [run_index] + row
                    rows.append(row)
    return rows


def write_report_files(report: dict, out_dir: str) -> None:
    """Write report.json plus curves.csv / summary.csv next to it."""
    dump_json(os.path.join(out_dir, "report.json"), report)
    rows = []
    for run in report["runs"]:
        for name, result in run["baselines"].items():
            rows.extend(curve_rows(name, result, run["run_index"]))
    _write_csv(os.path.join(out_dir, "curves.csv"), ("run",) + CURVE_COLUMNS, rows)
    summary_rows = [
        [name, s["mean_final_return"], s["ci_low"], s["ci_high"], s["normalized_mean"], s["runs"]]
        for name, s in sorted(report["summary"].items())
    ]
    _write_csv(
        os.path.join(out_dir, "summary.csv"),
        ("baseline", "mean_final_return", "ci_low", "ci_high", "normalized_mean", "runs"),
        summary_rows,
    )


_PLOT_SCRIPT = '''"""Render PNG plots from the CSV files in this directory.

Usage: python render_plots.py [directory]
"""

import csv
import os
import sys
from collections import defaultdict

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt


def read_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def main(root):
    sweep = os.path.join(root, "sweep.csv")
    if os.path.exists(sweep):
        rows = read_csv(sweep)
        xs = [float(r["epsilon_normalized"]) for r in rows]
        ys = [float(r["mean_return"]) for r in rows]
        lo = [float(r["ci_low"]) for r in rows]
        hi = [float(r["ci_high"]) for r in rows]
        fig, ax = plt.subplots()
        ax.errorbar(xs, ys, yerr=[[y - l for y, l in zip(ys, lo)], [h - y for y, h in zip(ys, hi)]],
                    marker="o", capsize=3)
        ax.set_xlabel("difference threshold (normalized by action count)")
        ax.set_ylabel("normalized mean return")
        fig.savefig(os.path.join(root, "sweep.png"), dpi=150, bbox_inches="tight")

    ablation_csv = os.path.join(root, "ablation.csv")
    if os.path.exists(ablation_csv):
        rows = read_csv(ablation_csv)
        names = [r["mode"] for r in rows]
        means = [float(r["mean_final_return"]) for r in rows]
        errs = [
            (float(r["mean_final_return"]) - float(r["ci_low"]), float(r["ci_high"]) - float(r["mean_final_return"]))
            for r in rows
        ]
        fig, ax = plt.subplots()
        ax.bar(names, means, yerr=list(zip(*errs)), capsize=3)
        ax.set_ylabel("mean final return")
        fig.savefig(os.path.join(root, "ablation.png"), dpi=150, bbox_inches="tight")

    curves = os.path.join(root, "curves.csv")
    if os.path.exists(curves):
        rows = read_csv(curves)
        by_baseline = defaultdict(lambda: defaultdict(list))
        for r in rows:
            by_baseline[r["baseline"]][int(r["episode"])].append(float(r["return"]))
        fig, ax = plt.subplots()
        for name, per_episode in sorted(by_baseline.items()):
            episodes = sorted(per_episode)
            means = [sum(per_episode[e]) / len(per_episode[e]) for e in episodes]
            ax.plot(episodes, means, label=name)
        ax.set_xlabel("adaptation episode")
        ax.set_ylabel("mean return")
        ax.legend()
        fig.savefig(os.path.join(root, "adaptation.png"), dpi=150, bbox_inches="tight")


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else os.path.dirname(os.path.abspath(__file__)) or ".")
'''


def emit_plots(report: dict, out_dir: str) -> list[str]:
    """Write per-figure CSV data plus a standalone matplotlib script.

    Accepts any of the three report kinds; raises with a diagnostic listing
    the absent baselines when a report is missing required sections.
    """
    schema = report.get("schema_version")
    written: list[str] = []
    os.makedirs(out_dir, exist_ok=True)

    if schema == REPORT_SCHEMA:
        expected = [b["name"] for b in report.get("config", {}).get("baselines", [])]
        missing = [name for name in expected if name not in report.get("summary", {})]
        if missing:
            raise StageError("plots", f"report is missing baselines: {missing}")
        rows = []
        for run in report["runs"]:
            for name, result in run["baselines"].items():
                rows.extend(curve_rows(name, result, run["run_index"]))
        path = os.path.join(out_dir, f"curves_{report['family']}.csv")
        _write_csv(path, ("run",) + CURVE_COLUMNS, rows)
        written.append(path)
        path = os.path.join(out_dir, "summary.csv")
        _write_csv(
            path,
            ("baseline", "mean_final_return", "ci_low", "ci_high", "normalized_mean", "runs"),
            [
                [name, s["mean_final_return"], s["ci_low"], s["ci_high"], s["normalized_mean"], s["runs"]]
                for name, s in sorted(report["summary"].items())
            ],
        )
        written.append(path)
    elif schema == SWEEP_SCHEMA:
        path = os.path.join(out_dir, "sweep.csv")
        _write_csv(path, SWEEP_COLUMNS, [[row[c] for c in SWEEP_COLUMNS] for row in report["rows"]])
        written.append(path)
    elif schema == ABLATION_SCHEMA:
        missing = [m for m in ABLATION_MODES if m not in report.get("summary", {})]
        if missing:
            raise StageError("plots", f"ablation report is missing baselines: {missing}")
        path = os.path.join(out_dir, "ablation.csv")
        _write_csv(
            path,
            ("mode", "mean_final_return", "ci_low", "ci_high", "normalized_mean"),
            [
                [m, report["summary"][m]["mean_final_return"], report["summary"][m]["ci_low"],
                 report["summary"][m]["ci_high"], report["summary"][m]["normalized_mean"]]
                for m in ABLATION_MODES
            ],
        )
        written.append(path)
    else:
        raise StageError("plots", f"unrecognized report schema {schema!r}")

    script = os.path.join(out_dir, "render_plots.py")
    with open(script, "w", encoding="utf-8") as fh:
        fh.write(_PLOT_SCRIPT)
    written.append(script)
    return written
