"""First-order meta-learning over tabular softmax policies.

The meta-learner maintains an initialization of policy logits.  Each
meta-iteration samples a batch of tasks (uniformly, with replacement),
fine-tunes a copy of the initialization on each for a few episodes, and
moves the initialization toward the average of the adapted logits.  With a
single-task batch and meta step size 1, one meta-iteration is exactly one
fine-tune.

Evaluation measures what the initialization is for: clone it onto each
held-out test task, adapt for a fixed episode budget, and record the
per-episode returns, aggregated over evaluation seeds with confidence
intervals.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from .errors import ConfigurationError
from .generators import TaskSpec
from .mdp import SoftmaxPolicy, TabularMdp
from .training import LearnerConfig, fine_tune, fine_tune_with_returns
from .util import content_hash, derive_seed, mean_ci, rng_from_seed

META_POLICY_SCHEMA = "meta-policy/1"


@dataclass(frozen=True)
class MetaConfig:
    meta_iterations: int = 50
    tasks_per_meta_batch: int = 4
    inner_episodes: int = 5
    inner_step_size: float = 0.3
    meta_step_size: float = 0.5
    rng_seed: int = 0

    def __post_init__(self):
        if min(self.meta_iterations, self.tasks_per_meta_batch, self.inner_episodes) < 1:
            raise ConfigurationError("meta iteration, batch, and episode counts must be positive")
        if self.inner_step_size < 0:
            raise ConfigurationError("inner_step_size must be nonnegative")
        if not (0.0 <= self.meta_step_size <= 1.0):
            raise ConfigurationError("meta_step_size must lie in (0, 1]")

    def to_json_dict(self) -> dict:
        return {
            "meta_iterations": self.meta_iterations,
            "tasks_per_meta_batch": self.tasks_per_meta_batch,
            "inner_episodes": self.inner_episodes,
            "inner_step_size": self.inner_step_size,
            "meta_step_size": self.meta_step_size,
            "rng_seed": self.rng_seed,
        }


@dataclass(frozen=True)
class MetaPolicy:
    """Meta-learned initialization of policy logits plus its provenance."""

    init_logits: np.ndarray
    provenance: dict

    def __post_init__(self):
        logits = np.asarray(self.init_logits, dtype=float).copy()
        logits.flags.writeable = False
        object.__setattr__(self, "init_logits", logits)

    def as_policy(self) -> SoftmaxPolicy:
        return SoftmaxPolicy(self.init_logits)

    def to_json_dict(self) -> dict:
        return {
            "schema_version": META_POLICY_SCHEMA,
            "num_states": int(self.init_logits.shape[0]),
            "num_actions": int(self.init_logits.shape[1]),
            "temperature": 1.0,
            "logits": [[float(v) for v in row] for row in self.init_logits],
            "provenance": self.provenance,
        }

    @staticmethod
    def from_json_dict(data: dict) -> "MetaPolicy":
        if data.get("schema_version") != META_POLICY_SCHEMA:
            raise ConfigurationError(
                f"expected {META_POLICY_SCHEMA} document, got {data.get('schema_version')!r}"
            )
        return MetaPolicy(
            init_logits=np.asarray(data["logits"], dtype=float),
            provenance=data.get("provenance", {}),
        )


def meta_train(
    task_set: Sequence[TabularMdp],
    config: MetaConfig,
    learner_cfg: LearnerConfig,
    task_specs: Sequence[TaskSpec] | None = None,
) -> MetaPolicy:
    """Learn an initialization over a task set by averaging adapted logits."""
    if not task_set:
        raise ConfigurationError("meta-training requires a non-empty task set")
    dims = {(m.num_states, m.num_actions) for m in task_set}
    if len(dims) != 1:
        raise ConfigurationError(f"meta-training tasks must share dimensions, saw {dims}")
    if config.tasks_per_meta_batch > len(task_set):
        raise ConfigurationError(
            f"tasks_per_meta_batch={config.tasks_per_meta_batch} exceeds task set size {len(task_set)}"
        )

    (num_states, num_actions), = dims
    init = np.zeros((num_states, num_actions))
    batch_rng = rng_from_seed(derive_seed(config.rng_seed, "meta-batches"))
    if config.meta_step_size > 0:
        for it in range(config.meta_iterations):
            picks = batch_rng.integers(0, len(task_set), size=config.tasks_per_meta_batch)
            adapted = np.zeros_like(init)
            for slot, task_idx in enumerate(picks):
                cfg = replace(
                    learner_cfg,
                    step_size=config.inner_step_size,
                    rng_seed=derive_seed(config.rng_seed, "inner", it, slot),
                )
                tuned = fine_tune(SoftmaxPolicy(init), task_set[int(task_idx)], config.inner_episodes, cfg)
                adapted += tuned.logits
            adapted /= config.tasks_per_meta_batch
            init = init + config.meta_step_size * (adapted - init)

    if task_specs is not None:
        task_set_desc = [s.to_json_dict() for s in task_specs]
    else:
        task_set_desc = [{"mdp_digest": content_hash(m.to_json_dict())} for m in task_set]
    provenance = {
        "task_set": task_set_desc,
        "meta_config": config.to_json_dict(),
        "learner_config": learner_cfg.to_json_dict(),
        "seed": config.rng_seed,
    }
    return MetaPolicy(init_logits=init, provenance=provenance)


@dataclass(frozen=True)
class AdaptationCurve:
    """Per-episode adaptation returns on one test task, across evaluation seeds."""

    task_index: int
    returns: np.ndarray  # (num_seeds, episodes)
    mean_curve: np.ndarray
    ci_low: np.ndarray
    ci_high: np.ndarray
    final_return: float
    num_seeds: int

    def __post_init__(self):
        for name in ("returns", "mean_curve", "ci_low", "ci_high"):
            arr = np.asarray(getattr(self, name), dtype=float).copy()
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)

    @property
    def episodes(self) -> int:
        return self.returns.shape[1]

    def to_json_dict(self) -> dict:
        return {
            "task_index": self.task_index,
            "num_seeds": self.num_seeds,
            "returns": [[float(v) for v in row] for row in self.returns],
            "mean_curve": [float(v) for v in self.mean_curve],
            "ci_low": [float(v) for v in self.ci_low],
            "ci_high": [float(v) for v in self.ci_high],
            "final_return": self.final_return,
        }


def _final_window(episodes: int) -> int:
    # tail window (last 20%, at least one episode) smooths single-episode noise
    return max(1, episodes // 5)


def evaluate_meta_policy(
    meta: MetaPolicy,
    test_tasks: Sequence[TabularMdp],
    adaptation_episodes: int,
    eval_seeds: int,
    learner_cfg: LearnerConfig,
) -> list[AdaptationCurve]:
    """Adapt the initialization on each test task and record learning curves.

    For every (task, seed) pair the initialization is cloned and fine-tuned
    for ``adaptation_episodes`` episodes; the meta policy itself is never
    modified.  Curves aggregate seeds with 95% confidence intervals;
    ``final_return`` is the mean return over the final fifth of the
    adaptation budget (at least one episode).
    """
    if adaptation_episodes < 1:
        raise ConfigurationError("adaptation_episodes must be at least 1")
    if eval_seeds < 1:
        raise ConfigurationError("eval_seeds must be at least 1")
    start = meta.as_policy()
    curves = []
    tail = _final_window(adaptation_episodes)
    for ti, task in enumerate(test_tasks):
        rows = np.zeros((eval_seeds, adaptation_episodes))
        for s in range(eval_seeds):
            cfg = replace(learner_cfg, rng_seed=derive_seed(learner_cfg.rng_seed, "adapt", ti, s))
            _, returns = fine_tune_with_returns(start, task, adaptation_episodes, cfg)
            rows[s] = returns
        mean_curve = rows.mean(axis=0)
        ci_low = np.empty(adaptation_episodes)
        ci_high = np.empty(adaptation_episodes)
        for e in range(adaptation_episodes):
            _, lo, hi = mean_ci(rows[:, e])
            ci_low[e], ci_high[e] = lo, hi
        curves.append(
            AdaptationCurve(
                task_index=ti,
                returns=rows,
                mean_curve=mean_curve,
                ci_low=ci_low,
                ci_high=ci_high,
                final_return=float(mean_curve[-tail:].mean()),
                num_seeds=eval_seeds,
            )
        )
    return curves
