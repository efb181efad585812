"""Task selection by policy difference and transfer relevance.

Given tasks trained to convergence and a held-out validation set, the
selector keeps training tasks that are (a) *different*: their converged
policies disagree, measured as average KL divergence over sampled
validation states, from every task already kept; and (b) *relevant*: a few
episodes of fine-tuning their policy on some validation task lowers the
policy's average entropy on the states the transferred policy visits
(an information gain).

The selection loop is sequential and order-sensitive by design: each
acceptance changes the difference tests applied to later candidates.
Relevance evaluations of distinct candidates are independent of the kept
set and of each other, so they may be computed concurrently; only the
accept/reject pass is serialized.  Results record every decision so runs
are reproducible and auditable.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from .errors import ConfigurationError
from .generators import TaskSpec
from .mdp import SoftmaxPolicy, TabularMdp, reachable_states
from .training import LearnerConfig, TrainedTask, execute_policy, fine_tune
from .util import derive_seed, rng_from_seed

SELECTION_SCHEMA = "selection-result/1"

ACCEPTED = "accepted"
NOT_DIFFERENT = "not_different"
NOT_RELEVANT = "not_relevant"


@dataclass(frozen=True)
class SelectionConfig:
    epsilon: float = 0.15
    relevance_repeats: int = 3  # independent execute/fine-tune/measure cycles per validation task
    learning_episodes: int = 15  # fine-tuning episodes per cycle
    validation_state_count: int = 40  # states per on-policy or validation sample
    rng_seed: int = 0

    def __post_init__(self):
        if self.epsilon < 0:
            raise ConfigurationError("epsilon must be nonnegative")
        if min(self.relevance_repeats, self.learning_episodes, self.validation_state_count) < 1:
            raise ConfigurationError("all selection counts must be at least 1")

    def to_json_dict(self) -> dict:
        return {
            "epsilon": self.epsilon,
            "relevance_repeats": self.relevance_repeats,
            "learning_episodes": self.learning_episodes,
            "validation_state_count": self.validation_state_count,
            "rng_seed": self.rng_seed,
        }


@dataclass(frozen=True)
class ValidationStateSample:
    """States drawn from validation tasks: (validation_task_index, state_index) pairs."""

    entries: tuple[tuple[int, int], ...]

    @property
    def size(self) -> int:
        return len(self.entries)

    def to_json_dict(self) -> dict:
        return {"entries": [[t, s] for t, s in self.entries]}


def sample_validation_states(
    validation: Sequence[TabularMdp],
    count: int,
    rng_seed: int,
) -> ValidationStateSample:
    """Uniform sample: pick a validation task, then a reachable transient
    state within it, ``count`` times (with replacement)."""
    if count < 1:
        raise ConfigurationError("count must be at least 1")
    if not validation:
        raise ConfigurationError("validation set is empty")
    candidates = []
    for mdp in validation:
        transient = [s for s in reachable_states(mdp) if s not in mdp.absorbing]
        if not transient:
            raise ConfigurationError("a validation task has no reachable transient states")
        candidates.append(transient)
    rng = rng_from_seed(derive_seed(rng_seed, "validation-states"))
    entries = []
    for _ in range(count):
        f = int(rng.integers(0, len(validation)))
        states = candidates[f]
        entries.append((f, states[int(rng.integers(0, len(states)))]))
    return ValidationStateSample(entries=tuple(entries))


def exhaustive_validation_states(validation: Sequence[TabularMdp]) -> ValidationStateSample:
    """Every reachable transient state of every validation task, once each."""
    entries = []
    for f, mdp in enumerate(validation):
        for s in reachable_states(mdp):
            if s not in mdp.absorbing:
                entries.append((f, s))
    if not entries:
        raise ConfigurationError("validation tasks have no reachable transient states")
    return ValidationStateSample(entries=tuple(entries))


def policy_entropy(policy: SoftmaxPolicy, states: Sequence[int]) -> float:
    """Average action entropy (nats) of the policy over the given states."""
    if len(states) == 0:
        raise ConfigurationError("states must be non-empty")
    log_p = policy.log_probabilities()
    p = np.exp(log_p)
    per_state = -(p * log_p).sum(axis=1)
    return float(per_state[np.asarray(states, dtype=int)].mean())


def policy_kl(p: SoftmaxPolicy, q: SoftmaxPolicy, states: ValidationStateSample) -> float:
    """Average KL(p(.|s) || q(.|s)) in nats over the sampled states (flat mean)."""
    if p.logits.shape != q.logits.shape:
        raise ConfigurationError("policies must share state and action dimensions")
    if states.size == 0:
        raise ConfigurationError("state sample must be non-empty")
    lp = p.log_probabilities()
    lq = q.log_probabilities()
    probs = np.exp(lp)
    per_state = (probs * (lp - lq)).sum(axis=1)
    idx = np.asarray([s for _, s in states.entries], dtype=int)
    return float(per_state[idx].mean())


def task_difference(t1: TrainedTask, t2: TrainedTask, sample: ValidationStateSample) -> float:
    """Estimated difference between two trained tasks: the KL divergence of
    their converged policies, averaged per validation task and then across
    validation tasks.

    The two-level average matches the definition of task difference as a
    mean over validation tasks of that task's state average; it coincides
    with the flat mean of :func:`policy_kl` whenever every validation task
    contributes equally many states, and evaluates the definition exactly
    when the sample enumerates all transient states.
    """
    p, q = t1.optimal_policy, t2.optimal_policy
    if p.logits.shape != q.logits.shape:
        raise ConfigurationError("policies must share state and action dimensions")
    if sample.size == 0:
        raise ConfigurationError("state sample must be non-empty")
    lp = p.log_probabilities()
    lq = q.log_probabilities()
    per_state = (np.exp(lp) * (lp - lq)).sum(axis=1)
    by_task: dict[int, list[float]] = {}
    for f, s in sample.entries:
        by_task.setdefault(f, []).append(float(per_state[s]))
    task_means = [float(np.mean(vals)) for vals in by_task.values()]
    return float(np.mean(task_means))


@dataclass(frozen=True)
class RelevanceTrace:
    """Diagnostics from one (training task, validation task) relevance check."""

    training_task: Optional[TaskSpec]
    validation_index: int
    validation_task: Optional[TaskSpec]
    eta_before: float  # entropy of the transferred policy, summed over repeats
    eta_after: float  # entropy of the fine-tuned policy, summed over repeats
    rho_hat: float  # (eta_after - eta_before) / repeats
    relevant: bool  # rho_hat <= 0

    def to_json_dict(self) -> dict:
        return {
            "training_task": self.training_task.to_json_dict() if self.training_task else None,
            "validation_index": self.validation_index,
            "validation_task": self.validation_task.to_json_dict() if self.validation_task else None,
            "eta_before": self.eta_before,
            "eta_after": self.eta_after,
            "rho_hat": self.rho_hat,
            "relevant": self.relevant,
        }


def relevance_evaluation(
    trained: TrainedTask,
    validation: Sequence[TabularMdp],
    config: SelectionConfig,
    learner_cfg: LearnerConfig,
    validation_specs: Sequence[TaskSpec] | None = None,
) -> tuple[bool, list[RelevanceTrace]]:
    """Decide whether a trained task is relevant to any validation task.

    For each validation task, ``relevance_repeats`` cycles run: execute the
    transferred policy to collect an on-policy state sample, fine-tune a
    copy for ``learning_episodes`` episodes, and accumulate the average
    entropy of the transferred and the fine-tuned policy on that sample.
    The task is relevant to the first validation task whose mean entropy
    change is <= 0 (the check returns early, like the underlying
    sequential procedure); traces for all evaluated pairs are returned.
    """
    policy = trained.optimal_policy
    traces: list[RelevanceTrace] = []
    n = config.validation_state_count
    for f_idx, f_mdp in enumerate(validation):
        f_mdp.check_policy(policy)
        eta_before = 0.0
        eta_after = 0.0
        for rep in range(config.relevance_repeats):
            exec_seed = derive_seed(config.rng_seed, "relevance-execute", f_idx, rep)
            tune_seed = derive_seed(config.rng_seed, "relevance-tune", f_idx, rep)
            visited = execute_policy(policy, f_mdp, n, exec_seed)
            tuned = fine_tune(
                policy,
                f_mdp,
                config.learning_episodes,
                replace(learner_cfg, rng_seed=tune_seed),
            )
            eta_before += policy_entropy(policy, visited)
            eta_after += policy_entropy(tuned, visited)
        rho_hat = (eta_after - eta_before) / config.relevance_repeats
        relevant = rho_hat <= 0.0
        traces.append(
            RelevanceTrace(
                training_task=trained.spec,
                validation_index=f_idx,
                validation_task=validation_specs[f_idx] if validation_specs else None,
                eta_before=eta_before,
                eta_after=eta_after,
                rho_hat=rho_hat,
                relevant=relevant,
            )
        )
        if relevant:
            return True, traces
    return False, traces


@dataclass(frozen=True)
class CandidateDecision:
    """Full record of one candidate's pass through the selection loop."""

    candidate_index: int
    task: Optional[TaskSpec]
    deltas: tuple[tuple[int, float], ...]  # (candidate_index of kept task, delta) at decision time
    different: bool
    relevant: bool
    accepted: bool
    rejection_reason: str  # accepted / not_different / not_relevant
    traces: tuple[RelevanceTrace, ...]

    def to_json_dict(self) -> dict:
        return {
            "candidate_index": self.candidate_index,
            "task": self.task.to_json_dict() if self.task else None,
            "deltas": [[i, d] for i, d in self.deltas],
            "different": self.different,
            "relevant": self.relevant,
            "accepted": self.accepted,
            "rejection_reason": self.rejection_reason,
            "traces": [t.to_json_dict() for t in self.traces],
        }


@dataclass(frozen=True)
class SelectionResult:
    """Selected subset plus the full audit trail of the selection loop."""

    selected_indices: tuple[int, ...]
    selected: tuple[Optional[TaskSpec], ...]
    candidates: tuple[CandidateDecision, ...]
    epsilon: float
    use_relevance: bool

    def to_json_dict(self) -> dict:
        return {
            "schema_version": SELECTION_SCHEMA,
            "epsilon": self.epsilon,
            "use_relevance": self.use_relevance,
            "selected_indices": list(self.selected_indices),
            "selected": [s.to_json_dict() if s else None for s in self.selected],
            "candidates": [c.to_json_dict() for c in self.candidates],
        }


def _relevance_job(args) -> tuple[bool, list[RelevanceTrace]]:
    trained, validation, config, learner_cfg, validation_specs = args
    return relevance_evaluation(trained, validation, config, learner_cfg, validation_specs)


def evaluate_all_relevance(
    trained: Sequence[TrainedTask],
    validation: Sequence[TabularMdp],
    config: SelectionConfig,
    learner_cfg: LearnerConfig,
    validation_specs: Sequence[TaskSpec] | None = None,
    workers: int = 1,
) -> list[tuple[bool, list[RelevanceTrace]]]:
    """Relevance decision for every candidate, each under its own derived seed.

    This is exactly the relevance pass :func:`select_tasks` performs; it is
    exposed so sweeps over the difference threshold can reuse one pass
    (relevance does not depend on the threshold or on the kept set).
    """
    jobs = [
        (
            t,
            list(validation),
            replace(config, rng_seed=derive_seed(config.rng_seed, "candidate", idx)),
            learner_cfg,
            list(validation_specs) if validation_specs else None,
        )
        for idx, t in enumerate(trained)
    ]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(_relevance_job, jobs))
    return [_relevance_job(job) for job in jobs]


def select_tasks(
    trained: Sequence[TrainedTask],
    validation: Sequence[TabularMdp],
    sample: ValidationStateSample,
    config: SelectionConfig,
    learner_cfg: LearnerConfig,
    validation_specs: Sequence[TaskSpec] | None = None,
    force_relevant: bool = False,
    workers: int = 1,
    precomputed_relevance: Sequence[tuple[bool, list[RelevanceTrace]]] | None = None,
) -> SelectionResult:
    """Sequential selection: keep a candidate iff its difference from every
    already-kept task is >= epsilon and it is relevant to some validation task.

    Candidates are processed in the given order; permuting the input may
    change the outcome, which is why the result records the order and every
    decision.  With ``force_relevant`` the relevance test is skipped and
    treated as true (difference-only mode).  Relevance evaluations are
    independent per candidate, so ``workers > 1`` precomputes them in
    parallel; accept/reject decisions stay serialized in candidate order.
    ``precomputed_relevance`` accepts the output of
    :func:`evaluate_all_relevance` to share one relevance pass across
    several thresholds.
    """
    if not trained:
        return SelectionResult((), (), (), config.epsilon, not force_relevant)

    relevance: Sequence[tuple[bool, list[RelevanceTrace]]]
    if force_relevant:
        relevance = [(True, []) for _ in trained]
    elif precomputed_relevance is not None:
        if len(precomputed_relevance) != len(trained):
            raise ConfigurationError("precomputed relevance length does not match candidate count")
        relevance = precomputed_relevance
    else:
        relevance = evaluate_all_relevance(
            trained, validation, config, learner_cfg, validation_specs, workers
        )

    kept: list[int] = []
    decisions: list[CandidateDecision] = []
    for idx, task in enumerate(trained):
        deltas = tuple((c, task_difference(task, trained[c], sample)) for c in kept)
        different = all(d >= config.epsilon for _, d in deltas)
        relevant, traces = relevance[idx]
        accepted = different and relevant
        if accepted:
            kept.append(idx)
            reason = ACCEPTED
        elif not different:
            reason = NOT_DIFFERENT
        else:
            reason = NOT_RELEVANT
        decisions.append(
            CandidateDecision(
                candidate_index=idx,
                task=task.spec,
                deltas=deltas,
                different=different,
                relevant=relevant,
                accepted=accepted,
                rejection_reason=reason,
                traces=tuple(traces),
            )
        )

    return SelectionResult(
        selected_indices=tuple(kept),
        selected=tuple(trained[i].spec for i in kept),
        candidates=tuple(decisions),
        epsilon=config.epsilon,
        use_relevance=not force_relevant,
    )


def shuffled_order(count: int, rng_seed: int) -> list[int]:
    """Seeded candidate permutation for order-sensitivity studies."""
    rng = rng_from_seed(derive_seed(rng_seed, "candidate-order"))
    order = np.arange(count)
    rng.shuffle(order)
    return [int(i) for i in order]
