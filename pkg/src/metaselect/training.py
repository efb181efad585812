"""Tabular reinforcement-learning procedures.

Three primitives back the rest of the toolkit: training a task to
convergence (producing its converged stochastic policy), short fine-tuning
of a transferred policy for an exact number of episodes, and executing a
policy to collect visited states.

The default learner is REINFORCE on softmax logits with a learned
state-value baseline and a small entropy bonus.  The bonus keeps converged
policies strictly stochastic, which keeps divergences between policies and
their entropies finite; the resulting per-state entropy floor is visible in
TrainedTask diagnostics.  A Boltzmann Q-learner is available as an
alternative for robustness studies.

Every function here is a pure function of its arguments (including the
seed), so independent training runs may execute concurrently.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .errors import ConfigurationError, NumericalError
from .generators import TaskSpec
from .mdp import SoftmaxPolicy, TabularMdp, evaluate_policy, on_policy_distribution
from .util import derive_seed, rng_from_seed

REINFORCE = "reinforce"
BOLTZMANN_Q = "boltzmann_q"

TRAINED_TASK_SCHEMA = "trained-task/1"

_BASELINE_STEP = 0.1  # value-baseline regression rate; variance control only
_BOLTZMANN_TEMPERATURE = 0.25


@dataclass(frozen=True)
class LearnerConfig:
    algorithm: str = REINFORCE
    step_size: float = 0.3
    episodes_per_epoch: int = 30
    convergence_window: int = 4
    convergence_tolerance: float = 0.05
    max_epochs: int = 60
    entropy_regularizer: float = 1e-3
    rng_seed: int = 0

    def __post_init__(self):
        if self.algorithm not in (REINFORCE, BOLTZMANN_Q):
            raise ConfigurationError(f"unknown algorithm {self.algorithm!r}")
        if self.step_size < 0:
            raise ConfigurationError("step_size must be nonnegative")
        if self.episodes_per_epoch < 1 or self.max_epochs < 1:
            raise ConfigurationError("episode and epoch counts must be positive")
        if self.convergence_window < 2:
            raise ConfigurationError("convergence_window must be at least 2")
        if self.convergence_tolerance <= 0:
            raise ConfigurationError("convergence_tolerance must be positive")
        if self.entropy_regularizer < 0:
            raise ConfigurationError("entropy_regularizer must be nonnegative")

    def to_json_dict(self) -> dict:
        return {
            "algorithm": self.algorithm,
            "step_size": self.step_size,
            "episodes_per_epoch": self.episodes_per_epoch,
            "convergence_window": self.convergence_window,
            "convergence_tolerance": self.convergence_tolerance,
            "max_epochs": self.max_epochs,
            "entropy_regularizer": self.entropy_regularizer,
            "rng_seed": self.rng_seed,
        }


@dataclass(frozen=True)
class TrainedTask:
    """A task trained to convergence together with its converged policy."""

    spec: Optional[TaskSpec]
    optimal_policy: SoftmaxPolicy
    mean_return_at_convergence: float
    training_episodes_used: int
    converged: bool

    def to_json_dict(self) -> dict:
        return {
            "schema_version": TRAINED_TASK_SCHEMA,
            "task": self.spec.to_json_dict() if self.spec is not None else None,
            "policy": self.optimal_policy.to_json_dict(),
            "mean_return_at_convergence": self.mean_return_at_convergence,
            "training_episodes_used": self.training_episodes_used,
            "converged": self.converged,
        }

    @staticmethod
    def from_json_dict(data: dict) -> "TrainedTask":
        if data.get("schema_version") != TRAINED_TASK_SCHEMA:
            raise ConfigurationError(
                f"expected {TRAINED_TASK_SCHEMA} document, got {data.get('schema_version')!r}"
            )
        spec = TaskSpec.from_json_dict(data["task"]) if data.get("task") is not None else None
        return TrainedTask(
            spec=spec,
            optimal_policy=SoftmaxPolicy.from_json_dict(data["policy"]),
            mean_return_at_convergence=float(data["mean_return_at_convergence"]),
            training_episodes_used=int(data["training_episodes_used"]),
            converged=bool(data["converged"]),
        )


class _LearnerState:
    """Mutable tables shared by the training loops."""

    def __init__(self, mdp: TabularMdp, logits: np.ndarray, temperature: float):
        self.mdp = mdp
        self.tables = mdp.sampling_tables()
        self.logits = np.array(logits, dtype=float)
        self.temperature = temperature
        self.values = np.zeros(mdp.num_states)

    def policy(self) -> SoftmaxPolicy:
        return SoftmaxPolicy(self.logits, self.temperature)


def _policy_matrices(logits: np.ndarray, temperature: float) -> tuple[np.ndarray, np.ndarray]:
    z = logits / temperature
    z = z - z.max(axis=1, keepdims=True)
    log_probs = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    return np.exp(log_probs), log_probs


def _returns_to_go(rewards: np.ndarray, discount: float) -> np.ndarray:
    if discount == 1.0:
        return np.cumsum(rewards[::-1])[::-1].copy()
    out = np.empty_like(rewards)
    acc = 0.0
    for t in range(len(rewards) - 1, -1, -1):
        acc = rewards[t] + discount * acc
        out[t] = acc
    return out


def _reinforce_episode(state: _LearnerState, cfg: LearnerConfig, rng: np.random.Generator) -> float:
    mdp, tables = state.mdp, state.tables
    probs, log_probs = _policy_matrices(state.logits, state.temperature)
    cum_policy = np.cumsum(probs, axis=1)

    from .mdp import _sample_episode

    steps = _sample_episode(tables, cum_policy, rng, mdp.max_episode_steps)
    ret = 0.0
    if not steps:
        return ret
    states = np.fromiter((s for s, _, _, _ in steps), dtype=np.int64, count=len(steps))
    actions = np.fromiter((a for _, a, _, _ in steps), dtype=np.int64, count=len(steps))
    rewards = np.fromiter((r for _, _, r, _ in steps), dtype=float, count=len(steps))
    gains = _returns_to_go(rewards, mdp.discount)
    ret = float(gains[0])

    if cfg.step_size > 0:
        advantages = gains - state.values[states]
        discounts = mdp.discount ** np.arange(len(steps)) if mdp.discount != 1.0 else 1.0
        coef = cfg.step_size * discounts * advantages / state.temperature
        update = -coef[:, None] * probs[states]
        update[np.arange(len(steps)), actions] += coef
        if cfg.entropy_regularizer > 0:
            rows_p = probs[states]
            rows_lp = log_probs[states]
            entropy = -(rows_p * rows_lp).sum(axis=1, keepdims=True)
            update += (cfg.step_size * cfg.entropy_regularizer / state.temperature) * rows_p * (
                -rows_lp - entropy
            )
        np.add.at(state.logits, states, update)
        # Baseline regression: one step toward the mean observed return per
        # visited state, so repeated visits within an episode cannot overshoot.
        unique, inverse = np.unique(states, return_inverse=True)
        sums = np.zeros(len(unique))
        counts = np.zeros(len(unique))
        np.add.at(sums, inverse, advantages)
        np.add.at(counts, inverse, 1.0)
        state.values[unique] += _BASELINE_STEP * sums / counts
        if not np.isfinite(state.logits).all():
            raise NumericalError("policy gradient produced non-finite logits")
    return ret


def _boltzmann_q_episode(state: _LearnerState, cfg: LearnerConfig, rng: np.random.Generator) -> float:
    mdp, tables = state.mdp, state.tables
    q = state.logits  # logits double as the Q table at fixed temperature
    absorbing = tables.absorbing_mask
    s = tables.sample_initial(rng)
    ret, scale = 0.0, 1.0
    for _ in range(mdp.max_episode_steps):
        if absorbing[s]:
            break
        z = q[s] / state.temperature
        z = z - z.max()
        p = np.exp(z)
        p /= p.sum()
        a = int(np.searchsorted(np.cumsum(p), rng.random(), side="right"))
        a = min(a, mdp.num_actions - 1)
        ns, r = tables.step(s, a, rng)
        target = r if absorbing[ns] else r + mdp.discount * float(q[ns].max())
        q[s, a] += cfg.step_size * (target - q[s, a])
        ret += scale * r
        scale *= mdp.discount
        s = ns
    if not np.isfinite(q).all():
        raise NumericalError("Q update produced non-finite values")
    return ret


_EPISODE_RUNNERS = {REINFORCE: _reinforce_episode, BOLTZMANN_Q: _boltzmann_q_episode}


def _run_episodes(state: _LearnerState, cfg: LearnerConfig, episodes: int, rng: np.random.Generator) -> list[float]:
    runner = _EPISODE_RUNNERS[cfg.algorithm]
    return [runner(state, cfg, rng) for _ in range(episodes)]


def train_to_convergence(
    mdp: TabularMdp,
    config: LearnerConfig,
    spec: TaskSpec | None = None,
) -> TrainedTask:
    """Train until the epoch-level moving-average return stops moving.

    Convergence is declared when the mean return over the last
    ``convergence_window`` epochs differs from the mean over the window
    before it by less than ``convergence_tolerance``.  Hitting
    ``max_epochs`` first is flagged via ``converged=False``.  A
    single-action task has nothing to learn and converges after one epoch.
    """
    temperature = _BOLTZMANN_TEMPERATURE if config.algorithm == BOLTZMANN_Q else 1.0
    state = _LearnerState(mdp, np.zeros((mdp.num_states, mdp.num_actions)), temperature)
    rng = rng_from_seed(derive_seed(config.rng_seed, "train"))

    if mdp.num_actions == 1:
        returns = _run_episodes(state, config, config.episodes_per_epoch, rng)
        return TrainedTask(
            spec=spec,
            optimal_policy=state.policy(),
            mean_return_at_convergence=float(np.mean(returns)),
            training_episodes_used=len(returns),
            converged=True,
        )

    epoch_means: list[float] = []
    episodes_used = 0
    converged = False
    w = config.convergence_window
    for _ in range(config.max_epochs):
        returns = _run_episodes(state, config, config.episodes_per_epoch, rng)
        episodes_used += len(returns)
        epoch_means.append(float(np.mean(returns)))
        if len(epoch_means) >= 2 * w:
            recent = float(np.mean(epoch_means[-w:]))
            previous = float(np.mean(epoch_means[-2 * w : -w]))
            if abs(recent - previous) < config.convergence_tolerance:
                converged = True
                break

    return TrainedTask(
        spec=spec,
        optimal_policy=state.policy(),
        mean_return_at_convergence=float(np.mean(epoch_means[-w:])),
        training_episodes_used=episodes_used,
        converged=converged,
    )


def fine_tune_with_returns(
    start_policy: SoftmaxPolicy,
    mdp: TabularMdp,
    episodes: int,
    config: LearnerConfig,
) -> tuple[SoftmaxPolicy, list[float]]:
    """Run exactly ``episodes`` learning episodes from a copy of the policy.

    Returns the adapted policy and the per-episode returns observed while
    adapting.  The input policy is never modified; with step_size 0 the
    output equals the input exactly.
    """
    mdp.check_policy(start_policy)
    if episodes < 1:
        raise ConfigurationError("fine-tuning requires at least one episode")
    state = _LearnerState(mdp, start_policy.logits, start_policy.temperature)
    rng = rng_from_seed(derive_seed(config.rng_seed, "fine-tune"))
    returns = _run_episodes(state, config, episodes, rng)
    return state.policy(), returns


def fine_tune(
    start_policy: SoftmaxPolicy,
    mdp: TabularMdp,
    episodes: int,
    config: LearnerConfig,
) -> SoftmaxPolicy:
    policy, _ = fine_tune_with_returns(start_policy, mdp, episodes, config)
    return policy


def execute_policy(
    policy: SoftmaxPolicy,
    mdp: TabularMdp,
    target_state_count: int,
    rng_seed: int,
) -> list[int]:
    """Run whole episodes under a fixed policy and collect visited transient
    states until ``target_state_count`` are gathered; returns the first n.

    The resulting multiset is an on-policy sample of the state distribution
    the policy induces on this task.
    """
    mdp.check_policy(policy)
    if target_state_count < 1:
        raise ConfigurationError("target_state_count must be at least 1")
    tables = mdp.sampling_tables()
    rng = rng_from_seed(derive_seed(rng_seed, "execute"))
    cum_policy = np.cumsum(policy.probabilities(), axis=1)

    from .mdp import _sample_episode

    visited: list[int] = []
    episode_cap = 10 * target_state_count + 100
    for _ in range(episode_cap):
        steps = _sample_episode(tables, cum_policy, rng, mdp.max_episode_steps)
        visited.extend(s for s, _, _, _ in steps)
        if len(visited) >= target_state_count:
            return visited[:target_state_count]
    raise ConfigurationError(
        "policy produced no transient visits; cannot collect an on-policy state sample"
    )


def exact_policy_gradient(mdp: TabularMdp, policy: SoftmaxPolicy) -> np.ndarray:
    """Exact gradient of the expected episode return with respect to logits.

    Computed from the policy-gradient identity using the discounted
    visitation counts and exact action values:
        d J / d logits[s, a] = zeta_gamma(s) * pi(a|s) * (q(s, a) - v(s)) / temperature.
    Used as the analytic reference that sampled updates are noisy versions of.
    """
    mdp.check_policy(policy)
    probs = policy.probabilities()
    v = evaluate_policy(mdp, policy)
    q = np.zeros((mdp.num_states, mdp.num_actions))
    for s, row in enumerate(mdp.dynamics):
        for a, outs in enumerate(row):
            q[s, a] = sum(p * (r + mdp.discount * v[ns]) for ns, r, p in outs)

    transient = list(mdp.transient_states)
    zeta = np.zeros(mdp.num_states)
    if transient:
        P = mdp.policy_transition(probs)
        P_tt = P[np.ix_(transient, transient)]
        A = np.eye(len(transient)) - mdp.discount * P_tt.T
        try:
            zeta[transient] = np.linalg.solve(A, mdp.initial_dist[transient])
        except np.linalg.LinAlgError as exc:
            raise NumericalError("discounted visitation system is singular") from exc

    grad = zeta[:, None] * probs * (q - v[:, None]) / policy.temperature
    for s in mdp.absorbing:
        grad[s] = 0.0
    return grad


def mean_return(mdp: TabularMdp, policy: SoftmaxPolicy) -> float:
    """Initial-distribution-weighted exact value of a policy."""
    return float(mdp.initial_dist @ evaluate_policy(mdp, policy))
