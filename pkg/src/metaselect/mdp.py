"""Episodic tabular MDPs, softmax policies, rollouts, and exact on-policy analysis.

An MDP is a full dynamics table: for every (state, action) a list of
(next_state, reward, probability) outcomes.  Episodes start from the initial
distribution and end in an absorbing state or after ``max_episode_steps``.
All types are immutable after construction and every operation is a pure
function of its inputs, so (mdp, policy) pairs can be evaluated concurrently.

Linear-algebra conventions: value vectors and visit counts are solved with a
direct dense solve over the transient states; absorbing states have value 0
and visit count 0.  All entropies and divergences elsewhere in the toolkit
are in nats.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigurationError, NumericalError
from .util import rng_from_seed

PROB_ATOL = 1e-9

MDP_SCHEMA = "tabular-mdp/1"
POLICY_SCHEMA = "softmax-policy/1"

# One possible result of taking an action: (next_state, reward, probability).
Outcome = tuple[int, float, float]


@dataclass(frozen=True, eq=False)
class SoftmaxPolicy:
    """Stochastic policy with per-state action logits.

    Action probabilities are softmax(logits[s] / temperature), so they are
    strictly positive everywhere; KL divergences between two policies are
    always finite.
    """

    logits: np.ndarray  # (num_states, num_actions)
    temperature: float = 1.0

    def __post_init__(self):
        logits = np.asarray(self.logits, dtype=float)
        if logits.ndim != 2:
            raise ConfigurationError(f"logits must be 2-D (states x actions), got shape {logits.shape}")
        if not np.isfinite(logits).all():
            raise ConfigurationError("logits contain non-finite values")
        if not (self.temperature > 0):
            raise ConfigurationError(f"temperature must be positive, got {self.temperature}")
        logits = logits.copy()
        logits.flags.writeable = False
        object.__setattr__(self, "logits", logits)

    @property
    def num_states(self) -> int:
        return self.logits.shape[0]

    @property
    def num_actions(self) -> int:
        return self.logits.shape[1]

    def log_probabilities(self) -> np.ndarray:
        z = self.logits / self.temperature
        z = z - z.max(axis=1, keepdims=True)
        return z - np.log(np.exp(z).sum(axis=1, keepdims=True))

    def probabilities(self) -> np.ndarray:
        """Row-stochastic (num_states, num_actions) matrix; rows sum to 1."""
        return np.exp(self.log_probabilities())

    @staticmethod
    def uniform(num_states: int, num_actions: int) -> "SoftmaxPolicy":
        return SoftmaxPolicy(np.zeros((num_states, num_actions)))

    def to_json_dict(self) -> dict:
        return {
            "schema_version": POLICY_SCHEMA,
            "num_states": self.num_states,
            "num_actions": self.num_actions,
            "temperature": self.temperature,
            "logits": [[float(v) for v in row] for row in self.logits],
        }

    @staticmethod
    def from_json_dict(data: dict) -> "SoftmaxPolicy":
        if data.get("schema_version") != POLICY_SCHEMA:
            raise ConfigurationError(f"expected {POLICY_SCHEMA} document, got {data.get('schema_version')!r}")
        logits = np.asarray(data["logits"], dtype=float)
        if logits.shape != (data["num_states"], data["num_actions"]):
            raise ConfigurationError("logits shape does not match declared dimensions")
        return SoftmaxPolicy(logits, float(data["temperature"]))


@dataclass(frozen=True, eq=False)
class TabularMdp:
    """Episodic tabular MDP with explicit (next_state, reward, probability) outcomes.

    Invariants checked at construction:
      * every (s, a) outcome list sums to probability 1 (within 1e-9);
      * absorbing states only self-loop with reward 0;
      * the initial distribution sums to 1 and puts no mass on absorbing
        states (unless every state is absorbing, a degenerate form kept
        constructible for edge-case tests).
    """

    num_states: int
    num_actions: int
    dynamics: tuple[tuple[tuple[Outcome, ...], ...], ...]  # [state][action] -> outcomes
    discount: float
    initial_dist: np.ndarray
    absorbing: frozenset[int]
    max_episode_steps: int

    def __post_init__(self):
        if self.num_states < 1 or self.num_actions < 1:
            raise ConfigurationError("num_states and num_actions must be positive")
        if not (0.0 <= self.discount <= 1.0):
            raise ConfigurationError(f"discount must lie in [0, 1], got {self.discount}")
        if self.max_episode_steps < 1:
            raise ConfigurationError("max_episode_steps must be positive")

        dyn = tuple(
            tuple(tuple((int(ns), float(r), float(p)) for ns, r, p in outs) for outs in row)
            for row in self.dynamics
        )
        if len(dyn) != self.num_states or any(len(row) != self.num_actions for row in dyn):
            raise ConfigurationError("dynamics table shape does not match num_states x num_actions")
        object.__setattr__(self, "dynamics", dyn)

        absorbing = frozenset(int(s) for s in self.absorbing)
        if any(s < 0 or s >= self.num_states for s in absorbing):
            raise ConfigurationError("absorbing state index out of range")
        object.__setattr__(self, "absorbing", absorbing)

        for s, row in enumerate(dyn):
            for a, outs in enumerate(row):
                if not outs:
                    raise ConfigurationError(f"empty outcome list at state {s}, action {a}")
                total = 0.0
                for ns, r, p in outs:
                    if ns < 0 or ns >= self.num_states:
                        raise ConfigurationError(f"next state {ns} out of range at ({s}, {a})")
                    if p < -PROB_ATOL or p > 1 + PROB_ATOL:
                        raise ConfigurationError(f"outcome probability {p} outside [0, 1] at ({s}, {a})")
                    total += p
                if abs(total - 1.0) > PROB_ATOL:
                    raise ConfigurationError(f"outcome probabilities at ({s}, {a}) sum to {total}, not 1")
                if s in absorbing:
                    for ns, r, p in outs:
                        if ns != s or r != 0.0:
                            raise ConfigurationError(
                                f"absorbing state {s} must self-loop with reward 0, found ({ns}, {r})"
                            )

        mu = np.asarray(self.initial_dist, dtype=float)
        if mu.shape != (self.num_states,):
            raise ConfigurationError("initial_dist length must equal num_states")
        if (mu < -PROB_ATOL).any() or abs(mu.sum() - 1.0) > PROB_ATOL:
            raise ConfigurationError("initial_dist must be a probability vector")
        transient_exists = len(absorbing) < self.num_states
        if transient_exists and any(mu[s] > PROB_ATOL for s in absorbing):
            raise ConfigurationError("initial_dist must put no mass on absorbing states")
        mu = mu.copy()
        mu.flags.writeable = False
        object.__setattr__(self, "initial_dist", mu)
        object.__setattr__(self, "_cache", {})

    # -- structure ---------------------------------------------------------

    @property
    def transient_states(self) -> tuple[int, ...]:
        return tuple(s for s in range(self.num_states) if s not in self.absorbing)

    def is_absorbing(self, state: int) -> bool:
        return state in self.absorbing

    def check_policy(self, policy: SoftmaxPolicy) -> None:
        if policy.num_states != self.num_states or policy.num_actions != self.num_actions:
            raise ConfigurationError(
                f"policy shape ({policy.num_states}, {policy.num_actions}) does not match "
                f"mdp shape ({self.num_states}, {self.num_actions})"
            )

    def expected_rewards(self) -> np.ndarray:
        """(num_states, num_actions) expected immediate reward table."""
        cached = self._cache.get("expected_rewards")
        if cached is None:
            table = np.zeros((self.num_states, self.num_actions))
            for s, row in enumerate(self.dynamics):
                for a, outs in enumerate(row):
                    table[s, a] = sum(p * r for _, r, p in outs)
            table.flags.writeable = False
            cached = self._cache["expected_rewards"] = table
        return cached

    def policy_transition(self, probs: np.ndarray) -> np.ndarray:
        """(S, S) state-to-state transition matrix under action probabilities ``probs``."""
        P = np.zeros((self.num_states, self.num_states))
        for s, row in enumerate(self.dynamics):
            for a, outs in enumerate(row):
                w = probs[s, a]
                if w == 0.0:
                    continue
                for ns, _, p in outs:
                    P[s, ns] += w * p
        return P

    def dynamics_equal(self, other: "TabularMdp") -> bool:
        return (
            self.num_states == other.num_states
            and self.num_actions == other.num_actions
            and self.dynamics == other.dynamics
            and self.absorbing == other.absorbing
            and np.array_equal(self.initial_dist, other.initial_dist)
        )

    # -- sampling support ----------------------------------------------------

    def sampling_tables(self) -> "_SamplingTables":
        cached = self._cache.get("sampling")
        if cached is None:
            cached = self._cache["sampling"] = _SamplingTables(self)
        return cached

    # -- serialization -------------------------------------------------------

    def to_json_dict(self) -> dict:
        return {
            "schema_version": MDP_SCHEMA,
            "num_states": self.num_states,
            "num_actions": self.num_actions,
            "discount": self.discount,
            "max_episode_steps": self.max_episode_steps,
            "initial_dist": [float(v) for v in self.initial_dist],
            "absorbing": sorted(self.absorbing),
            "dynamics": [
                [[[int(ns), float(r), float(p)] for ns, r, p in outs] for outs in row]
                for row in self.dynamics
            ],
        }

    @staticmethod
    def from_json_dict(data: dict) -> "TabularMdp":
        if data.get("schema_version") != MDP_SCHEMA:
            raise ConfigurationError(f"expected {MDP_SCHEMA} document, got {data.get('schema_version')!r}")
        dynamics = tuple(
            tuple(tuple((int(ns), float(r), float(p)) for ns, r, p in outs) for outs in row)
            for row in data["dynamics"]
        )
        return TabularMdp(
            num_states=int(data["num_states"]),
            num_actions=int(data["num_actions"]),
            dynamics=dynamics,
            discount=float(data["discount"]),
            initial_dist=np.asarray(data["initial_dist"], dtype=float),
            absorbing=frozenset(int(s) for s in data["absorbing"]),
            max_episode_steps=int(data["max_episode_steps"]),
        )

    @staticmethod
    def from_dense(
        P: np.ndarray,
        R: np.ndarray,
        discount: float,
        initial_dist: Sequence[float],
        absorbing: Iterable[int],
        max_episode_steps: int,
    ) -> "TabularMdp":
        """Build from dense tables: P is (S, A, S) transition probabilities and
        R is (S, A) rewards attached to every outgoing transition of (s, a)."""
        P = np.asarray(P, dtype=float)
        R = np.asarray(R, dtype=float)
        S, A, _ = P.shape
        absorbing = frozenset(int(s) for s in absorbing)
        dynamics = []
        for s in range(S):
            row = []
            for a in range(A):
                reward = 0.0 if s in absorbing else float(R[s, a])
                outs = tuple(
                    (int(ns), reward, float(P[s, a, ns]))
                    for ns in range(S)
                    if P[s, a, ns] > 0.0
                )
                row.append(outs)
            dynamics.append(tuple(row))
        return TabularMdp(
            num_states=S,
            num_actions=A,
            dynamics=tuple(dynamics),
            discount=discount,
            initial_dist=np.asarray(initial_dist, dtype=float),
            absorbing=absorbing,
            max_episode_steps=max_episode_steps,
        )


class _SamplingTables:
    """Flattened outcome arrays for fast episode sampling."""

    def __init__(self, mdp: TabularMdp):
        S, A = mdp.num_states, mdp.num_actions
        counts = np.zeros((S, A), dtype=np.int64)
        offsets = np.zeros((S, A), dtype=np.int64)
        next_states: list[int] = []
        rewards: list[float] = []
        cum_probs: list[float] = []
        pos = 0
        for s, row in enumerate(mdp.dynamics):
            for a, outs in enumerate(row):
                offsets[s, a] = pos
                counts[s, a] = len(outs)
                acc = 0.0
                for ns, r, p in outs:
                    next_states.append(ns)
                    rewards.append(r)
                    acc += p
                    cum_probs.append(acc)
                pos += len(outs)
        self.counts = counts
        self.offsets = offsets
        self.next_states = np.asarray(next_states, dtype=np.int64)
        self.rewards = np.asarray(rewards, dtype=float)
        self.cum_probs = np.asarray(cum_probs, dtype=float)
        self.cum_initial = np.cumsum(mdp.initial_dist)
        self.absorbing_mask = np.zeros(S, dtype=bool)
        for s in mdp.absorbing:
            self.absorbing_mask[s] = True

    def sample_initial(self, rng: np.random.Generator) -> int:
        return int(np.searchsorted(self.cum_initial, rng.random(), side="right"))

    def step(self, s: int, a: int, rng: np.random.Generator) -> tuple[int, float]:
        base = self.offsets[s, a]
        count = self.counts[s, a]
        if count == 1:
            return int(self.next_states[base]), float(self.rewards[base])
        u = rng.random()
        k = base + int(np.searchsorted(self.cum_probs[base : base + count], u, side="right"))
        k = min(k, base + count - 1)
        return int(self.next_states[k]), float(self.rewards[k])


@dataclass(frozen=True)
class Trajectory:
    """One episode: (state, action, reward, next_state) steps and the discounted return."""

    steps: tuple[tuple[int, int, float, int], ...]
    return_value: float

    @staticmethod
    def from_steps(steps: Sequence[tuple[int, int, float, int]], discount: float) -> "Trajectory":
        ret = 0.0
        scale = 1.0
        for _, _, r, _ in steps:
            ret += scale * r
            scale *= discount
        return Trajectory(steps=tuple(steps), return_value=ret)

    def __len__(self) -> int:
        return len(self.steps)

    @property
    def states(self) -> tuple[int, ...]:
        return tuple(s for s, _, _, _ in self.steps)

    @property
    def rewards(self) -> tuple[float, ...]:
        return tuple(r for _, _, r, _ in self.steps)


@dataclass(frozen=True)
class VisitationProfile:
    """Expected per-episode visit counts and the normalized on-policy distribution."""

    visit_counts: np.ndarray
    on_policy_dist: np.ndarray

    def __post_init__(self):
        for name in ("visit_counts", "on_policy_dist"):
            arr = np.asarray(getattr(self, name), dtype=float).copy()
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)


def rollout(mdp: TabularMdp, policy: SoftmaxPolicy, rng_seed: int) -> Trajectory:
    """Sample one episode. Starts from the initial distribution and stops at an
    absorbing state or after ``max_episode_steps``; identical seeds give
    identical trajectories."""
    mdp.check_policy(policy)
    tables = mdp.sampling_tables()
    rng = rng_from_seed(rng_seed)
    cum_policy = np.cumsum(policy.probabilities(), axis=1)
    steps = _sample_episode(tables, cum_policy, rng, mdp.max_episode_steps)
    return Trajectory.from_steps(steps, mdp.discount)


def _sample_episode(
    tables: _SamplingTables,
    cum_policy: np.ndarray,
    rng: np.random.Generator,
    max_steps: int,
) -> list[tuple[int, int, float, int]]:
    s = tables.sample_initial(rng)
    steps: list[tuple[int, int, float, int]] = []
    absorbing = tables.absorbing_mask
    num_actions = cum_policy.shape[1]
    for _ in range(max_steps):
        if absorbing[s]:
            break
        a = int(np.searchsorted(cum_policy[s], rng.random(), side="right"))
        if a >= num_actions:
            a = num_actions - 1
        ns, r = tables.step(s, a, rng)
        steps.append((s, a, r, ns))
        s = ns
    return steps


def evaluate_policy(mdp: TabularMdp, policy: SoftmaxPolicy) -> np.ndarray:
    """Exact state values v_pi via a dense solve of the Bellman linear system.

    Absorbing states have value 0.  Raises NumericalError when the system is
    singular or poorly conditioned (possible only for discount 1 with
    non-episodic structure under the given policy).
    """
    mdp.check_policy(policy)
    transient = list(mdp.transient_states)
    values = np.zeros(mdp.num_states)
    if not transient:
        return values
    probs = policy.probabilities()
    P = mdp.policy_transition(probs)
    r_pi = (probs * mdp.expected_rewards()).sum(axis=1)
    P_tt = P[np.ix_(transient, transient)]
    b = r_pi[transient]
    A = np.eye(len(transient)) - mdp.discount * P_tt
    try:
        v_t = np.linalg.solve(A, b)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(
            f"Bellman system is singular (discount={mdp.discount}); "
            "the MDP is not episodic under this policy"
        ) from exc
    residual = float(np.max(np.abs(A @ v_t - b))) if len(b) else 0.0
    if not np.isfinite(v_t).all() or residual > 1e-8:
        raise NumericalError(
            f"Bellman solve residual {residual:.3e} exceeds 1e-8; "
            "the MDP is likely non-episodic under this policy"
        )
    values[transient] = v_t
    return values


def on_policy_distribution(mdp: TabularMdp, policy: SoftmaxPolicy) -> VisitationProfile:
    """Exact expected visit counts and their normalization.

    Solves, over the transient states only,
        zeta(s) = mu(s) + sum_sbar zeta(sbar) * sum_a pi(a|sbar) p(s|sbar, a)
    (undiscounted: the count is the expected number of time steps spent in s
    during an episode), then normalizes to the on-policy distribution.
    """
    mdp.check_policy(policy)
    transient = list(mdp.transient_states)
    if not transient:
        raise ConfigurationError("MDP has no transient states; no on-policy distribution exists")
    probs = policy.probabilities()
    P = mdp.policy_transition(probs)
    P_tt = P[np.ix_(transient, transient)]
    mu_t = mdp.initial_dist[transient]
    A = np.eye(len(transient)) - P_tt.T
    try:
        zeta_t = np.linalg.solve(A, mu_t)
    except np.linalg.LinAlgError as exc:
        raise NumericalError("visitation system is singular; the MDP is not episodic under this policy") from exc
    if not np.isfinite(zeta_t).all() or (zeta_t < -1e-9).any():
        raise NumericalError("visitation solve produced negative or non-finite counts")
    zeta_t = np.clip(zeta_t, 0.0, None)
    zeta = np.zeros(mdp.num_states)
    zeta[transient] = zeta_t
    total = zeta.sum()
    if total <= 0:
        raise NumericalError("visitation counts sum to zero")
    return VisitationProfile(visit_counts=zeta, on_policy_dist=zeta / total)


def reachable_states(mdp: TabularMdp) -> tuple[int, ...]:
    """States reachable from the initial distribution under any action sequence."""
    frontier = [s for s in range(mdp.num_states) if mdp.initial_dist[s] > 0.0]
    seen = set(frontier)
    while frontier:
        s = frontier.pop()
        for outs in mdp.dynamics[s]:
            for ns, _, p in outs:
                if p > 0.0 and ns not in seen:
                    seen.add(ns)
                    frontier.append(ns)
    return tuple(sorted(seen))


def sample_states(mdp: TabularMdp, count: int, rng_seed: int) -> list[int]:
    """Uniform sample (with replacement) over reachable non-absorbing states."""
    if count < 1:
        raise ConfigurationError("count must be at least 1")
    candidates = [s for s in reachable_states(mdp) if s not in mdp.absorbing]
    if not candidates:
        raise ConfigurationError("MDP has no reachable non-absorbing states to sample")
    rng = rng_from_seed(rng_seed)
    idx = rng.integers(0, len(candidates), size=count)
    return [candidates[i] for i in idx]
