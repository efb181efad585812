"""Seeded procedural task families sharing one state-action encoding.

Two families are provided:

* ``grid_maze`` -- deterministic four-action navigation on a fixed
  width x height grid.  Walls are encoded as absorbing sink cells so that
  every task in a family exposes the identical state space; each step costs
  1/max_episode_steps and entering the goal pays +1, so shorter paths earn
  higher returns.
* ``cartpole`` -- classic pole balancing with physics parameters sampled
  per task, discretized onto a grid of cell centers shared across the
  family, plus one absorbing failure state.  Each surviving step pays +1.

A TaskSpec is a pure recipe: identical specs always rebuild bit-identical
MDPs.
"""

from __future__ import annotations

import functools
import math
from collections import deque
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .errors import ConfigurationError, GenerationError
from .mdp import Outcome, TabularMdp
from .util import derive_seed, rng_from_seed

GRID_MAZE = "grid_maze"
CARTPOLE = "cartpole"
POOL_SCHEMA = "task-pool/1"

MAZE_ACTIONS = ((-1, 0), (1, 0), (0, -1), (0, 1))  # up, down, left, right


@dataclass(frozen=True)
class GridMazeParams:
    width: int = 5
    height: int = 5
    wall_density: float = 0.25
    max_episode_steps: Optional[int] = None  # default 4 * width * height

    def __post_init__(self):
        if self.width < 3 or self.height < 3:
            raise ConfigurationError("maze width and height must be at least 3")
        if not (0.0 <= self.wall_density < 1.0):
            raise ConfigurationError("wall_density must lie in [0, 1)")

    @property
    def episode_steps(self) -> int:
        return self.max_episode_steps or 4 * self.width * self.height

    def to_json_dict(self) -> dict:
        return {
            "width": self.width,
            "height": self.height,
            "wall_density": self.wall_density,
            "max_episode_steps": self.max_episode_steps,
        }


@dataclass(frozen=True)
class CartPoleParams:
    # (low, high) sampling ranges; low == high pins a parameter.
    pole_length: tuple[float, float] = (0.6, 1.4)
    pole_mass: tuple[float, float] = (0.05, 0.25)
    cart_mass: tuple[float, float] = (0.7, 1.3)
    gravity: tuple[float, float] = (8.0, 11.0)
    force_magnitude: tuple[float, float] = (7.0, 13.0)
    fail_angle_deg: tuple[float, float] = (8.0, 15.0)
    # Discretization, shared by every task in the family.
    angle_cells: int = 11
    ang_velocity_cells: int = 7
    position_cells: int = 5
    velocity_cells: int = 5
    position_limit: float = 2.4
    velocity_limit: float = 2.5
    ang_velocity_limit: float = 2.5
    # One Euler step per decision; the step must be long enough that motion
    # crosses cell boundaries at this grid resolution.
    time_step: float = 0.1
    max_episode_steps: int = 200

    def __post_init__(self):
        for name in ("pole_length", "pole_mass", "cart_mass", "gravity", "force_magnitude", "fail_angle_deg"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ConfigurationError(f"range for {name} is empty: ({lo}, {hi})")
        for name in ("pole_length", "pole_mass", "cart_mass"):
            lo, _ = getattr(self, name)
            if lo <= 0:
                raise ConfigurationError(f"{name} must be strictly positive")
        if self.gravity[0] < 0 or self.force_magnitude[0] < 0:
            raise ConfigurationError("gravity and force_magnitude must be nonnegative")
        if self.fail_angle_deg[0] <= 0:
            raise ConfigurationError("fail_angle_deg must be strictly positive")
        if min(self.angle_cells, self.ang_velocity_cells, self.position_cells, self.velocity_cells) < 3:
            raise ConfigurationError("every discretization axis needs at least 3 cells")
        # Upright band must be wider than half a cell, else the failure
        # threshold is invisible at grid resolution.
        theta_max = math.radians(self.fail_angle_deg[1])
        if math.radians(self.fail_angle_deg[0]) <= theta_max / self.angle_cells:
            raise ConfigurationError(
                "angle grid too coarse: the smallest fail angle lies inside half a cell width"
            )

    def to_json_dict(self) -> dict:
        return {
            "pole_length": list(self.pole_length),
            "pole_mass": list(self.pole_mass),
            "cart_mass": list(self.cart_mass),
            "gravity": list(self.gravity),
            "force_magnitude": list(self.force_magnitude),
            "fail_angle_deg": list(self.fail_angle_deg),
            "angle_cells": self.angle_cells,
            "ang_velocity_cells": self.ang_velocity_cells,
            "position_cells": self.position_cells,
            "velocity_cells": self.velocity_cells,
            "position_limit": self.position_limit,
            "velocity_limit": self.velocity_limit,
            "ang_velocity_limit": self.ang_velocity_limit,
            "time_step": self.time_step,
            "max_episode_steps": self.max_episode_steps,
        }


FamilyParams = GridMazeParams | CartPoleParams


@dataclass(frozen=True)
class TaskSpec:
    """Recipe for one task: family, family parameters, and the task seed."""

    family: str
    seed: int
    params: Optional[FamilyParams] = None
    label: str = ""

    def to_json_dict(self) -> dict:
        return {
            "family": self.family,
            "seed": self.seed,
            "params": self.params.to_json_dict() if self.params is not None else None,
            "label": self.label,
        }

    @staticmethod
    def from_json_dict(data: dict) -> "TaskSpec":
        family = data["family"]
        params = data.get("params")
        parsed: Optional[FamilyParams] = None
        if params is not None:
            if family == GRID_MAZE:
                parsed = GridMazeParams(**params)
            elif family == CARTPOLE:
                parsed = CartPoleParams(
                    **{
                        k: tuple(v) if isinstance(v, list) else v
                        for k, v in params.items()
                    }
                )
            else:
                raise ConfigurationError(f"unknown task family {family!r}")
        return TaskSpec(family=family, seed=int(data["seed"]), params=parsed, label=data.get("label", ""))


# ---------------------------------------------------------------------------
# Grid mazes
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GridMazeLayout:
    """Wall mask plus start/goal cells; exposed for inspection and tests."""

    walls: np.ndarray  # (height, width) bool
    start: tuple[int, int]
    goal: tuple[int, int]

    def __post_init__(self):
        walls = np.asarray(self.walls, dtype=bool).copy()
        walls.flags.writeable = False
        object.__setattr__(self, "walls", walls)


def _carve_layout(rng: np.random.Generator, params: GridMazeParams) -> Optional[GridMazeLayout]:
    h, w = params.height, params.width
    walls = rng.random((h, w)) < params.wall_density
    open_cells = np.argwhere(~walls)
    if len(open_cells) < 2:
        return None
    goal = tuple(open_cells[rng.integers(len(open_cells))])
    others = [tuple(c) for c in open_cells if tuple(c) != goal]
    start = others[rng.integers(len(others))]

    # Keep only cells that can reach the goal; everything else becomes a wall
    # so the encoded MDP is episodic from every open cell.
    reach = np.zeros((h, w), dtype=bool)
    queue = deque([goal])
    reach[goal] = True
    while queue:
        r, c = queue.popleft()
        for dr, dc in MAZE_ACTIONS:
            nr, nc = r + dr, c + dc
            if 0 <= nr < h and 0 <= nc < w and not walls[nr, nc] and not reach[nr, nc]:
                reach[nr, nc] = True
                queue.append((nr, nc))
    if not reach[start]:
        return None
    walls = walls | ~reach
    return GridMazeLayout(walls=walls, start=start, goal=goal)


def grid_maze_layout(seed: int, params: GridMazeParams, max_attempts: int = 100) -> GridMazeLayout:
    """Deterministic layout for ``seed``; retries internally until the start
    can reach the goal, then fails with GenerationError."""
    rng = rng_from_seed(seed)
    for _ in range(max_attempts):
        layout = _carve_layout(rng, params)
        if layout is not None:
            return layout
    raise GenerationError(
        f"could not generate a connected {params.width}x{params.height} maze "
        f"at wall_density={params.wall_density} after {max_attempts} attempts"
    )


def generate_grid_maze(seed: int, params: GridMazeParams | None = None) -> TabularMdp:
    """Four-action deterministic maze on a fixed grid.

    Every cell is a state (walls are absorbing sinks), so all tasks built
    from the same params share one encoding.  Moving into a wall or off the
    grid leaves the agent in place.  Rewards: -1/max_episode_steps per step,
    +1 on the transition that enters the goal; the goal is absorbing.
    """
    params = params or GridMazeParams()
    layout = grid_maze_layout(seed, params)
    h, w = params.height, params.width
    steps = params.episode_steps
    step_penalty = -1.0 / steps

    def cell_index(r: int, c: int) -> int:
        return r * w + c

    goal_idx = cell_index(*layout.goal)
    absorbing = {goal_idx}
    absorbing.update(cell_index(r, c) for r, c in np.argwhere(layout.walls))

    dynamics: list[tuple[tuple[Outcome, ...], ...]] = []
    for r in range(h):
        for c in range(w):
            s = cell_index(r, c)
            if s in absorbing:
                dynamics.append(tuple(((s, 0.0, 1.0),) for _ in MAZE_ACTIONS))
                continue
            row = []
            for dr, dc in MAZE_ACTIONS:
                nr, nc = r + dr, c + dc
                if 0 <= nr < h and 0 <= nc < w and not layout.walls[nr, nc]:
                    ns = cell_index(nr, nc)
                else:
                    ns = s
                reward = step_penalty + (1.0 if ns == goal_idx else 0.0)
                row.append(((ns, reward, 1.0),))
            dynamics.append(tuple(row))

    mu = np.zeros(h * w)
    mu[cell_index(*layout.start)] = 1.0
    return TabularMdp(
        num_states=h * w,
        num_actions=len(MAZE_ACTIONS),
        dynamics=tuple(dynamics),
        discount=1.0,
        initial_dist=mu,
        absorbing=frozenset(absorbing),
        max_episode_steps=steps,
    )


def maze_shortest_path_length(layout: GridMazeLayout) -> int:
    """Breadth-first distance from start to goal over open cells."""
    h, w = layout.walls.shape
    dist = {layout.start: 0}
    queue = deque([layout.start])
    while queue:
        cell = queue.popleft()
        if cell == layout.goal:
            return dist[cell]
        r, c = cell
        for dr, dc in MAZE_ACTIONS:
            nr, nc = r + dr, c + dc
            nxt = (nr, nc)
            if 0 <= nr < h and 0 <= nc < w and not layout.walls[nr, nc] and nxt not in dist:
                dist[nxt] = dist[cell] + 1
                queue.append(nxt)
    raise GenerationError("goal not reachable from start in layout")


# ---------------------------------------------------------------------------
# Discretized cart-pole
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CartPolePhysics:
    pole_length: float
    pole_mass: float
    cart_mass: float
    gravity: float
    force_magnitude: float
    fail_angle_rad: float


def sample_cartpole_physics(seed: int, params: CartPoleParams) -> CartPolePhysics:
    rng = rng_from_seed(seed)

    def draw(lo_hi: tuple[float, float]) -> float:
        lo, hi = lo_hi
        return float(rng.uniform(lo, hi))

    return CartPolePhysics(
        pole_length=draw(params.pole_length),
        pole_mass=draw(params.pole_mass),
        cart_mass=draw(params.cart_mass),
        gravity=draw(params.gravity),
        force_magnitude=draw(params.force_magnitude),
        fail_angle_rad=math.radians(draw(params.fail_angle_deg)),
    )


def cartpole_euler_step(
    state: tuple[float, float, float, float],
    force: float,
    physics: CartPolePhysics,
    time_step: float,
) -> tuple[float, float, float, float]:
    """One explicit Euler step of the pole-on-a-cart equations of motion.

    ``state`` is (position, velocity, angle, angular velocity); the moment
    term uses the pole half-length as in the classic formulation.
    """
    x, v, theta, omega = state
    half_len = physics.pole_length / 2.0
    total_mass = physics.cart_mass + physics.pole_mass
    pole_moment = physics.pole_mass * half_len
    sin_t, cos_t = math.sin(theta), math.cos(theta)
    temp = (force + pole_moment * omega * omega * sin_t) / total_mass
    theta_acc = (physics.gravity * sin_t - cos_t * temp) / (
        half_len * (4.0 / 3.0 - physics.pole_mass * cos_t * cos_t / total_mass)
    )
    x_acc = temp - pole_moment * theta_acc * cos_t / total_mass
    return (
        x + time_step * v,
        v + time_step * x_acc,
        theta + time_step * omega,
        omega + time_step * theta_acc,
    )


class CartPoleGrid:
    """Maps continuous cart-pole states to shared grid cells and back."""

    def __init__(self, params: CartPoleParams):
        self.params = params
        theta_max = math.radians(params.fail_angle_deg[1])
        self.axes = (
            ("angle", -theta_max, theta_max, params.angle_cells),
            ("ang_velocity", -params.ang_velocity_limit, params.ang_velocity_limit, params.ang_velocity_cells),
            ("position", -params.position_limit, params.position_limit, params.position_cells),
            ("velocity", -params.velocity_limit, params.velocity_limit, params.velocity_cells),
        )
        self.num_cells = int(np.prod([n for _, _, _, n in self.axes]))
        self.fail_state = self.num_cells
        self.num_states = self.num_cells + 1

    def _axis_center(self, lo: float, hi: float, n: int, i: int) -> float:
        width = (hi - lo) / n
        return lo + (i + 0.5) * width

    def _axis_bin(self, lo: float, hi: float, n: int, value: float) -> int:
        width = (hi - lo) / n
        i = int(math.floor((value - lo) / width))
        return min(max(i, 0), n - 1)

    def cell_center(self, index: int) -> tuple[float, float, float, float]:
        coords = []
        rem = index
        for _, lo, hi, n in reversed(self.axes):
            coords.append(self._axis_center(lo, hi, n, rem % n))
            rem //= n
        angle, ang_vel, pos, vel = reversed(coords)
        # state tuples everywhere are (position, velocity, angle, ang_velocity)
        return (pos, vel, angle, ang_vel)

    def state_index(self, state: tuple[float, float, float, float]) -> int:
        pos, vel, angle, ang_vel = state
        values = (angle, ang_vel, pos, vel)
        idx = 0
        for (_, lo, hi, n), value in zip(self.axes, values):
            idx = idx * n + self._axis_bin(lo, hi, n, value)
        return idx

    def initial_state_index(self) -> int:
        return self.state_index((0.0, 0.0, 0.0, 0.0))


def generate_cartpole(seed: int, params: CartPoleParams | None = None) -> TabularMdp:
    """Discretized cart-pole task under seeded physics.

    Actions push left/right with the sampled force.  Transitions map one
    Euler step from each cell center onto the shared grid; crossing the
    task's fail angle or the position limit leads to the absorbing failure
    state.  Every surviving step pays +1.  Grid cells whose center already
    violates the fail angle are encoded as absorbing sinks (they are
    unreachable).
    """
    params = params or CartPoleParams()
    physics = sample_cartpole_physics(seed, params)
    grid = CartPoleGrid(params)
    fail = grid.fail_state

    absorbing = {fail}
    dynamics: list[tuple[tuple[Outcome, ...], ...]] = []
    for s in range(grid.num_cells):
        center = grid.cell_center(s)
        pos, vel, angle, ang_vel = center
        if abs(angle) > physics.fail_angle_rad or abs(pos) > params.position_limit:
            absorbing.add(s)
            dynamics.append(tuple(((s, 0.0, 1.0),) for _ in range(2)))
            continue
        row = []
        for action in range(2):
            force = physics.force_magnitude if action == 1 else -physics.force_magnitude
            nxt = cartpole_euler_step(center, force, physics, params.time_step)
            n_pos, n_vel, n_angle, n_ang_vel = nxt
            if abs(n_angle) > physics.fail_angle_rad or abs(n_pos) > params.position_limit:
                row.append(((fail, 0.0, 1.0),))
            else:
                ns = grid.state_index(nxt)
                row.append(((ns, 1.0, 1.0),))
        dynamics.append(tuple(row))
    dynamics.append(tuple(((fail, 0.0, 1.0),) for _ in range(2)))

    start = grid.initial_state_index()
    if start in absorbing:
        raise ConfigurationError("initial upright cell is inside the failure band; widen the grid")
    mu = np.zeros(grid.num_states)
    mu[start] = 1.0
    return TabularMdp(
        num_states=grid.num_states,
        num_actions=2,
        dynamics=tuple(dynamics),
        discount=1.0,
        initial_dist=mu,
        absorbing=frozenset(absorbing),
        max_episode_steps=params.max_episode_steps,
    )


# ---------------------------------------------------------------------------
# Pools
# ---------------------------------------------------------------------------


_GENERATORS = {
    GRID_MAZE: generate_grid_maze,
    CARTPOLE: generate_cartpole,
}


def default_params(family: str) -> FamilyParams:
    if family == GRID_MAZE:
        return GridMazeParams()
    if family == CARTPOLE:
        return CartPoleParams()
    raise ConfigurationError(f"unknown task family {family!r}")


@functools.lru_cache(maxsize=4096)
def build_mdp(spec: TaskSpec) -> TabularMdp:
    """Materialize a TaskSpec; pure and cached, so repeated pipeline stages
    share one immutable MDP object per spec."""
    generator = _GENERATORS.get(spec.family)
    if generator is None:
        raise ConfigurationError(f"no generator for task family {spec.family!r}")
    params = spec.params or default_params(spec.family)
    return generator(spec.seed, params)


@dataclass(frozen=True)
class TaskPool:
    """Disjoint training / validation / test task sets from one family."""

    family: str
    params: FamilyParams
    training: tuple[TaskSpec, ...]
    validation: tuple[TaskSpec, ...]
    test: tuple[TaskSpec, ...]

    @property
    def all_specs(self) -> tuple[TaskSpec, ...]:
        return self.training + self.validation + self.test

    def training_mdps(self) -> list[TabularMdp]:
        return [build_mdp(s) for s in self.training]

    def validation_mdps(self) -> list[TabularMdp]:
        return [build_mdp(s) for s in self.validation]

    def test_mdps(self) -> list[TabularMdp]:
        return [build_mdp(s) for s in self.test]

    def to_json_dict(self) -> dict:
        return {
            "schema_version": POOL_SCHEMA,
            "family": self.family,
            "params": self.params.to_json_dict(),
            "training": [s.to_json_dict() for s in self.training],
            "validation": [s.to_json_dict() for s in self.validation],
            "test": [s.to_json_dict() for s in self.test],
        }

    @staticmethod
    def from_json_dict(data: dict) -> "TaskPool":
        if data.get("schema_version") != POOL_SCHEMA:
            raise ConfigurationError(f"expected {POOL_SCHEMA} document, got {data.get('schema_version')!r}")
        return TaskPool(
            family=data["family"],
            params=TaskSpec.from_json_dict({"family": data["family"], "seed": 0, "params": data["params"]}).params,
            training=tuple(TaskSpec.from_json_dict(d) for d in data["training"]),
            validation=tuple(TaskSpec.from_json_dict(d) for d in data["validation"]),
            test=tuple(TaskSpec.from_json_dict(d) for d in data["test"]),
        )


def build_task_pool(
    family: str,
    train_count: int,
    validation_count: int,
    test_count: int,
    master_seed: int,
    params: FamilyParams | None = None,
) -> TaskPool:
    """Draw train/validation/test tasks with derived seeds.

    Tasks whose dynamics duplicate an earlier draw are discarded and
    regenerated from the next derived seed (bounded retries), so the three
    sets are pairwise disjoint and all tasks are pairwise distinct.
    """
    if min(train_count, validation_count, test_count) < 1:
        raise ConfigurationError("all pool counts must be at least 1")
    params = params or default_params(family)
    needed = train_count + validation_count + test_count
    max_attempts = needed + 256

    specs: list[TaskSpec] = []
    built: list[TabularMdp] = []
    attempt = 0
    while len(specs) < needed and attempt < max_attempts:
        seed = derive_seed(master_seed, "task", attempt)
        attempt += 1
        spec = TaskSpec(family=family, seed=seed, params=params)
        try:
            mdp = build_mdp(spec)
        except GenerationError:
            continue
        if any(mdp.dynamics_equal(existing) for existing in built):
            continue
        specs.append(spec)
        built.append(mdp)
    if len(specs) < needed:
        raise GenerationError(
            f"could not draw {needed} distinct {family} tasks after {max_attempts} attempts"
        )

    dims = {(m.num_states, m.num_actions) for m in built}
    if len(dims) != 1:
        raise GenerationError(f"family closure violated: saw state-action shapes {dims}")

    return TaskPool(
        family=family,
        params=params,
        training=tuple(specs[:train_count]),
        validation=tuple(specs[train_count : train_count + validation_count]),
        test=tuple(specs[train_count + validation_count :]),
    )
