"""Weakly coupled MDP environments with continuous actions.

A problem instance is a list of independent projects (finite state space,
action interval [0, a_max], transition kernel, reward, action cost) tied
together only by a per-step budget on the total action cost.  Four benchmark
families are provided: two-state "type_a" and "type_b" projects, a "mixed"
environment combining both, and a six-state "speed_scaling" queueing model
obtained by uniformizing a continuous-time chain.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigError, DomainError

JointState = tuple[int, ...]

ENV_KINDS = ("type_a", "type_b", "mixed", "speed_scaling")

# Speed-scaling constants: arrival rate, state count, rejection penalty.
_SS_ALPHA = 0.9
_SS_STATES = 6
_SS_REJECT = -10.0


@dataclass(frozen=True)
class ProjectModel:
    """One component MDP: finite states, actions in [0, a_max].

    ``kernel(s, a)`` returns the next-state probability row, ``reward_fn(s)``
    the reward collected in state ``s`` (before transitioning), and
    ``cost_fn(s, a)`` the resource consumed.  ``cost_fn(s, 0) == 0`` and the
    cost is nondecreasing in ``a`` for every state.  ``name`` identifies the
    dynamics; projects with equal names share Q-networks.
    """

    name: str
    state_count: int
    a_max: float
    kernel: Callable[[int, float], np.ndarray]
    reward_fn: Callable[[int], float]
    cost_fn: Callable[[int, float], float]

    def max_cost(self) -> float:
        """Largest single-step cost (cost is nondecreasing in the action)."""
        return max(self.cost_fn(s, self.a_max) for s in range(self.state_count))


@dataclass(frozen=True)
class EnvironmentSpec:
    """A weakly coupled instance: projects, shared budget, discount factor."""

    kind: str
    projects: tuple[ProjectModel, ...]
    budget: float
    gamma: float

    def __post_init__(self) -> None:
        if len(self.projects) < 1:
            raise ConfigError("an environment needs at least one project")
        if not 0.0 < self.gamma < 1.0:
            raise DomainError(f"gamma must lie in (0, 1), got {self.gamma}")
        if self.budget < 0.0:
            raise DomainError(f"budget must be nonnegative, got {self.budget}")
        total = sum(p.max_cost() for p in self.projects)
        if self.budget > total:
            warnings.warn(
                f"budget {self.budget} exceeds the largest possible total cost "
                f"{total}; the budget constraint is vacuous",
                stacklevel=2,
            )

    @property
    def n_projects(self) -> int:
        return len(self.projects)

    def joint_state_count(self) -> int:
        n = 1
        for p in self.projects:
            n *= p.state_count
        return n

    def joint_states(self):
        """Iterate all joint states in row-major (first project slowest) order."""
        return _product_states([p.state_count for p in self.projects])

    def distinct_models(self) -> dict[str, ProjectModel]:
        """Unique dynamics keyed by model name, in first-appearance order."""
        out: dict[str, ProjectModel] = {}
        for p in self.projects:
            out.setdefault(p.name, p)
        return out


@dataclass(frozen=True)
class StepResult:
    """Outcome of one environment step."""

    next_states: JointState
    rewards: tuple[float, ...]
    costs: tuple[float, ...]
    done: bool = False


def _product_states(counts: Sequence[int]):
    state = [0] * len(counts)
    while True:
        yield tuple(state)
        for i in reversed(range(len(counts))):
            state[i] += 1
            if state[i] < counts[i]:
                break
            state[i] = 0
        else:
            return


def _check_action_scalar(a: float, a_max: float) -> None:
    if not math.isfinite(a):
        raise DomainError(f"action must be finite, got {a}")
    if a < 0.0 or a > a_max:
        raise DomainError(f"action {a} outside [0, {a_max}]")


def type_a_kernel(s: int, a: float) -> np.ndarray:
    """Two-state kernel with a quadratic row 0 and exponential row 1."""
    _check_action_scalar(a, 2.0)
    if s == 0:
        p_stay = 0.02 * a * a - 0.09 * a + 0.8
    elif s == 1:
        p_stay = 0.75 * math.exp(-0.947 * a)
    else:
        raise DomainError(f"type_a state must be 0 or 1, got {s}")
    return np.array([p_stay, 1.0 - p_stay])


def type_b_kernel(s: int, a: float) -> np.ndarray:
    """Two-state kernel with exponential decay toward the active state."""
    _check_action_scalar(a, 2.0)
    if s == 0:
        p_stay = 0.95 * math.exp(-2.235 * a)
    elif s == 1:
        p_stay = 0.3347 * math.exp(-1.609 * a)
    else:
        raise DomainError(f"type_b state must be 0 or 1, got {s}")
    return np.array([p_stay, 1.0 - p_stay])


def _two_state_model(name: str, kernel: Callable[[int, float], np.ndarray]) -> ProjectModel:
    return ProjectModel(
        name=name,
        state_count=2,
        a_max=2.0,
        kernel=kernel,
        reward_fn=float,
        cost_fn=lambda s, a: a,
    )


def type_a_model() -> ProjectModel:
    return _two_state_model("type_a", type_a_kernel)


def type_b_model() -> ProjectModel:
    return _two_state_model("type_b", type_b_kernel)


def speed_scaling_model(gamma: float) -> ProjectModel:
    """Six-state uniformized queue with service rate sqrt(a).

    The uniformization constant is nu = max_a(alpha + sqrt(a)), the
    continuous-time discount is beta = nu/gamma - nu, and rewards/costs carry
    the resulting 1/(nu + beta) scaling.  State 5 is the full queue: arrivals
    there are rejected at a flat penalty folded into the reward.
    """
    if not 0.0 < gamma < 1.0:
        raise DomainError(f"gamma must lie in (0, 1), got {gamma}")
    a_max = 2.0
    nu = _SS_ALPHA + math.sqrt(a_max)
    beta = nu / gamma - nu
    scale = nu + beta
    s_max = _SS_STATES - 1
    p_up = _SS_ALPHA / nu

    def kernel(s: int, a: float) -> np.ndarray:
        _check_action_scalar(a, a_max)
        if not 0 <= s < _SS_STATES:
            raise DomainError(f"speed_scaling state must be in [0, {s_max}], got {s}")
        row = np.zeros(_SS_STATES)
        mu = math.sqrt(a)
        if s == 0:
            row[0] = 1.0 - p_up
            row[1] = p_up
        elif s == s_max:
            row[s - 1] = mu / nu
            row[s] = 1.0 - mu / nu
        else:
            row[s - 1] = mu / nu
            row[s] = 1.0 - (_SS_ALPHA + mu) / nu
            row[s + 1] = p_up
        return row

    def reward_fn(s: int) -> float:
        if s == s_max:
            return (-s_max + _SS_REJECT) / scale
        return -s / scale

    def cost_fn(s: int, a: float) -> float:
        return a / scale if s > 0 else 0.0

    return ProjectModel(
        name="speed_scaling",
        state_count=_SS_STATES,
        a_max=a_max,
        kernel=kernel,
        reward_fn=reward_fn,
        cost_fn=cost_fn,
    )


def make_environment(kind: str, n_projects: int, budget: float, gamma: float) -> EnvironmentSpec:
    """Assemble a benchmark instance; `kind` is one of ENV_KINDS."""
    if n_projects < 1:
        raise ConfigError(f"n_projects must be >= 1, got {n_projects}")
    if kind == "type_a":
        projects = tuple(type_a_model() for _ in range(n_projects))
    elif kind == "type_b":
        projects = tuple(type_b_model() for _ in range(n_projects))
    elif kind == "mixed":
        if n_projects % 2 != 0:
            raise ConfigError("mixed environments need an even project count")
        half = n_projects // 2
        projects = tuple(type_a_model() for _ in range(half)) + tuple(
            type_b_model() for _ in range(n_projects - half)
        )
    elif kind == "speed_scaling":
        projects = tuple(speed_scaling_model(gamma) for _ in range(n_projects))
    else:
        raise ConfigError(f"unknown environment kind {kind!r}; valid kinds: {', '.join(ENV_KINDS)}")
    return EnvironmentSpec(kind=kind, projects=projects, budget=budget, gamma=gamma)


def validate_action(env: EnvironmentSpec, action: Sequence[float]) -> np.ndarray:
    """Check length, finiteness, and box bounds; returns the action as an array."""
    a = np.asarray(action, dtype=float)
    if a.shape != (env.n_projects,):
        raise DomainError(f"action must have length {env.n_projects}, got shape {a.shape}")
    for i, p in enumerate(env.projects):
        _check_action_scalar(float(a[i]), p.a_max)
    return a


def total_cost(env: EnvironmentSpec, state: JointState, action: Sequence[float]) -> float:
    return sum(
        p.cost_fn(state[i], float(action[i])) for i, p in enumerate(env.projects)
    )


def step(env: EnvironmentSpec, state: JointState, action: Sequence[float], rng) -> StepResult:
    """Advance every project one step; rewards are paid on the current state.

    All four benchmark families are continuing tasks, so ``done`` is always
    False.  ``rng`` only needs a ``random()`` method returning a float in
    [0, 1); each project consumes exactly one draw.
    """
    a = validate_action(env, action)
    next_states = []
    rewards = []
    costs = []
    for i, p in enumerate(env.projects):
        s = state[i]
        if not 0 <= s < p.state_count:
            raise DomainError(f"state {s} outside [0, {p.state_count}) for project {i}")
        row = p.kernel(s, float(a[i]))
        u = rng.random()
        next_states.append(int(np.searchsorted(np.cumsum(row), u, side="right")))
        rewards.append(p.reward_fn(s))
        costs.append(p.cost_fn(s, float(a[i])))
    return StepResult(
        next_states=tuple(next_states),
        rewards=tuple(rewards),
        costs=tuple(costs),
        done=False,
    )


def scale_to_budget(
    env: EnvironmentSpec, state: JointState, action: np.ndarray, slack: float = 1e-9
) -> np.ndarray:
    """Uniformly shrink an action vector until its total cost is within budget.

    Only components with positive cost at the current state are scaled, so
    free actions (e.g. speed scaling at state 0) are left untouched.  Costs
    vanish at zero action, so a feasible scale always exists; it is located
    by bisection (exact in one step for linear costs).
    """
    a = np.array(action, dtype=float)
    if total_cost(env, state, a) <= env.budget + slack:
        return a
    mask = np.array(
        [p.cost_fn(state[i], float(a[i])) > 0.0 for i, p in enumerate(env.projects)]
    )

    def cost_at(t: float) -> float:
        scaled = np.where(mask, t * a, a)
        return total_cost(env, state, scaled)

    # For strictly linear costs the exact factor is budget / cost; accept it
    # when it lands within budget, otherwise fall back to bisection.
    base = total_cost(env, state, a)
    t_lin = env.budget / base if base > 0 else 0.0
    if cost_at(t_lin) <= env.budget + slack:
        lo = t_lin
    else:
        lo, hi = 0.0, 1.0
        for _ in range(80):
            mid = 0.5 * (lo + hi)
            if cost_at(mid) <= env.budget:
                lo = mid
            else:
                hi = mid
    return np.where(mask, lo * a, a)
