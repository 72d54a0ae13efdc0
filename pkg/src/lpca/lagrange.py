"""Decoupled value function, optimal multiplier, and the policy dictionary.

With per-project Q-values in hand, the relaxed value of a joint state at a
multiplier lambda is lambda*B/(1-gamma) plus the sum of per-project maxima.
The best multiplier is found by an exhaustive scan of the 1000-point grid
(the grid is already materialized for training, and the scan is exact on it).
The policy dictionary maps every joint state to the feasible action vector
returned by the configured selector at that state's best multiplier.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from . import selectors
from .envs import EnvironmentSpec, JointState, total_cost
from .errors import CapacityError, DomainError
from .qnet import LambdaGrid, QNetwork

JOINT_SPACE_GUARD = 1_000_000


def compute_J(q_table: np.ndarray, grid: LambdaGrid, lambda_index: int,
              budget: float, gamma: float) -> float:
    """Relaxed value at one grid multiplier: lam*B/(1-gamma) + sum of maxima."""
    lam = grid.points[lambda_index]
    return float(lam * budget / (1.0 - gamma) + q_table[lambda_index, :].sum())


def j_curve(q_table: np.ndarray, grid: LambdaGrid, budget: float, gamma: float) -> np.ndarray:
    """Relaxed value at every grid multiplier; shape (n_lambda,)."""
    return grid.points * (budget / (1.0 - gamma)) + q_table.sum(axis=1)


def lambda_star(q_table: np.ndarray, grid: LambdaGrid, budget: float,
                gamma: float) -> tuple[float, int]:
    """Grid-scan minimizer of the relaxed value; ties toward the smallest multiplier."""
    j = j_curve(q_table, grid, budget, gamma)
    idx = int(np.argmin(j))
    return float(grid.points[idx]), idx


def state_max_column(
    net: QNetwork, a_max: float, s: int, grid: LambdaGrid, action_grid_size: int = 51
) -> np.ndarray:
    """max_a Q(s, a, lam) over the action grid for every grid multiplier."""
    actions = np.linspace(0.0, a_max, action_grid_size)
    lam_in, a_in = np.meshgrid(grid.points, actions, indexing="ij")
    q = net.forward_many(np.full(lam_in.size, s), a_in.ravel(), lam_in.ravel())
    return q.reshape(len(grid), action_grid_size).max(axis=1)


def per_state_max_tables(
    env: EnvironmentSpec,
    nets: Mapping[str, QNetwork],
    grid: LambdaGrid,
    action_grid_size: int = 51,
) -> dict[str, np.ndarray]:
    """max_a Q(s, a, lam) per distinct model; shape [state_count, n_lambda].

    Computed once per (model, state) pair and reused across all joint states,
    which collapses the dictionary build from O(|S| * N * n_lambda) network
    sweeps to O(sum_i state_count_i * n_lambda).
    """
    tables: dict[str, np.ndarray] = {}
    for name, model in env.distinct_models().items():
        net = nets[name]
        table = np.empty((model.state_count, len(grid)))
        for s in range(model.state_count):
            table[s] = state_max_column(net, model.a_max, s, grid, action_grid_size)
        tables[name] = table
    return tables


@dataclass
class PolicyDictionary:
    """Joint state -> (feasible action vector, multiplier used to pick it).

    In enumeration mode every state is precomputed and a missing lookup is a
    contract violation.  In on-demand mode entries are computed and memoized
    on first visit with identical semantics.
    """

    mapping: dict[JointState, tuple[np.ndarray, float]] = field(default_factory=dict)
    compute_fn: Callable[[JointState], tuple[np.ndarray, float]] | None = None

    def entry(self, state: JointState) -> tuple[np.ndarray, float]:
        state = tuple(state)
        hit = self.mapping.get(state)
        if hit is None:
            if self.compute_fn is None:
                raise KeyError(f"joint state {state} missing from enumerated policy dictionary")
            hit = self.compute_fn(state)
            self.mapping[state] = hit
        return hit

    def action(self, state: JointState) -> np.ndarray:
        return self.entry(state)[0]

    def lambda_star_of(self, state: JointState) -> float:
        return self.entry(state)[1]

    def __len__(self) -> int:
        return len(self.mapping)


def update_policy_dictionary(
    env: EnvironmentSpec,
    nets: Mapping[str, QNetwork],
    grid: LambdaGrid,
    method: str,
    de_cfg: "selectors.DEConfig | None" = None,
    greedy_cfg: "selectors.GreedyConfig | None" = None,
    action_grid_size: int = 51,
    mode: str = "enumerate",
) -> PolicyDictionary:
    """Build the state -> action map by solving the knapsack at each state.

    ``method`` is "de" or "greedy".  ``mode="enumerate"`` precomputes every
    joint state (guarded at 10^6 states); ``mode="on_demand"`` returns a
    memoized map that computes entries on first visit.
    """
    if method not in ("de", "greedy"):
        raise DomainError(f"method must be 'de' or 'greedy', got {method!r}")
    if mode not in ("enumerate", "on_demand"):
        raise DomainError(f"mode must be 'enumerate' or 'on_demand', got {mode!r}")
    if mode == "enumerate" and env.joint_state_count() > JOINT_SPACE_GUARD:
        raise CapacityError(
            f"joint state space has {env.joint_state_count()} states "
            f"(> {JOINT_SPACE_GUARD}); build the dictionary with mode='on_demand'"
        )
    tables = per_state_max_tables(env, nets, grid, action_grid_size)
    project_nets = [nets[p.name] for p in env.projects]
    project_tables = [tables[p.name] for p in env.projects]
    budget, gamma = env.budget, env.gamma

    def compute_entry(state: JointState) -> tuple[np.ndarray, float]:
        q_table = np.column_stack(
            [project_tables[i][state[i]] for i in range(env.n_projects)]
        )
        lam, _ = lambda_star(q_table, grid, budget, gamma)
        if method == "de":
            action = selectors.differential_evolution(
                state, lam, project_nets, env, de_cfg or selectors.DEConfig()
            )
        else:
            action = selectors.greedy_select(
                state, lam, project_nets, env, greedy_cfg or selectors.GreedyConfig()
            )
        cost = total_cost(env, state, action)
        if cost > budget + 1e-9:
            raise DomainError(
                f"selector returned an over-budget action at {state}: cost {cost} > {budget}"
            )
        return action, lam

    if mode == "on_demand":
        return PolicyDictionary(compute_fn=compute_entry)
    mapping = {state: compute_entry(state) for state in env.joint_states()}
    return PolicyDictionary(mapping=mapping)


def write_policy(path, env: EnvironmentSpec, policy: PolicyDictionary) -> None:
    """Dump the dictionary as a text table for the harness and plot tooling."""
    n = env.n_projects
    header = "joint_state lambda_star " + " ".join(f"a_{i + 1}" for i in range(n)) + " total_cost"
    with open(path, "w") as fh:
        fh.write(header + "\n")
        for state in sorted(policy.mapping):
            action, lam = policy.mapping[state]
            cost = total_cost(env, state, action)
            key = ",".join(str(s) for s in state)
            acts = " ".join(f"{a:.12g}" for a in action)
            fh.write(f"{key} {lam:.12g} {acts} {cost:.12g}\n")
