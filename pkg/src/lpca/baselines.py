"""Model-based reference solvers.

Three exact tools sit alongside the learned pipeline: a per-project tabular
solver for the multiplier-parameterized Q-values (the training oracle), a
Whittle-index policy over discretized action levels, and a joint
dynamic-programming solver that grinds out the true constrained optimum for
small instances.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .envs import EnvironmentSpec, JointState, ProjectModel
from .errors import CapacityError, DomainError, InfeasibleError, SolverError
from .qnet import LambdaGrid

MAX_VI_ITERATIONS = 100_000
JOINT_DP_GUARD = 10_000_000


@dataclass(frozen=True)
class TabularQ:
    """Exact Q(s, a, lambda) on an action grid, for every grid multiplier."""

    values: np.ndarray        # [state, action, lambda]
    action_grid: np.ndarray
    lambda_points: np.ndarray
    residual: float

    def max_q(self) -> np.ndarray:
        """max_a Q(s, a, lambda); shape [state, lambda]."""
        return self.values.max(axis=1)

    def argmax_level(self) -> np.ndarray:
        """Index of the maximizing action (ties toward the smallest action)."""
        return self.values.argmax(axis=1)


def _model_tables(model: ProjectModel, actions: np.ndarray):
    """Tabulate kernel, reward, and cost on the action grid."""
    n_s, n_a = model.state_count, actions.size
    kernel = np.empty((n_s, n_a, n_s))
    cost = np.empty((n_s, n_a))
    for s in range(n_s):
        for j, a in enumerate(actions):
            kernel[s, j] = model.kernel(s, float(a))
            cost[s, j] = model.cost_fn(s, float(a))
    reward = np.array([model.reward_fn(s) for s in range(n_s)])
    return kernel, reward, cost


def _value_iteration_lambdas(
    kernel: np.ndarray,
    reward: np.ndarray,
    cost: np.ndarray,
    lams: np.ndarray,
    gamma: float,
    tol: float,
) -> tuple[np.ndarray, float]:
    """Solve the relaxed per-project MDP for every multiplier in one sweep.

    Returns Q with shape [n_lambda, state, action] and the final residual.
    All multipliers share kernel work via a single einsum per iteration.
    """
    n_lam = lams.size
    n_s = reward.size
    v = np.zeros((n_lam, n_s))
    base = reward[None, :, None] - lams[:, None, None] * cost[None, :, :]
    for _ in range(MAX_VI_ITERATIONS):
        ev = np.einsum("sap,lp->lsa", kernel, v)
        q = base + gamma * ev
        v_new = q.max(axis=2)
        residual = float(np.max(np.abs(v_new - v)))
        v = v_new
        if residual < tol:
            return q, residual
    raise SolverError(
        f"value iteration did not reach tol={tol} within {MAX_VI_ITERATIONS} iterations"
    )


def solve_project_tabular(
    model: ProjectModel,
    grid: LambdaGrid | Iterable[float],
    action_grid_size: int,
    gamma: float,
    tol: float = 1e-10,
) -> TabularQ:
    """Value-iterate Q(s, a, lambda) to a fixed point for every grid multiplier.

    ``grid`` is normally the training LambdaGrid but any iterable of
    multiplier values is accepted.
    """
    if tol <= 0:
        raise DomainError(f"tol must be positive, got {tol}")
    lams = grid.points if isinstance(grid, LambdaGrid) else np.asarray(list(grid), dtype=float)
    actions = np.linspace(0.0, model.a_max, action_grid_size)
    kernel, reward, cost = _model_tables(model, actions)
    q, residual = _value_iteration_lambdas(kernel, reward, cost, lams, gamma, tol)
    return TabularQ(
        values=np.ascontiguousarray(q.transpose(1, 2, 0)),
        action_grid=actions,
        lambda_points=lams.copy(),
        residual=residual,
    )


# -- Whittle indices ----------------------------------------------------------


@dataclass(frozen=True)
class WhittleTable:
    """Per-(state, action level) critical multipliers for one project.

    ``index[s, k]`` is the largest multiplier at which activating at level k
    (action k * delta_a) is still optimal in state s; level 0 carries the
    +infinity sentinel.  ``non_indexable`` flags instances where the optimal
    level failed a monotonicity sweep; the threshold definition is still
    applied.
    """

    model: ProjectModel
    delta_a: float
    levels: np.ndarray
    index: np.ndarray          # [state, level]
    lambda_max: float
    sentinel: float
    non_indexable: bool


def _optimal_levels(
    kernel: np.ndarray,
    reward: np.ndarray,
    cost: np.ndarray,
    lams: np.ndarray,
    gamma: float,
    tol: float,
) -> np.ndarray:
    """Optimal action level per (lambda, state), ties toward the lowest level."""
    q, _ = _value_iteration_lambdas(kernel, reward, cost, lams, gamma, tol)
    return q.argmax(axis=2)


def compute_whittle(
    model: ProjectModel,
    delta_a: float,
    gamma: float,
    lambda_max: float = 10.0,
    tol: float = 1e-9,
) -> WhittleTable:
    """Threshold-on-lambda indices for every state and action level.

    For level k >= 1 the index is the largest multiplier at which the
    tabular-optimal level is still >= k, found by bisection down to a tenth
    of the 1000-point grid spacing.  A full-grid sweep first checks that the
    optimal level is monotone in the multiplier (indexability).
    """
    n_levels = round(model.a_max / delta_a)
    if abs(n_levels * delta_a - model.a_max) > 1e-9 or n_levels < 1:
        raise DomainError(
            f"delta_a={delta_a} must divide a_max={model.a_max} into whole levels"
        )
    levels = np.linspace(0.0, model.a_max, n_levels + 1)
    kernel, reward, cost = _model_tables(model, levels)

    grid = np.linspace(-lambda_max, lambda_max, 1000)
    sweep = _optimal_levels(kernel, reward, cost, grid, gamma, tol)
    non_indexable = bool(np.any(np.diff(sweep, axis=0) > 0))

    refine_step = (grid[1] - grid[0]) / 10.0
    sentinel = 10.0 * lambda_max

    cache: dict[float, np.ndarray] = {}

    def levels_at(lam: float) -> np.ndarray:
        if lam not in cache:
            cache[lam] = _optimal_levels(
                kernel, reward, cost, np.array([lam]), gamma, tol
            )[0]
        return cache[lam]

    n_s = model.state_count
    index = np.full((n_s, n_levels + 1), sentinel)
    lo_levels = sweep[0]     # at -lambda_max
    hi_levels = sweep[-1]    # at +lambda_max
    for s in range(n_s):
        for k in range(1, n_levels + 1):
            if hi_levels[s] >= k:
                index[s, k] = sentinel
            elif lo_levels[s] < k:
                index[s, k] = -lambda_max
            else:
                lo, hi = -lambda_max, lambda_max
                while hi - lo > refine_step:
                    mid = 0.5 * (lo + hi)
                    if levels_at(mid)[s] >= k:
                        lo = mid
                    else:
                        hi = mid
                index[s, k] = 0.5 * (lo + hi)
    return WhittleTable(
        model=model,
        delta_a=delta_a,
        levels=levels,
        index=index,
        lambda_max=lambda_max,
        sentinel=sentinel,
        non_indexable=non_indexable,
    )


def whittle_policy(state: JointState, tables: Sequence[WhittleTable], budget: float) -> np.ndarray:
    """Grant delta_a increments in decreasing index order while they fit."""
    n = len(tables)
    if len(state) != n:
        raise DomainError(f"state length {len(state)} != {n} tables")
    level = [0] * n
    spent = 0.0
    while True:
        best_i = -1
        best_index = -np.inf
        best_cost = 0.0
        for i, t in enumerate(tables):
            k = level[i]
            if k >= t.levels.size - 1:
                continue
            s = state[i]
            delta_cost = t.model.cost_fn(s, float(t.levels[k + 1])) - t.model.cost_fn(
                s, float(t.levels[k])
            )
            if spent + delta_cost > budget + 1e-12:
                continue
            idx = t.index[s, k + 1]
            if idx > best_index:
                best_index = idx
                best_i = i
                best_cost = delta_cost
        if best_i < 0:
            break
        level[best_i] += 1
        spent += best_cost
    return np.array([t.levels[level[i]] for i, t in enumerate(tables)])


# -- joint dynamic programming ------------------------------------------------


@dataclass(frozen=True)
class JointDPSolution:
    """Exact values and a discretized optimal policy for a whole instance."""

    value: dict[JointState, float]
    policy: dict[JointState, np.ndarray]
    action_step: float
    budget_mode: str
    residual: float


def _enumerate_combos(level_counts: Sequence[int]) -> np.ndarray:
    """All action-level combinations, first project slowest (row-major)."""
    grids = np.meshgrid(*[np.arange(c) for c in level_counts], indexing="ij")
    return np.stack([g.ravel() for g in grids], axis=1)


def solve_joint_dp(
    env: EnvironmentSpec,
    action_step: float,
    budget_mode: str = "at_most",
    tol: float = 1e-10,
) -> JointDPSolution:
    """Value iteration on the coupled problem over discretized action vectors.

    ``at_most`` admits action vectors with total cost <= budget; ``exact``
    requires |total cost - budget| <= action_step * N.  The product-form
    kernel lets the expected-value tensor be built with one einsum per
    iteration, covering every (joint state, action combo) pair at once.
    """
    if budget_mode not in ("at_most", "exact"):
        raise DomainError(f"budget_mode must be 'at_most' or 'exact', got {budget_mode!r}")
    n = env.n_projects
    level_values: list[np.ndarray] = []
    for p in env.projects:
        n_levels = max(1, round(p.a_max / action_step))
        level_values.append(np.linspace(0.0, p.a_max, n_levels + 1))
    state_counts = [p.state_count for p in env.projects]
    n_states = int(np.prod(state_counts))
    n_combos = int(np.prod([lv.size for lv in level_values]))
    if n_states * n_combos > JOINT_DP_GUARD:
        raise CapacityError(
            f"joint DP needs {n_states} states x {n_combos} action combos = "
            f"{n_states * n_combos} pairs, above the {JOINT_DP_GUARD} guard"
        )

    kernels, costs = [], []
    rewards = []
    for p, lv in zip(env.projects, level_values):
        k, r, c = _model_tables(p, lv)
        kernels.append(k)
        costs.append(c)
        rewards.append(r)

    # Total cost per (joint state, combo) via broadcast sums.
    total_cost = np.zeros((n_states, n_combos))
    state_shape = tuple(state_counts)
    combo_shape = tuple(lv.size for lv in level_values)
    for i in range(n):
        shape_s = [1] * n
        shape_s[i] = state_counts[i]
        shape_c = [1] * n
        shape_c[i] = combo_shape[i]
        block = costs[i].reshape(tuple(shape_s) + tuple(shape_c))
        total_cost += np.broadcast_to(
            block, state_shape + combo_shape
        ).reshape(n_states, n_combos)

    if budget_mode == "at_most":
        feasible = total_cost <= env.budget + 1e-9
    else:
        feasible = np.abs(total_cost - env.budget) <= action_step * n
        if not feasible.any(axis=1).all():
            raise InfeasibleError(
                "exact budget mode leaves some joint state with no feasible "
                "action combo; use at_most"
            )

    reward_sum = np.zeros(n_states)
    for i in range(n):
        shape_s = [1] * n
        shape_s[i] = state_counts[i]
        reward_sum += np.broadcast_to(
            rewards[i].reshape(shape_s), state_shape
        ).reshape(n_states)

    # einsum subscript: P_i[s_i, k_i, t_i], V[t_1..t_N] -> EV[s_1..s_N, k_1..k_N]
    letters = "abcdefghijklmnopqrstuvwxyz"
    s_sub = letters[:n]
    k_sub = letters[n : 2 * n]
    t_sub = letters[2 * n : 3 * n]
    subscript = (
        ",".join(f"{s_sub[i]}{k_sub[i]}{t_sub[i]}" for i in range(n))
        + f",{t_sub}->{s_sub}{k_sub}"
    )

    v = np.zeros(n_states)
    gamma = env.gamma
    q_masked = np.where(feasible, 0.0, -np.inf)
    residual = np.inf
    for _ in range(MAX_VI_ITERATIONS):
        ev = np.einsum(subscript, *kernels, v.reshape(state_shape), optimize=True)
        q = reward_sum[:, None] + gamma * ev.reshape(n_states, n_combos)
        q_masked = np.where(feasible, q, -np.inf)
        v_new = q_masked.max(axis=1)
        residual = float(np.max(np.abs(v_new - v)))
        v = v_new
        if residual < tol:
            break
    else:
        raise SolverError(
            f"joint DP did not reach tol={tol} within {MAX_VI_ITERATIONS} iterations"
        )

    best_combo = q_masked.argmax(axis=1)
    combos = _enumerate_combos([lv.size for lv in level_values])
    value: dict[JointState, float] = {}
    policy: dict[JointState, np.ndarray] = {}
    for flat, joint in enumerate(env.joint_states()):
        combo = combos[best_combo[flat]]
        value[joint] = float(v[flat])
        policy[joint] = np.array(
            [level_values[i][combo[i]] for i in range(n)]
        )
    return JointDPSolution(
        value=value,
        policy=policy,
        action_step=action_step,
        budget_mode=budget_mode,
        residual=residual,
    )


# -- golden-file writers -------------------------------------------------------


def write_joint_dp(path, solution: JointDPSolution) -> None:
    """Dump values and policies as a diff-stable text table."""
    with open(path, "w") as fh:
        fh.write("# joint_state value actions...\n")
        fh.write(f"# action_step={solution.action_step:.12g} budget_mode={solution.budget_mode}\n")
        for joint, val in solution.value.items():
            acts = " ".join(f"{a:.12g}" for a in solution.policy[joint])
            key = ",".join(str(s) for s in joint)
            fh.write(f"{key} {val:.12g} {acts}\n")


def write_whittle(path, table: WhittleTable) -> None:
    with open(path, "w") as fh:
        fh.write("# state level action index\n")
        fh.write(
            f"# delta_a={table.delta_a:.12g} lambda_max={table.lambda_max:.12g} "
            f"non_indexable={table.non_indexable}\n"
        )
        for s in range(table.model.state_count):
            for k, a in enumerate(table.levels):
                fh.write(f"{s} {k} {a:.12g} {table.index[s, k]:.12g}\n")
