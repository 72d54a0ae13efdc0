"""Per-step knapsack solvers over the learned Q surface at a fixed multiplier.

Both selectors maximize the summed Q-values subject to the budget: a
rand/1/bin differential evolution with a two-sided penalty (a large constant
for overspend, the unused remainder for underspend), and a greedy allocator
that repeatedly grants a small increment to the project with the steepest
dQ/da until the budget is exhausted.  Both always return a vector inside the
action box with total cost within budget.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .envs import EnvironmentSpec, JointState, scale_to_budget, total_cost
from .errors import DomainError, SolverError
from .qnet import QNetwork

BUDGET_EQ_TOL = 1e-9


@dataclass(frozen=True)
class DEConfig:
    """rand/1/bin hyperparameters; population = population_factor * N (min 4)."""

    population_factor: int = 15
    mutation_f: float = 0.8
    crossover_cr: float = 0.9
    max_generations: int = 100
    tolerance: float = 1e-6
    penalty_constant: float = 1e6
    seed: int = 0

    def __post_init__(self) -> None:
        if not 0.0 < self.mutation_f <= 2.0:
            raise DomainError(f"mutation_f must lie in (0, 2], got {self.mutation_f}")
        if not 0.0 <= self.crossover_cr <= 1.0:
            raise DomainError(f"crossover_cr must lie in [0, 1], got {self.crossover_cr}")
        if self.max_generations < 1 or self.tolerance <= 0 or self.penalty_constant <= 0:
            raise DomainError("max_generations, tolerance, penalty_constant must be positive")


@dataclass(frozen=True)
class GreedyConfig:
    """Increment size and a loop guard for the gradient allocator."""

    delta: float = 0.1
    max_iterations_guard: int | None = None

    def __post_init__(self) -> None:
        if self.delta <= 0:
            raise DomainError(f"delta must be positive, got {self.delta}")


def _q_sum(
    pop: np.ndarray, state: JointState, lam: float, nets: Sequence[QNetwork]
) -> np.ndarray:
    """Summed Q over projects for every candidate row of pop."""
    total = np.zeros(pop.shape[0])
    for i, net in enumerate(nets):
        total += net.forward_many(
            np.full(pop.shape[0], state[i]), pop[:, i], np.full(pop.shape[0], lam)
        )
    return total


def _cost_sum(pop: np.ndarray, state: JointState, env: EnvironmentSpec) -> np.ndarray:
    total = np.zeros(pop.shape[0])
    for i, p in enumerate(env.projects):
        s = state[i]
        total += np.array([p.cost_fn(s, float(a)) for a in pop[:, i]])
    return total


def _penalized_energy(
    pop: np.ndarray,
    state: JointState,
    lam: float,
    nets: Sequence[QNetwork],
    env: EnvironmentSpec,
    penalty_constant: float,
) -> np.ndarray:
    """Negated penalized objective for a population of candidates."""
    q = _q_sum(pop, state, lam, nets)
    c = _cost_sum(pop, state, env)
    gap = env.budget - c
    penalty = np.where(
        np.abs(gap) <= BUDGET_EQ_TOL, 0.0, np.where(gap < 0.0, penalty_constant, gap)
    )
    return -(q - penalty)


def de_objective(
    action: Sequence[float],
    state: JointState,
    lam: float,
    nets: Sequence[QNetwork],
    env: EnvironmentSpec,
    penalty_constant: float = 1e6,
) -> float:
    """Energy of one candidate: -(sum Q - penalty); lower is better."""
    pop = np.asarray(action, dtype=float).reshape(1, -1)
    return float(_penalized_energy(pop, state, lam, nets, env, penalty_constant)[0])


def differential_evolution(
    state: JointState,
    lam: float,
    nets: Sequence[QNetwork],
    env: EnvironmentSpec,
    cfg: DEConfig,
) -> np.ndarray:
    """rand/1/bin search over the action box, then a feasibility projection.

    Stops when the population's coordinate spread falls below the tolerance
    or after max_generations.  The returned best member is scaled down to
    the budget in the rare case the penalty left it slightly over.
    """
    n = env.n_projects
    a_max = np.array([p.a_max for p in env.projects])
    pop_size = max(4, cfg.population_factor * n)
    rng = np.random.default_rng(cfg.seed)

    pop = rng.uniform(0.0, 1.0, size=(pop_size, n)) * a_max
    energies = _penalized_energy(pop, state, lam, nets, env, cfg.penalty_constant)
    members = np.arange(pop_size)

    for _ in range(cfg.max_generations):
        spread = float(np.max(pop.max(axis=0) - pop.min(axis=0)))
        if spread < cfg.tolerance:
            break
        # rand/1: three rows distinct from each other and from the member,
        # drawn for the whole population with rejection fixup
        r = rng.integers(0, pop_size, size=(pop_size, 3))
        while True:
            bad = (
                (r[:, 0] == members) | (r[:, 1] == members) | (r[:, 2] == members)
                | (r[:, 0] == r[:, 1]) | (r[:, 0] == r[:, 2]) | (r[:, 1] == r[:, 2])
            )
            if not bad.any():
                break
            r[bad] = rng.integers(0, pop_size, size=(int(bad.sum()), 3))
        mutants = pop[r[:, 0]] + cfg.mutation_f * (pop[r[:, 1]] - pop[r[:, 2]])
        np.clip(mutants, 0.0, a_max, out=mutants)
        cross = rng.random((pop_size, n)) < cfg.crossover_cr
        cross[members, rng.integers(0, n, size=pop_size)] = True
        trial = np.where(cross, mutants, pop)
        trial_energies = _penalized_energy(
            trial, state, lam, nets, env, cfg.penalty_constant
        )
        better = trial_energies <= energies
        pop[better] = trial[better]
        energies[better] = trial_energies[better]

    best = pop[int(np.argmin(energies))]
    return scale_to_budget(env, state, best)


def greedy_select(
    state: JointState,
    lam: float,
    nets: Sequence[QNetwork],
    env: EnvironmentSpec,
    cfg: GreedyConfig,
) -> np.ndarray:
    """Gradient-greedy allocation of delta-sized increments under the budget.

    Each round grants delta (clamped at a_max) to the not-yet-saturated
    project with the largest dQ/da; an increment whose cost would overshoot
    the remaining budget is shrunk to exhaust it exactly, after which the
    loop terminates.  Ties go to the lowest project index.
    """
    n = env.n_projects
    a_max = np.array([p.a_max for p in env.projects])
    if cfg.delta > a_max.min():
        raise DomainError(f"delta={cfg.delta} exceeds the smallest a_max={a_max.min()}")
    guard = cfg.max_iterations_guard
    if guard is None:
        guard = int(np.sum(np.ceil(a_max / cfg.delta))) + n

    action = np.zeros(n)
    spent = total_cost(env, state, action)
    budget = env.budget

    for _ in range(guard):
        remaining = budget - spent
        if remaining <= 1e-12:
            return action
        eligible = [i for i in range(n) if action[i] < a_max[i] - 1e-12]
        if not eligible:
            return action

        # One batched gradient evaluation per distinct network.
        grads = np.empty(len(eligible))
        by_net: dict[int, list[int]] = {}
        for pos, i in enumerate(eligible):
            by_net.setdefault(id(nets[i]), []).append(pos)
        for positions in by_net.values():
            idxs = [eligible[p] for p in positions]
            net = nets[idxs[0]]
            vals = net.grad_action_many(
                np.array([state[i] for i in idxs]),
                np.array([action[i] for i in idxs]),
                np.full(len(idxs), lam),
            )
            grads[positions] = vals

        best = eligible[int(np.argmax(grads))]
        p = env.projects[best]
        s = state[best]
        step_full = min(cfg.delta, a_max[best] - action[best])
        cost_now = p.cost_fn(s, float(action[best]))
        delta_cost = p.cost_fn(s, float(action[best] + step_full)) - cost_now
        if delta_cost <= remaining + 1e-12:
            action[best] += step_full
            spent += delta_cost
            continue
        # Shrink the final increment to exhaust the budget (exact for linear
        # costs; bisection otherwise), then the next round terminates.
        step = step_full * remaining / delta_cost
        if p.cost_fn(s, float(action[best] + step)) - cost_now > remaining:
            lo, hi = 0.0, step_full
            for _ in range(80):
                mid = 0.5 * (lo + hi)
                if p.cost_fn(s, float(action[best] + mid)) - cost_now <= remaining:
                    lo = mid
                else:
                    hi = mid
            step = lo
        spent += p.cost_fn(s, float(action[best] + step)) - cost_now
        action[best] += step
    raise SolverError(
        f"greedy allocation exceeded its {guard}-iteration guard without terminating"
    )
