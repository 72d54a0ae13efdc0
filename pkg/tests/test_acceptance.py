"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v -s``.  The two training-based
criteria dominate the runtime (several minutes each); everything else is
seconds.
"""

import numpy as np
import pytest

from lpca.baselines import compute_whittle, solve_joint_dp, solve_project_tabular, whittle_policy
from lpca.envs import (
    EnvironmentSpec,
    ProjectModel,
    make_environment,
    speed_scaling_model,
    total_cost,
    type_a_model,
    type_b_model,
)
from lpca.harness import FunctionPolicy, TrainConfig, evaluate, run_experiment, train
from lpca.lagrange import j_curve, lambda_star
from lpca.qnet import (
    Adam,
    LambdaGrid,
    QNetwork,
    ReplayBuffer,
    TargetNetwork,
    Transition,
    soft_update,
    train_step,
)
from lpca.selectors import DEConfig, GreedyConfig, differential_evolution, greedy_select


def _report(criterion: int, name: str, ok: bool, detail: str = "") -> None:
    status = "PASS" if ok else "FAIL"
    line = f"ACCEPTANCE {criterion} ({name}): {status}"
    if detail:
        line += f" [{detail}]"
    print("\n" + line, flush=True)
    assert ok, line


def test_criterion_1_oracle_parity():
    """2-project type_a, B=1: LPCA-Greedy reaches >= 90% of the DP oracle."""
    env = make_environment("type_a", 2, 1.0, 0.9)
    oracle = solve_joint_dp(env, 0.25, "at_most")
    cfg = TrainConfig(env_kind="type_a", n_projects=2, budget=1.0, gamma=0.9,
                      selector="greedy", seed=20240901)
    result = train(cfg)
    ratios = {}
    for state in env.joint_states():
        report = evaluate(result.policy, env, repetitions=100, horizon=50,
                          seed=777, start_state=state)
        ratios[state] = report.mean / oracle.value[state]
    ok = all(r >= 0.9 for r in ratios.values())
    detail = ", ".join(f"{s}: {r:.3f}" for s, r in ratios.items())
    _report(1, "oracle parity", ok, detail)


def test_criterion_2_tabular_q_fit():
    """Single type_b project: network Q within 10% of the tabular range."""
    env = make_environment("type_b", 1, 2.0, 0.9)
    model = env.projects[0]
    grid = LambdaGrid(5.0)
    rng = np.random.default_rng(2024)
    buf = ReplayBuffer()
    for _ in range(20_000):
        s = int(rng.integers(2))
        a = float(rng.uniform(0.0, 2.0))
        row = model.kernel(s, a)
        s_next = int(np.searchsorted(np.cumsum(row), rng.random(), side="right"))
        buf.push(Transition(0, s, a, model.reward_fn(s), s_next, False))

    net = QNetwork.for_model(model, 5.0, seed=99)
    target = TargetNetwork(net, tau=0.01)
    opt = Adam(net)
    for _ in range(4_000):
        train_step(net, target, buf, grid, 128, 16, 0.9, env, opt, rng)

    lams = [-1.0, 0.0, 0.5, 1.0]
    tab = solve_project_tabular(model, lams, 21, 0.9, tol=1e-10)
    max_err = 0.0
    for li, lam in enumerate(lams):
        for s in range(2):
            q_net = net.forward_many(np.full(21, s), tab.action_grid, np.full(21, lam))
            max_err = max(max_err, float(np.abs(q_net - tab.values[s, :, li]).max()))
    bound = 0.1 * float(tab.values.max() - tab.values.min())
    _report(2, "tabular Q fit", max_err <= bound, f"max_err={max_err:.3f} bound={bound:.3f}")


def test_criterion_3_whittle_convergence():
    """4-project type_b: both LPCA variants reach >= 95% of the Whittle mean."""
    env = make_environment("type_b", 4, 2.0, 0.9)
    table = compute_whittle(env.projects[0], 0.1, 0.9)
    tables = [table] * 4
    whittle = FunctionPolicy(lambda s: whittle_policy(s, tables, env.budget))
    eval_seed = 4242
    w_report = evaluate(whittle, env, 100, 50, seed=eval_seed)

    ratios = {}
    for selector, label in (("greedy", "lpca-greedy"), ("de", "lpca-de")):
        cfg = TrainConfig(env_kind="type_b", n_projects=4, budget=2.0, gamma=0.9,
                          selector=selector, seed=321)
        result = train(cfg)
        report = evaluate(result.policy, env, 100, 50, seed=eval_seed)
        ratios[label] = report.mean / w_report.mean
    ok = all(r >= 0.95 for r in ratios.values())
    detail = f"whittle={w_report.mean:.3f}, " + ", ".join(
        f"{k}: {v:.3f}" for k, v in ratios.items()
    )
    _report(3, "whittle convergence", ok, detail)


def test_criterion_4_feasibility_sweep():
    """>= 10,000 selector calls across all environments, all feasible."""
    cells = [
        ("type_a", 4, 2.0, 5.0),
        ("type_b", 4, 2.0, 5.0),
        ("mixed", 4, 2.0, 5.0),
        ("speed_scaling", 3, 1.5, 10.0),
    ]
    total = 0
    violations = 0
    de_fast = dict(population_factor=5, max_generations=8)
    for kind, n, budget, lam_max in cells:
        env = make_environment(kind, n, budget, 0.9)
        rng = np.random.default_rng(abs(hash(kind)) % 2**31)

        random_nets = {
            name: QNetwork.for_model(m, lam_max, seed=abs(hash(name)) % 977)
            for name, m in env.distinct_models().items()
        }
        trained = train(TrainConfig(
            env_kind=kind, n_projects=n, budget=budget, gamma=0.9, selector="greedy",
            n_iter=250, update_frequency=300, batch_size=64, eval_repetitions=2,
            greedy=GreedyConfig(delta=0.25), action_grid_size=21, seed=55,
        ))
        for nets, n_greedy, n_de in (
            (random_nets, 2000, 300),
            (trained.nets, 200, 100),
        ):
            project_nets = [nets[p.name] for p in env.projects]
            for trial in range(n_greedy):
                state = tuple(int(rng.integers(p.state_count)) for p in env.projects)
                lam = float(rng.uniform(-lam_max, lam_max))
                a = greedy_select(state, lam, project_nets, env, GreedyConfig(delta=0.25))
                total += 1
                if not (
                    np.all(a >= 0.0)
                    and all(a[i] <= p.a_max + 1e-12 for i, p in enumerate(env.projects))
                    and total_cost(env, state, a) <= budget + 1e-9
                ):
                    violations += 1
            for trial in range(n_de):
                state = tuple(int(rng.integers(p.state_count)) for p in env.projects)
                lam = float(rng.uniform(-lam_max, lam_max))
                a = differential_evolution(
                    state, lam, project_nets, env, DEConfig(seed=trial, **de_fast)
                )
                total += 1
                if not (
                    np.all(a >= 0.0)
                    and all(a[i] <= p.a_max + 1e-12 for i, p in enumerate(env.projects))
                    and total_cost(env, state, a) <= budget + 1e-9
                ):
                    violations += 1
    ok = total >= 10_000 and violations == 0
    _report(4, "feasibility sweep", ok, f"invocations={total}, violations={violations}")


def test_criterion_5_convexity_monotonicity():
    """Exact J convex and max_a Q nonincreasing on the full grid, all models."""
    cells = [
        (type_a_model(), 5.0),
        (type_b_model(), 5.0),
        (speed_scaling_model(0.9), 10.0),
    ]
    worst_second = np.inf
    worst_increase = -np.inf
    for model, lam_max in cells:
        grid = LambdaGrid(lam_max)
        tab = solve_project_tabular(model, grid, 51, 0.9, tol=1e-10)
        max_q = tab.max_q()
        worst_increase = max(worst_increase, float(np.diff(max_q, axis=1).max()))
        for s in range(model.state_count):
            curve = j_curve(max_q[s][:, None], grid, budget=1.0, gamma=0.9)
            worst_second = min(worst_second, float(np.diff(curve, n=2).min()))
    ok = worst_second >= -1e-8 and worst_increase <= 1e-10
    _report(
        5, "convexity/monotonicity",
        ok, f"min 2nd diff={worst_second:.2e}, max lambda-increase={worst_increase:.2e}",
    )


def test_criterion_6_relaxation_bound():
    """J(s, lambda*) from tabular Q upper-bounds the joint DP value."""
    env = make_environment("type_a", 2, 1.0, 0.9)
    oracle = solve_joint_dp(env, 0.25, "at_most")
    grid = LambdaGrid(5.0)
    tab = solve_project_tabular(env.projects[0], grid, 9, 0.9, tol=1e-10)
    max_q = tab.max_q()
    worst_gap = np.inf
    for state in env.joint_states():
        q_table = np.column_stack([max_q[state[0]], max_q[state[1]]])
        lam, idx = lambda_star(q_table, grid, env.budget, env.gamma)
        j_star = j_curve(q_table, grid, env.budget, env.gamma)[idx]
        worst_gap = min(worst_gap, float(j_star - oracle.value[state]))
    _report(6, "relaxation bound", worst_gap >= -1e-6, f"min J-V gap={worst_gap:.3e}")


def test_criterion_7_harness_exactness():
    """Deterministic reward-1 stub: return equals the geometric partial sum."""
    expected = (1.0 - 0.9**51) / 0.1

    def stub(n: int) -> EnvironmentSpec:
        model = ProjectModel(
            name="stub", state_count=1, a_max=1.0,
            kernel=lambda s, a: np.array([1.0]),
            reward_fn=lambda s: 1.0,
            cost_fn=lambda s, a: 0.0,
        )
        return EnvironmentSpec(kind="stub", projects=tuple([model] * n),
                               budget=0.0, gamma=0.9)

    errs = []
    for n in (1, 3):
        report = evaluate(
            FunctionPolicy(lambda s: np.zeros(len(s))), stub(n),
            repetitions=5, horizon=50, seed=7,
        )
        errs.append(abs(report.mean - n * expected))
    ok = all(e < 1e-9 for e in errs)
    _report(7, "harness exactness", ok, f"errors={[f'{e:.1e}' for e in errs]}")


def test_criterion_8_gradient_and_soft_update():
    """Backprop matches finite differences; soft updates match closed form."""
    rng = np.random.default_rng(88)
    worst = 0.0
    checked = 0
    for draw in range(100):
        net = QNetwork(2, 2.0, 5.0, hidden=(8, 8), seed=5000 + draw)
        s = int(rng.integers(2))
        a = float(rng.uniform(0.1, 1.9))
        lam = float(rng.uniform(-4.0, 4.0))
        h = 1e-4 * 2.0
        fd = (net.forward(s, a + h, lam) - net.forward(s, a - h, lam)) / (2 * h)
        if abs(fd) < 1e-8:
            continue
        rel = abs(net.grad_action(s, a, lam) - fd) / abs(fd)
        worst = max(worst, rel)
        checked += 1
    grad_ok = worst < 1e-4 and checked >= 90

    soft_ok = True
    for tau in (0.0, 0.5, 1.0):
        net = QNetwork(2, 2.0, 5.0, seed=1)
        other = QNetwork(2, 2.0, 5.0, seed=2)
        target = TargetNetwork(other, tau=0.5)
        target.tau = tau
        expected = [tau * w + (1 - tau) * wt for w, wt in zip(net.weights, target.net.weights)]
        soft_update(target, net)
        for wt, e in zip(target.net.weights, expected):
            if not np.array_equal(wt, e):
                soft_ok = False
    ok = grad_ok and soft_ok
    _report(8, "gradient/soft-update", ok, f"worst rel-err={worst:.2e}, draws={checked}")


def test_criterion_9_run_determinism(tmp_path):
    """Identical config + seed produce byte-identical learning-curve CSVs."""
    cfg_path = tmp_path / "det.cfg"
    cfg_path.write_text(
        "environment = type_a\n"
        "n_projects = 2\n"
        "budget = 1.0\n"
        "gamma = 0.9\n"
        "algorithms = lpca-greedy\n"
        "seed = 9\n"
        "n_iter = 400\n"
        "update_frequency = 200\n"
        "batch_size = 64\n"
        "eval.repetitions = 20\n"
        "eval.horizon = 50\n"
    )
    out1 = run_experiment(cfg_path, out_dir=tmp_path / "r1")
    out2 = run_experiment(cfg_path, out_dir=tmp_path / "r2")
    b1 = (out1 / "curve.csv").read_bytes()
    b2 = (out2 / "curve.csv").read_bytes()
    _report(9, "run determinism", b1 == b2, f"{len(b1)} bytes each")
