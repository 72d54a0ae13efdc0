"""End-to-end training loop, evaluation protocol, and experiment runner.

Training interleaves epsilon-greedy interaction (random actions are drawn
feasible, so no stored sample ever violates the budget), per-model replay
and Q-updates, and periodic policy-dictionary rebuilds, each followed by an
evaluation snapshot.  Evaluation rolls a policy out for horizon+1 steps from
uniformly drawn start states and reports the mean discounted return with a
95% normal-approximation half-width over the repetitions.

Experiments are described by flat key=value config files; `run_experiment`
executes every requested algorithm and persists learning curves, policy
dumps, evaluation reports, and a manifest.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import __version__
from .baselines import compute_whittle, solve_joint_dp, whittle_policy, write_joint_dp, write_whittle
from .envs import (
    ENV_KINDS,
    EnvironmentSpec,
    JointState,
    make_environment,
    scale_to_budget,
    step,
)
from .errors import CapacityError, ConfigError
from .lagrange import PolicyDictionary, update_policy_dictionary, write_policy
from .qnet import (
    Adam,
    LambdaGrid,
    QNetwork,
    ReplayBuffer,
    TargetNetwork,
    Transition,
    save_checkpoint,
    train_step,
)
from .selectors import DEConfig, GreedyConfig

ALGORITHMS = ("lpca-de", "lpca-greedy", "whittle", "oracle")
CURVE_HEADER = "iteration,algorithm,environment,seed,mean_return,ci_low,ci_high"
Z_95 = 1.959963984540054


@dataclass(frozen=True)
class TrainConfig:
    """Everything one training run needs; defaults follow the shipped configs."""

    env_kind: str = "type_a"
    n_projects: int = 4
    budget: float = 2.0
    gamma: float = 0.9
    selector: str = "greedy"
    n_iter: int = 30_000
    update_frequency: int = 1_000
    batch_size: int = 128
    epsilon_start: float = 1.0
    epsilon_end: float = 0.05
    decay_iterations: int | None = None     # default: first half of n_iter
    seed: int = 0
    hidden: tuple[int, ...] = (64, 64)
    learning_rate: float = 1e-3
    tau: float = 0.01
    k_lambdas: int = 16
    lambda_max: float | None = None         # default: 5.0, 10.0 for speed_scaling
    replay_capacity: int = 100_000
    action_grid_size: int = 51
    eval_repetitions: int = 100
    eval_horizon: int = 50
    de: DEConfig = field(default_factory=DEConfig)
    greedy: GreedyConfig = field(default_factory=GreedyConfig)

    def __post_init__(self) -> None:
        if not 0.0 <= self.epsilon_end <= self.epsilon_start <= 1.0:
            raise ConfigError(
                f"need 0 <= epsilon_end <= epsilon_start <= 1, got "
                f"{self.epsilon_end}, {self.epsilon_start}"
            )
        if self.selector not in ("de", "greedy"):
            raise ConfigError(f"selector must be 'de' or 'greedy', got {self.selector!r}")
        if self.n_iter < 1 or self.update_frequency < 1 or self.batch_size < 1:
            raise ConfigError("n_iter, update_frequency, batch_size must be positive")

    def resolved_lambda_max(self) -> float:
        if self.lambda_max is not None:
            return self.lambda_max
        return 10.0 if self.env_kind == "speed_scaling" else 5.0

    def resolved_decay(self) -> int:
        if self.decay_iterations is not None:
            return self.decay_iterations
        return max(1, self.n_iter // 2)


@dataclass(frozen=True)
class EvalReport:
    """Per-repetition discounted returns plus their mean and CI half-width."""

    returns: tuple[float, ...]
    mean: float
    ci_half_width: float
    horizon: int
    gamma: float


@dataclass
class CurvePoint:
    iteration: int
    mean: float
    ci_low: float
    ci_high: float


@dataclass
class TrainResult:
    env: EnvironmentSpec
    grid: LambdaGrid
    nets: dict[str, QNetwork]
    policy: PolicyDictionary
    curve: list[CurvePoint]
    losses: list[float]


class FunctionPolicy:
    """Adapter giving baseline callables the dictionary-policy interface."""

    def __init__(self, fn: Callable[[JointState], np.ndarray]):
        self._fn = fn

    def action(self, state: JointState) -> np.ndarray:
        return self._fn(tuple(state))


def _unrank_state(env: EnvironmentSpec, flat: int) -> JointState:
    out = []
    for p in reversed(env.projects):
        out.append(flat % p.state_count)
        flat //= p.state_count
    return tuple(reversed(out))


def random_feasible_action(env: EnvironmentSpec, state: JointState,
                           rng: np.random.Generator) -> np.ndarray:
    """Uniform in the box, then uniformly rescaled into the budget."""
    raw = rng.uniform(0.0, 1.0, size=env.n_projects) * np.array(
        [p.a_max for p in env.projects]
    )
    return scale_to_budget(env, state, raw)


def evaluate(
    policy,
    env: EnvironmentSpec,
    repetitions: int,
    horizon: int,
    seed: int,
    start_state: JointState | None = None,
) -> EvalReport:
    """Discounted-return rollouts of horizon+1 steps from seeded streams.

    Start states are uniform over the joint space unless pinned.  Streams
    are spawned per repetition from the master seed, so results are
    independent of execution order.
    """
    children = np.random.SeedSequence(seed).spawn(repetitions)
    n_joint = env.joint_state_count()
    returns = []
    for child in children:
        rng = np.random.default_rng(child)
        state = start_state if start_state is not None else _unrank_state(
            env, int(rng.integers(n_joint))
        )
        total = 0.0
        discount = 1.0
        for _ in range(horizon + 1):
            action = policy.action(state)
            result = step(env, state, action, rng)
            total += discount * sum(result.rewards)
            discount *= env.gamma
            state = result.next_states
        returns.append(total)
    arr = np.array(returns)
    mean = float(arr.mean())
    if repetitions > 1:
        half = float(Z_95 * arr.std(ddof=1) / math.sqrt(repetitions))
    else:
        half = 0.0
    return EvalReport(
        returns=tuple(float(r) for r in returns),
        mean=mean,
        ci_half_width=half,
        horizon=horizon,
        gamma=env.gamma,
    )


def _eval_seed(master_seed: int, iteration: int) -> int:
    # Deterministic per-snapshot seed, shared across algorithms of one run.
    return (master_seed * 1_000_003 + iteration) % (2**63)


def train(cfg: TrainConfig) -> TrainResult:
    """Run the full training loop and return nets, policy, and learning curve.

    One environment step per iteration; each step stores one transition per
    project into its model's replay buffer.  Once a buffer holds a full
    batch, every subsequent step performs one Q-update (with soft target
    tracking) for that model.  Every update_frequency iterations the policy
    dictionary is rebuilt with the configured selector and an evaluation
    snapshot is appended to the curve.
    """
    env = make_environment(cfg.env_kind, cfg.n_projects, cfg.budget, cfg.gamma)
    lam_max = cfg.resolved_lambda_max()
    grid = LambdaGrid(lam_max)
    seed_seq = np.random.SeedSequence(cfg.seed)
    net_seed_seq, loop_seed_seq = seed_seq.spawn(2)

    nets: dict[str, QNetwork] = {}
    targets: dict[str, TargetNetwork] = {}
    buffers: dict[str, ReplayBuffer] = {}
    optims: dict[str, Adam] = {}
    for child, (name, model) in zip(
        net_seed_seq.spawn(len(env.distinct_models())), env.distinct_models().items()
    ):
        net = QNetwork.for_model(
            model, lam_max, hidden=cfg.hidden, seed=int(child.generate_state(1)[0])
        )
        nets[name] = net
        targets[name] = TargetNetwork(net, tau=cfg.tau)
        buffers[name] = ReplayBuffer(cfg.replay_capacity)
        optims[name] = Adam(net, lr=cfg.learning_rate)

    rng = np.random.default_rng(loop_seed_seq)

    def rebuild() -> PolicyDictionary:
        return update_policy_dictionary(
            env,
            nets,
            grid,
            method=cfg.selector,
            de_cfg=cfg.de,
            greedy_cfg=cfg.greedy,
            action_grid_size=cfg.action_grid_size,
        )

    def snapshot(iteration: int, policy: PolicyDictionary) -> CurvePoint:
        report = evaluate(
            policy,
            env,
            repetitions=cfg.eval_repetitions,
            horizon=cfg.eval_horizon,
            seed=_eval_seed(cfg.seed, iteration),
        )
        return CurvePoint(
            iteration=iteration,
            mean=report.mean,
            ci_low=report.mean - report.ci_half_width,
            ci_high=report.mean + report.ci_half_width,
        )

    policy = rebuild()
    curve = [snapshot(0, policy)]
    losses: list[float] = []

    decay = cfg.resolved_decay()
    state = _unrank_state(env, int(rng.integers(env.joint_state_count())))
    for it in range(1, cfg.n_iter + 1):
        frac = min(1.0, it / decay)
        epsilon = cfg.epsilon_start + (cfg.epsilon_end - cfg.epsilon_start) * frac
        if rng.random() < epsilon:
            action = random_feasible_action(env, state, rng)
        else:
            action = policy.action(state)
        result = step(env, state, action, rng)
        for i, p in enumerate(env.projects):
            buffers[p.name].push(
                Transition(
                    project_index=i,
                    s=state[i],
                    a=float(action[i]),
                    r=result.rewards[i],
                    s_next=result.next_states[i],
                    done=result.done,
                )
            )
        state = result.next_states
        for name in nets:
            if len(buffers[name]) >= cfg.batch_size:
                losses.append(
                    train_step(
                        nets[name],
                        targets[name],
                        buffers[name],
                        grid,
                        cfg.batch_size,
                        cfg.k_lambdas,
                        cfg.gamma,
                        env,
                        optims[name],
                        rng,
                        action_grid_size=cfg.action_grid_size,
                    )
                )
        if it % cfg.update_frequency == 0:
            policy = rebuild()
            curve.append(snapshot(it, policy))

    return TrainResult(env=env, grid=grid, nets=nets, policy=policy, curve=curve, losses=losses)


# -- config files ---------------------------------------------------------------

_CONFIG_KEYS = {
    "environment": str,
    "n_projects": int,
    "budget": float,
    "gamma": float,
    "algorithms": str,
    "selector": str,
    "seed": int,
    "n_iter": int,
    "update_frequency": int,
    "batch_size": int,
    "epsilon.start": float,
    "epsilon.end": float,
    "epsilon.decay_iterations": int,
    "qnet.hidden": str,
    "qnet.learning_rate": float,
    "qnet.tau": float,
    "qnet.k_lambdas": int,
    "qnet.lambda_max": float,
    "qnet.replay_capacity": int,
    "qnet.action_grid_size": int,
    "eval.repetitions": int,
    "eval.horizon": int,
    "de.population_factor": int,
    "de.mutation_f": float,
    "de.crossover_cr": float,
    "de.max_generations": int,
    "de.tolerance": float,
    "de.penalty_constant": float,
    "de.seed": int,
    "greedy.delta": float,
    "whittle.delta_a": float,
    "oracle.action_step": float,
    "oracle.budget_mode": str,
}


def parse_config(path) -> dict:
    """Read a flat key=value file (dotted sections, # comments)."""
    values: dict[str, object] = {}
    text = Path(path).read_text()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key = value, got {raw!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if key not in _CONFIG_KEYS:
            raise ConfigError(
                f"{path}:{lineno}: unknown key {key!r}; valid keys: "
                + ", ".join(sorted(_CONFIG_KEYS))
            )
        try:
            values[key] = _CONFIG_KEYS[key](value)
        except ValueError as exc:
            raise ConfigError(f"{path}:{lineno}: bad value for {key}: {value!r}") from exc
    return values


def config_to_train(values: dict, selector: str | None = None,
                    seed: int | None = None) -> TrainConfig:
    """Materialize a TrainConfig from parsed config values.

    An explicit ``selector`` or ``seed`` argument overrides the config file.
    """
    if selector is None:
        selector = str(values.get("selector", "greedy"))
    kind = str(values.get("environment", "type_a"))
    if kind not in ENV_KINDS:
        raise ConfigError(
            f"unknown environment {kind!r}; valid kinds: {', '.join(ENV_KINDS)}"
        )
    hidden = tuple(
        int(h) for h in str(values.get("qnet.hidden", "64,64")).split(",") if h.strip()
    )
    de = DEConfig(
        population_factor=int(values.get("de.population_factor", 15)),
        mutation_f=float(values.get("de.mutation_f", 0.8)),
        crossover_cr=float(values.get("de.crossover_cr", 0.9)),
        max_generations=int(values.get("de.max_generations", 100)),
        tolerance=float(values.get("de.tolerance", 1e-6)),
        penalty_constant=float(values.get("de.penalty_constant", 1e6)),
        seed=int(values.get("de.seed", 0)),
    )
    greedy = GreedyConfig(delta=float(values.get("greedy.delta", 0.1)))
    return TrainConfig(
        env_kind=kind,
        n_projects=int(values.get("n_projects", 4)),
        budget=float(values.get("budget", 2.0)),
        gamma=float(values.get("gamma", 0.9)),
        selector=selector,
        n_iter=int(values.get("n_iter", 30_000)),
        update_frequency=int(values.get("update_frequency", 1_000)),
        batch_size=int(values.get("batch_size", 128)),
        epsilon_start=float(values.get("epsilon.start", 1.0)),
        epsilon_end=float(values.get("epsilon.end", 0.05)),
        decay_iterations=(
            int(values["epsilon.decay_iterations"])
            if "epsilon.decay_iterations" in values
            else None
        ),
        seed=int(values.get("seed", 0)) if seed is None else seed,
        hidden=hidden,
        learning_rate=float(values.get("qnet.learning_rate", 1e-3)),
        tau=float(values.get("qnet.tau", 0.01)),
        k_lambdas=int(values.get("qnet.k_lambdas", 16)),
        lambda_max=(
            float(values["qnet.lambda_max"]) if "qnet.lambda_max" in values else None
        ),
        replay_capacity=int(values.get("qnet.replay_capacity", 100_000)),
        action_grid_size=int(values.get("qnet.action_grid_size", 51)),
        eval_repetitions=int(values.get("eval.repetitions", 100)),
        eval_horizon=int(values.get("eval.horizon", 50)),
        de=de,
        greedy=greedy,
    )


# -- persistence ------------------------------------------------------------------


def _fmt(x: float) -> str:
    return repr(float(x))


def write_curve(path, rows: Sequence[tuple[int, str, str, int, float, float, float]]) -> None:
    with open(path, "w") as fh:
        fh.write(CURVE_HEADER + "\n")
        for it, algo, envname, seed, mean, lo, hi in rows:
            fh.write(f"{it},{algo},{envname},{seed},{_fmt(mean)},{_fmt(lo)},{_fmt(hi)}\n")


def write_eval_report(path, report: EvalReport) -> None:
    with open(path, "w") as fh:
        fh.write("repetition,return\n")
        for i, r in enumerate(report.returns):
            fh.write(f"{i},{_fmt(r)}\n")
        fh.write(f"summary,{_fmt(report.mean)}\n")


def run_experiment(config_path, out_dir=None) -> Path:
    """Execute every algorithm requested by a config file; returns the results dir.

    The oracle is skipped with a note (run continues) when the instance
    exceeds the joint-DP capacity guard.
    """
    values = parse_config(config_path)
    algorithms = [
        a.strip() for a in str(values.get("algorithms", "lpca-greedy")).split(",") if a.strip()
    ]
    for algo in algorithms:
        if algo not in ALGORITHMS:
            raise ConfigError(
                f"unknown algorithm {algo!r}; valid algorithms: {', '.join(ALGORITHMS)}"
            )
    out = Path(out_dir) if out_dir is not None else Path(config_path).with_suffix(".results")
    out.mkdir(parents=True, exist_ok=True)

    base_cfg = config_to_train(values, selector="greedy")
    env = make_environment(
        base_cfg.env_kind, base_cfg.n_projects, base_cfg.budget, base_cfg.gamma
    )
    seed = base_cfg.seed
    envname = base_cfg.env_kind
    curve_rows: list[tuple[int, str, str, int, float, float, float]] = []
    notes: list[str] = []

    for algo in algorithms:
        if algo in ("lpca-de", "lpca-greedy"):
            cfg = replace(base_cfg, selector="de" if algo == "lpca-de" else "greedy")
            result = train(cfg)
            for pt in result.curve:
                curve_rows.append(
                    (pt.iteration, algo, envname, seed, pt.mean, pt.ci_low, pt.ci_high)
                )
            write_policy(out / f"policy_{algo}.txt", env, result.policy)
            final = evaluate(
                result.policy,
                env,
                cfg.eval_repetitions,
                cfg.eval_horizon,
                _eval_seed(seed, cfg.n_iter),
            )
            write_eval_report(out / f"eval_{algo}.csv", final)
            for name, net in result.nets.items():
                save_checkpoint(out / f"checkpoint_{algo}_{name}.npz", net, result.grid)
        elif algo == "whittle":
            delta_a = float(values.get("whittle.delta_a", 0.1))
            tables_by_model = {
                name: compute_whittle(model, delta_a, env.gamma)
                for name, model in env.distinct_models().items()
            }
            tables = [tables_by_model[p.name] for p in env.projects]
            policy = FunctionPolicy(lambda s: whittle_policy(s, tables, env.budget))
            report = evaluate(
                policy,
                env,
                base_cfg.eval_repetitions,
                base_cfg.eval_horizon,
                _eval_seed(seed, base_cfg.n_iter),
            )
            curve_rows.append(
                (
                    0,
                    algo,
                    envname,
                    seed,
                    report.mean,
                    report.mean - report.ci_half_width,
                    report.mean + report.ci_half_width,
                )
            )
            write_eval_report(out / "eval_whittle.csv", report)
            for name, table in tables_by_model.items():
                write_whittle(out / f"whittle_{name}.txt", table)
        elif algo == "oracle":
            action_step = float(values.get("oracle.action_step", 0.25))
            budget_mode = str(values.get("oracle.budget_mode", "at_most"))
            try:
                solution = solve_joint_dp(env, action_step, budget_mode)
            except CapacityError as exc:
                notes.append(f"oracle skipped: {exc}")
                continue
            policy = FunctionPolicy(lambda s: solution.policy[s])
            report = evaluate(
                policy,
                env,
                base_cfg.eval_repetitions,
                base_cfg.eval_horizon,
                _eval_seed(seed, base_cfg.n_iter),
            )
            curve_rows.append(
                (
                    0,
                    algo,
                    envname,
                    seed,
                    report.mean,
                    report.mean - report.ci_half_width,
                    report.mean + report.ci_half_width,
                )
            )
            write_eval_report(out / "eval_oracle.csv", report)
            write_joint_dp(out / "oracle_values.txt", solution)

    write_curve(out / "curve.csv", curve_rows)
    manifest = [f"version = {__version__}", f"config = {Path(config_path).name}"]
    manifest += [f"{k} = {v}" for k, v in sorted(values.items())]
    manifest += [f"note = {n}" for n in notes]
    (out / "manifest.txt").write_text("\n".join(manifest) + "\n")
    return out
