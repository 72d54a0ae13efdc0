"""Command-line entry points: train, evaluate, oracle, whittle, run."""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

from .baselines import compute_whittle, solve_joint_dp, whittle_policy, write_joint_dp, write_whittle
from .envs import ENV_KINDS, make_environment
from .errors import ConfigError
from .harness import (
    ALGORITHMS,
    FunctionPolicy,
    TrainConfig,
    config_to_train,
    evaluate,
    parse_config,
    run_experiment,
    train,
    write_curve,
    write_eval_report,
)
from .lagrange import update_policy_dictionary, write_policy
from .qnet import load_checkpoint


def _add_env_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="key=value config file")
    p.add_argument("--env", choices=ENV_KINDS, help="environment kind")
    p.add_argument("--n-projects", type=int, dest="n_projects")
    p.add_argument("--budget", type=float)
    p.add_argument("--gamma", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", type=Path, help="output directory")


def _base_config(args) -> TrainConfig:
    values = parse_config(args.config) if args.config else {}
    cfg = config_to_train(values, seed=args.seed)
    overrides = {}
    if args.env is not None:
        overrides["env_kind"] = args.env
    if args.n_projects is not None:
        overrides["n_projects"] = args.n_projects
    if args.budget is not None:
        overrides["budget"] = args.budget
    if args.gamma is not None:
        overrides["gamma"] = args.gamma
    if getattr(args, "iters", None) is not None:
        overrides["n_iter"] = args.iters
    return replace(cfg, **overrides) if overrides else cfg


def _out_dir(args, default: str) -> Path:
    out = args.out if args.out is not None else Path(default)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _cmd_run(args) -> int:
    out = run_experiment(args.config, out_dir=args.out)
    print(f"results written to {out}")
    return 0


def _cmd_train(args) -> int:
    base = _base_config(args)
    algo = args.algo if args.algo else ("lpca-de" if base.selector == "de" else "lpca-greedy")
    if algo not in ("lpca-de", "lpca-greedy"):
        raise ConfigError("train expects --algo lpca-de or lpca-greedy")
    cfg = replace(base, selector="de" if algo == "lpca-de" else "greedy")
    result = train(cfg)
    out = _out_dir(args, f"{cfg.env_kind}_{algo}.results")
    rows = [
        (pt.iteration, algo, cfg.env_kind, cfg.seed, pt.mean, pt.ci_low, pt.ci_high)
        for pt in result.curve
    ]
    write_curve(out / "curve.csv", rows)
    write_policy(out / f"policy_{algo}.txt", result.env, result.policy)
    from .qnet import save_checkpoint

    for name, net in result.nets.items():
        save_checkpoint(out / f"checkpoint_{algo}_{name}.npz", net, result.grid)
    final = result.curve[-1]
    print(f"final mean return {final.mean:.6g} (iteration {final.iteration})")
    print(f"results written to {out}")
    return 0


def _cmd_evaluate(args) -> int:
    cfg = _base_config(args)
    run_dir = Path(args.run_dir)
    checkpoints = sorted(run_dir.glob(f"checkpoint_{args.algo}_*.npz"))
    if not checkpoints:
        raise ConfigError(f"no checkpoints for {args.algo} under {run_dir}")
    nets = {}
    grid = None
    for path in checkpoints:
        name = path.stem.removeprefix(f"checkpoint_{args.algo}_")
        nets[name], grid = load_checkpoint(path)
    env = make_environment(cfg.env_kind, cfg.n_projects, cfg.budget, cfg.gamma)
    policy = update_policy_dictionary(
        env,
        nets,
        grid,
        method="de" if args.algo == "lpca-de" else "greedy",
        de_cfg=cfg.de,
        greedy_cfg=cfg.greedy,
        action_grid_size=cfg.action_grid_size,
    )
    report = evaluate(policy, env, args.reps, args.horizon, cfg.seed)
    out = _out_dir(args, str(run_dir))
    write_eval_report(out / f"eval_{args.algo}.csv", report)
    print(f"mean return {report.mean:.6g} +/- {report.ci_half_width:.6g}")
    return 0


def _cmd_oracle(args) -> int:
    cfg = _base_config(args)
    env = make_environment(cfg.env_kind, cfg.n_projects, cfg.budget, cfg.gamma)
    solution = solve_joint_dp(env, args.action_step, args.budget_mode)
    out = _out_dir(args, f"{cfg.env_kind}_oracle.results")
    write_joint_dp(out / "oracle_values.txt", solution)
    policy = FunctionPolicy(lambda s: solution.policy[s])
    report = evaluate(policy, env, args.reps, args.horizon, cfg.seed)
    write_eval_report(out / "eval_oracle.csv", report)
    print(f"oracle mean return {report.mean:.6g} +/- {report.ci_half_width:.6g}")
    print(f"results written to {out}")
    return 0


def _cmd_whittle(args) -> int:
    cfg = _base_config(args)
    env = make_environment(cfg.env_kind, cfg.n_projects, cfg.budget, cfg.gamma)
    tables_by_model = {
        name: compute_whittle(model, args.delta_a, env.gamma)
        for name, model in env.distinct_models().items()
    }
    tables = [tables_by_model[p.name] for p in env.projects]
    policy = FunctionPolicy(lambda s: whittle_policy(s, tables, env.budget))
    report = evaluate(policy, env, args.reps, args.horizon, cfg.seed)
    out = _out_dir(args, f"{cfg.env_kind}_whittle.results")
    for name, table in tables_by_model.items():
        write_whittle(out / f"whittle_{name}.txt", table)
    write_eval_report(out / "eval_whittle.csv", report)
    print(f"whittle mean return {report.mean:.6g} +/- {report.ci_half_width:.6g}")
    print(f"results written to {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lpca",
        description="Budgeted weakly coupled MDP solvers: Lagrange Q-learning, "
        "Whittle indices, and an exact oracle.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute every algorithm in a config file")
    p_run.add_argument("--config", type=Path, required=True)
    p_run.add_argument("--out", type=Path)
    p_run.set_defaults(fn=_cmd_run)

    p_train = sub.add_parser("train", help="train one LPCA variant")
    _add_env_flags(p_train)
    p_train.add_argument("--algo", choices=ALGORITHMS, default=None)
    p_train.add_argument("--iters", type=int)
    p_train.set_defaults(fn=_cmd_train)

    p_eval = sub.add_parser("evaluate", help="re-evaluate a trained run from checkpoints")
    _add_env_flags(p_eval)
    p_eval.add_argument("run_dir", type=Path, help="directory written by train")
    p_eval.add_argument("--algo", choices=("lpca-de", "lpca-greedy"), default="lpca-greedy")
    p_eval.add_argument("--reps", type=int, default=100)
    p_eval.add_argument("--horizon", type=int, default=50)
    p_eval.set_defaults(fn=_cmd_evaluate)

    p_oracle = sub.add_parser("oracle", help="solve the joint DP and evaluate its policy")
    _add_env_flags(p_oracle)
    p_oracle.add_argument("--action-step", type=float, default=0.25, dest="action_step")
    p_oracle.add_argument("--budget-mode", choices=("at_most", "exact"), default="at_most",
                          dest="budget_mode")
    p_oracle.add_argument("--reps", type=int, default=100)
    p_oracle.add_argument("--horizon", type=int, default=50)
    p_oracle.set_defaults(fn=_cmd_oracle)

    p_whittle = sub.add_parser("whittle", help="compute Whittle tables and evaluate the policy")
    _add_env_flags(p_whittle)
    p_whittle.add_argument("--delta-a", type=float, default=0.1, dest="delta_a")
    p_whittle.add_argument("--reps", type=int, default=100)
    p_whittle.add_argument("--horizon", type=int, default=50)
    p_whittle.set_defaults(fn=_cmd_whittle)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
