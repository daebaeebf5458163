"""Command-line entry point: train, eval, audit, demo-pushforward, export-traj.

Exit codes: 0 on success (and on audit pass), 1 on runtime failure or
audit fail, 2 on usage or configuration errors. ``EQUISWARM_THREADS``
caps the rollout worker count.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from .audit import (
    audit_policy,
    audit_quad_dynamics,
    audit_swarm_reward,
    AuditReport,
    pushforward_demo,
)
from .config import ConfigError, RunConfig, default_config_path, load_config
from .env import (
    RewardCoeffs,
    SwarmEnv,
    aggregate_metrics,
    episode_metrics,
    export_metrics_jsonl,
    export_trace_csv,
    rollout_episode,
)
from .policy import ActorCritic
from .ppo import Trainer
from . import autodiff

GROUP_CHOICES = ("se3", "so3", "se2z", "trans", "identity")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="equiswarm",
                                     description="equivariant swarm policies: train, evaluate, audit")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", type=Path, default=None, help="run config file")
        p.add_argument("--override", action="append", default=[], metavar="K=V",
                       help="config override, repeatable; bare or section.key")
        p.add_argument("--seed", type=int, default=None, help="seed override")
        p.add_argument("--out", type=Path, default=Path("runs/latest"), help="output directory")

    t = sub.add_parser("train", help="run PPO training")
    common(t)

    e = sub.add_parser("eval", help="evaluate a checkpoint with the deterministic policy")
    common(e)
    e.add_argument("--ckpt", type=Path, required=True)
    e.add_argument("--episodes", type=int, default=50)

    a = sub.add_parser("audit", help="numerical symmetry audit")
    common(a)
    a.add_argument("target", choices=("reward", "dynamics", "policy", "pushforward"))
    a.add_argument("--group", choices=GROUP_CHOICES, default="se3")
    a.add_argument("--n", type=int, default=100)
    a.add_argument("--tol", type=float, default=None)
    a.add_argument("--ckpt", type=Path, default=None)

    d = sub.add_parser("demo-pushforward", help="input-extension demo on a planar integrator")
    common(d)
    d.add_argument("--n", type=int, default=100, help="integration steps for the trajectory check")
    d.add_argument("--tol", type=float, default=1e-12)

    x = sub.add_parser("export-traj", help="run one episode and export the trace CSV")
    common(x)
    x.add_argument("--ckpt", type=Path, default=None,
                   help="checkpoint (defaults to constant hover thrust)")
    return parser


def _load(args) -> RunConfig:
    overrides = list(args.override)
    if args.seed is not None:
        overrides.append(f"train.seed={args.seed}")
        overrides.append(f"scenario.seed={args.seed}")
    return load_config(args.config or default_config_path(), overrides)


def _make_envs(cfg: RunConfig, workers: int) -> list:
    cap = os.environ.get("EQUISWARM_THREADS")
    if cap:
        workers = max(1, min(workers, int(cap)))
    return [SwarmEnv(cfg.scenario, cfg.quad, cfg.env, seed=cfg.train.seed + w)
            for w in range(workers)]


def cmd_train(args) -> int:
    cfg = _load(args)
    autodiff.set_default_dtype(cfg.policy.np_dtype)
    out: Path = args.out
    out.mkdir(parents=True, exist_ok=True)
    envs = _make_envs(cfg, cfg.train.workers)
    ac = ActorCritic(cfg.policy, seed=cfg.train.seed)

    def save(actor, update):
        actor.save(out / f"ckpt_{update:06d}.bin")
        actor.save(out / "ckpt_last.bin")

    trainer = Trainer(ac, envs, cfg.train, metrics_path=out / "metrics.jsonl",
                      checkpoint_fn=save)
    code = 0
    try:
        trainer.run()
    except KeyboardInterrupt:
        print("interrupted; saving checkpoint", file=sys.stderr)
        code = 1
    except FloatingPointError as exc:
        print(f"training aborted: {exc}; last good parameters retained", file=sys.stderr)
        code = 1
    ac.save(out / "ckpt_final.bin")
    summary = {
        "config": cfg.echo(),
        "updates": len(trainer.history),
        "steps": trainer.history[-1]["steps"] if trainer.history else 0,
        "final_mean_step_reward": (trainer.history[-1]["mean_step_reward"]
                                   if trainer.history else None),
        "exit_code": code,
    }
    with open(out / "summary.json", "w") as fh:
        json.dump(summary, fh, indent=2)
    print(json.dumps({k: summary[k] for k in ("updates", "steps", "final_mean_step_reward")}))
    return code


def cmd_eval(args) -> int:
    cfg = _load(args)
    ac = ActorCritic.load(args.ckpt)
    autodiff.set_default_dtype(ac.cfg.np_dtype)
    out: Path = args.out
    out.mkdir(parents=True, exist_ok=True)
    env = SwarmEnv(cfg.scenario, cfg.quad, cfg.env, seed=cfg.train.seed)

    def act(state, env_):
        graphs = env_.local_graphs()
        u, _, _ = ac.act(graphs, np.random.default_rng(0), deterministic=True)
        return u

    per_episode = []
    for _ in range(args.episodes):
        trace = rollout_episode(env, act)
        per_episode.append(episode_metrics(trace, cfg.env.success_radius))
    export_metrics_jsonl(per_episode, out / "eval_metrics.jsonl")
    agg = aggregate_metrics(per_episode)
    with open(out / "eval_summary.json", "w") as fh:
        json.dump(agg, fh, indent=2)
    print(json.dumps(agg))
    return 0


def cmd_audit(args) -> int:
    cfg = _load(args)
    seed = cfg.train.seed
    if args.target == "pushforward":
        report = pushforward_demo(steps=args.n, tol=args.tol or 1e-12, seed=seed)
        print(json.dumps(report.to_dict(), indent=2))
        return 0 if report.passed else 1
    if args.target == "reward":
        tol = args.tol if args.tol is not None else 1e-9
        coeffs = RewardCoeffs.for_timestep(cfg.quad.dt_ctrl, cfg.env.d_min, cfg.env.d_prox)
        cond = audit_swarm_reward(coeffs, args.group, args.n, tol,
                                  num_agents=cfg.scenario.num_agents,
                                  k_neighbors=cfg.env.k_neighbors, seed=seed)
    elif args.target == "dynamics":
        tol = args.tol if args.tol is not None else 1e-9
        cond = audit_quad_dynamics(cfg.quad, args.group, args.n, tol, seed=seed)
    else:
        if args.ckpt is None:
            print("audit policy requires --ckpt", file=sys.stderr)
            return 2
        tol = args.tol if args.tol is not None else 1e-5
        ac = ActorCritic.load(args.ckpt)
        cond = audit_policy(ac, args.group, args.n, tol, seed=seed)
    report = AuditReport(group=args.group, seed=seed, conditions=(cond,))
    args.out.mkdir(parents=True, exist_ok=True)
    with open(args.out / f"audit_{args.target}.json", "w") as fh:
        fh.write(report.to_json())
    print(report.table())
    print(report.to_json())
    return 0 if report.passed else 1


def cmd_demo_pushforward(args) -> int:
    report = pushforward_demo(steps=args.n, tol=args.tol)
    args.out.mkdir(parents=True, exist_ok=True)
    with open(args.out / "pushforward.json", "w") as fh:
        json.dump(report.to_dict(), fh, indent=2)
    print(json.dumps(report.to_dict(), indent=2))
    return 0 if report.passed else 1


def cmd_export_traj(args) -> int:
    cfg = _load(args)
    out: Path = args.out
    out.mkdir(parents=True, exist_ok=True)
    env = SwarmEnv(cfg.scenario, cfg.quad, cfg.env, seed=cfg.train.seed)
    if args.ckpt is not None:
        ac = ActorCritic.load(args.ckpt)

        def act(state, env_):
            u, _, _ = ac.act(env_.local_graphs(), np.random.default_rng(0), deterministic=True)
            return u
    else:
        hover = 2.0 * cfg.quad.hover_action() - 1.0  # raw value that clips to hover thrust

        def act(state, env_):
            return np.tile(hover, (cfg.scenario.num_agents, 1))

    trace = rollout_episode(env, act)
    path = out / "trajectory.csv"
    export_trace_csv(trace, path)
    print(json.dumps({"rows": int(trace.times.size * trace.num_agents), "path": str(path)}))
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code not in (0, None) else 0
    try:
        handler = {
            "train": cmd_train,
            "eval": cmd_eval,
            "audit": cmd_audit,
            "demo-pushforward": cmd_demo_pushforward,
            "export-traj": cmd_export_traj,
        }[args.command]
        return handler(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"missing file: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - single CLI boundary
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
