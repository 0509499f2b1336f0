"""Command line entry point: ``myopiclab <subcommand> [options]``."""
from __future__ import annotations

import argparse
import json
import sys
import time

from .channel_model import ChannelModel, stationary_belief
from .lab import DEFAULTS, OMEGA_MODES, InstanceSpec, replay, run_experiment
from .planner import Planner, solve_tree
from .policy import myopic_action, policy_from_name
from .simulator import SimConfig, estimate_throughput, run_episode, simulate_rewards, totals_csv

EXPERIMENTS = ("structure", "optimality", "conjecture", "lemma4", "lemma1", "montecarlo")


def parse_model(text: str) -> ChannelModel:
    parts = [float(x) for x in text.split(",")]
    if len(parts) not in (3, 4):
        raise argparse.ArgumentTypeError("expected p01,p11,eps[,delta]")
    return ChannelModel(*parts)


def parse_n(text: str):
    if "-" in text:
        lo, hi = (int(x) for x in text.split("-"))
        return tuple(range(lo, hi + 1))
    if "," in text:
        return tuple(int(x) for x in text.split(","))
    return int(text)


def parse_omega(text: str):
    if text in OMEGA_MODES:
        return text
    return tuple(float(x) for x in text.split(","))


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--n", type=parse_n, help="channels: 3, 2-6 or 3,4,5")
    p.add_argument("--horizon", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--model", type=parse_model, help="p01,p11,eps[,delta]")
    p.add_argument("--omega", type=parse_omega,
                   help="v1,...,vN or one of: " + ", ".join(OMEGA_MODES))
    p.add_argument("--out", help="write the result here instead of stdout")
    p.add_argument("--format", choices=("json", "csv"), default="json")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="myopiclab", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    for name in EXPERIMENTS:
        p = sub.add_parser(name, help=f"run the {name} experiment")
        _common(p)
        p.add_argument("--instances", type=int)
        p.add_argument("--epsilon-frac", type=float, dest="epsilon_frac")
        p.add_argument("--sign", choices=("any", "positive", "negative"))
        p.add_argument("--episodes", type=int)
        p.add_argument("--policies", help="comma separated, for montecarlo")
        p.add_argument("--config", help="JSON file mirroring the instance spec")
        p.add_argument("--jobs", type=int, default=1)

    p = sub.add_parser("solve", help="optimal value and action for one instance")
    _common(p)

    p = sub.add_parser("simulate", help="Monte Carlo episodes for one policy")
    _common(p)
    p.add_argument("--episodes", type=int, default=1000)
    p.add_argument("--policy", default="myopic-argmax")

    p = sub.add_parser("replay", help="re-run instances of a stored report")
    p.add_argument("report")
    p.add_argument("--index", type=int)
    return parser


def _emit(text: str, out) -> None:
    if out:
        with open(out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def spec_from_args(name: str, args) -> InstanceSpec:
    data = dict(DEFAULTS[name])
    if getattr(args, "config", None):
        with open(args.config) as fh:
            data.update(json.load(fh))
        if isinstance(data.get("model"), dict):
            data["model"] = ChannelModel.from_dict(data["model"])
    for key in ("n", "horizon", "instances", "seed", "model", "omega", "epsilon_frac",
                "sign", "episodes"):
        value = getattr(args, key, None)
        if value is not None:
            data[key] = value
    if getattr(args, "policies", None):
        data["policies"] = tuple(args.policies.split(","))
    for k in ("p_range", "policies"):
        if isinstance(data.get(k), list):
            data[k] = tuple(data[k])
    if isinstance(data.get("n"), list):
        data["n"] = tuple(data["n"])
    if isinstance(data.get("omega"), list):
        data["omega"] = tuple(data["omega"])
    return InstanceSpec(**data)


def _instance_from_args(args):
    if args.model is None:
        raise SystemExit("--model is required")
    model = args.model
    omega = args.omega
    if omega is None or omega == "stationary":
        n = args.n if isinstance(args.n, int) else 2
        omega = stationary_belief(model, n)
    elif isinstance(omega, str):
        raise SystemExit("give an explicit --omega vector or 'stationary'")
    return model, tuple(omega)


def cmd_experiment(name: str, args) -> int:
    spec = spec_from_args(name, args)
    report = run_experiment(name, spec, jobs=args.jobs)
    _emit(report.to_csv() if args.format == "csv" else report.to_json(), args.out)
    print(report.summary_line(), file=sys.stderr)
    for f in report.failures()[:5]:
        print(f"  fail: instance {f['index']} witness {json.dumps(f.get('witness'))}",
              file=sys.stderr)
    return 0 if report.ok else 1


def cmd_solve(args) -> int:
    model, omega = _instance_from_args(args)
    horizon = args.horizon or 10
    start = time.perf_counter()
    sol = solve_tree(omega, horizon, model)
    entry = Planner(model, horizon).optimal(omega)
    result = {
        "instance": {"model": model.to_dict(), "omega1": list(omega)},
        "horizon": horizon,
        "value": entry.value,
        "optimal_actions": sorted(entry.optimal_actions),
        "myopic_action": myopic_action(omega),
        "myopic_value": sol.myopic_value,
        "node_count": sol.node_count,
        "wall_time": time.perf_counter() - start,
    }
    _emit(json.dumps(result, indent=2, sort_keys=True) + "\n", args.out)
    return 0


def cmd_simulate(args) -> int:
    model = args.model
    if model is None:
        raise SystemExit("--model is required")
    omega = args.omega
    n = args.n if isinstance(args.n, int) else (len(omega) if isinstance(omega, tuple) else 2)
    cfg = SimConfig(model, n, args.horizon or 10, episodes=args.episodes, seed=args.seed or 0,
                    omega1=omega if isinstance(omega, tuple) else None, policy=args.policy)
    policy = policy_from_name(args.policy, seed=cfg.seed)
    if args.format == "csv":
        _emit(totals_csv(simulate_rewards(cfg, policy)), args.out)
    else:
        _emit("".join(run_episode(cfg, policy, i).to_jsonl() for i in range(cfg.episodes)),
              args.out)
    if cfg.episodes >= 2:
        mean, se = estimate_throughput(cfg, policy)
        print(f"{policy.name}: mean total reward {mean:.6f} +/- {se:.6f} over "
              f"{cfg.episodes} episodes", file=sys.stderr)
    return 0


def cmd_replay(args) -> int:
    with open(args.report) as fh:
        report = json.load(fh)
    rows = replay(report, args.index)
    same = True
    for index, stored, now in rows:
        print(f"instance {index}: stored={stored} replayed={now}")
        same = same and stored == now
    return 0 if same else 1


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command in EXPERIMENTS:
        return cmd_experiment(args.command, args)
    if args.command == "solve":
        return cmd_solve(args)
    if args.command == "simulate":
        return cmd_simulate(args)
    return cmd_replay(args)


if __name__ == "__main__":
    sys.exit(main())
