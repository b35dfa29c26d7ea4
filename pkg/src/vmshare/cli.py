"""Command-line entry point.

Subcommands: ``generate``, ``run``, ``oracle``, ``sweep``, ``perturb`` and
``auction``. Exit status is 0 on success, 2 on a usage error and 3 when an
enumeration-only command exceeds the placement cap.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import auctions, markov, oracle, perturb
from .experiment import (
    SWEEP_AXES,
    ConfigError,
    ExperimentConfig,
    parse_axis_value,
    run_experiment,
    sweep,
    write_sweep,
)
from .model import (
    EnumerationTooLarge,
    User,
    dumps_scenario,
    generate_demand_scenario,
    generate_scenario,
    load_scenario,
)

EXIT_USAGE = 2
EXIT_CAP = 3


def _ints(text: str) -> list[int]:
    return [int(x) for x in text.split(",") if x.strip()]


def _add_generation_flags(p: argparse.ArgumentParser, defaults: bool):
    d = (lambda v: v) if defaults else (lambda v: None)
    p.add_argument("--stations", type=int, default=d(5), help="number of base stations K")
    p.add_argument("--vms", type=int, default=d(10), help="total VM budget V")
    p.add_argument("--users", type=_ints, default=d([2, 0, 2, 4, 0]), help="comma-separated users per station")
    p.add_argument("--total-demand", type=int, default=None, help="draw users until this many VMs are requested")
    p.add_argument("--demand-range", type=int, nargs=2, default=d([1, 3]), metavar=("LO", "HI"))
    p.add_argument("--valuation", type=float, nargs=2, default=d([0.0, 1.0]), metavar=("A", "B"))


def _config_from_args(args) -> ExperimentConfig:
    data = {}
    if args.config:
        try:
            data = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"config: cannot read {args.config}: {exc}") from exc
    overrides = {
        "scenario_path": args.scenario,
        "num_stations": args.stations,
        "total_vms": args.vms,
        "users_per_station": args.users,
        "total_demand": args.total_demand,
        "demand_range": args.demand_range,
        "valuation_bounds": args.valuation,
        "betas": args.beta,
        "evaluators": args.evaluator,
        "jump_budget": args.jumps,
        "burn_in": args.burn_in,
        "window": args.window,
        "uniform_price": args.price,
        "output_dir": getattr(args, "out", None),
        "master_seed": args.seed,
    }
    data.update({k: v for k, v in overrides.items() if v is not None})
    if args.total_demand is not None and args.users is None:
        data["users_per_station"] = None
    return ExperimentConfig.from_dict(data)


def _add_experiment_flags(p: argparse.ArgumentParser):
    p.add_argument("--config", help="JSON configuration file; flags override it")
    p.add_argument("--scenario", help="scenario JSON file instead of generation parameters")
    _add_generation_flags(p, defaults=False)
    p.add_argument("--beta", type=float, nargs="+")
    p.add_argument("--evaluator", nargs="+", choices=["opa", "puff"])
    p.add_argument("--jumps", type=int, help="jump budget per chain")
    p.add_argument("--burn-in", type=int)
    p.add_argument("--window", type=int)
    p.add_argument("--price", type=float, help="uniform price for the uniform baselines")
    p.add_argument("--seed", type=int, help="master seed")


def cmd_generate(args) -> int:
    try:
        if args.total_demand is not None:
            sc = generate_demand_scenario(args.stations, args.vms, args.total_demand,
                                          tuple(args.demand_range), tuple(args.valuation), args.seed)
        else:
            sc = generate_scenario(args.stations, args.vms, args.users,
                                   tuple(args.demand_range), tuple(args.valuation), args.seed)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    text = dumps_scenario(sc)
    if args.output:
        Path(args.output).write_text(text)
    else:
        sys.stdout.write(text)
    return 0


def cmd_run(args) -> int:
    summary = run_experiment(_config_from_args(args))
    print(json.dumps({k: summary[k] for k in ("num_states", "warnings") if k in summary}, sort_keys=True))
    return 0


def cmd_oracle(args) -> int:
    sc = load_scenario(args.scenario)
    res = oracle.exhaustive_optimum(sc, args.cap)
    report = {
        "best_placement": list(res.best_placement),
        "best_prices": list(res.best_prices.prices),
        "best_revenue": res.best_revenue,
        "noncooperative_auction": oracle.noncooperative_auction_baseline(sc, args.cap),
        "num_states": sc.placement_count,
    }
    if args.output:
        Path(args.output).write_text(oracle.oracle_to_csv(sc, args.cap))
    print(json.dumps(report, sort_keys=True, indent=2))
    return 0


def cmd_sweep(args) -> int:
    config = _config_from_args(args)
    try:
        values = [parse_axis_value(args.axis, v) for v in args.values]
    except ValueError as exc:
        raise ConfigError(f"values: {exc}") from exc
    rows = sweep(config, args.axis, values)
    write_sweep(rows, args.output)
    return 0


def cmd_perturb(args) -> int:
    sc = load_scenario(args.scenario)
    support, phis = markov.placement_phis(sc, "opa", args.cap)
    rng = np.random.default_rng(args.seed)
    reports = []
    for beta in args.beta:
        for _ in range(args.trials):
            spec = perturb.PerturbationSpec.random(len(support), rng, args.psi_max, args.levels)
            reports.append(perturb.bounds_from_phis(support, phis, beta, spec))
    text = perturb.reports_to_csv(reports)
    if args.output:
        Path(args.output).write_text(text)
    else:
        sys.stdout.write(text)
    failed = sum(not r.holds for r in reports)
    print(f"{len(reports) - failed}/{len(reports)} specs within both bounds", file=sys.stderr)
    return 0


def _parse_users(text: str) -> list[User]:
    users = []
    for i, item in enumerate(x for x in text.split(",") if x.strip()):
        r, u = item.split(":")
        users.append(User(i, int(r), float(u)))
    return users


def cmd_auction(args) -> int:
    try:
        users = _parse_users(args.users)
    except ValueError as exc:
        raise ConfigError(f"users: {exc}") from exc
    if args.mechanism == "opa":
        out = auctions.opa(auctions.truthful_bids(users), args.vms)
        print(json.dumps({"price": out.clearing_price, "revenue": out.revenue, "winners": out.winners}))
    elif args.mechanism == "icat":
        if args.target is None:
            raise ConfigError("target: icat needs --target")
        out = auctions.icat(users, args.vms, args.target)
        print(json.dumps({"price": out.clearing_price, "revenue": out.revenue, "winners": out.winners}))
        sys.stdout.write(auctions.trace_to_csv(out))
    else:
        res = auctions.puff(users, args.vms, args.seed)
        print(json.dumps({
            "partition": res.partition,
            "estimates": [res.estimate_first, res.estimate_second],
            "revenues": [res.first.revenue, res.second.revenue],
            "revenue": res.revenue,
        }))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vmshare", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write a random scenario file")
    _add_generation_flags(p, defaults=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("run", help="cMAP chains, baselines and oracle into an output directory")
    _add_experiment_flags(p)
    p.add_argument("--out", help="output directory")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("oracle", help="exhaustive optimum of a scenario")
    p.add_argument("scenario")
    p.add_argument("-o", "--output", help="per-placement CSV")
    p.add_argument("--cap", type=int, default=10**6)
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("sweep", help="compare methods along one axis")
    _add_experiment_flags(p)
    p.add_argument("--axis", required=True, choices=SWEEP_AXES)
    p.add_argument("--values", nargs="+", required=True, help="axis values; valuation bounds as A:B")
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("perturb", help="check the perturbed-chain bounds on random specs")
    p.add_argument("scenario")
    p.add_argument("--beta", type=float, nargs="+", default=[2.0])
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--psi-max", type=float, default=0.2)
    p.add_argument("--levels", type=int, default=4, help="largest quantisation level")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--cap", type=int, default=10**6)
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_perturb)

    p = sub.add_parser("auction", help="run one single-station mechanism")
    p.add_argument("mechanism", choices=["opa", "icat", "puff"])
    p.add_argument("--users", required=True, help="comma-separated r:u pairs, e.g. 1:0.6,1:0.5")
    p.add_argument("--vms", type=int, required=True)
    p.add_argument("--target", type=float)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_auction)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"vmshare: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except EnumerationTooLarge as exc:
        print(f"vmshare: {exc}", file=sys.stderr)
        return EXIT_CAP
    except (OSError, ValueError) as exc:
        print(f"vmshare: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
