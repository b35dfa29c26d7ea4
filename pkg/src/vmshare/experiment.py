"""Batch experiments: cMAP runs, baselines, oracle and sweeps written to disk.

Every random choice is seeded from one master seed. Each run gets a child
seed keyed by a stable label (for example ``"opa/beta=10"``), so adding or
removing runs never changes the seeds of the others. All files are written
with a fixed float format and sorted JSON keys, so identical configurations
produce byte-identical bundles.
"""
from __future__ import annotations

import csv
import dataclasses
import io
import json
import math
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import markov, oracle
from .model import (
    EnumerationTooLarge,
    Scenario,
    dumps_scenario,
    generate_demand_scenario,
    generate_scenario,
    load_scenario,
)


class ConfigError(ValueError):
    """Invalid experiment configuration; the message names the field."""


@dataclass
class ExperimentConfig:
    scenario_path: str | None = None
    num_stations: int = 5
    total_vms: int = 10
    users_per_station: list[int] | None = field(default_factory=lambda: [2, 0, 2, 4, 0])
    total_demand: int | None = None
    demand_range: list[int] = field(default_factory=lambda: [1, 3])
    valuation_bounds: list[float] = field(default_factory=lambda: [0.0, 1.0])
    scenario_seed: int | None = None
    betas: list[float] = field(default_factory=lambda: [10.0, 50.0])
    evaluators: list[str] = field(default_factory=lambda: ["opa", "puff"])
    jump_budget: int = 20000
    burn_in: int | None = None
    window: int = 30
    uniform_price: float = 0.5
    price_step: float = 0.05
    output_dir: str = "results"
    master_seed: int = 0
    enumeration_cap: int = 10**6

    def __post_init__(self):
        self.validate()

    def validate(self):
        if not self.betas:
            raise ConfigError("betas: need at least one value")
        if any(b <= 0 for b in self.betas):
            raise ConfigError("betas: every entry must be positive")
        if self.window < 1:
            raise ConfigError("window: must be >= 1")
        if self.jump_budget < 0:
            raise ConfigError("jump_budget: must be non-negative")
        if 0 < self.jump_budget < self.window:
            raise ConfigError("jump_budget: must be at least the window size")
        if self.burn_in is not None and not 0 <= self.burn_in < max(self.jump_budget, 1):
            raise ConfigError("burn_in: must lie in [0, jump_budget)")
        for ev in self.evaluators:
            if ev not in ("opa", "puff"):
                raise ConfigError(f"evaluators: unknown evaluator {ev!r}")
        if not 0.0 <= self.uniform_price <= 1.0:
            raise ConfigError("uniform_price: must lie in [0, 1]")
        if not 0.0 < self.price_step <= 1.0:
            raise ConfigError("price_step: must lie in (0, 1]")
        if self.scenario_path is None and self.users_per_station is None and self.total_demand is None:
            raise ConfigError("users_per_station: give per-station user counts or total_demand")
        if self.users_per_station is not None and len(self.users_per_station) != self.num_stations:
            raise ConfigError("users_per_station: need one entry per station")

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        for key in data:
            if key not in known:
                raise ConfigError(f"{key}: unknown configuration field")
        return cls(**data)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)

    @property
    def effective_burn_in(self) -> int:
        return self.jump_budget // 10 if self.burn_in is None else self.burn_in


def derive_seed(master: int, label: str) -> int:
    """Child seed for ``label``, independent of any other label."""
    ss = np.random.SeedSequence(master, spawn_key=(zlib.crc32(label.encode()),))
    return int(ss.generate_state(1, np.uint64)[0])


def build_scenario(config: ExperimentConfig) -> Scenario:
    if config.scenario_path is not None:
        return load_scenario(config.scenario_path)
    seed = config.scenario_seed if config.scenario_seed is not None else derive_seed(config.master_seed, "scenario")
    try:
        if config.total_demand is not None:
            return generate_demand_scenario(
                config.num_stations, config.total_vms, config.total_demand,
                tuple(config.demand_range), tuple(config.valuation_bounds), seed,
            )
        return generate_scenario(
            config.num_stations, config.total_vms, config.users_per_station,
            tuple(config.demand_range), tuple(config.valuation_bounds), seed,
        )
    except ValueError as exc:
        raise ConfigError(f"scenario generation: {exc}") from exc


def run_label(evaluator: str, beta: float) -> str:
    return f"{evaluator}/beta={beta:g}"


def _fmt(x) -> str:
    if isinstance(x, float):
        return repr(x)
    return str(x)


def _write_csv(path: Path, header, rows) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([_fmt(x) for x in row])
    path.write_text(buf.getvalue())


def _json_safe(obj):
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    if isinstance(obj, dict):
        return {k: _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    return obj


def _write_json(path: Path, data) -> None:
    path.write_text(json.dumps(_json_safe(data), sort_keys=True, indent=2) + "\n")


def simulate_run(scenario: Scenario, config: ExperimentConfig, evaluator: str, beta: float):
    seed = derive_seed(config.master_seed, run_label(evaluator, beta))
    ev = markov.make_evaluator(scenario, evaluator, seed)
    return markov.simulate(scenario, beta, ev, max_jumps=config.jump_budget, seed=seed)


def cmap_revenue(trace: markov.ChainTrace, config: ExperimentConfig) -> float:
    burn = min(config.effective_burn_in, max(len(trace) - 1, 0))
    return markov.trace_statistics(trace, 1, burn).time_average


def compare_methods(scenario: Scenario, config: ExperimentConfig, traces: dict | None = None):
    """Revenue of every method on one scenario.

    Returns ``(rows, oracle_revenue, warnings)`` where each row is
    ``(method, revenue)``. Enumeration-based methods are dropped with a
    warning when the placement space exceeds the cap.
    """
    rows, warnings = [], []
    traces = traces if traces is not None else {}
    for ev in config.evaluators:
        for beta in config.betas:
            label = run_label(ev, beta)
            if label not in traces:
                traces[label] = simulate_run(scenario, config, ev, beta)
            rev = cmap_revenue(traces[label], config) if len(traces[label]) else math.nan
            rows.append((f"cmap_{ev}_beta{beta:g}", rev))
    cap = config.enumeration_cap
    best = None
    try:
        best = oracle.exhaustive_optimum(scenario, cap).best_revenue
        grid = oracle.price_grid(config.price_step)
        sweep = oracle.uniform_price_sweep(scenario, grid, cap)
        rows.append(("cooperative_uniform", oracle.uniform_price_baseline(scenario, config.uniform_price, True, cap)))
        rows.append(("cooperative_uniform_best", max(r["cooperative"] for r in sweep)))
        rows.append(("noncooperative_auction", oracle.noncooperative_auction_baseline(scenario, cap)))
        rows.append(("noncooperative_uniform", oracle.uniform_price_baseline(scenario, config.uniform_price, False, cap)))
        rows.append(("oracle", best))
    except EnumerationTooLarge as exc:
        warnings.append(f"oracle and baselines skipped: {exc}")
    return rows, best, warnings


def _ratio(rev, best):
    if best is None or not best or rev is None or math.isnan(rev):
        return math.nan
    return rev / best


def run_experiment(config: ExperimentConfig) -> dict:
    """Run every (evaluator, beta) chain plus baselines and write the bundle."""
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    scenario = build_scenario(config)
    (out / "scenario.json").write_text(dumps_scenario(scenario))
    # output_dir is left out so a bundle does not depend on where it was written
    _write_json(out / "config.json", {k: v for k, v in config.to_dict().items() if k != "output_dir"})

    summary: dict = {
        "num_states": scenario.placement_count,
        "master_seed": config.master_seed,
        "runs": [],
        "warnings": [],
    }
    files = ["scenario.json", "config.json"]
    traces: dict = {}
    for ev in config.evaluators:
        for beta in config.betas:
            label = run_label(ev, beta)
            trace = simulate_run(scenario, config, ev, beta)
            traces[label] = trace
            name = f"trace_{ev}_beta{beta:g}.csv"
            (out / name).write_text(markov.trace_to_csv(trace))
            files.append(name)
            run = {
                "evaluator": ev,
                "beta": beta,
                "seed": trace.seed,
                "jumps": len(trace),
                "gap_certificate": math.log(scenario.placement_count) / beta,
            }
            if len(trace):
                stats = markov.trace_statistics(trace, config.window, min(config.effective_burn_in, len(trace) - 1))
                run["time_average_revenue"] = stats.time_average
                series = f"running_{ev}_beta{beta:g}.csv"
                start = config.window - 1
                _write_csv(out / series, ["jump_index", "running_mean"],
                           [(start + i, float(x)) for i, x in enumerate(stats.running_mean)])
                files.append(series)
            summary["runs"].append(run)

    if config.jump_budget == 0:
        summary["warnings"].append("jump budget is 0: traces are empty")
        _finish(out, summary, files)
        return summary

    rows, best, warnings = compare_methods(scenario, config, traces)
    summary["warnings"].extend(warnings)
    _write_csv(out / "comparison.csv", ["method", "axis_value", "revenue", "oracle_revenue", "ratio"],
               [(m, "-", r, "" if best is None else best, _ratio(r, best)) for m, r in rows])
    files.append("comparison.csv")
    summary["methods"] = {m: r for m, r in rows}
    if best is not None:
        summary["oracle_revenue"] = best
        opt = oracle.exhaustive_optimum(scenario, config.enumeration_cap)
        summary["oracle_placement"] = list(opt.best_placement)
        summary["oracle_prices"] = list(opt.best_prices.prices)
        (out / "oracle.csv").write_text(oracle.oracle_to_csv(scenario, config.enumeration_cap))
        grid = oracle.price_grid(config.price_step)
        sweep = oracle.uniform_price_sweep(scenario, grid, config.enumeration_cap)
        _write_csv(out / "uniform_prices.csv", ["price", "cooperative_uniform", "noncooperative_uniform"],
                   [(r["price"], r["cooperative"], r["noncooperative"]) for r in sweep])
        files += ["oracle.csv", "uniform_prices.csv"]
        nc = summary["methods"]["noncooperative_auction"]
        summary["cooperation_gain"] = (best / nc - 1.0) if nc > 0 else None
        for run in summary["runs"]:
            if "time_average_revenue" in run:
                run["gap_to_oracle"] = best - run["time_average_revenue"]
                # the certificate only covers chains driven by the exact optimum
                if run["evaluator"] == "opa":
                    run["within_certificate"] = run["gap_to_oracle"] <= run["gap_certificate"]
        summary["dominance_ok"] = all(best >= r - 1e-12 for m, r in rows if not m.startswith("cmap_puff"))
    _finish(out, summary, files)
    return summary


def _finish(out: Path, summary: dict, files: list[str]) -> None:
    _write_json(out / "summary.json", summary)
    _write_json(out / "manifest.json", {"files": sorted(files + ["summary.json"])})


SWEEP_AXES = ("beta", "price", "valuation", "demand")


def parse_axis_value(axis: str, text: str):
    if axis == "valuation":
        a, b = text.split(":")
        return (float(a), float(b))
    if axis == "demand":
        return int(text)
    return float(text)


def format_axis_value(axis: str, value) -> str:
    if axis == "valuation":
        return f"{value[0]:g}:{value[1]:g}"
    return f"{value:g}"


def sweep(config: ExperimentConfig, axis: str, values) -> list[tuple]:
    """One row per (axis value, method): method, axis value, revenue, oracle revenue, ratio."""
    if axis not in SWEEP_AXES:
        raise ConfigError(f"axis: expected one of {SWEEP_AXES}, got {axis!r}")
    if axis in ("valuation", "demand") and config.scenario_path is not None:
        raise ConfigError(f"scenario_path: a {axis} sweep needs generated scenarios, not a file")
    values = list(values)
    if not values:
        raise ConfigError("values: need at least one axis value")
    rows = []
    for value in values:
        if axis == "beta":
            cfg = config.replace(betas=[float(value)])
        elif axis == "price":
            cfg = config.replace(uniform_price=float(value))
        elif axis == "valuation":
            cfg = config.replace(valuation_bounds=list(value))
        else:
            cfg = config.replace(total_demand=int(value), users_per_station=None)
        scenario = build_scenario(cfg)
        methods, best, _ = compare_methods(scenario, cfg)
        label = format_axis_value(axis, value)
        for m, r in methods:
            rows.append((m, label, r, math.nan if best is None else best, _ratio(r, best)))
    return rows


def write_sweep(rows, path) -> None:
    _write_csv(Path(path), ["method", "axis_value", "revenue", "oracle_revenue", "ratio"], rows)
