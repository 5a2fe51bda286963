"""Command-line entry point: single runs, UAV-count sweeps, policy comparisons.

Outputs land under <out>/<policy>/<uav_count>/<seed>/ as timeseries.csv,
summary.csv and timeseries.png; sweeps add a merged comparison.csv plus one
comparison chart per town at the output root. Exit codes: 0 success, 1 I/O
failure, 2 invalid arguments or scenario.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

from . import engine, metrics
from .policies import POLICY_NAMES, PolicySpec
from .scenario import (
    Scenario,
    ScenarioError,
    ValidationError,
    build_default_earthquake,
    load_scenario,
    save_scenario,
    scenario_from_dict,
    scenario_to_dict,
)

DEFAULT_SEEDS = (1, 2, 3, 4, 5)
DEFAULT_UAV_RANGE = (4, 10)
DEFAULT_USERS_PER_TOWN = 600


@dataclass
class RunSpec:
    scenario: str = "builtin:earthquake"
    policy: str = "none"
    uav_count: int | None = None
    seeds: tuple[int, ...] = DEFAULT_SEEDS
    out_dir: str = "out"
    overrides: tuple[str, ...] = ()
    users_per_town: int = DEFAULT_USERS_PER_TOWN
    jobs: int = 1
    resume: bool = False
    figures: bool = True


class OverrideError(ValueError):
    pass


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _apply_overrides(data: dict, overrides) -> tuple[dict, dict]:
    """Apply key=value overrides to the scenario dict; unknown keys are errors.

    Keys are dotted paths with integer segments for lists, e.g. uavs.speed=30
    or populations.0.count=50. Keys under policy.* are collected separately
    and configure the deployment policy.
    """
    policy_kwargs: dict = {}
    for item in overrides:
        if "=" not in item:
            raise OverrideError(f"override {item!r} is not of the form key=value")
        key, raw = item.split("=", 1)
        value = _parse_value(raw)
        parts = key.split(".")
        if parts[0] == "policy":
            if len(parts) != 2 or parts[1] not in (
                    "decrement", "window", "kmeans_iters", "k_override"):
                raise OverrideError(f"unknown policy override {key!r}")
            policy_kwargs[parts[1]] = value
            continue
        node = data
        for i, part in enumerate(parts[:-1]):
            if isinstance(node, list):
                try:
                    node = node[int(part)]
                except (ValueError, IndexError):
                    raise OverrideError(f"override {key!r}: bad list index {part!r}")
            elif isinstance(node, dict) and part in node:
                node = node[part]
            else:
                raise OverrideError(f"override {key!r}: unknown field {part!r}")
        leaf = parts[-1]
        if isinstance(node, list):
            try:
                node[int(leaf)] = value
            except (ValueError, IndexError):
                raise OverrideError(f"override {key!r}: bad list index {leaf!r}")
        elif isinstance(node, dict) and leaf in node:
            node[leaf] = value
        else:
            raise OverrideError(f"override {key!r}: unknown field {leaf!r}")
    return data, policy_kwargs


def _resolve_scenario(spec: RunSpec, uav_count: int | None) -> tuple[Scenario, PolicySpec]:
    if spec.scenario.startswith("builtin:"):
        name = spec.scenario.split(":", 1)[1]
        if name != "earthquake":
            raise ValidationError([f"unknown builtin scenario {name!r}"])
        scenario = build_default_earthquake(users_per_town=spec.users_per_town)
    else:
        scenario = load_scenario(spec.scenario)
    data = scenario_to_dict(scenario)
    if uav_count is not None:
        data["uavs"]["count"] = int(uav_count)
    data, policy_kwargs = _apply_overrides(data, spec.overrides)
    scenario = scenario_from_dict(data)
    policy = PolicySpec(kind=spec.policy, **policy_kwargs)
    return scenario, policy


def _cell_dir(out_dir: str, policy: str, uav_count: int, seed: int) -> str:
    return os.path.join(out_dir, policy, str(uav_count), str(seed))


def _run_cell(args) -> tuple[str, int, int, dict, dict]:
    """Worker for one (policy, uav_count, seed) cell; returns its summary."""
    scenario, policy, seed, cell_dir, figures = args
    result = engine.run(scenario, policy, seed=seed)
    metrics.export_csv(result.ledger, cell_dir)
    if figures:
        from .figures import plot_timeseries
        plot_timeseries(result.ledger, os.path.join(cell_dir, "timeseries.png"))
    rates = result.ledger.summary_rates()
    detail = {"event_times": sorted({ev.at for ev in scenario.events}),
              "duration": scenario.sim.duration,
              "towns": result.ledger.towns(),
              "interval_rates": {}}
    for t0 in detail["event_times"]:
        for town in detail["towns"]:
            try:
                rate = result.ledger.success_rate(town, (t0, scenario.sim.duration))
            except ValueError:
                continue
            detail["interval_rates"][f"{town}|{t0}"] = rate
    return policy.kind, scenario.uavs.count, seed, rates, detail


def _load_cell_rates(cell_dir: str) -> dict | None:
    path = os.path.join(cell_dir, "summary.csv")
    if not os.path.exists(path):
        return None
    rates = {}
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline()
        if header.strip() != metrics.SUMMARY_HEADER:
            return None
        for line in fh:
            parts = line.strip().split(",")
            if len(parts) == 5:
                rates[parts[3]] = float(parts[4])
    return rates or None


def _execute_cells(cells: list, jobs: int):
    if jobs > 1 and len(cells) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(_run_cell, cells))
    return [_run_cell(c) for c in cells]


def cmd_run(spec: RunSpec) -> int:
    scenario, policy = _resolve_scenario(spec, spec.uav_count)
    os.makedirs(spec.out_dir, exist_ok=True)
    save_scenario(scenario, os.path.join(spec.out_dir, "scenario.json"))
    uavs = scenario.uavs.count
    cells = []
    for seed in spec.seeds:
        cell_dir = _cell_dir(spec.out_dir, policy.kind, uavs, seed)
        if spec.resume and _load_cell_rates(cell_dir) is not None:
            continue
        cells.append((scenario, policy, seed, cell_dir, spec.figures))
    results = _execute_cells(cells, spec.jobs)
    by_seed = {seed: (rates, detail) for _p, _u, seed, rates, detail in results}
    for seed in spec.seeds:
        if seed not in by_seed:
            rates = _load_cell_rates(_cell_dir(spec.out_dir, policy.kind, uavs, seed))
            print(f"policy={policy.kind} uavs={uavs} seed={seed} "
                  f"overall={rates['ALL']:.6f} (resumed)")
            continue
        rates, detail = by_seed[seed]
        print(f"policy={policy.kind} uavs={uavs} seed={seed} overall={rates['ALL']:.6f}")
        for town in detail["towns"]:
            line = f"  seed={seed} town={town} rate={rates[town]:.6f}"
            for t0 in detail["event_times"]:
                key = f"{town}|{t0}"
                if key in detail["interval_rates"]:
                    line += (f" rate[{t0:g},{detail['duration']:g})="
                             f"{detail['interval_rates'][key]:.6f}")
            print(line)
    return 0


def cmd_sweep(spec: RunSpec, policies: list[str], uav_range: tuple[int, int]) -> int:
    lo, hi = uav_range
    if hi < lo:
        print(f"error: empty UAV range {lo}:{hi}", file=sys.stderr)
        return 2
    os.makedirs(spec.out_dir, exist_ok=True)
    results: dict[tuple[str, int, int], dict] = {}
    cells = []
    for policy_name in policies:
        for uavs in range(lo, hi + 1):
            base = RunSpec(**{**spec.__dict__, "policy": policy_name})
            scenario, policy = _resolve_scenario(base, uavs)
            for seed in spec.seeds:
                cell_dir = _cell_dir(spec.out_dir, policy_name, uavs, seed)
                if spec.resume:
                    rates = _load_cell_rates(cell_dir)
                    if rates is not None:
                        results[(policy_name, uavs, seed)] = rates
                        continue
                cells.append((scenario, policy, seed, cell_dir, spec.figures))
    done = _execute_cells(cells, spec.jobs)
    for policy_name, uavs, seed, rates, _detail in done:
        results[(policy_name, uavs, seed)] = rates
        print(f"policy={policy_name} uavs={uavs} seed={seed} overall={rates['ALL']:.6f}")
    rows = metrics.compare_table(results)
    metrics.export_comparison_csv(rows, os.path.join(spec.out_dir, "comparison.csv"))
    if spec.figures:
        from .figures import plot_comparisons
        plot_comparisons(rows, spec.out_dir)
    return 0


def _parse_seeds(args) -> tuple[int, ...]:
    seeds: list[int] = []
    if args.seed:
        seeds.extend(args.seed)
    if args.seeds:
        seeds.extend(int(s) for s in args.seeds.split(",") if s.strip())
    return tuple(seeds) if seeds else DEFAULT_SEEDS


def _parse_range(text: str) -> tuple[int, int]:
    for sep in (":", ".."):
        if sep in text:
            lo, hi = text.split(sep, 1)
            return int(lo), int(hi.lstrip("=").lstrip("."))
    value = int(text)
    return value, value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="aircomp",
        description="UAV-assisted edge capacity simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--scenario", default="builtin:earthquake",
                       help="scenario file path or builtin:earthquake")
        p.add_argument("--seed", type=int, action="append",
                       help="one seed (repeatable)")
        p.add_argument("--seeds", help="comma-separated seed list")
        p.add_argument("--out", default=os.environ.get("AIRCOMP_OUT", "out"),
                       help="output directory (env AIRCOMP_OUT)")
        p.add_argument("--override", action="append", default=[],
                       metavar="KEY=VALUE", help="scenario/policy override")
        p.add_argument("--users-per-town", type=int, default=DEFAULT_USERS_PER_TOWN,
                       help="population size for the builtin scenario")
        p.add_argument("--jobs", type=int, default=1,
                       help="max concurrent simulations")
        p.add_argument("--resume", action="store_true",
                       help="skip cells whose summary.csv already exists")
        p.add_argument("--no-figures", action="store_true",
                       help="skip PNG rendering")

    p_run = sub.add_parser("run", help="run one policy at one UAV count")
    common(p_run)
    p_run.add_argument("--policy", required=True, choices=POLICY_NAMES)
    p_run.add_argument("--uavs", type=int, default=None,
                       help="UAV count (defaults to the scenario's fleet)")

    p_sweep = sub.add_parser("sweep", help="full factorial policy x UAV-count sweep")
    common(p_sweep)
    p_sweep.add_argument("--policies",
                         default="random,load-balancing,emergency,lsi",
                         help="comma-separated policy list")
    p_sweep.add_argument("--uav-range", default=f"{DEFAULT_UAV_RANGE[0]}:{DEFAULT_UAV_RANGE[1]}",
                         help="inclusive UAV count range, e.g. 4:10")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    spec = RunSpec(
        scenario=args.scenario,
        seeds=_parse_seeds(args),
        out_dir=args.out,
        overrides=tuple(args.override),
        users_per_town=args.users_per_town,
        jobs=max(1, args.jobs),
        resume=args.resume,
        figures=not args.no_figures,
    )
    try:
        if args.command == "run":
            spec.policy = args.policy
            spec.uav_count = args.uavs
            if args.uavs is not None and args.uavs < 0:
                print("error: --uavs must be >= 0", file=sys.stderr)
                return 2
            return cmd_run(spec)
        policies = [p.strip() for p in args.policies.split(",") if p.strip()]
        bad = [p for p in policies if p not in POLICY_NAMES]
        if bad or not policies:
            print(f"error: invalid policies {bad}; valid: {', '.join(POLICY_NAMES)}",
                  file=sys.stderr)
            return 2
        try:
            uav_range = _parse_range(args.uav_range)
        except ValueError:
            print(f"error: bad --uav-range {args.uav_range!r}", file=sys.stderr)
            return 2
        return cmd_sweep(spec, policies, uav_range)
    except (ValidationError, OverrideError, ScenarioError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
