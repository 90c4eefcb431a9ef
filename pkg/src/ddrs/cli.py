"""Command-line entry point: ``ddrs <experiment> --scenario NAME``.

Exit codes: 0 success, 2 invalid configuration, 3 runtime failure,
4 unreadable scenario file.  On failure every file written by the run is
removed again, so an output directory never holds a partial result.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor, as_completed
from importlib import resources
from pathlib import Path

import numpy as np

from . import aimd, binsim, rewardopt
from .exceptions import ConfigError, ScenarioParseError
from .scenario import (PARAMS, Scenario, bundled_scenarios, dump, load_curves,
                       load_scenario)
from .simulation import run_ddrs, run_exact

logger = logging.getLogger("ddrs")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME, EXIT_PARSE = 0, 2, 3, 4


def load_schema() -> dict:
    text = (resources.files("ddrs") / "csv_schema.json").read_text(encoding="utf-8")
    return json.loads(text)


def columns(table: str, n: int) -> list:
    """Expand ``{i}`` placeholders of a schema entry over ``1..n``."""
    out = []
    for col in load_schema()[table]:
        if "{i}" in col:
            out.extend(col.format(i=i) for i in range(1, n + 1))
        else:
            out.append(col)
    return out


def _plain(x):
    if isinstance(x, np.generic):
        return x.item()
    if isinstance(x, np.ndarray):
        return [_plain(v) for v in x.tolist()]
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    if isinstance(x, dict):
        return {str(k): _plain(v) for k, v in x.items()}
    if dataclasses.is_dataclass(x) and not isinstance(x, type):
        return _plain(dataclasses.asdict(x))
    return x


def _slug(label: str) -> str:
    return "".join(ch if ch.isalnum() else "_" for ch in label.replace("=", "")).strip("_").replace("__", "_")


# --- experiments --------------------------------------------------------------
# Each returns {"tables": {file: (header, rows)}, "json": {file: obj}, "summary": dict, "line": str}


def _run_bins(cfg: binsim.WeekConfig, seed):
    reports = {}
    for name in cfg.strategies():
        # same seed per strategy: identical arrival streams
        rep = binsim.simulate_week(cfg, name, np.random.default_rng(seed))
        reports[rep.strategy] = rep
    tables, summary = {}, {"strategies": {}}
    n = cfg.bins.count
    for label, rep in reports.items():
        rows = ([m, *map(int, rep.levels[m]), int(rep.cumulative_overflow[m])]
                for m in range(rep.levels.shape[0]))
        tables[f"levels_{_slug(label)}.csv"] = (columns("bins_levels", n), rows)
        summary["strategies"][label] = rep.summary()
    central = next((r for k, r in reports.items() if k == "centralised"), None)
    if central is not None:
        summary["rms_to_centralised"] = {k: binsim.rms_distance(r, central)
                                         for k, r in reports.items() if k != "centralised"}
    line = ", ".join(f"{k} overflow {100 * r.overflow_fraction:.2f}%" for k, r in reports.items())
    return {"tables": tables, "json": {"comparison.json": summary}, "summary": summary, "line": line}


def _run_solve(cfg, seed):
    alloc = rewardopt.ConsensusAllocator(deposit=cfg.deposit, tol=cfg.tol).fit(cfg.curves)
    summary = {"deposit": cfg.deposit, "rewards": alloc.rewards_, "throughput": alloc.throughput_,
               "ratios": alloc.ratios_, "layers": [c.name for c in cfg.curves]}
    line = (f"R=({', '.join(f'{r:.4f}' for r in alloc.rewards_)}) "
            f"throughput {alloc.throughput_:.6f}")
    return {"tables": {}, "json": {"solution.json": summary}, "summary": summary, "line": line}


def _run_sweep(cfg, seed):
    surf = rewardopt.sweep_surface(cfg.curves, cfg.deposit, cfg.step)
    (r1, r2, r3), best = surf.best
    summary = {"deposit": cfg.deposit, "step": cfg.step, "cells": int(surf.values.size),
               "argmax": {"R1": r1, "R2": r2, "R3": r3, "throughput": best},
               "min_throughput": float(surf.values.min())}
    line = f"argmax R=({r1:g}, {r2:g}, {r3:g}) throughput {best:.6f} over {surf.values.size} cells"
    return {"tables": {"surface.csv": (columns("surface", 3), surf.rows())},
            "json": {"argmax.json": summary}, "summary": summary, "line": line}


def _run_aimd(cfg, seed):
    curves, conf = cfg.curves, cfg.aimd
    res = aimd.run(curves, conf, seed)
    L = len(curves)
    traj = ([int(s), *map(float, r), int(k), *map(float, a)]
            for s, r, k, a in zip(res.trace_step, res.trace_rewards, res.trace_events, res.trace_averages))
    every = conf.record_every
    keep = [i for i in range(len(res.event_step)) if (i + 1) % every == 0 or i == len(res.event_step) - 1]
    cons = ([i + 1, int(res.event_step[i]), *map(float, res.event_averages[i]),
             *map(float, res.event_ratios[i]), aimd.relative_spread(res.event_ratios[i])] for i in keep)
    opt = rewardopt.solve_consensus(curves, conf.deposit)
    spread = aimd.relative_spread(res.event_ratios[-1]) if res.events else float("nan")
    summary = {"status": res.status, "steps": res.steps, "events": res.events, "gamma": res.gamma,
               "averages": res.averages, "final_rewards": res.rewards, "ratio_spread": spread,
               "optimum": opt, "max_gap_to_optimum": float(np.max(np.abs(res.averages - opt)))
               if res.events else None, "sum_time_average": res.sum_time_average}
    line = (f"{res.status} after {res.steps} steps ({res.events} events), "
            f"Rbar=({', '.join(f'{r:.3f}' for r in res.averages)}), ratio spread {100 * spread:.2f}%")
    return {"tables": {"trajectory.csv": (columns("aimd_trajectory", L), traj),
                       "consensus.csv": (columns("aimd_consensus", L), cons)},
            "json": {"summary.json": summary}, "summary": summary, "line": line}


def _run_ddrs(cfg, seed):
    L = len(cfg.curves)
    if cfg.mode == "exact":
        res = run_exact(cfg)
        summary = {"final_deposit": float(res.deposits[-1]), "final_rate": float(res.rates[-1]),
                   "target_rate": res.target_rate, "unstable": res.unstable}
        line = f"exact loop: deposit {res.deposits[-1]:.3f}, rate {res.rates[-1]:.4f}"
        return {"tables": {"closed_loop.csv": (columns("closed_loop", L), res.rows())},
                "json": {"summary.json": summary}, "summary": summary, "line": line}
    res = run_ddrs(cfg, seed)
    rows = ([p.period, p.deposit, *p.rewards, p.rate, *p.waste_fractions] for p in res.periods)
    summary = res.summary()
    summary["target_rate"] = cfg.pi.target_rate
    summary["advisories"] = [a for p in res.periods for a in p.advisories]
    last = res.periods[-1]
    line = (f"{len(res.periods)} periods, final deposit {last.deposit:.3f}, rate {last.rate:.4f} "
            f"(target {cfg.pi.target_rate:g}), {last.created_total} cups")
    return {"tables": {"periods.csv": (columns("ddrs_periods", L), rows)},
            "json": {"summary.json": summary}, "summary": summary, "line": line}


RUNNERS = {"bins": _run_bins, "solve": _run_solve, "sweep": _run_sweep,
           "aimd": _run_aimd, "ddrs": _run_ddrs}


def execute(scenario: Scenario, seed=None) -> dict:
    """Run a scenario in memory; rows are materialised so the result pickles."""
    seed = scenario.seed if seed is None else seed
    out = RUNNERS[scenario.kind](scenario.params, seed)
    out["tables"] = {k: (h, [list(r) for r in rows]) for k, (h, rows) in out["tables"].items()}
    out["summary"] = _plain(out["summary"])
    out["json"] = {k: _plain(v) for k, v in out["json"].items()}
    return out


def _execute_kind(kind, params, name, seed):
    # process-pool worker: rebuild the scenario from plain data
    from .scenario import from_dict
    return seed, execute(Scenario(name, kind, from_dict(PARAMS[kind], params, "params"), seed), seed)


# --- output handling ----------------------------------------------------------


class OutputWriter:
    """Writes files below one directory and can remove everything it wrote."""

    def __init__(self, root: Path):
        self.root = Path(root)
        self.written: list[Path] = []
        self.made_dirs: list[Path] = []

    def _path(self, name) -> Path:
        path = (self.root / name).resolve()
        if self.root.resolve() not in path.parents:
            raise ConfigError(f"refusing to write outside {self.root}", "output_dir")
        d = path.parent
        missing = []
        while not d.exists():
            missing.append(d)
            d = d.parent
        d = path.parent
        d.mkdir(parents=True, exist_ok=True)
        self.made_dirs.extend(reversed(missing))
        return path

    def table(self, name, header, rows):
        path = self._path(name)
        self.written.append(path)
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for row in rows:
                w.writerow([_plain(v) for v in row])
        return path

    def json(self, name, obj):
        path = self._path(name)
        self.written.append(path)
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(_plain(obj), fh, indent=2, sort_keys=True, allow_nan=True)
            fh.write("\n")
        return path

    def rollback(self):
        for path in self.written:
            path.unlink(missing_ok=True)
        for d in sorted(self.made_dirs, key=lambda p: len(p.parts), reverse=True):
            if d.exists() and not any(d.iterdir()):
                d.rmdir()


def _write_run(writer: OutputWriter, result: dict, prefix: str = ""):
    for name, (header, rows) in result["tables"].items():
        writer.table(prefix + name, header, rows)
    for name, obj in result["json"].items():
        writer.json(prefix + name, obj)


# --- argument handling ----------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ddrs", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, replicable=True):
        p.add_argument("--scenario", help="scenario file or bundled scenario name")
        p.add_argument("--seed", type=int, help="override the scenario seed")
        p.add_argument("--out", help="output directory (overrides the scenario)")
        if replicable:
            p.add_argument("--replications", type=int, default=1,
                           help="run seeds seed..seed+N-1 and aggregate")
            p.add_argument("--jobs", type=int, default=None, help="worker processes for replications")
        return p

    p = common(sub.add_parser("bins", help="one week of bin levels per strategy"))
    p.add_argument("--strategy", action="append",
                   help="unsupervised, centralised or decentralised(a); repeatable")
    p.add_argument("--exponent", type=float, help="default exponent a for decentralised")

    for name, text in (("solve", "optimal reward split for one deposit"),
                       ("sweep", "throughput over the reward simplex")):
        p = common(sub.add_parser(name, help=text), replicable=False)
        p.add_argument("--deposit", type=float)
        p.add_argument("--curves", help="YAML file with a curves list")
        if name == "sweep":
            p.add_argument("--step", type=float)

    p = common(sub.add_parser("aimd", help="unsynchronised AIMD reward split"))
    p.add_argument("--deposit", type=float)
    p.add_argument("--alpha", type=float)
    p.add_argument("--beta", type=float)
    g = p.add_mutually_exclusive_group()
    g.add_argument("--gamma", type=float)
    g.add_argument("--auto-gamma", action="store_true", help="derive gamma from the curves")
    p.add_argument("--iters", type=int, help="maximum iterations")
    p.add_argument("--curves", help="YAML file with a curves list")

    p = common(sub.add_parser("ddrs", help="closed-loop cup simulation"))
    p.add_argument("--periods", type=int)
    p.add_argument("--mode", choices=("fast", "aimd", "exact"))
    p.add_argument("--target-rate", type=float)
    p.add_argument("--curves", help="YAML file with a curves list")

    p = sub.add_parser("validate", help="parse and validate a scenario, print it with defaults")
    p.add_argument("--scenario", required=True)
    sub.add_parser("list", help="list bundled scenarios")
    return parser


def _apply_overrides(kind, args) -> dict:
    """Scenario-level overrides from the command line, as plain data."""
    o = {}
    get = lambda k: getattr(args, k, None)  # noqa: E731
    if get("curves"):
        o["curves"] = [c.to_dict() for c in load_curves(args.curves)]
    if kind in ("solve", "sweep") and get("deposit") is not None:
        o["deposit"] = args.deposit
    if kind == "sweep" and get("step") is not None:
        o["step"] = args.step
    if kind == "aimd":
        block = {}
        for flag, key in (("deposit", "deposit"), ("alpha", "alpha"), ("beta", "beta"),
                          ("gamma", "gamma"), ("iters", "max_iter")):
            if get(flag) is not None:
                block[key] = get(flag)
        if get("auto_gamma"):
            block["gamma"] = None
        if block:
            o["aimd"] = block
    if kind == "ddrs":
        for flag, key in (("periods", "horizon_periods"), ("mode", "mode"), ("target_rate", "target_rate")):
            if get(flag) is not None:
                o[key] = get(flag)
    if kind == "bins":
        if get("strategy"):
            o["strategy"] = args.strategy if len(args.strategy) > 1 else args.strategy[0]
        if get("exponent") is not None:
            o["exponent_a"] = args.exponent
    return o


def _merge(base: dict, over: dict) -> dict:
    out = dict(base)
    for k, v in over.items():
        out[k] = _merge(out[k], v) if isinstance(v, dict) and isinstance(out.get(k), dict) else v
    return out


def resolve_scenario(kind, args) -> Scenario:
    from .scenario import scenario_from_dict
    if args.scenario:
        sc = load_scenario(args.scenario)
        if sc.kind != kind:
            raise ConfigError(f"scenario is of kind {sc.kind!r}, not {kind!r}", "kind")
    else:
        sc = scenario_from_dict({"name": kind, "kind": kind})
    data = sc.to_dict()
    data["params"] = _merge(data["params"], _apply_overrides(kind, args))
    if args.seed is not None:
        data["seed"] = args.seed
    if args.out:
        data["output_dir"] = args.out
    return scenario_from_dict(data)


def _aggregate(kind, results: dict) -> dict:
    """Combine per-seed summaries; ``results`` may arrive in any order."""
    seeds = sorted(results)
    per = {str(s): results[s]["summary"] for s in seeds}
    agg = {"seeds": seeds, "per_seed": per}
    if kind == "bins":
        labels = per[str(seeds[0])]["strategies"].keys()
        agg["mean_overflow_fraction"] = {
            k: float(np.mean([per[str(s)]["strategies"][k]["overflow_fraction"] for s in seeds]))
            for k in labels}
    elif kind == "aimd":
        agg["mean_averages"] = np.mean([per[str(s)]["averages"] for s in seeds], axis=0).tolist()
        agg["converged"] = sum(per[str(s)]["status"] == "converged" for s in seeds)
    elif kind == "ddrs":
        agg["mean_final_rate"] = float(np.mean([per[str(s)]["final_rate"] for s in seeds]))
    return agg


def run_command(kind, args) -> int:
    sc = resolve_scenario(kind, args)
    out_dir = Path(sc.output_dir or os.path.join("results", sc.name))
    n = getattr(args, "replications", 1)
    if n is None or n < 1:
        raise ConfigError("must be >= 1", "replications")
    base = sc.seed if sc.seed is not None else 0

    if n == 1:
        results = {base: execute(sc, sc.seed)}
    else:
        params = dump(sc.params)
        results = {}
        jobs = args.jobs or min(n, os.cpu_count() or 1)
        if jobs <= 1:
            for s in range(base, base + n):
                results[s] = execute(sc, s)
        else:
            with ProcessPoolExecutor(max_workers=jobs) as pool:
                futs = [pool.submit(_execute_kind, kind, params, sc.name, s) for s in range(base, base + n)]
                for fut in as_completed(futs):
                    s, res = fut.result()
                    results[s] = res

    writer = OutputWriter(out_dir)
    try:
        if n == 1:
            _write_run(writer, results[base])
        else:
            for s in sorted(results):
                _write_run(writer, results[s], prefix=f"seed_{s}/")
            writer.json("aggregate.json", _aggregate(kind, results))
        writer.json("scenario.json", sc.to_dict())
    except BaseException:
        writer.rollback()
        raise
    if n == 1:
        print(f"{kind} {sc.name} seed={sc.seed}: {results[base]['line']} -> {out_dir}")
    else:
        print(f"{kind} {sc.name}: {n} replications (seeds {base}..{base + n - 1}) -> {out_dir}")
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "list":
            for name in bundled_scenarios():
                print(name)
            return EXIT_OK
        if args.command == "validate":
            sc = load_scenario(args.scenario)
            json.dump(_plain(sc.to_dict()), sys.stdout, indent=2)
            print()
            return EXIT_OK
        return run_command(args.command, args)
    except ScenarioParseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except ConfigError as exc:
        print(f"invalid configuration: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001
        logger.debug("run failed", exc_info=True)
        print(f"run failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
