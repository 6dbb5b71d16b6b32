"""Command-line front end: ``run`` experiments, print the ``bound``, ``gen`` graphs."""

from __future__ import annotations

import argparse
import dataclasses
import logging
import os
import sys

import numpy as np

from . import __version__
from .broadcast_time import BroadcastBound
from .config import ConfigError, ExperimentConfig, parse_assignments, parse_config, serialize_config
from .graph import (
    Topology,
    TopologyError,
    format_edge_list,
    generate_connected_erdos_renyi,
    generate_erdos_renyi,
    has_spanning_tree,
    parse_edge_list,
)
from .simulator import FRACTIONS, ExperimentResult, SimulationRunaway, informed_difference, pick_root, run_experiment

log = logging.getLogger("broadcast_rhc")

EXIT_CONFIG = 2
EXIT_RUNAWAY = 3
EXIT_IO = 4


def load_topology(cfg: ExperimentConfig) -> tuple[Topology, int | None]:
    """The experiment graph and the graph seed actually used (``None`` for a file)."""
    if cfg.graph is not None:
        with open(cfg.graph) as fh:
            t, _ = parse_edge_list(fh.read())
        cfg.check_size(t.n)
        if cfg.root is not None and not 0 <= cfg.root < t.n:
            raise ConfigError("root", f"node {cfg.root} out of range for n={t.n}")
        return t, None
    t, used = generate_connected_erdos_renyi(cfg.n, cfg.p, cfg.graph_seed)
    return t, used


def _num(v: float) -> str:
    return repr(float(v))


def write_summary(results: list[ExperimentResult], fh) -> None:
    fh.write("model,fraction,mean_time,min_time,max_time\n")
    for res in results:
        for f, (mean, lo, hi) in res.completion_stats(FRACTIONS).items():
            fh.write(f"{res.model},{f!r},{_num(mean)},{_num(lo)},{_num(hi)}\n")


def write_bins(results: list[ExperimentResult], width: float, fh) -> None:
    fh.write("model,time_bin,mean_informed,min,max\n")
    for res in results:
        for tm, mean, lo, hi in res.bins(width):
            fh.write(f"{res.model},{_num(tm)},{_num(mean)},{lo},{hi}\n")


def write_diff(results: list[ExperimentResult], width: float, fh) -> None:
    """Mean paired gain in informed nodes of each controlled model over open loop."""
    base = next((r for r in results if r.model == "open-loop"), None)
    fh.write("model,time_bin,mean_informed_gain\n")
    if base is None:
        return
    times = width * np.arange(1, 7)
    for res in results:
        if res is base:
            continue
        for tm, d in zip(times, informed_difference(res, base, times)):
            fh.write(f"{res.model},{_num(tm)},{_num(d)}\n")


def write_events(rec, fh) -> None:
    fh.write("time,node\n")
    fh.write(f"0.0,{rec.root}\n")
    for tm, node in rec.events:
        fh.write(f"{_num(tm)},{node}\n")


def write_decisions(rec, t: Topology, fh) -> None:
    fh.write("window_time,mode,feasible,cost,max_residual,fallback_nodes,rates\n")
    for w in rec.windows:
        a = w.allocation
        res = "" if a.residuals is None else _num(np.max(a.residuals))
        feas = "" if a.feasible is None else str(int(a.feasible))
        rates = ";".join(f"{j}>{i}:{_num(a.omega[i, j])}" for j, i in t.edges)
        fallback = ";".join(str(k) for k in a.fallback_groups)
        fh.write(f"{_num(w.time)},{a.mode},{feas},{_num(a.cost)},{res},{fallback},{rates}\n")


def write_manifest(cfg: ExperimentConfig, graph_seed_used, roots: list[int], fh) -> None:
    # the config echo expands the seed ladder so the file alone pins every draw
    pinned = dataclasses.replace(cfg, seeds=tuple(cfg.trial_seeds()))
    fh.write(f"# broadcast_rhc {__version__}\n")
    if graph_seed_used is not None:
        fh.write(f"# graph drawn with seed {graph_seed_used}\n")
    fh.write(f"# trial roots {','.join(str(r) for r in roots)}\n")
    fh.write(serialize_config(pinned))


def run(cfg: ExperimentConfig) -> int:
    t, used = load_topology(cfg)
    if cfg.root is not None and not has_spanning_tree(t, cfg.root):
        raise ConfigError("root", f"node {cfg.root} does not reach every node")
    seeds = cfg.trial_seeds()
    results = []
    for model in cfg.models:
        log.info("running %s: %d trials on n=%d", model, cfg.trials, t.n)
        res = run_experiment(t, cfg.controller(model), cfg.trials, seeds=seeds, root=cfg.root, model=model)
        results.append(res)
    width = cfg.bin_width
    if width is None:
        width = max(r.max_completion for r in results) / 6.0
    os.makedirs(cfg.out, exist_ok=True)
    with open(os.path.join(cfg.out, "summary.csv"), "w") as fh:
        write_summary(results, fh)
    with open(os.path.join(cfg.out, "bins.csv"), "w") as fh:
        write_bins(results, width, fh)
    with open(os.path.join(cfg.out, "diff.csv"), "w") as fh:
        write_diff(results, width, fh)
    for res in results:
        sub = os.path.join(cfg.out, res.model)
        os.makedirs(sub, exist_ok=True)
        for k, rec in enumerate(res.records):
            with open(os.path.join(sub, f"events-{k}.csv"), "w") as fh:
                write_events(rec, fh)
            with open(os.path.join(sub, f"decisions-{k}.csv"), "w") as fh:
                write_decisions(rec, t, fh)
    roots = [cfg.root if cfg.root is not None else pick_root(t, s) for s in seeds]
    with open(os.path.join(cfg.out, "manifest.txt"), "w") as fh:
        write_manifest(cfg, used, roots, fh)
    return 0


def _assignments(tokens: list[str]) -> dict[str, str]:
    return parse_assignments(" ".join(tokens))


def _cmd_run(args) -> int:
    with open(args.config) as fh:
        text = fh.read()
    overrides = _assignments(args.set)
    if args.out is not None:
        overrides["out"] = args.out
    cfg = parse_config(text, overrides)
    code = run(cfg)
    print(f"wrote results to {cfg.out}")
    return code


def _cmd_bound(args) -> int:
    kv = _assignments(args.params)
    unknown = set(kv) - {"n", "s0", "r", "dt"}
    if unknown:
        raise ConfigError(sorted(unknown)[0], "unknown key")
    try:
        n = int(kv.get("n", "15"))
        s0 = int(kv.get("s0", "1"))
        r = float(kv.get("r", "0.22"))
        dt = float(kv.get("dt", "1"))
    except ValueError as exc:
        raise ConfigError("bound", str(exc)) from None
    b = BroadcastBound.compute(n, s0, r, dt)
    print(f"tau1={b.tau1!r}")
    print(f"bound={b.bound!r}")
    return 0


def _cmd_gen(args) -> int:
    kv = _assignments(args.params)
    unknown = set(kv) - {"n", "p", "seed", "connected"}
    if unknown:
        raise ConfigError(sorted(unknown)[0], "unknown key")
    try:
        n, p, seed = int(kv.get("n", "15")), float(kv.get("p", "0.3")), int(kv.get("seed", "0"))
    except ValueError as exc:
        raise ConfigError("gen", str(exc)) from None
    if kv.get("connected", "1") not in ("0", "1"):
        raise ConfigError("connected", "expected 0 or 1")
    if kv.get("connected", "1") == "1":
        t, used = generate_connected_erdos_renyi(n, p, seed)
    else:
        t, used = generate_erdos_renyi(n, p, seed), seed
    text = f"# G({n}, {p}) seed {used}\n" + format_edge_list(t)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="broadcast-rhc", description=__doc__)
    ap.add_argument("--version", action="version", version=__version__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run an experiment from a key=value config file")
    p.add_argument("config")
    p.add_argument("--out", help="output directory (overrides the config)")
    p.add_argument("set", nargs="*", metavar="key=value", help="config overrides")
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("bound", help="print tau1 and the expected broadcast-time bound")
    p.add_argument("params", nargs="*", metavar="key=value", help="n, s0, r, dt")
    p.set_defaults(func=_cmd_bound)

    p = sub.add_parser("gen", help="emit a directed Erdos-Renyi edge list")
    p.add_argument("params", nargs="*", metavar="key=value", help="n, p, seed, connected")
    p.add_argument("-o", "--out")
    p.set_defaults(func=_cmd_gen)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ConfigError, TopologyError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SimulationRunaway as exc:
        print(f"error: simulation runaway: {exc}", file=sys.stderr)
        return EXIT_RUNAWAY
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
