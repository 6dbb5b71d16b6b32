"""Jump-process simulation of the broadcast under sampled-data control.

Within a window the rates are fixed and each non-informed node ``i`` waits
for an exponential clock of hazard ``sum_j omega[i, j] * x_j``.  Hazards are
updated after every event; the controller only acts on window boundaries.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .controller import ControllerConfig, RateAllocation, make_predictor, solve_rhc
from .graph import Topology, has_spanning_tree, spanning_roots, spanning_tree_edges, uniform_rates

FRACTIONS = (0.2, 0.4, 0.6, 0.8, 1.0)


class SimulationRunaway(RuntimeError):
    pass


def step_window(x, omega: np.ndarray, dt: float, rng: np.random.Generator, t0: float = 0.0):
    """Simulate ``dt`` time units from state ``x``; returns ``(new_state, [(time, node), ...])``."""
    x = np.array(x, dtype=np.int8, copy=True)
    omega = np.asarray(omega, dtype=float)
    hazard = omega @ x.astype(float)
    hazard[x == 1] = 0.0
    events = []
    elapsed = 0.0
    while True:
        total = hazard.sum()
        if total <= 0.0:
            break
        elapsed += rng.exponential(1.0 / total)
        if elapsed >= dt:
            break
        k = int(np.searchsorted(np.cumsum(hazard), rng.random() * total, side="right"))
        k = min(k, x.size - 1)
        while hazard[k] == 0.0:  # guards the cumsum edge on ties
            k -= 1
        x[k] = 1
        events.append((t0 + elapsed, k))
        hazard += omega[:, k]
        hazard[x == 1] = 0.0
    return x, events


@dataclass
class WindowLog:
    time: float
    allocation: RateAllocation


@dataclass
class TrialRecord:
    seed: int
    root: int
    n: int
    events: list[tuple[float, int]] = field(default_factory=list)
    windows: list[WindowLog] = field(default_factory=list)

    @property
    def completion(self) -> float:
        return self.completion_times()[1.0]

    def completion_times(self, fractions=FRACTIONS) -> dict[float, float]:
        """First time at least ``ceil(f * n)`` nodes are informed, per fraction."""
        times = [0.0] + [tm for tm, _ in self.events]
        out = {}
        for f in fractions:
            need = max(1, math.ceil(f * self.n - 1e-9))
            out[f] = times[need - 1] if need - 1 < len(times) else math.inf
        return out

    def informed_at(self, times) -> np.ndarray:
        """Informed count at each query time (events at exactly ``t`` included)."""
        ev = np.array([tm for tm, _ in self.events])
        return 1 + np.searchsorted(ev, np.asarray(times, dtype=float), side="right")

    @property
    def all_feasible(self) -> bool:
        return all(w.allocation.feasible for w in self.windows)


def _streams(seed: int):
    root_ss, jump_ss = np.random.SeedSequence(seed).spawn(2)
    return np.random.default_rng(root_ss), np.random.default_rng(jump_ss)


def pick_root(t: Topology, seed: int) -> int:
    """Per-trial random root among nodes that reach the whole graph."""
    roots = spanning_roots(t)
    if not roots:
        raise ValueError("no node roots a directed spanning tree")
    return int(roots[_streams(seed)[0].integers(len(roots))])


def run_trial(
    t: Topology,
    cfg: ControllerConfig,
    root: int,
    seed: int,
    horizon: float | None = None,
    predictor=None,
) -> TrialRecord:
    if not has_spanning_tree(t, root):
        raise ValueError(f"node {root} does not root a spanning tree")
    horizon = 100.0 * t.n / cfg.mu if horizon is None else horizon
    rng = _streams(seed)[1]
    open_loop = cfg.predictor == "open-loop"
    uniform = uniform_rates(t, cfg.mu, cfg.orientation)
    if not open_loop:
        predictor = predictor or make_predictor(cfg)
    tree = spanning_tree_edges(t, root) if cfg.baseline_floor else None

    x = np.zeros(t.n, dtype=np.int8)
    x[root] = 1
    rec = TrialRecord(seed, root, t.n)
    now = 0.0
    incumbent = None
    k = 0
    while x.sum() < t.n:
        if now > horizon:
            raise SimulationRunaway(
                f"trial seed={seed} passed horizon {horizon} with {int(x.sum())}/{t.n} informed"
            )
        if open_loop:
            alloc = RateAllocation(uniform, mode="open-loop")
        else:
            alloc = solve_rhc(x, t, cfg, incumbent, predictor, tree)
            incumbent = alloc
        rec.windows.append(WindowLog(now, alloc))
        x, ev = step_window(x, alloc.omega, cfg.dt, rng, now)
        rec.events.extend(ev)
        k += 1
        now = k * cfg.dt
    return rec


@dataclass
class ExperimentResult:
    model: str
    records: list[TrialRecord]

    def completion_stats(self, fractions=FRACTIONS) -> dict[float, tuple[float, float, float]]:
        per = [r.completion_times(fractions) for r in self.records]
        out = {}
        for f in fractions:
            v = np.array([c[f] for c in per])
            out[f] = (float(v.mean()), float(v.min()), float(v.max()))
        return out

    @property
    def max_completion(self) -> float:
        return max(r.completion for r in self.records)

    def bins(self, width: float, count: int = 6) -> list[tuple[float, float, int, int]]:
        """(time, mean, min, max) informed counts at the end of each bin."""
        times = width * np.arange(1, count + 1)
        counts = np.array([r.informed_at(times) for r in self.records])
        return [
            (float(tm), float(c.mean()), int(c.min()), int(c.max()))
            for tm, c in zip(times, counts.T)
        ]


def informed_difference(a: ExperimentResult, b: ExperimentResult, times) -> np.ndarray:
    """Mean over paired trials of (informed in ``a``) - (informed in ``b``)."""
    if [r.seed for r in a.records] != [r.seed for r in b.records]:
        raise ValueError("experiments are not paired on the same seeds")
    da = np.array([r.informed_at(times) for r in a.records])
    db = np.array([r.informed_at(times) for r in b.records])
    return (da - db).mean(axis=0)


def run_experiment(
    t: Topology,
    cfg: ControllerConfig,
    trials: int,
    seeds=None,
    base_seed: int = 0,
    root: int | None = None,
    horizon: float | None = None,
    model: str | None = None,
) -> ExperimentResult:
    """Run ``trials`` trials on one fixed graph, trial ``k`` seeded by ``seeds[k]``.

    The root is fixed when given, otherwise drawn per trial from the seed, so
    two models run with the same seeds start from the same node.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    seeds = [base_seed + k for k in range(trials)] if seeds is None else list(seeds)[:trials]
    if len(seeds) < trials:
        raise ValueError(f"{trials} trials but only {len(seeds)} seeds")
    predictor = None if cfg.predictor == "open-loop" else make_predictor(cfg)
    records = []
    for s in seeds:
        r0 = pick_root(t, s) if root is None else root
        records.append(run_trial(t, cfg, r0, s, horizon, predictor))
    return ExperimentResult(model or cfg.predictor, records)
