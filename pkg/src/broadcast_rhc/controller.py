"""Receding-horizon allocation of per-node transmission budgets.

At each sampling instant every node splits its budget ``mu`` over its
in-edges (or out-edges, see ``ControllerConfig.orientation``) on a grid of
resolution ``K``.  The controller picks the cheapest allocation, under
``sum(omega**2)``, whose one-window prediction keeps every node on the
exponential envelope::

    1 - E[X_i(t + dt) | X(t)] <= (1 - X_i(t)) * exp(-r * dt)

Two search strategies share the same constraint:

* ``joint``: exhaustive search over the product of every node's options in
  ascending total cost.  Used whenever the product is small.  It is exact.
* ``decomposed``: each node solves its own small problem against a reference
  allocation for everyone else; nodes with no feasible option fall back to
  the auxiliary (maximum-pressure) split.

Either way, the allocation that is returned is re-checked with the joint
predictor, and that check alone sets ``feasible`` and the logged residuals.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from . import exact_ctmc
from . import moment_closure as closure
from .graph import Topology, uniform_rates

PREDICTORS = ("exact-ctmc", "moment-closure", "open-loop")
ORIENTATIONS = ("in", "out")


class ControllerError(ValueError):
    pass


@dataclass(frozen=True)
class ControllerConfig:
    dt: float = 1.0
    r: float = 0.22
    mu: float = 2.0
    grid: int = 4
    predictor: str = "exact-ctmc"
    orientation: str = "in"
    # joint search runs when (#combinations x cost per prediction) fits this
    joint_budget: int = 1 << 17
    sweeps: int = 1
    # "global": any infeasible node sends the whole window to the auxiliary
    # split; "node": only the infeasible nodes fall back
    fallback: str = "global"
    # closure bound standing in for the predicted probability: "upper" is the
    # optimistic surrogate, "lower" the conservative one (a pass under
    # "lower" implies a pass under the exact predictor)
    closure_bound: str = "upper"
    baseline_floor: bool = False
    max_exact_nodes: int = exact_ctmc.MAX_EXACT_NODES

    def __post_init__(self):
        if not self.dt > 0:
            raise ControllerError(f"dt must be positive, got {self.dt}")
        if not self.r > 0:
            raise ControllerError(f"r must be positive, got {self.r}")
        if not self.mu > 0:
            raise ControllerError(f"mu must be positive, got {self.mu}")
        if int(self.grid) != self.grid or self.grid < 1:
            raise ControllerError(f"grid resolution must be an integer >= 1, got {self.grid}")
        if self.predictor not in PREDICTORS:
            raise ControllerError(f"unknown predictor {self.predictor!r}")
        if self.orientation not in ORIENTATIONS:
            raise ControllerError(f"unknown budget orientation {self.orientation!r}")
        if self.fallback not in ("global", "node"):
            raise ControllerError(f"unknown fallback policy {self.fallback!r}")
        if self.closure_bound not in ("lower", "upper"):
            raise ControllerError(f"unknown closure bound {self.closure_bound!r}")
        if self.sweeps < 1:
            raise ControllerError("sweeps must be >= 1")

    @property
    def decay(self) -> float:
        return math.exp(-self.r * self.dt)

    @property
    def floor(self) -> float:
        return self.mu / (10 * self.grid)


@dataclass(frozen=True)
class Group:
    """One budget simplex: ``owner`` spreads ``mu`` over ``edges``."""

    owner: int
    edges: tuple[tuple[int, int], ...]

    @property
    def receivers(self) -> tuple[int, ...]:
        return tuple(i for _, i in self.edges)


@dataclass
class RateAllocation:
    """Rates chosen for one window, plus how they were chosen.

    ``choices`` maps each group owner to its grid composition, or ``None``
    when the auxiliary split was used.  ``predicted`` holds the
    constraint-side probability under ``omega`` (exact marginal, or the
    closure bound selected by ``ControllerConfig.closure_bound``).
    """

    omega: np.ndarray
    choices: dict[int, tuple[int, ...] | None] = field(default_factory=dict)
    feasible: bool | None = None
    predicted: np.ndarray | None = None
    residuals: np.ndarray | None = None
    mode: str = ""
    fallback_groups: tuple[int, ...] = ()

    @property
    def cost(self) -> float:
        return cost(self.omega)


def groups_for(t: Topology, orientation: str = "in") -> list[Group]:
    if orientation == "in":
        return [Group(i, tuple((j, i) for j in t.in_nbrs[i])) for i in range(t.n)]
    if orientation == "out":
        return [Group(j, tuple((j, i) for i in t.out_nbrs[j])) for j in range(t.n)]
    raise ControllerError(f"unknown budget orientation {orientation!r}")


def cost(a) -> float:
    """Quadratic actuation cost: sum of squared rates over all edges."""
    omega = a.omega if isinstance(a, RateAllocation) else np.asarray(a)
    return float(np.sum(omega**2))


def node_cost(omega: np.ndarray, t: Topology, i: int) -> float:
    return float(sum(omega[i, j] ** 2 for j in t.in_nbrs[i]))


@lru_cache(maxsize=256)
def compositions(total: int, parts: int) -> np.ndarray:
    """All ways to write ``total`` as an ordered sum of ``parts`` nonnegative ints.

    Rows come in lexicographic order; there are C(total + parts - 1, parts - 1).
    """
    if parts == 0:
        return np.zeros((1 if total == 0 else 0, 0), dtype=np.int64)
    rows = []
    for bars in itertools.combinations(range(total + parts - 1), parts - 1):
        edges = (-1,) + bars + (total + parts - 1,)
        rows.append([edges[k + 1] - edges[k] - 1 for k in range(parts)])
    out = np.array(rows, dtype=np.int64)
    return out[np.lexsort(out.T[::-1])]


def admissible_allocations(i: int, t: Topology, cfg: ControllerConfig) -> list[tuple[float, ...]]:
    """Grid points of node ``i``'s budget simplex over its in-edges."""
    d = len(t.in_nbrs[i])
    if d == 0:
        return []
    return [tuple(cfg.mu * k / cfg.grid) for k in compositions(cfg.grid, d)]


def constraint_residuals(x, predicted, cfg: ControllerConfig) -> np.ndarray:
    """``(1 - p_i) - (1 - X_i) exp(-r dt)``; nonpositive entries satisfy the constraint.

    ``predicted`` is either per-node probabilities or a ``(lo, hi)`` pair of
    bounds, in which case the lower bound is used.
    """
    if isinstance(predicted, tuple):
        predicted = predicted[0]
    p = np.asarray(predicted, dtype=float)
    x = np.asarray(x, dtype=float)
    if p.shape != x.shape:
        raise ControllerError(f"prediction has {p.size} entries for {x.size} nodes")
    return (1.0 - p) - (1.0 - x) * math.exp(-cfg.r * cfg.dt)


def check_constraint(x, predicted, cfg: ControllerConfig) -> bool:
    return bool(np.all(constraint_residuals(x, predicted, cfg) <= 0.0))


def _aux_weights(g: Group, informed: np.ndarray, orientation: str, mu: float) -> np.ndarray:
    d = len(g.edges)
    w = np.full(d, mu / d) if d else np.zeros(0)
    if orientation == "in":
        hot = np.array([informed[j] for j, _ in g.edges], dtype=bool)
        if d and not informed[g.owner] and hot.any():
            w = np.where(hot, mu / hot.sum(), 0.0)
    else:
        hot = np.array([not informed[i] for _, i in g.edges], dtype=bool)
        if d and informed[g.owner] and hot.any():
            w = np.where(hot, mu / hot.sum(), 0.0)
    return w


def auxiliary_allocation(x, t: Topology, cfg: ControllerConfig) -> RateAllocation:
    """Maximum-pressure split: all budget on edges that can inform someone right now."""
    informed = exact_ctmc.informed_mask(x, t.n)
    omega = np.zeros((t.n, t.n))
    for g in groups_for(t, cfg.orientation):
        for (j, i), w in zip(g.edges, _aux_weights(g, informed, cfg.orientation, cfg.mu)):
            omega[i, j] = w
    return RateAllocation(omega, {g.owner: None for g in groups_for(t, cfg.orientation)}, mode="auxiliary")


# -- predictors -----------------------------------------------------------------


class _Predictor:
    name = ""

    def __init__(self, cfg: ControllerConfig):
        self.cfg = cfg
        self._cache: dict = {}

    def probs(self, x, t, omega) -> np.ndarray:
        key = (np.asarray(x, dtype=np.int8).tobytes(), np.asarray(omega).tobytes())
        if key not in self._cache:
            if len(self._cache) > 4096:
                self._cache.clear()
            self._cache[key] = self._probs(x, t, omega)
        return self._cache[key]

    def _probs(self, x, t, omega) -> np.ndarray:
        raise NotImplementedError

    def batch_probs(self, x, t, omega, edges, weights) -> np.ndarray:
        raise NotImplementedError

    def units(self, x, t) -> int:
        raise NotImplementedError

    def group_choices(self, x, t, ref, groups, options) -> list[int | None]:
        """Position of the first feasible option of each group (given ``ref`` elsewhere).

        ``options[k]`` is the ordered weight matrix of ``groups[k]``.
        """
        thresh = self.cfg.decay
        informed = exact_ctmc.informed_mask(x, t.n)
        out = []
        for g, W in zip(groups, options):
            recv = sorted({i for i in g.receivers if not informed[i]})
            pick = None
            for start in range(0, W.shape[0], 16):
                P = self.batch_probs(x, t, ref, g.edges, W[start : start + 16])
                ok = np.all(1.0 - P[:, recv] <= thresh, axis=1)
                if ok.any():
                    pick = start + int(np.argmax(ok))
                    break
            out.append(pick)
        return out


class ExactPredictor(_Predictor):
    name = "exact-ctmc"
    chunk = 8

    def _probs(self, x, t, omega):
        return exact_ctmc.predict_marginals(x, t, omega, self.cfg.dt, self.cfg.max_exact_nodes)

    def batch_probs(self, x, t, omega, edges, weights):
        return exact_ctmc.predict_marginals_batch(
            x, t, omega, list(edges), weights, self.cfg.dt, self.cfg.max_exact_nodes
        )

    def units(self, x, t):
        return 1 << int(t.n - np.sum(x))

    def group_choices(self, x, t, ref, groups, options):
        if self.cfg.orientation != "in":
            return super().group_choices(x, t, ref, groups, options)
        thresh = self.cfg.decay
        out = []
        for g, W in zip(groups, options):
            model = exact_ctmc.OwnerModel(x, t, ref, g.owner, self.cfg.max_exact_nodes)
            # Jensen: survival >= exp(-w . E[T]); anything above the threshold is out
            floor = np.exp(-W @ model.exposure(self.cfg.dt))
            live = np.nonzero(floor <= thresh + 1e-12)[0]
            pick = None
            for start in range(0, live.size, self.chunk):
                idx = live[start : start + self.chunk]
                ok = model.survival(W[idx], self.cfg.dt) <= thresh
                if ok.any():
                    pick = int(idx[np.argmax(ok)])
                    break
            out.append(pick)
        return out


class ClosurePredictor(_Predictor):
    name = "moment-closure"

    @property
    def side(self) -> int:
        return 0 if self.cfg.closure_bound == "lower" else 1

    def _probs(self, x, t, omega):
        return closure.predict_bounds(x, t, omega, self.cfg.dt, self.cfg.mu)[self.side]

    def batch_probs(self, x, t, omega, edges, weights):
        return closure.predict_bounds_batch(x, t, omega, edges, weights, self.cfg.dt, self.cfg.mu)[
            self.side
        ]

    def units(self, x, t):
        return 4 * t.n

    def group_choices(self, x, t, ref, groups, options):
        if self.cfg.orientation != "in" or not groups:
            return super().group_choices(x, t, ref, groups, options)
        width = max(W.shape[1] for W in options)
        owners = np.concatenate([np.full(W.shape[0], g.owner) for g, W in zip(groups, options)])
        rows = np.concatenate([np.pad(W, ((0, 0), (0, width - W.shape[1]))) for W in options])
        p = closure.owner_bounds(x, t, ref, owners, rows, self.cfg.dt, self.cfg.mu)[self.side]
        ok = 1.0 - p <= self.cfg.decay
        out, start = [], 0
        for W in options:
            seg = ok[start : start + W.shape[0]]
            out.append(int(np.argmax(seg)) if seg.any() else None)
            start += W.shape[0]
        return out


def make_predictor(cfg: ControllerConfig) -> _Predictor | None:
    if cfg.predictor == "exact-ctmc":
        return ExactPredictor(cfg)
    if cfg.predictor == "moment-closure":
        return ClosurePredictor(cfg)
    return None


# -- search ---------------------------------------------------------------------------


@dataclass
class _Options:
    comps: np.ndarray  # (C, d) grid compositions, search order
    weights: np.ndarray  # (C, d) rates actually applied
    costs: np.ndarray  # (C,) sort key
    is_incumbent: np.ndarray  # (C,) bool


def _options(g: Group, cfg: ControllerConfig, tree_edges, incumbent) -> _Options:
    comps = compositions(cfg.grid, len(g.edges))
    weights = cfg.mu * comps / cfg.grid
    if tree_edges and cfg.baseline_floor:
        tree = np.array([e in tree_edges for e in g.edges], dtype=float)
        if tree.any():
            weights = weights * (1.0 - tree.sum() * cfg.floor / cfg.mu) + cfg.floor * tree
        costs = np.round((weights**2).sum(axis=1), 12)
    else:
        # integer keys: equal-cost grid points tie exactly
        costs = (comps**2).sum(axis=1).astype(float)
    inc = np.ones(comps.shape[0])
    if incumbent is not None:
        inc = np.where(np.all(comps == np.asarray(incumbent), axis=1), 0.0, 1.0)
    # lexsort keys are least significant first; comps already lexicographic
    order = np.lexsort((np.arange(comps.shape[0]), inc, costs))
    return _Options(comps[order], weights[order], costs[order], inc[order] == 0.0)


def _apply(omega: np.ndarray, g: Group, w) -> None:
    for (j, i), wk in zip(g.edges, w):
        omega[i, j] = wk


def _finish(x, t, cfg, pred, omega, choices, mode, fallback=()) -> RateAllocation:
    p = pred.probs(x, t, omega)
    res = constraint_residuals(x, p, cfg)
    return RateAllocation(
        omega, choices, bool(np.all(res <= 0.0)), p, res, mode, tuple(sorted(fallback))
    )


def solve_rhc(
    x,
    t: Topology,
    cfg: ControllerConfig,
    incumbent: RateAllocation | None = None,
    predictor: _Predictor | None = None,
    tree_edges: set[tuple[int, int]] | None = None,
) -> RateAllocation:
    """Cheapest admissible allocation meeting the one-window envelope constraint."""
    informed = exact_ctmc.informed_mask(x, t.n)
    if cfg.predictor == "open-loop":
        return RateAllocation(uniform_rates(t, cfg.mu, cfg.orientation), mode="open-loop")
    pred = predictor or make_predictor(cfg)
    prior = incumbent.choices if incumbent is not None else {}

    groups = groups_for(t, cfg.orientation)
    omega = np.zeros((t.n, t.n))
    choices: dict[int, tuple[int, ...] | None] = {}
    decide: list[tuple[Group, _Options]] = []
    for g in groups:
        if not g.edges:
            continue
        opts = _options(g, cfg, tree_edges, prior.get(g.owner))
        live = any(not informed[i] for i in g.receivers)
        if live and opts.comps.shape[0] > 1:
            decide.append((g, opts))
        else:
            # rates into informed nodes never change the prediction
            _apply(omega, g, opts.weights[0])
            choices[g.owner] = tuple(int(k) for k in opts.comps[0])

    if not decide:
        out = _finish(x, t, cfg, pred, omega, choices, "vacuous")
        return out if out.feasible else _auxiliary_result(x, t, cfg, pred, tree_edges)

    combos = math.prod(o.comps.shape[0] for _, o in decide)
    if combos * pred.units(x, t) <= cfg.joint_budget:
        return _solve_joint(x, t, cfg, pred, omega, choices, decide, tree_edges)
    return _solve_decomposed(x, t, cfg, pred, omega, choices, decide, incumbent, tree_edges)


def _solve_joint(x, t, cfg, pred, omega, choices, decide, tree_edges) -> RateAllocation:
    sizes = [o.comps.shape[0] for _, o in decide]
    grid = np.array(list(itertools.product(*[range(s) for s in sizes])), dtype=np.int64)
    total = sum(o.costs[grid[:, k]] for k, (_, o) in enumerate(decide))
    keep = np.all([o.is_incumbent[grid[:, k]] for k, (_, o) in enumerate(decide)], axis=0)
    flat = np.concatenate([o.comps[grid[:, k]] for k, (_, o) in enumerate(decide)], axis=1)
    # ties on cost: incumbent first, then lexicographic on the compositions
    keys = tuple(flat[:, c] for c in range(flat.shape[1] - 1, -1, -1)) + (~keep, total)
    grid = grid[np.lexsort(keys)]
    edges = [e for g, _ in decide for e in g.edges]
    x_arr = np.asarray(x, dtype=float)
    decay = cfg.decay
    for start in range(0, grid.shape[0], 64):
        block = grid[start : start + 64]
        W = np.concatenate([o.weights[block[:, k]] for k, (_, o) in enumerate(decide)], axis=1)
        P = pred.batch_probs(x, t, omega, edges, W)
        ok = np.all((1.0 - P) - (1.0 - x_arr) * decay <= 0.0, axis=1)
        if ok.any():
            row = block[int(np.argmax(ok))]
            out = omega.copy()
            for k, (g, o) in enumerate(decide):
                _apply(out, g, o.weights[row[k]])
                choices[g.owner] = tuple(int(v) for v in o.comps[row[k]])
            return _finish(x, t, cfg, pred, out, choices, "joint")
    return _auxiliary_result(x, t, cfg, pred, tree_edges)


def _auxiliary_result(x, t, cfg, pred, tree_edges) -> RateAllocation:
    aux = auxiliary_allocation(x, t, cfg)
    out = _floored(aux.omega, t, cfg, tree_edges)
    owners = [g.owner for g in groups_for(t, cfg.orientation) if g.edges]
    res = _finish(x, t, cfg, pred, out, aux.choices, "auxiliary", owners)
    # no admissible allocation met the constraint, whatever the fallback achieves
    res.feasible = False
    return res


def _floored(omega, t, cfg, tree_edges):
    if not (tree_edges and cfg.baseline_floor):
        return omega
    out = omega.copy()
    for g in groups_for(t, cfg.orientation):
        tree = np.array([e in tree_edges for e in g.edges], dtype=float)
        if tree.any():
            w = np.array([omega[i, j] for j, i in g.edges])
            _apply(out, g, w * (1.0 - tree.sum() * cfg.floor / cfg.mu) + cfg.floor * tree)
    return out


def _solve_decomposed(x, t, cfg, pred, omega, choices, decide, incumbent, tree_edges) -> RateAllocation:
    informed = exact_ctmc.informed_mask(x, t.n)
    ref = omega.copy()
    if incumbent is not None:
        seed = incumbent.omega
    else:
        seed = uniform_rates(t, cfg.mu, cfg.orientation)
    seed = _floored(seed, t, cfg, tree_edges) if incumbent is None else seed
    for g, _ in decide:
        for j, i in g.edges:
            ref[i, j] = seed[i, j]

    picks: list[int | None] = [None] * len(decide)
    for _ in range(cfg.sweeps):
        new = pred.group_choices(x, t, ref, [g for g, _ in decide], [o.weights for _, o in decide])
        nxt = omega.copy()
        for (g, o), k in zip(decide, new):
            if k is None:
                w = _aux_weights(g, informed, cfg.orientation, cfg.mu)
                if tree_edges and cfg.baseline_floor:
                    tree = np.array([e in tree_edges for e in g.edges], dtype=float)
                    w = w * (1.0 - tree.sum() * cfg.floor / cfg.mu) + cfg.floor * tree
            else:
                w = o.weights[k]
            _apply(nxt, g, w)
        changed = new != picks
        picks, ref = new, nxt
        if not changed:
            break

    if cfg.fallback == "global" and any(k is None for k in picks):
        return _auxiliary_result(x, t, cfg, pred, tree_edges)
    fallback = []
    for (g, o), k in zip(decide, picks):
        if k is None:
            choices[g.owner] = None
            fallback.append(g.owner)
        else:
            choices[g.owner] = tuple(int(v) for v in o.comps[k])
    return _finish(x, t, cfg, pred, ref, choices, "decomposed", fallback)
