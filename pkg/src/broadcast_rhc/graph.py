"""Directed communication graphs with rate-weighted adjacency.

Edges are ordered pairs ``(j, i)`` meaning node ``j`` can transmit to node
``i``.  Rates are kept as a dense ``(n, n)`` array ``omega`` with
``omega[i, j]`` the rate at which ``j`` informs ``i``, matching the usual
adjacency layout where row ``i`` collects the in-edges of ``i``.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, TextIO

import numpy as np


class TopologyError(ValueError):
    pass


@dataclass(frozen=True)
class Topology:
    n: int
    edges: tuple[tuple[int, int], ...]
    in_nbrs: tuple[tuple[int, ...], ...] = field(init=False, repr=False, compare=False)
    out_nbrs: tuple[tuple[int, ...], ...] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.n < 1:
            raise TopologyError(f"node count must be >= 1, got {self.n}")
        edges = tuple(sorted(set((int(j), int(i)) for j, i in self.edges)))
        ins: list[list[int]] = [[] for _ in range(self.n)]
        outs: list[list[int]] = [[] for _ in range(self.n)]
        for j, i in edges:
            if not (0 <= j < self.n and 0 <= i < self.n):
                raise TopologyError(f"edge ({j}, {i}) out of range for n={self.n}")
            if i == j:
                raise TopologyError(f"self-loop on node {i}")
            ins[i].append(j)
            outs[j].append(i)
        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "in_nbrs", tuple(tuple(sorted(a)) for a in ins))
        object.__setattr__(self, "out_nbrs", tuple(tuple(sorted(a)) for a in outs))

    @classmethod
    def from_edges(cls, n: int, edges: Iterable[tuple[int, int]]) -> "Topology":
        return cls(n, tuple(edges))

    @classmethod
    def chain(cls, n: int) -> "Topology":
        return cls(n, tuple((k, k + 1) for k in range(n - 1)))

    @classmethod
    def complete(cls, n: int) -> "Topology":
        return cls(n, tuple((j, i) for j in range(n) for i in range(n) if i != j))

    @property
    def num_edges(self) -> int:
        return len(self.edges)

    def adjacency(self) -> np.ndarray:
        """Boolean matrix with ``a[i, j]`` true iff ``(j, i)`` is an edge."""
        a = np.zeros((self.n, self.n), dtype=bool)
        for j, i in self.edges:
            a[i, j] = True
        return a

    def edge_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        """(source, target) index arrays in edge order."""
        if not self.edges:
            empty = np.zeros(0, dtype=np.int64)
            return empty, empty.copy()
        e = np.asarray(self.edges, dtype=np.int64)
        return e[:, 0], e[:, 1]


def in_neighbors(t: Topology, i: int) -> set[int]:
    if not 0 <= i < t.n:
        raise TopologyError(f"node {i} out of range")
    return set(t.in_nbrs[i])


def generate_erdos_renyi(n: int, p: float, seed=None) -> Topology:
    """Directed G(n, p): each ordered pair (j, i), j != i, is kept with probability p."""
    if n < 1:
        raise TopologyError("n must be >= 1")
    if not 0.0 <= p <= 1.0:
        raise TopologyError(f"p must lie in [0, 1], got {p}")
    rng = np.random.default_rng(seed)
    keep = rng.random((n, n)) < p
    np.fill_diagonal(keep, False)
    src, dst = np.nonzero(keep)
    return Topology(n, tuple(zip(src.tolist(), dst.tolist())))


def reachable_from(t: Topology, root: int) -> set[int]:
    seen = {root}
    queue = deque([root])
    while queue:
        u = queue.popleft()
        for v in t.out_nbrs[u]:
            if v not in seen:
                seen.add(v)
                queue.append(v)
    return seen


def has_spanning_tree(t: Topology, root: int) -> bool:
    """True iff every node can be reached from ``root`` along edge directions."""
    if not 0 <= root < t.n:
        raise TopologyError(f"root {root} out of range")
    return len(reachable_from(t, root)) == t.n


def spanning_roots(t: Topology) -> list[int]:
    """All nodes from which a directed spanning tree exists."""
    return [r for r in range(t.n) if has_spanning_tree(t, r)]


def spanning_tree_edges(t: Topology, root: int) -> set[tuple[int, int]]:
    """Edges of the BFS tree from ``root`` (lowest-index parent first)."""
    parent: dict[int, int] = {}
    seen = {root}
    queue = deque([root])
    while queue:
        u = queue.popleft()
        for v in t.out_nbrs[u]:
            if v not in seen:
                seen.add(v)
                parent[v] = u
                queue.append(v)
    return {(u, v) for v, u in parent.items()}


def generate_connected_erdos_renyi(n: int, p: float, seed: int, max_tries: int = 10_000):
    """Redraw G(n, p) with seeds ``seed, seed+1, ...`` until some node roots a spanning tree.

    Returns ``(topology, seed_used)`` so the draw is reproducible.
    """
    for k in range(max_tries):
        t = generate_erdos_renyi(n, p, seed + k)
        if spanning_roots(t):
            return t, seed + k
    raise TopologyError(f"no rooted G({n}, {p}) found in {max_tries} draws")


# -- rates ------------------------------------------------------------------


def check_rates(t: Topology, omega: np.ndarray) -> np.ndarray:
    omega = np.asarray(omega, dtype=float)
    if omega.shape != (t.n, t.n):
        raise TopologyError(f"rate matrix shape {omega.shape} != ({t.n}, {t.n})")
    if np.any(omega < 0):
        raise TopologyError("rates must be nonnegative")
    if np.any(omega[~t.adjacency()] != 0):
        raise TopologyError("nonzero rate on a non-edge")
    return omega


def rates_from_edges(t: Topology, values: dict[tuple[int, int], float]) -> np.ndarray:
    omega = np.zeros((t.n, t.n))
    for (j, i), w in values.items():
        omega[i, j] = w
    return check_rates(t, omega)


def uniform_rates(t: Topology, mu: float, orientation: str = "in") -> np.ndarray:
    """Split budget ``mu`` evenly over each node's in-edges (or out-edges)."""
    omega = np.zeros((t.n, t.n))
    if orientation == "in":
        for i, nbrs in enumerate(t.in_nbrs):
            for j in nbrs:
                omega[i, j] = mu / len(nbrs)
    elif orientation == "out":
        for j, nbrs in enumerate(t.out_nbrs):
            for i in nbrs:
                omega[i, j] = mu / len(nbrs)
    else:
        raise ValueError(f"unknown budget orientation {orientation!r}")
    return omega


def random_budget_rates(t: Topology, mu: float, rng: np.random.Generator) -> np.ndarray:
    """Random per-receiver rates: each in-edge simplex drawn from a flat Dirichlet."""
    omega = np.zeros((t.n, t.n))
    for i, nbrs in enumerate(t.in_nbrs):
        if nbrs:
            omega[i, list(nbrs)] = mu * rng.dirichlet(np.ones(len(nbrs)))
    return omega


# -- edge-list text format -------------------------------------------------------


def write_edge_list(t: Topology, omega: np.ndarray | None, fh: TextIO) -> None:
    fh.write(f"{t.n}\n")
    for j, i in t.edges:
        w = 1.0 if omega is None else float(omega[i, j])
        fh.write(f"{j} {i} {w!r}\n")


def format_edge_list(t: Topology, omega: np.ndarray | None = None) -> str:
    import io

    buf = io.StringIO()
    write_edge_list(t, omega, buf)
    return buf.getvalue()


def parse_edge_list(text: str) -> tuple[Topology, np.ndarray]:
    lines = [ln.split("#", 1)[0].strip() for ln in text.splitlines()]
    lines = [ln for ln in lines if ln]
    if not lines:
        raise TopologyError("empty edge list")
    try:
        n = int(lines[0])
    except ValueError:
        raise TopologyError(f"first line must be the node count, got {lines[0]!r}") from None
    edges = []
    weights = {}
    for ln in lines[1:]:
        parts = ln.split()
        if len(parts) not in (2, 3):
            raise TopologyError(f"bad edge line {ln!r}")
        j, i = int(parts[0]), int(parts[1])
        edges.append((j, i))
        weights[(j, i)] = float(parts[2]) if len(parts) == 3 else 1.0
    t = Topology(n, tuple(edges))
    return t, rates_from_edges(t, weights)
