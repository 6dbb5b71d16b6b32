"""Exact joint Markov chain of the broadcast process.

Joint state ``s`` is an integer whose bit ``k`` is set iff node ``k`` is
informed.  A node ``m`` that is not informed in ``s`` flips at rate
``sum(omega[m, k] for informed in-neighbours k)``; nothing else moves, so the
all-informed state and every state with no informative edge are absorbing.

Starting from a known configuration only supersets of it are reachable, so
predictions work on the ``2**f`` sub-states of the ``f`` non-informed nodes.
Distributions are propagated by uniformization with a truncation tolerance
well below the ``1e-9`` accuracy target.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import TextIO

import numpy as np
import scipy.sparse as sp
from scipy.stats import poisson

from .graph import Topology, check_rates

MAX_EXACT_NODES = 20
TRUNCATION_TOL = 1e-12
NORMALIZATION_TOL = 1e-6
# keeps exp(-Lambda*tau) far from underflow
_MAX_UNIFORM_MASS = 200.0


class StateSpaceTooLarge(ValueError):
    pass


class PropagationError(RuntimeError):
    pass


@dataclass(frozen=True)
class Generator:
    """Sparse generator on the sub-states of ``free`` (all other nodes informed in ``base``).

    ``q[s, s']`` is the rate from sub-state ``s`` to ``s'``.  ``qt`` is the
    transposed copy used for row-vector products ``v @ q``.
    """

    n: int
    free: tuple[int, ...]
    base: int
    q: sp.csr_matrix
    qt: sp.csr_matrix
    exit_rates: np.ndarray

    @property
    def num_states(self) -> int:
        return self.q.shape[0]

    def full_index(self, sub) -> np.ndarray:
        """Map sub-state indices to joint-state indices."""
        sub = np.asarray(sub, dtype=np.int64)
        out = np.full(sub.shape, self.base, dtype=np.int64)
        for p, node in enumerate(self.free):
            out |= ((sub >> p) & 1) << node
        return out


@lru_cache(maxsize=32)
def _bit_matrix(f: int) -> np.ndarray:
    s = np.arange(1 << f, dtype=np.int64)
    return ((s[:, None] >> np.arange(f)) & 1).astype(float)


def informed_mask(x, n: int | None = None) -> np.ndarray:
    x = np.asarray(x)
    if n is not None and x.shape != (n,):
        raise ValueError(f"state has shape {x.shape}, expected ({n},)")
    if np.any((x != 0) & (x != 1)):
        raise ValueError("network state must be binary")
    return x.astype(bool)


def state_index(x) -> int:
    """Joint-state index of a binary network state."""
    return int(sum(1 << k for k, xk in enumerate(np.asarray(x)) if xk))


def state_from_index(s: int, n: int) -> np.ndarray:
    return np.array([(s >> k) & 1 for k in range(n)], dtype=np.int8)


def _flip_rates(t: Topology, omega: np.ndarray, informed: np.ndarray, free: tuple[int, ...]):
    """Rate of flipping each free node, per sub-state: list of length-2**f arrays."""
    f = len(free)
    pos = {node: p for p, node in enumerate(free)}
    s = np.arange(1 << f, dtype=np.int64)
    rates = []
    for p, m in enumerate(free):
        lam = np.zeros(1 << f)
        base = 0.0
        for k in t.in_nbrs[m]:
            w = omega[m, k]
            if w == 0.0:
                continue
            if informed[k]:
                base += w
            else:
                lam += w * ((s >> pos[k]) & 1)
        lam += base
        lam[(s >> p) & 1 == 1] = 0.0
        rates.append(lam)
    return rates


def _assemble(n, free, base, rates) -> Generator:
    f = len(free)
    size = 1 << f
    s = np.arange(size, dtype=np.int64)
    rows, cols, vals = [], [], []
    exit_rates = np.zeros(size)
    for p, lam in enumerate(rates):
        nz = np.nonzero(lam)[0]
        rows.append(nz)
        cols.append(nz | (1 << p))
        vals.append(lam[nz])
        exit_rates += lam
    rows.append(s)
    cols.append(s)
    vals.append(-exit_rates)
    q = sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(size, size)
    )
    q.sum_duplicates()
    return Generator(n, tuple(free), base, q, q.T.tocsr(), exit_rates)


def _sub_generator(t: Topology, omega: np.ndarray, x, max_nodes: int) -> Generator:
    informed = informed_mask(x, t.n)
    free = tuple(int(k) for k in np.nonzero(~informed)[0])
    if len(free) > max_nodes:
        raise StateSpaceTooLarge(
            f"{len(free)} non-informed nodes exceed the exact-model cap of {max_nodes}"
        )
    rates = _flip_rates(t, omega, informed, free)
    return _assemble(t.n, free, state_index(informed), rates)


def build_generator(t: Topology, omega: np.ndarray, max_nodes: int = MAX_EXACT_NODES) -> Generator:
    """Full ``2**n`` generator of the broadcast chain for fixed rates."""
    if t.n > max_nodes:
        raise StateSpaceTooLarge(f"n={t.n} exceeds the exact-model cap of {max_nodes}")
    omega = check_rates(t, omega)
    return _sub_generator(t, omega, np.zeros(t.n, dtype=int), max_nodes)


def point_mass(n: int, x) -> np.ndarray:
    v = np.zeros(1 << n)
    v[state_index(x)] = 1.0
    return v


def check_distribution(v: np.ndarray, tol: float = 1e-9) -> None:
    if np.any(v < -tol) or np.any(v > 1 + tol):
        raise PropagationError("probabilities outside [0, 1]")
    if abs(v.sum() - 1.0) > tol:
        raise PropagationError(f"distribution sums to {v.sum():.12g}")


def _poisson_weights(mass: float, tol: float) -> np.ndarray:
    if mass == 0.0:
        return np.ones(1)
    kmax = int(poisson.ppf(1.0 - tol, mass)) + 2
    return poisson.pmf(np.arange(kmax + 1), mass)


def _uniformize(v: np.ndarray, step, lam: float, dt: float, tol: float) -> np.ndarray:
    """Sum of Poisson-weighted powers of the uniformized kernel applied to rows of ``v``.

    ``step(u)`` must return ``u @ Q`` for the (possibly batched) row block ``u``.
    """
    if dt == 0.0 or lam == 0.0:
        return v.copy()
    chunks = max(1, int(np.ceil(lam * dt / _MAX_UNIFORM_MASS)))
    tau = dt / chunks
    weights = _poisson_weights(lam * tau, tol)
    for _ in range(chunks):
        term = v
        acc = weights[0] * term
        for wk in weights[1:]:
            term = term + step(term) / lam
            acc += wk * term
        v = acc
    return v


def propagate(v: np.ndarray, g: Generator, dt: float, tol: float = TRUNCATION_TOL) -> np.ndarray:
    """``v @ expm(Q * dt)`` for a distribution over the generator's states."""
    if dt < 0:
        raise ValueError("dt must be nonnegative")
    v = np.asarray(v, dtype=float)
    if v.shape != (g.num_states,):
        raise ValueError(f"distribution length {v.shape} does not match {g.num_states} states")
    lam = float(g.exit_rates.max(initial=0.0))
    out = _uniformize(v, lambda u: g.qt @ u, lam, dt, tol)
    drift = abs(out.sum() - v.sum())
    if drift > NORMALIZATION_TOL:
        raise PropagationError(f"normalization drifted by {drift:.3g}")
    return np.clip(out, 0.0, 1.0)


def marginal_informed(v: np.ndarray, i: int) -> float:
    """Pr{node i informed} from a full joint distribution."""
    v = np.asarray(v)
    n = int(np.log2(v.size))
    if not 0 <= i < n:
        raise ValueError(f"node {i} out of range")
    s = np.arange(v.size)
    return float(min(1.0, v[(s >> i) & 1 == 1].sum()))


def _marginals_from_sub(V: np.ndarray, g: Generator, x) -> np.ndarray:
    """Per-node informed probabilities for rows of sub-state distributions ``V``."""
    informed = informed_mask(x, g.n)
    V = np.atleast_2d(V)
    out = np.ones((V.shape[0], g.n))
    if g.free:
        out[:, list(g.free)] = np.clip(V @ _bit_matrix(len(g.free)), 0.0, 1.0)
    out[:, informed] = 1.0
    return out


def predict_marginals(
    x, t: Topology, omega: np.ndarray, dt: float, max_nodes: int = MAX_EXACT_NODES
) -> np.ndarray:
    """E[X_i(t + dt) | X(t) = x] for every node, with rates held fixed."""
    informed = informed_mask(x, t.n)
    if dt == 0 or informed.all():
        return informed.astype(float)
    g = _sub_generator(t, np.asarray(omega, dtype=float), informed, max_nodes)
    v0 = np.zeros(g.num_states)
    v0[0] = 1.0
    return _marginals_from_sub(propagate(v0, g, dt), g, informed)[0]


def predict_marginals_batch(
    x,
    t: Topology,
    omega: np.ndarray,
    edges: list[tuple[int, int]],
    weights: np.ndarray,
    dt: float,
    max_nodes: int = MAX_EXACT_NODES,
) -> np.ndarray:
    """Marginal predictions for many candidate rate settings at once.

    Row ``b`` of the result uses ``omega`` except that edge ``edges[e] = (j, i)``
    carries rate ``weights[b, e]``.  All candidates share one uniformization
    constant, so the cost is one batched propagation instead of ``B`` solves.
    """
    informed = informed_mask(x, t.n)
    weights = np.atleast_2d(np.asarray(weights, dtype=float))
    nb = weights.shape[0]
    if dt == 0 or informed.all():
        return np.tile(informed.astype(float), (nb, 1))
    rest = np.array(omega, dtype=float, copy=True)
    for j, i in edges:
        rest[i, j] = 0.0
    g = _sub_generator(t, rest, informed, max_nodes)
    pos = {node: p for p, node in enumerate(g.free)}
    s = np.arange(g.num_states, dtype=np.int64)

    # work column-major (states x candidates) so sparse products and row
    # gathers touch contiguous memory
    active_w = []
    moves = []
    for e, (j, i) in enumerate(edges):
        if informed[i]:
            continue
        p = pos[i]
        src = s[(s >> p) & 1 == 0]
        if not informed[j]:
            src = src[(src >> pos[j]) & 1 == 1]
        if src.size:
            moves.append((weights[:, e], src, src | (1 << p)))
            active_w.append(weights[:, e])
    # exit rate of any state is at most the rest-of-graph maximum plus every
    # active candidate edge firing at once
    extra = float(np.sum(active_w, axis=0).max(initial=0.0)) if active_w else 0.0
    lam = float(g.exit_rates.max(initial=0.0)) + extra

    def step(U):
        out = g.qt @ U
        for w, src, dst in moves:
            flow = U[src] * w
            out[src] -= flow
            out[dst] += flow
        return out

    V0 = np.zeros((g.num_states, nb))
    V0[0] = 1.0
    V = _uniformize(V0, step, lam, dt, TRUNCATION_TOL).T
    drift = np.abs(V.sum(axis=1) - 1.0).max()
    if drift > NORMALIZATION_TOL:
        raise PropagationError(f"normalization drifted by {drift:.3g}")
    return _marginals_from_sub(np.clip(V, 0.0, 1.0), g, informed)


def expected_informed_count(v: np.ndarray) -> float:
    v = np.asarray(v)
    n = int(np.log2(v.size))
    counts = _bit_matrix(n).sum(axis=1)
    return float(v @ counts)


def write_distribution_csv(v: np.ndarray, fh: TextIO) -> None:
    fh.write("state,probability\n")
    for s, p in enumerate(np.asarray(v)):
        fh.write(f"{s},{p!r}\n")


def _uniformize_integral(v: np.ndarray, step, lam: float, dt: float, tol: float):
    """Like :func:`_uniformize` but also returns the time integral of the path over [0, dt]."""
    total = np.zeros_like(v)
    if dt == 0.0:
        return v.copy(), total
    if lam == 0.0:
        return v.copy(), v * dt
    chunks = max(1, int(np.ceil(lam * dt / _MAX_UNIFORM_MASS)))
    tau = dt / chunks
    weights = _poisson_weights(lam * tau, tol)
    # Pr{Poisson(lam * tau) > k}; the integral weights of the k-th power
    tails = np.clip(1.0 - np.cumsum(weights), 0.0, 1.0)
    for _ in range(chunks):
        term = v
        acc = weights[0] * term
        integ = tails[0] * term
        for wk, tk in zip(weights[1:], tails[1:]):
            term = term + step(term) / lam
            acc += wk * term
            integ += tk * term
        total += integ / lam
        v = acc
    return v, total


class OwnerModel:
    """Exact survival of one non-informed node under candidate rates on its in-edges.

    Until ``owner`` is informed the rest of the network evolves as if the owner
    were absent, independently of the owner's incoming rates.  So
    ``Pr{owner still non-informed at dt}`` equals the surviving mass of that
    reduced chain killed at rate ``sum_j w_j * [j informed]``.  One reduced
    chain serves every candidate ``w``.
    """

    def __init__(self, x, t: Topology, omega: np.ndarray, owner: int, max_nodes: int = MAX_EXACT_NODES):
        informed = informed_mask(x, t.n)
        if informed[owner]:
            raise ValueError(f"node {owner} is already informed")
        rest = np.array(omega, dtype=float, copy=True)
        rest[:, owner] = 0.0
        free = tuple(int(k) for k in np.nonzero(~informed)[0] if k != owner)
        if len(free) > max_nodes:
            raise StateSpaceTooLarge(
                f"{len(free)} non-informed nodes exceed the exact-model cap of {max_nodes}"
            )
        self.nbrs = t.in_nbrs[owner]
        self.g = _assemble(t.n, free, state_index(informed), _flip_rates(t, rest, informed, free))
        pos = {node: p for p, node in enumerate(free)}
        s = np.arange(self.g.num_states, dtype=np.int64)
        cols = [
            np.ones(s.size) if informed[j] else ((s >> pos[j]) & 1).astype(float) for j in self.nbrs
        ]
        self.masks = np.stack(cols, axis=1) if cols else np.zeros((s.size, 0))

    def _start(self, nb: int) -> np.ndarray:
        v = np.zeros((self.g.num_states, nb))
        v[0] = 1.0
        return v

    def exposure(self, dt: float) -> np.ndarray:
        """Expected time each in-neighbour spends informed during [0, dt] (owner frozen)."""
        lam = float(self.g.exit_rates.max(initial=0.0))
        _, integral = _uniformize_integral(
            self._start(1)[:, 0], lambda u: self.g.qt @ u, lam, dt, TRUNCATION_TOL
        )
        return integral @ self.masks

    def survival(self, weights: np.ndarray, dt: float) -> np.ndarray:
        """``Pr{owner non-informed at dt}`` for each row of in-edge rates."""
        weights = np.atleast_2d(np.asarray(weights, dtype=float))
        kill = self.masks @ weights.T
        lam = float(self.g.exit_rates.max(initial=0.0)) + float(weights.sum(axis=1).max(initial=0.0))
        qt = self.g.qt

        def step(U):
            return qt @ U - U * kill

        out = _uniformize(self._start(weights.shape[0]), step, lam, dt, TRUNCATION_TOL)
        return np.clip(out.sum(axis=0), 0.0, 1.0)
