"""Fréchet moment closure: 4n ODEs that bracket every node's informed probability.

For each node the state holds upper and lower bounds on the probability of
being informed (``inf``) and non-informed (``non``).  The transfer into node
``i`` from in-neighbour ``j`` is the joint probability ``Pr{i non, j inf}``,
replaced by its Fréchet upper bound in the upper system and by its Fréchet
lower bound in the lower system.  Informed mass only grows, so the
non-informed bounds shrink by the opposite transfer: the upper ``non`` bound
by the lower transfer and the lower ``non`` bound by the upper transfer.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import TextIO

import numpy as np
import scipy.sparse as sp

from .graph import Topology

log = logging.getLogger(__name__)

MAX_STEP = 1e-2
RANGE_TOL = 1e-9
ORDER_WARN = 1e-7


def frechet_lower(a, b):
    """Fréchet lower bound ``max(0, a + b - 1)`` on ``Pr{A and B}``."""
    return np.maximum(0.0, np.add(a, b) - 1.0)


def frechet_upper(a, b):
    """Fréchet upper bound ``min(a, b)`` on ``Pr{A and B}``."""
    return np.minimum(a, b)


@dataclass(frozen=True)
class ClosureState:
    upper_inf: np.ndarray
    lower_inf: np.ndarray
    upper_non: np.ndarray
    lower_non: np.ndarray

    @classmethod
    def from_network_state(cls, x) -> "ClosureState":
        x = np.asarray(x, dtype=float)
        return cls(x.copy(), x.copy(), 1.0 - x, 1.0 - x)

    @property
    def n(self) -> int:
        return self.upper_inf.size

    def stacked(self) -> np.ndarray:
        return np.stack([self.upper_inf, self.lower_inf, self.upper_non, self.lower_non])

    def check(self, tol: float = 1e-9) -> None:
        z = self.stacked()
        if np.any(z < -tol) or np.any(z > 1 + tol):
            raise ValueError("closure variables outside [0, 1]")
        if np.any(self.lower_inf > self.upper_inf + tol) or np.any(
            self.lower_non > self.upper_non + tol
        ):
            raise ValueError("lower bound above upper bound")


def step_size(dt: float, mu: float) -> float:
    return min(dt, MAX_STEP) / max(1.0, mu)


class _Coupling:
    """Edge lists and scatter matrix shared by every right-hand-side evaluation."""

    def __init__(self, t: Topology):
        self.src, self.dst = t.edge_arrays()
        ne = self.src.size
        # (n x E): row i sums the transfers on edges into i
        self.gather = sp.csr_matrix(
            (np.ones(ne), (self.dst, np.arange(ne))), shape=(t.n, ne)
        )

    def rhs(self, z: np.ndarray, w: np.ndarray) -> np.ndarray:
        """z: (4, B, n) stacked bounds; w: (B, E) edge rates."""
        ui, li, un, ln = z
        s, d = self.src, self.dst
        bounded = np.minimum(1.0 - ui[:, d], un[:, d])
        up = w * frechet_upper(bounded, ui[:, s])
        lo = w * frechet_lower(ln[:, d], li[:, s])
        up_in = (self.gather @ up.T).T
        lo_in = (self.gather @ lo.T).T
        return np.stack([up_in, lo_in, -lo_in, -up_in])


def _clamp(z: np.ndarray) -> np.ndarray:
    excess = max(float(-z.min(initial=0.0)), float(z.max(initial=1.0) - 1.0))
    if excess > RANGE_TOL:
        log.warning("closure state left [0, 1] by %.3g; clamping", excess)
    z = np.clip(z, 0.0, 1.0)
    for hi, lo in ((0, 1), (2, 3)):
        gap = float((z[lo] - z[hi]).max(initial=0.0))
        if gap > 0.0:
            if gap > ORDER_WARN:
                log.warning("closure lower bound exceeded upper by %.3g; reordering", gap)
            z[lo] = np.minimum(z[lo], z[hi])
    return z


def integrate_batch(
    z0: np.ndarray, t: Topology, w: np.ndarray, dt: float, mu: float, record: bool = False
):
    """Classical RK4 on stacked bounds ``z0`` (4, B, n) with per-row edge rates ``w`` (B, E).

    Returns the final stacked state, plus the per-step trajectory when
    ``record`` is set.
    """
    z = np.array(z0, dtype=float, copy=True)
    if dt < 0:
        raise ValueError("dt must be nonnegative")
    traj = [(0.0, z.copy())] if record else None
    if dt == 0 or w.shape[1] == 0:
        return (z, traj) if record else z
    c = _Coupling(t)
    steps = int(np.ceil(dt / step_size(dt, mu) - 1e-12))
    h = dt / steps
    for k in range(steps):
        k1 = c.rhs(z, w)
        k2 = c.rhs(z + 0.5 * h * k1, w)
        k3 = c.rhs(z + 0.5 * h * k2, w)
        k4 = c.rhs(z + h * k3, w)
        z = _clamp(z + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4))
        if record:
            traj.append(((k + 1) * h, z.copy()))
    return (z, traj) if record else z


def _edge_weights(t: Topology, omega: np.ndarray) -> np.ndarray:
    src, dst = t.edge_arrays()
    return np.asarray(omega, dtype=float)[dst, src][None, :]


def _budget(omega: np.ndarray) -> float:
    return float(np.asarray(omega).sum(axis=1).max(initial=0.0))


def integrate_closure(
    c: ClosureState, t: Topology, omega: np.ndarray, dt: float, mu: float | None = None
) -> ClosureState:
    """Advance the bounds over ``dt`` with rates held fixed.

    ``mu`` sets the step size; it defaults to the largest per-node in-rate sum.
    """
    mu = _budget(omega) if mu is None else mu
    z = integrate_batch(c.stacked()[:, None, :], t, _edge_weights(t, omega), dt, mu)
    return ClosureState(*(z[k, 0] for k in range(4)))


def bounds_from_stacked(z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    ui, li, un, ln = z
    lo = np.maximum(li, 1.0 - un)
    hi = np.minimum(ui, 1.0 - ln)
    return lo, hi


def informed_bounds(c: ClosureState) -> tuple[np.ndarray, np.ndarray]:
    """Per-node interval ``[lo_i, hi_i]`` containing ``Pr{X_i informed}``."""
    return bounds_from_stacked(c.stacked())


def expected_count_bounds(c: ClosureState) -> tuple[float, float]:
    lo, hi = informed_bounds(c)
    return float(lo.sum()), float(hi.sum())


def predict_bounds(x, t: Topology, omega: np.ndarray, dt: float, mu: float | None = None):
    """Bounds on ``E[X_i(t + dt) | X(t) = x]`` from a point-mass start."""
    c = integrate_closure(ClosureState.from_network_state(x), t, omega, dt, mu)
    return informed_bounds(c)


def predict_bounds_batch(
    x, t: Topology, omega: np.ndarray, edges, weights: np.ndarray, dt: float, mu: float | None = None
):
    """Like :func:`predict_bounds` for many candidates differing on ``edges``.

    Returns ``(lo, hi)`` arrays of shape (B, n).
    """
    weights = np.atleast_2d(np.asarray(weights, dtype=float))
    nb = weights.shape[0]
    base = _edge_weights(t, omega)
    w = np.repeat(base, nb, axis=0)
    index = {e: k for k, e in enumerate(t.edges)}
    for col, e in enumerate(edges):
        w[:, index[e]] = weights[:, col]
    mu = float(max(_budget(omega), weights.sum(axis=1).max(initial=0.0))) if mu is None else mu
    z0 = np.repeat(ClosureState.from_network_state(x).stacked()[:, None, :], nb, axis=1)
    return bounds_from_stacked(integrate_batch(z0, t, w, dt, mu))


def write_bounds_csv(traj, fh: TextIO) -> None:
    """Dump a recorded single-row trajectory as ``time,node,lo,hi``."""
    fh.write("time,node,lo,hi\n")
    for time, z in traj:
        lo, hi = bounds_from_stacked(z[:, 0, :])
        for i in range(lo.size):
            fh.write(f"{time!r},{i},{lo[i]!r},{hi[i]!r}\n")


def owner_bounds(
    x,
    t: Topology,
    omega: np.ndarray,
    owners: np.ndarray,
    weights: np.ndarray,
    dt: float,
    mu: float | None = None,
) -> np.ndarray:
    """Informed bounds ``(lo, hi)`` of ``owners[b]`` when its in-edges carry ``weights[b]``.

    ``weights[b]`` lists rates in ``t.in_nbrs[owners[b]]`` order, zero-padded
    to a common width.  The rest of the network follows its bound
    trajectory under ``omega``, computed once and held fixed while each row
    integrates only its owner's four bound variables.  That trades the
    owner's feedback on upstream nodes within one window for a single
    reference solve shared by every candidate of every node.
    """
    owners = np.asarray(owners, dtype=np.int64)
    weights = np.atleast_2d(np.asarray(weights, dtype=float))
    mu = float(max(_budget(omega), weights.sum(axis=1).max(initial=0.0))) if mu is None else mu
    start = ClosureState.from_network_state(x).stacked()
    if dt == 0 or owners.size == 0:
        return bounds_from_stacked(start[:, owners])
    steps = int(np.ceil(dt / step_size(dt, mu) - 1e-12))
    h = dt / steps
    # reference path sampled at every RK4 stage time of the owner integration
    ref = _reference_path(start, t, omega, dt, steps)

    width = weights.shape[1]
    nbr = np.zeros((owners.size, width), dtype=np.int64)
    for b, o in enumerate(owners):
        d = len(t.in_nbrs[o])
        nbr[b, :d] = t.in_nbrs[o]
    z = start[:, owners].copy()

    def rhs(z, m):
        ui, li, un, ln = z
        u_nb = ref[m][0][nbr]
        l_nb = ref[m][1][nbr]
        bounded = np.minimum(1.0 - ui, un)[:, None]
        up = (weights * frechet_upper(bounded, u_nb)).sum(axis=1)
        lo = (weights * frechet_lower(ln[:, None], l_nb)).sum(axis=1)
        return np.stack([up, lo, -lo, -up])

    for k in range(steps):
        k1 = rhs(z, 2 * k)
        k2 = rhs(z + 0.5 * h * k1, 2 * k + 1)
        k3 = rhs(z + 0.5 * h * k2, 2 * k + 1)
        k4 = rhs(z + h * k3, 2 * k + 2)
        z = _clamp(z + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4))
    return bounds_from_stacked(z)


def owner_lower_bounds(x, t, omega, owners, weights, dt, mu=None) -> np.ndarray:
    return owner_bounds(x, t, omega, owners, weights, dt, mu)[0]


def _reference_path(start: np.ndarray, t: Topology, omega: np.ndarray, dt: float, steps: int):
    """Bounds at every half step of a ``steps``-step grid over [0, dt], single row."""
    c = _Coupling(t)
    w = _edge_weights(t, omega)
    h = dt / (2 * steps)
    z = start[:, None, :].copy()
    path = [z[:, 0, :]]
    for _ in range(2 * steps):
        k1 = c.rhs(z, w)
        k2 = c.rhs(z + 0.5 * h * k1, w)
        k3 = c.rhs(z + 0.5 * h * k2, w)
        k4 = c.rhs(z + h * k3, w)
        z = _clamp(z + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4))
        path.append(z[:, 0, :])
    return path
