from __future__ import annotations

import io
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from broadcast_rhc.graph import Topology, generate_erdos_renyi, random_budget_rates
from broadcast_rhc.moment_closure import (
    ClosureState,
    expected_count_bounds,
    frechet_lower,
    frechet_upper,
    informed_bounds,
    integrate_batch,
    integrate_closure,
    owner_bounds,
    predict_bounds,
    predict_bounds_batch,
    write_bounds_csv,
)

from oracle import exact_marginals


def _instance(n, p, seed, mu=2.0):
    t = generate_erdos_renyi(n, p, seed)
    om = random_budget_rates(t, mu, np.random.default_rng(seed + 1))
    x = np.zeros(n, dtype=int)
    x[seed % n] = 1
    return t, om, x


@given(st.floats(0, 1), st.floats(0, 1))
def test_frechet_brackets_any_coupling(a, b):
    lo, hi = frechet_lower(a, b), frechet_upper(a, b)
    assert 0 <= lo <= hi + 1e-15 and hi <= 1  # a + b - 1 can round up by an ulp
    # independent coupling sits inside the bracket
    assert lo - 1e-12 <= a * b <= hi + 1e-12


def test_fresh_state_is_tight():
    x = np.array([1, 0, 1, 0])
    lo, hi = informed_bounds(ClosureState.from_network_state(x))
    np.testing.assert_array_equal(lo, x)
    np.testing.assert_array_equal(hi, x)


def test_two_node_bounds_are_exact():
    # with a single informed source the transfer is Pr{1 non}, bounded tightly
    t = Topology.from_edges(2, [(0, 1)])
    om = np.zeros((2, 2))
    om[1, 0] = 1.0
    lo, hi = predict_bounds([1, 0], t, om, 1.0)
    assert lo[1] == pytest.approx(1 - math.exp(-1), abs=1e-8)
    assert hi[1] == pytest.approx(1 - math.exp(-1), abs=1e-8)


@given(st.integers(3, 7), st.sampled_from([0.3, 0.6]), st.integers(0, 10_000))
@settings(max_examples=30, deadline=None)
def test_containment_against_oracle(n, p, seed):
    t, om, x = _instance(n, p, seed)
    for dt in (0.1, 0.5, 1.0, 5.0):
        lo, hi = predict_bounds(x, t, om, dt, 2.0)
        exact = exact_marginals(n, t.edges, om, x, dt)
        assert np.all(lo <= exact + 1e-6)
        assert np.all(exact <= hi + 1e-6)


def test_invariants_along_trajectory():
    t, om, x = _instance(8, 0.4, 21)
    z0 = ClosureState.from_network_state(x).stacked()[:, None, :]
    from broadcast_rhc.moment_closure import _edge_weights

    _, traj = integrate_batch(z0, t, _edge_weights(t, om), 2.0, 2.0, record=True)
    prev_lo = prev_hi = None
    for _, z in traj:
        ui, li, un, ln = z[:, 0, :]
        assert np.all(li <= ui + 1e-12) and np.all(ln <= un + 1e-12)
        assert np.all((z >= 0) & (z <= 1))
        lo, hi = informed_bounds(ClosureState(ui, li, un, ln))
        assert np.all(lo <= hi + 1e-12)
        if prev_lo is not None:
            assert np.all(lo >= prev_lo - 1e-12) and np.all(hi >= prev_hi - 1e-12)
        prev_lo, prev_hi = lo, hi


def test_count_bounds_contain_exact_count():
    t, om, x = _instance(5, 0.5, 3)
    c = integrate_closure(ClosureState.from_network_state(x), t, om, 1.0)
    s_lo, s_hi = expected_count_bounds(c)
    exact = exact_marginals(5, t.edges, om, x, 1.0).sum()
    assert 0 <= s_lo <= exact + 1e-9 <= s_hi + 2e-9 <= 5 + 2e-9


def test_batch_matches_single():
    t, om, x = _instance(9, 0.4, 5)
    i = max(range(9), key=lambda k: len(t.in_nbrs[k]))
    edges = [(j, i) for j in t.in_nbrs[i]]
    W = np.random.default_rng(2).dirichlet(np.ones(len(edges)), size=3) * 2.0
    lo, hi = predict_bounds_batch(x, t, om, edges, W, 1.0, 2.0)
    for b in range(3):
        o2 = om.copy()
        o2[i, list(t.in_nbrs[i])] = W[b]
        l1, h1 = predict_bounds(x, t, o2, 1.0, 2.0)
        np.testing.assert_allclose(lo[b], l1, atol=1e-12)
        np.testing.assert_allclose(hi[b], h1, atol=1e-12)


def test_owner_bounds_track_full_system():
    # the owner's own feedback on upstream nodes is dropped; it is second order
    t, om, x = _instance(10, 0.4, 8)
    owners = np.array([i for i in range(10) if t.in_nbrs[i] and not x[i]])
    width = max(len(t.in_nbrs[o]) for o in owners)
    rows = np.zeros((owners.size, width))
    for b, o in enumerate(owners):
        rows[b, : len(t.in_nbrs[o])] = om[o, list(t.in_nbrs[o])]
    lo, hi = owner_bounds(x, t, om, owners, rows, 1.0, 2.0)
    flo, fhi = predict_bounds(x, t, om, 1.0, 2.0)
    np.testing.assert_allclose(lo, flo[owners], atol=1e-6)
    np.testing.assert_allclose(hi, fhi[owners], atol=1e-6)


def test_bounds_csv():
    t = Topology.from_edges(2, [(0, 1)])
    om = np.zeros((2, 2))
    om[1, 0] = 1.0
    z0 = ClosureState.from_network_state([1, 0]).stacked()[:, None, :]
    from broadcast_rhc.moment_closure import _edge_weights

    _, traj = integrate_batch(z0, t, _edge_weights(t, om), 0.05, 1.0, record=True)
    buf = io.StringIO()
    write_bounds_csv(traj, buf)
    lines = buf.getvalue().splitlines()
    assert lines[0] == "time,node,lo,hi"
    assert len(lines) == 1 + 2 * len(traj)


def test_check_rejects_bad_state():
    with pytest.raises(ValueError):
        ClosureState(np.array([0.2]), np.array([0.5]), np.array([0.8]), np.array([0.5])).check()
