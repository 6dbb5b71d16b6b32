from __future__ import annotations

import io
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from broadcast_rhc.exact_ctmc import (
    OwnerModel,
    StateSpaceTooLarge,
    build_generator,
    expected_informed_count,
    marginal_informed,
    point_mass,
    predict_marginals,
    predict_marginals_batch,
    propagate,
    state_from_index,
    state_index,
    write_distribution_csv,
)
from broadcast_rhc.graph import Topology, generate_erdos_renyi, random_budget_rates, spanning_roots

from oracle import dense_generator, exact_marginals, transition_matrix


def _instance(n, p, seed, mu=2.0):
    t = generate_erdos_renyi(n, p, seed)
    om = random_budget_rates(t, mu, np.random.default_rng(seed))
    return t, om


def test_state_index_round_trip():
    for s in range(32):
        assert state_index(state_from_index(s, 5)) == s


def test_two_node_closed_form():
    # single edge 0 -> 1 at rate w: Pr{1 informed at t} = 1 - exp(-w t)
    t = Topology.from_edges(2, [(0, 1)])
    om = np.zeros((2, 2))
    om[1, 0] = 1.0
    p = predict_marginals([1, 0], t, om, 1.0)
    assert p[0] == 1.0
    assert p[1] == pytest.approx(1 - math.exp(-1.0), abs=1e-10)  # 0.63212


def test_chain_of_three_is_erlang():
    # 0 -> 1 -> 2 at unit rates: node 2 informed by Erlang(2, 1)
    t = Topology.chain(3)
    om = np.zeros((3, 3))
    om[1, 0] = om[2, 1] = 1.0
    p = predict_marginals([1, 0, 0], t, om, 2.0)
    assert p[2] == pytest.approx(1 - math.exp(-2.0) * (1 + 2.0), abs=1e-10)


def test_generator_rows_sum_to_zero():
    t, om = _instance(6, 0.5, 3)
    g = build_generator(t, om)
    q = g.q.toarray()
    np.testing.assert_allclose(q.sum(axis=1), 0.0, atol=1e-12)
    assert np.all(q - np.diag(np.diag(q)) >= 0)


def test_full_generator_matches_oracle():
    t, om = _instance(5, 0.5, 11)
    g = build_generator(t, om)
    np.testing.assert_allclose(g.q.toarray(), dense_generator(5, t.edges, om), atol=1e-14)


def test_cap_enforced():
    t = Topology.chain(21)
    with pytest.raises(StateSpaceTooLarge):
        build_generator(t, np.zeros((21, 21)))


@given(st.integers(2, 7), st.sampled_from([0.3, 0.6]), st.integers(0, 5000), st.sampled_from([0.1, 0.7, 2.5]))
@settings(max_examples=40, deadline=None)
def test_propagate_matches_expm(n, p, seed, dt):
    t, om = _instance(n, p, seed)
    g = build_generator(t, om)
    root = seed % n
    v0 = point_mass(n, [1 if k == root else 0 for k in range(n)])
    v = propagate(v0, g, dt)
    ref = v0 @ transition_matrix(dense_generator(n, t.edges, om), dt)
    np.testing.assert_allclose(v, ref, atol=1e-10)
    assert abs(v.sum() - 1) < 1e-9


@given(st.integers(2, 7), st.integers(0, 5000))
@settings(max_examples=30, deadline=None)
def test_predict_marginals_matches_oracle(n, seed):
    t, om = _instance(n, 0.5, seed)
    rng = np.random.default_rng(seed)
    x = (rng.random(n) < 0.3).astype(int)
    got = predict_marginals(x, t, om, 0.8)
    np.testing.assert_allclose(got, exact_marginals(n, t.edges, om, x, 0.8), atol=1e-10)
    assert np.all(got[x == 1] == 1.0)


def test_marginals_monotone_in_time():
    t, om = _instance(6, 0.5, 4)
    x = np.eye(6, dtype=int)[spanning_roots(t)[0]] if spanning_roots(t) else np.eye(6, dtype=int)[0]
    prev = np.zeros(6)
    for dt in (0.2, 0.5, 1.0, 2.0):
        p = predict_marginals(x, t, om, dt)
        assert np.all(p >= prev - 1e-12)
        prev = p


def test_batch_matches_single():
    t, om = _instance(7, 0.5, 9)
    x = [1, 0, 0, 1, 0, 0, 0]
    i = 2
    edges = [(j, i) for j in t.in_nbrs[i]]
    rng = np.random.default_rng(0)
    W = rng.dirichlet(np.ones(len(edges)), size=5) * 2.0
    P = predict_marginals_batch(x, t, om, edges, W, 1.0)
    for b in range(5):
        o2 = om.copy()
        for (j, k), w in zip(edges, W[b]):
            o2[k, j] = w
        np.testing.assert_allclose(P[b], predict_marginals(x, t, o2, 1.0), atol=1e-11)


def test_owner_model_survival_and_jensen():
    t, om = _instance(7, 0.6, 5)
    x = np.zeros(7, dtype=int)
    x[0] = 1
    owner = next(i for i in range(1, 7) if t.in_nbrs[i])
    m = OwnerModel(x, t, om, owner)
    d = len(t.in_nbrs[owner])
    W = np.random.default_rng(1).dirichlet(np.ones(d), size=4) * 2.0
    surv = m.survival(W, 1.0)
    exposure = m.exposure(1.0)
    for b in range(4):
        o2 = om.copy()
        o2[owner, list(t.in_nbrs[owner])] = W[b]
        ref = exact_marginals(7, t.edges, o2, x, 1.0)[owner]
        assert surv[b] == pytest.approx(1 - ref, abs=1e-10)
        # Jensen: survival = E[exp(-w.T)] >= exp(-w.E[T])
        assert surv[b] >= math.exp(-W[b] @ exposure) - 1e-12


def test_marginal_and_count_helpers():
    v = np.zeros(8)
    v[0b011] = 0.25
    v[0b111] = 0.75
    assert marginal_informed(v, 0) == pytest.approx(1.0)
    assert marginal_informed(v, 2) == pytest.approx(0.75)
    assert expected_informed_count(v) == pytest.approx(0.25 * 2 + 0.75 * 3)
    with pytest.raises(ValueError):
        marginal_informed(v, 3)
    buf = io.StringIO()
    write_distribution_csv(v, buf)
    assert buf.getvalue().splitlines()[0] == "state,probability"


def test_zero_dt_and_all_informed():
    t, om = _instance(4, 0.6, 1)
    np.testing.assert_array_equal(predict_marginals([1, 0, 0, 0], t, om, 0.0), [1, 0, 0, 0])
    np.testing.assert_array_equal(predict_marginals([1, 1, 1, 1], t, om, 3.0), [1, 1, 1, 1])


def test_large_mass_chunking():
    # total rate 40 over dt 20 forces several uniformization chunks
    t = Topology.from_edges(2, [(0, 1)])
    om = np.zeros((2, 2))
    om[1, 0] = 40.0
    g = build_generator(t, om)
    v = propagate(point_mass(2, [1, 0]), g, 20.0)
    # each chunk may drop up to the 1e-12 Poisson tail
    assert v[3] == pytest.approx(1.0, abs=1e-10)
    p = predict_marginals([1, 0], t, om, 0.01)
    assert p[1] == pytest.approx(-math.expm1(-0.4), abs=1e-12)
