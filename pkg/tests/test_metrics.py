import math
import random
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gradsync.core_time import ContractViolation, to_fixed
from gradsync.dynamic_graph import ukey
from gradsync.metrics import (
    GradientSequence,
    all_pairs_kappa,
    compute_xi_psi,
    global_skew,
    gradient_profile,
    gradient_sequence,
    is_legal,
    legality_check,
    log_growth_check,
    profile_bound,
    stabilization_time,
    xi_psi_matrix,
)

from oracles import exhaustive_xi_psi, random_graph

U = 10**9


def test_global_skew_examples():
    assert global_skew([5 * U, 3 * U]) == 2 * U
    assert global_skew([7, 7, 7]) == 0
    assert global_skew([to_fixed(10.4), to_fixed(7.1), to_fixed(9.0)]) == to_fixed(3.3)


def test_xi_psi_examples():
    assert compute_xi_psi({"u": 5}, [], {}, "u", 1, 20 * U) == (0, 0)
    e = ukey("u", "v")
    L = {"u": 10 * U, "v": 3 * U}
    xi, psi = compute_xi_psi(L, [e], {e: 4 * U}, "u", 1, 20 * U)
    assert (xi, psi) == (3 * U, 0)
    # from v's side the forward potential is 0 and the backward one 7 - 6 = 1
    assert compute_xi_psi(L, [e], {e: 4 * U}, "v", 1, 20 * U) == (0, Fraction(U))


def test_xi_psi_triangle_plus_tail_frozen():
    # unequal kappas: the direct a-c edge is heavier than the detour via b
    edges = [ukey("a", "b"), ukey("b", "c"), ukey("a", "c"), ukey("c", "d")]
    kappa = dict(zip(edges, [2 * U, 3 * U, 9 * U, 4 * U]))
    L = {"a": 20 * U, "b": 15 * U, "c": 8 * U, "d": 2 * U}
    got = compute_xi_psi(L, edges, kappa, "a", 1, 10 * U)
    assert got == exhaustive_xi_psi(L, edges, kappa, "a", 1, 10 * U)
    # d sits at distance 9 via b and c: 20 - 2 - 9
    assert got == (9 * U, 0)
    got = compute_xi_psi(L, edges, kappa, "d", 1, 10 * U)
    assert got == exhaustive_xi_psi(L, edges, kappa, "d", 1, 10 * U)
    # best backward path ends at a: 18 - 1.5 * 9
    assert got == (0, Fraction(9 * U, 2))


@settings(max_examples=150, deadline=None)
@given(st.integers(0, 10**9), st.integers(1, 4))
def test_xi_psi_match_enumeration(seed, s):
    nodes, edges, kappa, L = random_graph(random.Random(seed))
    C_s = to_fixed(random.Random(seed + 1).choice([3, 8, 20, 60]))
    for u in nodes:
        assert compute_xi_psi(L, edges, kappa, u, s, C_s) == exhaustive_xi_psi(L, edges, kappa, u, s, C_s)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10**9), st.integers(1, 4))
def test_matrix_form_matches_scalar(seed, s):
    nodes, edges, kappa, L = random_graph(random.Random(seed))
    C_s = 25 * U
    dist = all_pairs_kappa(nodes, edges, kappa)
    Lv = np.array([L[n] for n in nodes], dtype=np.int64)
    xi, psi2 = xi_psi_matrix(Lv, dist, s, C_s)
    for k, u in enumerate(nodes):
        x, p = compute_xi_psi(L, edges, kappa, u, s, C_s)
        assert (int(xi[k]), Fraction(int(psi2[k]), 2)) == (x, p)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10**9))
def test_potentials_monotone_in_level(seed):
    nodes, edges, kappa, L = random_graph(random.Random(seed))
    for u in nodes:
        vals = [compute_xi_psi(L, edges, kappa, u, s, 30 * U) for s in range(1, 6)]
        assert all(b[0] <= a[0] and b[1] <= a[1] for a, b in zip(vals, vals[1:]))


def test_legality_boundaries():
    assert is_legal(3 * U, Fraction(0), 20 * U)
    assert not is_legal(3 * U, Fraction(10 * U), 20 * U)
    assert not is_legal(20 * U, Fraction(0), 20 * U)
    assert is_legal(0, Fraction(10 * U - 1), 20 * U)


def test_legality_check_edge_example():
    e = ukey("u", "v")
    C = GradientSequence((20 * U, 20 * U))
    rep = legality_check({"u": 10 * U, "v": 3 * U}, {1: [e], 2: [e]}, {e: 4 * U}, C)
    assert rep.legal and rep.checked == 4 and rep.sequence_valid
    # stretch the skew until the backward potential reaches C_1/2
    rep = legality_check({"u": 0, "v": 16 * U}, {1: [e], 2: []}, {e: 4 * U}, C)
    assert rep.violations == 1
    assert rep.first_violation.node == "u" and rep.first_violation.psi == 10 * U
    # skew 16 is not below C_1 / 2, so the sequence itself is flagged
    assert not rep.sequence_valid


def test_legality_reports_invalid_sequence():
    C = GradientSequence((4 * U,))
    rep = legality_check({"u": 0, "v": 3 * U}, {}, {}, C)
    assert not rep.sequence_valid


def test_gradient_sequence_shape():
    C = gradient_sequence(100, 2.475, 4)
    assert C.values[0] == C.values[1] == 200 * U
    assert C.values[2] == to_fixed(200 / 2.475)
    assert C.values[-1] >= 4 * U
    assert 200 / 2.475 ** (len(C) - 1) < 4
    with pytest.raises(ContractViolation):
        GradientSequence((3, 4))


def bound_by_formula(G, sigma, kappa_min, d):
    # oracle: evaluate C_s from its closed form and pick the largest s with C_s >= d
    best = math.inf
    s = 1
    while True:
        c = 2 * G if s == 1 else 2 * G / sigma ** (s - 2)
        if c < kappa_min:
            break
        if c >= d:
            best = (s + 1) * c
        s += 1
    return best


@pytest.mark.parametrize("d", [4, 4.4, 17.6, 33, 80.8, 81, 200, 201])
def test_profile_bound_matches_formula(d):
    C = gradient_sequence(100, 2.475, 4)
    want = bound_by_formula(100, 2.475, 4, d)
    got = profile_bound(C, to_fixed(d))
    if want == math.inf:
        assert got == math.inf
    else:
        assert got == pytest.approx(to_fixed(want), abs=8)


def test_gradient_profile_rows():
    C = gradient_sequence(100, 2.475, 4)
    L = {"a": 5 * U, "b": 2 * U}
    rows = gradient_profile(L, {("a", "a"): 0, ("a", "b"): to_fixed(4.4)}, C)
    assert rows[0][:2] == (0, 0)
    assert rows[1][:2] == (to_fixed(4.4), 3 * U)
    assert rows[1][2] == profile_bound(C, to_fixed(4.4))


def test_stabilization_examples():
    times = np.arange(0, 11, dtype=np.int64) * U
    calm = np.full(11, U // 2)
    st_ = stabilization_time(times, calm, 3 * U, U)
    assert (st_.time, st_.censored, st_.skew_at_appearance) == (0.0, False, U // 2)
    decaying = np.array([9, 9, 9, 8, 6, 4, 2, 1, 1, 0, 0]) * U
    st_ = stabilization_time(times, decaying, 2 * U, 2 * U)
    # last sample above the bound is t=5, so the skew is settled from t=6 on
    assert st_.time == 4.0 and not st_.censored
    st_ = stabilization_time(times, np.full(11, 5 * U), 2 * U, U)
    assert st_.censored and st_.time == math.inf
    with pytest.raises(ContractViolation):
        stabilization_time(times, calm, 0, U, removed_after=True)


@settings(max_examples=100)
@given(st.lists(st.integers(0, 20), min_size=2, max_size=40), st.integers(0, 10), st.integers(0, 50))
def test_stabilization_matches_scan(skews, bound, appear):
    times = np.arange(len(skews), dtype=np.int64) * U
    sk = np.array(skews, dtype=np.int64) * U
    got = stabilization_time(times, sk, appear * U // 2, bound * U)
    # oracle: try every candidate start and keep the first that stays in bound
    k0 = next((k for k, t in enumerate(times) if t >= appear * U // 2), None)
    if k0 is None:
        assert got.censored
        return
    for k in range(k0, len(times)):
        if all(abs(x) <= bound * U for x in sk[k:]):
            if k == k0:
                assert got.time == 0.0
            else:
                assert got.time == pytest.approx((times[k] - appear * U // 2) / U)
            assert not got.censored
            return
    assert got.censored


def test_log_growth_check_rows():
    kappa = 4 * U
    D = 1000 * U
    table = [(kappa, 10 * U, 0), (4 * kappa, 30 * U, 0), (16 * kappa, 80 * U, 0)]
    ok, rows = log_growth_check(table, kappa, D)
    assert ok
    assert [r[0] for r in rows] == [kappa, 4 * kappa, 16 * kappa]
    assert rows[0][1] == pytest.approx(2.5)
    # a per-unit skew that collapses with distance is flagged
    steep = [(kappa, 40 * U, 0), (4 * kappa, 20 * U, 0), (16 * kappa, 20 * U, 0)]
    assert not log_growth_check(steep, kappa, D)[0]
