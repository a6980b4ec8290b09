import math

import numpy as np
import pytest

from kawaflow.errors import ParameterError
from kawaflow.graph import complete_graph, cycle_graph, geodesic_congestion, geodesic_paths, lattice_graph, sample_regular
from kawaflow.ising import CanonicalModel, CouplingMatrix, StateSpace, product_measure, weights
from kawaflow.mp import (
    calibrate_interval_constant, conditional_comparison, cycle_constant, exact_comparison, exchange_form,
    graph_path_bound, interval_constant, interval_path_bound, lattice_congestion, lattice_path_bound,
    nn_pairs, pair_laplacian, path_census, rrg_chain_value, witness_ratio,
)


def test_exchange_form_by_hand(rng):
    mu = product_measure(rng.normal(size=5), 5, -0.2)
    F = rng.normal(size=mu.space.size)
    S = mu.space
    total = 0.0
    for x, mask in enumerate(S.masks):
        mask = int(mask)
        if ((mask >> 1) & 1) != ((mask >> 3) & 1):
            y = S.rank(mask ^ 0b1010)
            total += mu.p[x] * (F[y] - F[x]) ** 2
    assert exchange_form(mu, [(1, 3)], F) == pytest.approx(total, rel=1e-12)
    L = pair_laplacian(mu, [(1, 3)]).toarray()
    assert F @ L @ F == pytest.approx(exchange_form(mu, [(1, 3)], F), rel=1e-12)


def test_identical_forms_give_one(rng):
    mu = product_measure(rng.normal(size=6), 6, 0.0)
    pairs = [(0, 1), (1, 2), (2, 3), (3, 4), (4, 5)]
    assert exact_comparison(mu, pairs, pairs).exact_constant == pytest.approx(1.0, rel=1e-10)


def test_witness_reproduces_constant(rng):
    mu = product_measure(rng.normal(size=6), 6, 0.0)
    rep = exact_comparison(mu, [(0, 4)], nn_pairs(0, 4))
    assert witness_ratio(mu, [(0, 4)], nn_pairs(0, 4), rep.witness) == pytest.approx(rep.exact_constant, rel=1e-8)


def test_conditional_route_matches_global(rng):
    mu = product_measure(rng.normal(size=8), 8, 0.0)
    for j in (2, 3, 5):
        glob = exact_comparison(mu, [(1, j)], nn_pairs(1, j)).exact_constant
        cond = conditional_comparison(mu, [(1, j)], nn_pairs(1, j))
        assert cond == pytest.approx(glob, rel=1e-8)


def test_uniform_interval_constant_is_distance():
    mu = product_measure(0.0, 8, 0.0)
    for j in range(1, 8):
        assert interval_constant(mu, 0, j).exact_constant == pytest.approx(j, rel=1e-9)
    assert calibrate_interval_constant(mu) == pytest.approx(1.0, rel=1e-9)


def test_mean_field_against_nearest_neighbour_grows():
    vals = []
    for n in (4, 6, 8):
        mu = product_measure(0.0, n, 0.0)
        full = [(i, j) for i in range(n) for j in range(i + 1, n)]
        vals.append(exact_comparison(mu, full, nn_pairs(0, n - 1)).exact_constant)
    assert vals[0] < vals[1] < vals[2]


def test_interval_bound_with_constant_four(rng):
    mu = product_measure(0.0, 8, 0.0)
    for _ in range(1000):
        i, j = sorted(rng.choice(8, 2, replace=False))
        b = interval_path_bound(mu, int(i), int(j), C=4.0)
        assert b.holds(rng.normal(size=mu.space.size))


def test_interval_bound_single_step(rng):
    mu = product_measure(rng.normal(size=6), 6, 0.0)
    b = interval_path_bound(mu, 2, 3, C=1.0)
    F = rng.normal(size=mu.space.size)
    assert b.rhs(F) == pytest.approx(b.lhs(F))
    with pytest.raises(ParameterError):
        interval_path_bound(mu, 2, 3, R=2)


def test_interval_bound_linear_in_distance(rng):
    mu = product_measure(0.0, 9, 1 / 9)
    F = rng.normal(size=mu.space.size)
    r = [interval_path_bound(mu, 0, j, C=1.0).rhs(F) / (j * exchange_form(mu, nn_pairs(0, j), F)) for j in range(1, 9)]
    assert r == pytest.approx(np.ones(8))


def test_census_agrees_with_graph_congestion():
    for g in (cycle_graph(9), sample_regular(20, 3, 1), complete_graph(6)):
        rep = graph_path_bound(g)
        assert rep.congestion == pytest.approx(geodesic_congestion(g).value, rel=1e-12)


def test_complete_graph_bound_against_exact():
    for n in (4, 6, 8):
        g = complete_graph(n)
        mu = product_measure(0.0, n, 0.0)
        rep = graph_path_bound(g, measure=mu)
        assert rep.exact_constant <= rep.analytic_bound + 1e-9
        assert rep.analytic_bound <= 4 * rep.exact_constant


def test_path_bound_dominates_exact_on_cycle(rng):
    g = cycle_graph(6)
    mu = weights(CanonicalModel(CouplingMatrix.from_graph(g), 0.2, rng.normal(scale=0.5, size=6), 0.0))
    rep = graph_path_bound(g, measure=mu)
    assert rep.exact_constant <= rep.analytic_bound * (1 + 1e-9)


def test_lattice_census():
    assert lattice_congestion(2, 1) == pytest.approx(1.0)
    for L in (4, 6, 8):
        # open path: the middle edge carries sum over crossing pairs of |i - j|
        n = L
        mid = sum(abs(i - j) for i in range(n) for j in range(n) if (i < n // 2) != (j < n // 2))
        assert lattice_congestion(L, 1) == pytest.approx(mid / n)
    r = [lattice_congestion(L, 2) / L**2 for L in (4, 8, 16)]
    assert max(r) / min(r) < 4


def test_small_cube_with_hole():
    space = StateSpace.canonical(9, 4)
    mu = product_measure(0.0, 9, (2 * 4 - 9) / 9, space)
    rep = lattice_path_bound(3, 2, mu)
    assert rep.exact_constant <= rep.analytic_bound * (1 + 1e-9)


def test_cycle_diffusive_shape():
    r = [cycle_constant(product_measure(0.0, n, 0.0)) / n**2 for n in (4, 6, 8, 10)]
    assert max(r) / min(r) < 4


def test_chain_value():
    v = rrg_chain_value(1024, 3, 10)
    assert v["chain"] == pytest.approx(1000 * 1024 / 1024)
    assert v["log4"] == pytest.approx(math.log(1024) ** 4)


def test_path_census_norm():
    paths = {(0, 2): (0, 1, 2), (2, 0): (2, 1, 0)}
    val, load = path_census(paths, 3, 0.5)
    assert load == {(0, 1): 4, (1, 2): 4} and val == 2.0
