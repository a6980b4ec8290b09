import math

import networkx as nx
import numpy as np
import pytest
from hypothesis import given, strategies as st

from kawaflow.errors import ModelError, ParameterError
from kawaflow.graph import (
    Graph, bfs_distances, complete_graph, congestion, cycle_graph, diameter, geodesic_congestion,
    geodesic_path, geodesic_paths, lattice_graph, path_bound, path_graph, petersen_graph, read_graph,
    sample_regular, spectrum, write_graph,
)


def test_complete_graph_spectrum_has_zero_support():
    rep = spectrum(complete_graph(4))
    assert rep.lambda_1 == pytest.approx(3.0)
    assert rep.lambda_2 == pytest.approx(-1.0)
    assert rep.lambda_N == pytest.approx(-1.0)
    assert rep.delta == pytest.approx(0.0, abs=1e-12)


def test_four_cycle_nontrivial_spectrum():
    rep = spectrum(cycle_graph(4), mode="exact")
    assert sorted(rep.eigenvalues) == pytest.approx([-2.0, 0.0, 0.0])
    assert rep.delta == pytest.approx(2.0)


def test_spectrum_modes_agree(rng):
    g = sample_regular(40, 3, seed=3)
    dense = spectrum(g, mode="exact")
    sparse = spectrum(g, mode="iterative")
    assert sparse.lambda_2 == pytest.approx(dense.lambda_2, abs=1e-8)
    assert sparse.lambda_N == pytest.approx(dense.lambda_N, abs=1e-8)


def test_spectrum_rejects_nonconstant_eigenvector():
    with pytest.raises(ModelError):
        spectrum(path_graph(5))


def test_petersen_geometry():
    g = petersen_graph()
    assert g.n == 10 and g.n_edges == 15 and g.is_regular(3)
    assert diameter(g) == 2
    ps = geodesic_paths(g)
    assert len(ps.paths) == 45
    assert all(ell <= 2 for ell in ps.lengths.values())


def test_geodesic_tie_breaks_toward_lower_index():
    g = cycle_graph(4)
    assert geodesic_path(g, 1, 3) == (1, 0, 3)
    assert geodesic_paths(g).path(1, 3) == (1, 0, 3)


def test_complete_graph_congestion():
    for n in (4, 7):
        rep = geodesic_congestion(complete_graph(n))
        assert rep.value == pytest.approx(1.0 / n)
        assert rep.diameter == 1


@given(st.integers(4, 30).filter(lambda n: n % 2 == 0), st.integers(0, 10_000))
def test_geodesic_congestion_matches_census(n, seed):
    g = sample_regular(n, 3, seed)
    fast = geodesic_congestion(g)
    slow = congestion(geodesic_paths(g))
    assert fast.value == pytest.approx(slow.value, rel=1e-12)
    assert fast.diameter == slow.diameter


@given(st.integers(6, 40).filter(lambda n: n % 2 == 0), st.integers(0, 10_000))
def test_sample_regular_is_simple_and_regular(n, seed):
    g = sample_regular(n, 3, seed)
    assert g.is_regular(3)
    e = {tuple(sorted(map(int, x))) for x in g.edges}
    assert len(e) == g.n_edges
    assert all(u != v for u, v in e)


def test_sample_regular_is_seeded():
    a, b = sample_regular(50, 3, 7), sample_regular(50, 3, 7)
    assert np.array_equal(a.edges, b.edges)


def test_sample_regular_parity():
    with pytest.raises(ParameterError):
        sample_regular(7, 3, 0)


def test_bfs_distances_match_networkx():
    g = sample_regular(30, 3, 11)
    G = nx.Graph([tuple(map(int, e)) for e in g.edges])
    ref = nx.single_source_shortest_path_length(G, 0)
    d = bfs_distances(g, 0)
    assert all(d[v] == ref[v] for v in range(30))
    assert diameter(g) == nx.diameter(G)


def test_lattice_graph_counts():
    g = lattice_graph(4, 2)
    assert g.n == 16 and g.n_edges == 24


def test_path_bound_formula():
    assert path_bound(100, 3, 4) == pytest.approx(4**3 * 2**4 / 100)
    assert path_bound(100, None, 4) is None


def test_graph_file_roundtrip(tmp_path):
    g = petersen_graph()
    write_graph(g, tmp_path / "g.txt")
    h = read_graph(tmp_path / "g.txt")
    assert h.n == g.n and np.array_equal(h.edges, g.edges)


def test_read_graph_rejects_bad_header(tmp_path):
    p = tmp_path / "g.txt"
    p.write_text("3 2\n0 1\n")
    with pytest.raises(ParameterError):
        read_graph(p)


def test_disconnected_graph_congestion_fails():
    g = Graph(4, np.array([[0, 1], [2, 3]]))
    assert not g.is_connected()
    with pytest.raises(ParameterError):
        geodesic_congestion(g)
    assert math.isinf(diameter(g))
