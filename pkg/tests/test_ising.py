import itertools
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from kawaflow.errors import ParameterError
from kawaflow.graph import complete_graph, cycle_graph, sample_regular
from kawaflow.ising import (
    CanonicalModel, CouplingMatrix, StateSpace, beta_thresholds, check_sc, chi0_bar, linear_variance,
    mask_to_spins, max_pair_covariance, moments, particles, product_measure, project_coupling,
    spins_to_mask, sup_top_covariance, variance_bound_check, weights,
)
from kawaflow._linalg import projector


def brute_force(A, beta, h, n, k):
    """Independent oracle: itertools enumeration of the sector."""
    states, logw = [], []
    for plus in itertools.combinations(range(n), k):
        s = -np.ones(n)
        s[list(plus)] = 1.0
        states.append(s)
        logw.append(-0.5 * beta * s @ A @ s + h @ s)
    logw = np.array(logw)
    w = np.exp(logw - logw.max())
    return np.array(states), w / w.sum()


def random_coupling(n, rng):
    """Symmetric matrix with constant row sums (constant vector is an eigenvector)."""
    B = rng.normal(size=(n, n))
    B = B + B.T
    P = projector(n)
    return P @ B @ P + 0.7 * np.ones((n, n)) / n


def test_particles_and_errors():
    assert particles(4, 0.0) == 2
    assert particles(6, 1 / 3) == 4
    with pytest.raises(ParameterError):
        particles(5, 0.0)


def test_canonical_space_size_and_rank():
    sp = StateSpace.canonical(6, 3)
    assert sp.size == 20
    for x in range(sp.size):
        assert sp.rank(sp.unrank(x)) == x
    assert spins_to_mask(mask_to_spins(int(sp.masks[5]), 6)) == int(sp.masks[5])


def test_infinite_temperature_is_uniform():
    mu = weights(CanonicalModel(CouplingMatrix.from_graph(cycle_graph(4)), 0.0, 0.0, 0.0))
    assert mu.p == pytest.approx(np.full(6, 1 / 6))


@pytest.mark.parametrize("beta", [0.0, 0.4, 2.0])
def test_two_site_closed_form(beta):
    h1, h2 = 0.3, -0.8
    mu = weights(CanonicalModel(CouplingMatrix(np.array([[0.0, 1.0], [1.0, 0.0]])), beta, [h1, h2], 0.0))
    plus_minus = mu.space.rank(0b01)
    d = h1 - h2
    assert mu.p[plus_minus] == pytest.approx(math.exp(d) / (math.exp(d) + math.exp(-d)), rel=1e-12)


def test_complete_graph_weights_are_flat():
    mu = weights(CanonicalModel(CouplingMatrix.from_graph(complete_graph(4), sign=1.0), 0.3, 0.0, 0.0))
    assert mu.p == pytest.approx(np.full(6, 1 / 6), rel=1e-12)


def test_weights_match_brute_force(rng):
    for n, k in [(5, 2), (6, 3), (7, 4)]:
        A = random_coupling(n, rng)
        h = rng.normal(size=n)
        mu = weights(CanonicalModel(CouplingMatrix(A), 0.7, h, (2 * k - n) / n))
        S, p = brute_force(A, 0.7, h, n, k)
        idx = [mu.space.rank(spins_to_mask(s)) for s in S]
        assert mu.p[idx] == pytest.approx(p, rel=1e-10)


def test_product_measure_single_field():
    t = 0.37
    mu = product_measure([t, 0, 0, 0], 4, 0.0)
    mean, _ = moments(mu)
    p_plus = (1 + mean[0]) / 2
    assert p_plus == pytest.approx(math.exp(2 * t) / (math.exp(2 * t) + 1), rel=1e-12)


@given(st.integers(2, 10), st.integers(0, 2**31))
def test_product_measure_equals_zero_beta_weights(n, seed):
    rng = np.random.default_rng(seed)
    k = int(rng.integers(0, n + 1))
    m = (2 * k - n) / n
    h = rng.normal(scale=2.0, size=n)
    a = product_measure(h, n, m)
    b = weights(CanonicalModel(CouplingMatrix(np.zeros((n, n))), 0.0, h, m))
    assert np.array_equal(a.p, b.p)


def test_uniform_moments():
    mean, cov = moments(product_measure(0.0, 4, 0.0))
    assert mean == pytest.approx(np.zeros(4), abs=1e-15)
    assert np.diag(cov) == pytest.approx(np.ones(4))
    off = cov[~np.eye(4, dtype=bool)]
    assert off == pytest.approx(np.full(12, -1 / 3))


@given(st.integers(3, 10), st.integers(0, 2**31))
def test_covariance_kills_constants(n, seed):
    rng = np.random.default_rng(seed)
    k = int(rng.integers(1, n))
    mu = weights(CanonicalModel(CouplingMatrix(random_coupling(n, rng)), 0.5, rng.normal(size=n), (2 * k - n) / n))
    _, cov = moments(mu)
    assert np.abs(cov @ np.ones(n)).max() < 1e-12


@given(st.integers(3, 10), st.integers(0, 2**31))
def test_product_conditioned_negative_correlation(n, seed):
    rng = np.random.default_rng(seed)
    k = int(rng.integers(1, n))
    mu = product_measure(rng.uniform(-3, 3, n), n, (2 * k - n) / n)
    assert max_pair_covariance(mu) <= 1e-12


@given(st.integers(3, 9), st.floats(-3.0, 3.0), st.integers(0, 2**31))
def test_shift_invariance(n, c, seed):
    rng = np.random.default_rng(seed)
    k = int(rng.integers(1, n))
    m = (2 * k - n) / n
    A = random_coupling(n, rng)
    h = rng.normal(size=n)
    a = weights(CanonicalModel(CouplingMatrix(A), 0.6, h, m))
    b = weights(CanonicalModel(CouplingMatrix(A + c * projector(n)), 0.6, h, m))
    assert np.max(np.abs(a.p / b.p - 1)) < 1e-10


def test_normalised_model_gives_same_measure(rng):
    g = sample_regular(10, 3, 4)
    model = CanonicalModel(CouplingMatrix.from_graph(g), 0.3, rng.normal(size=10), 0.0)
    a, b = weights(model), weights(model.normalised())
    assert np.max(np.abs(a.p / b.p - 1)) < 1e-10
    ev = np.linalg.eigvalsh(model.normalised().coupling.dense)
    ev = ev[np.abs(ev) > 1e-9]
    assert ev.min() >= 1e-3 - 1e-12 and ev.max() <= 1 - 1e-3 + 1e-12


def test_project_coupling_preserves_measure(rng):
    n, k = 7, 3
    A = rng.normal(size=(n, n))
    A = A + A.T
    h = rng.normal(size=n)
    m = (2 * k - n) / n
    A2, h2 = project_coupling(A, h, 0.8, m)
    sp = StateSpace.canonical(n, k)
    S = sp.spins
    l1 = -0.4 * np.einsum("ij,jk,ik->i", S, A, S) + S @ h
    l2 = -0.4 * np.einsum("ij,jk,ik->i", S, A2, S) + S @ h2
    d = l1 - l2
    assert np.ptp(d) < 1e-10


def test_covariance_is_hessian_of_log_partition(rng):
    n, k = 6, 3
    A = random_coupling(n, rng)
    h = rng.normal(size=n)
    model = lambda hh: weights(CanonicalModel(CouplingMatrix(A), 0.4, hh, 0.0))
    _, cov = moments(model(h))
    eps = 1e-4
    H = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            ei, ej = np.eye(n)[i] * eps, np.eye(n)[j] * eps
            H[i, j] = (model(h + ei + ej).log_z - model(h + ei - ej).log_z
                       - model(h - ei + ej).log_z + model(h - ei - ej).log_z) / (4 * eps**2)
    assert H == pytest.approx(cov, abs=1e-6)


def test_linear_variance_matches_covariance_form(rng):
    mu = product_measure(rng.normal(size=8), 8, 0.25)
    f = rng.normal(size=8)
    _, cov = moments(mu)
    assert linear_variance(mu, f) == pytest.approx(f @ cov @ f, rel=1e-10)
    rep = variance_bound_check(mu, [f], factor=2.0)
    assert rep["violations"] == 0 and rep["max_ratio"] <= 2.0


def test_sc_plumbing():
    k4 = check_sc(CouplingMatrix.from_graph(complete_graph(4)), 0.7)
    assert k4.holds and k4.M_beta == 1.0
    c4 = check_sc(CouplingMatrix.from_graph(cycle_graph(4)), 0.2)
    assert c4.holds and c4.M_beta == pytest.approx(5.0, abs=1e-12)
    assert not check_sc(CouplingMatrix.from_graph(cycle_graph(4)), 0.25).holds


def test_sc_threshold_for_regular_graphs():
    thr = beta_thresholds(3)["beta_sc"]
    assert thr == pytest.approx(1 / (8 * math.sqrt(2)))
    g = sample_regular(200, 3, 1)
    assert check_sc(CouplingMatrix.from_graph(g), 0.95 * thr).holds


def test_two_site_top_covariance_closed_form():
    # N=2, m=0: cov = v [[1,-1],[-1,1]], v = 1 - tanh(h1-h2)^2, top eigenvalue 2v <= 2
    A = np.zeros((2, 2))
    val, h, _ = sup_top_covariance(A, 0.0, 2, 0.0, restarts=4)
    assert val == pytest.approx(2.0, abs=1e-9)


def test_cc_search_bounds():
    rep = chi0_bar(np.zeros((6, 6)), [0.0], 6, 0.0, restarts=6)
    assert max(rep.detail["chi0"]) <= 2 + 1e-9
    c = CouplingMatrix.from_graph(cycle_graph(6))
    An, bn = c.normalised, c.beta_rescale(0.1)
    val, _, _ = sup_top_covariance(An, bn, 6, 0.0, restarts=6)
    assert val <= 2 / (1 - 2 * bn) + 1e-6
