import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from kawaflow.dynamics import (
    autocorrelation_time, build_generator, coo_text, dirichlet_form, make_kernel, run_chain,
)
from kawaflow.errors import ParameterError
from kawaflow.funcineq import spectral_gap_exact, transition_matrix
from kawaflow.graph import complete_graph, cycle_graph, petersen_graph, sample_regular
from kawaflow.ising import CanonicalModel, CouplingMatrix, Measure, StateSpace, product_measure, weights


def model_on(g, beta, h, m):
    return CanonicalModel(CouplingMatrix.from_graph(g), beta, h, m)


def test_two_site_down_up_rate_is_half():
    mu = product_measure(0.0, 2, 0.0)
    k = make_kernel("down_up", mu)
    assert k.rate(0b01, 0, 1) == pytest.approx(0.5)


def test_standard_rate_under_uniform_is_one_over_n():
    mu = product_measure(0.0, 6, 0.0)
    _, _, rate, _, _ = make_kernel("standard", mu).transitions()
    assert rate == pytest.approx(np.full(rate.size, 1 / 6))


def test_standard_generator_on_four_sites():
    gen = build_generator(make_kernel("standard", product_measure(0.0, 4, 0.0)))
    Q = gen.Q.toarray()
    assert Q.shape == (6, 6)
    off = Q[~np.eye(6, dtype=bool)]
    assert set(np.round(off[off != 0], 14)) == {0.25}
    # exact spectrum of -Q: the Johnson scheme J(4,2) with rate 1/4
    ev = np.sort(np.linalg.eigvalsh(-Q))
    assert ev == pytest.approx([0, 1, 1, 1, 1.5, 1.5])
    assert spectral_gap_exact(gen).value == pytest.approx(1.0)


def test_down_up_uniform_gap_at_least_half():
    gen = build_generator(make_kernel("down_up", product_measure(0.0, 4, 0.0)))
    assert spectral_gap_exact(gen).value >= 0.5 - 1e-12


@given(st.integers(4, 9), st.integers(0, 2**31))
def test_down_up_dominated_by_standard_ratio_bound(n, seed):
    # for m <= 0: c_du <= C^2 / (C + N - k) <= 2 C^2 / N with C the largest one-move ratio
    rng = np.random.default_rng(seed)
    k = int(rng.integers(1, n // 2 + 1))
    mu = product_measure(rng.uniform(-1, 1, n), n, (2 * k - n) / n)
    src, dst, rate, _, _ = make_kernel("down_up", mu).transitions()
    C = float(np.exp(np.abs(mu.logp[dst] - mu.logp[src]).max()))
    assert rate.max() <= 2 * C**2 / n + 1e-12


@given(st.integers(0, 2**31))
def test_kawasaki_flavour_sandwich(seed):
    rng = np.random.default_rng(seed)
    g = petersen_graph()
    model = model_on(g, float(rng.uniform(0, 1)), rng.normal(size=10), 0.0)
    hb = make_kernel("kawasaki", model, g, "heat_bath").transitions()
    me = make_kernel("kawasaki", model, g, "metropolis").transitions()
    assert np.array_equal(hb[0], me[0]) and np.array_equal(hb[1], me[1])
    assert np.all(hb[2] <= me[2] + 1e-15)
    assert np.all(me[2] <= 2 * hb[2] + 1e-15)


def test_metropolis_at_infinite_temperature_is_one():
    g = cycle_graph(6)
    _, _, rate, i, j = make_kernel("kawasaki", model_on(g, 0.0, 0.0, 0.0), g, "metropolis").transitions()
    assert np.all(rate == 1.0)
    adj = g.adjacency.toarray()
    assert np.all(adj[i, j] > 0)


@pytest.mark.parametrize("kind", ["standard", "down_up", "up_down", "kawasaki"])
@pytest.mark.parametrize("flavour", ["heat_bath", "metropolis"])
def test_reversibility_and_real_spectrum(kind, flavour, rng):
    g = sample_regular(8, 3, 5)
    model = model_on(g, 0.4, rng.normal(size=8), 0.25)
    gen = build_generator(make_kernel(kind, model, g, flavour))
    assert gen.detailed_balance_residual() < 1e-10
    assert gen.stationarity_residual() < 1e-10
    ev = np.linalg.eigvals(-gen.Q.toarray())
    assert np.abs(ev.imag).max() < 1e-10


def test_dirichlet_form_identities(rng):
    g = petersen_graph()
    gen = build_generator(make_kernel("kawasaki", model_on(g, 0.3, rng.normal(size=10), 0.2), g))
    F = rng.normal(size=gen.size)
    quad = float(gen.mu @ (F * (-(gen.Q @ F))))
    assert dirichlet_form(gen, F) == pytest.approx(quad, rel=1e-10)
    assert dirichlet_form(gen, np.full(gen.size, 3.0)) == 0.0


def test_standard_form_by_double_sum(rng):
    mu = product_measure(0.0, 4, 0.0)
    gen = build_generator(make_kernel("standard", mu))
    F = rng.normal(size=6)
    S = mu.space
    total = 0.0
    for x in range(6):
        for y in range(6):
            if bin(int(S.masks[x]) ^ int(S.masks[y])).count("1") == 2:
                total += (F[y] - F[x]) ** 2
    assert dirichlet_form(gen, F) == pytest.approx(total / 6 * 0.5 * 0.25, rel=1e-12)


def test_down_up_stays_on_restricted_support():
    masks = [0b0011, 0b0101, 0b0110, 0b1001, 0b1010]
    mu = Measure.uniform(StateSpace.from_masks(4, masks))
    src, dst, rate, _, _ = make_kernel("down_up", mu).transitions()
    assert np.all(dst >= 0) and np.all(rate > 0)


def test_uniformised_and_continuous_time_agree(rng):
    g = cycle_graph(6)
    gen = build_generator(make_kernel("kawasaki", model_on(g, 0.5, rng.normal(size=6), 0.0), g))
    t = 1.7
    Pt = transition_matrix(gen, t)
    from scipy.linalg import expm
    assert np.abs(Pt - expm(t * gen.Q.toarray())).max() < 1e-9


def test_run_chain_conserves_magnetisation():
    g = sample_regular(12, 3, 2)
    model = model_on(g, 0.3, 0.0, 0.0)
    traj = run_chain(make_kernel("kawasaki", model, g), 0b000000111111, 30.0, seed=1, check_conservation=True)
    assert np.all(traj.observables["magnetisation"] == 0.0)


def test_run_chain_is_seeded():
    g = cycle_graph(8)
    kern = make_kernel("standard", model_on(g, 0.2, 0.0, 0.0))
    a = run_chain(kern, 0b1111, 20.0, seed=9)
    b = run_chain(kern, 0b1111, 20.0, seed=9)
    assert np.array_equal(a.observables["energy"], b.observables["energy"])


def test_down_up_occupancy_at_infinite_temperature():
    n, k = 10, 4
    g = complete_graph(n)
    kern = make_kernel("down_up", model_on(g, 0.0, 0.0, (2 * k - n) / n), g)
    rows = np.eye(n)
    traj = run_chain(kern, (1 << k) - 1, 2000.0, seed=3, functionals=rows, n_records=2000)
    for i in range(n):
        mean, se = traj.batch_mean(f"f{i}")
        occ, occ_se = (1 + mean) / 2, se / 2
        assert abs(occ - k / n) <= 3 * max(occ_se, 1e-3) + 0.02


def test_chain_energy_matches_enumeration():
    g = sample_regular(12, 3, 7)
    model = model_on(g, 0.3, 0.0, 0.0)
    mu = weights(model)
    S = mu.space.spins
    A = g.adjacency.toarray()
    exact = float(mu.p @ np.einsum("ij,jk,ik->i", S, -A, S))
    traj = run_chain(make_kernel("kawasaki", model, g), 0b000000111111, 3000.0, seed=4, n_records=3000)
    mean, se = traj.batch_mean("energy")
    assert abs(mean - exact) <= 3 * se + 1e-9


def test_run_chain_rejects_bad_start():
    g = cycle_graph(6)
    with pytest.raises(ParameterError):
        run_chain(make_kernel("standard", model_on(g, 0.0, 0.0, 0.0)), 0b1, 1.0, seed=0)


def test_kawasaki_needs_graph():
    with pytest.raises(ParameterError):
        make_kernel("kawasaki", product_measure(0.0, 4, 0.0))


def test_coo_export_roundtrip():
    gen = build_generator(make_kernel("standard", product_measure(0.0, 4, 0.0)))
    lines = coo_text(gen).splitlines()
    size, nnz = map(int, lines[0].split())
    assert size == 6 and nnz == len(lines) - 1 == gen.Q.nnz


def test_autocorrelation_time_of_white_noise(rng):
    tau = autocorrelation_time(rng.normal(size=20000))
    assert 0.8 < tau < 1.2
