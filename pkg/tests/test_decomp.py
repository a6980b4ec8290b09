import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.special import logsumexp

from kawaflow._linalg import projector
from kawaflow.decomp import (
    K_constant, K_max, build_context, convolution_identity_check, dirichlet_comparison_check,
    entropic_stability_check, fluctuation_measure, ising_measure, nu0_log_density,
    renormalised_potential, sqrt_mean_gradient, variance_decomposition,
)
from kawaflow.errors import ModelError, ParameterError
from kawaflow.graph import cycle_graph
from kawaflow.ising import CouplingMatrix, StateSpace, moments, product_measure


def normalised_random(n, rng):
    B = rng.normal(size=(n, n))
    B = B + B.T
    P = projector(n)
    return CouplingMatrix(P @ B @ P).normalised


def zero_sum(n, rng, scale=1.0):
    x = rng.normal(scale=scale, size=n)
    return x - x.mean()


def test_scalar_coupling_closed_forms(rng):
    n, eps, beta = 6, 0.3, 0.2
    ctx = build_context(eps * projector(n), beta)
    P = projector(n)
    for t in (0.0, 0.07, beta):
        assert np.abs(ctx.C_t(t) - P / (t * eps + beta - t)).max() < 1e-12
    assert np.abs(ctx.gauss_cov - (1 - eps) * P / beta).max() < 1e-12


def test_covariance_path_is_increasing(rng):
    ctx = build_context(normalised_random(6, rng), 0.3)
    f = zero_sum(6, rng)
    vals = [f @ ctx.C_t(t) @ f for t in np.linspace(0, 0.3, 7)]
    assert np.all(np.diff(vals) > 0)


def test_gauss_cov_spectrum(rng):
    A = normalised_random(7, rng)
    ctx = build_context(A, 0.25)
    a = np.sort(ctx.spectrum)
    g = np.sort(np.linalg.eigvalsh(ctx.gauss_cov_r))
    assert g == pytest.approx(np.sort((1 - a) / 0.25), rel=1e-10)
    assert max(ctx.identity_residuals().values()) < 1e-10


def test_context_rejects_unnormalised():
    with pytest.raises(ModelError):
        build_context(-cycle_graph(4).adjacency.toarray(), 0.2)
    with pytest.raises(ParameterError):
        build_context(0.5 * projector(4), 1.5)


def test_potential_derivatives_by_finite_differences(rng):
    n = 6
    ctx = build_context(normalised_random(n, rng), 0.3)
    h = rng.normal(size=n)
    y = rng.normal(size=n - 1)
    V = lambda yy: renormalised_potential(ctx, h, 0.0, ctx.U @ yy).V0
    rep = renormalised_potential(ctx, h, 0.0, ctx.U @ y)
    d = 1e-4
    E = np.eye(n - 1) * d
    grad = np.array([(V(y + e) - V(y - e)) / (2 * d) for e in E])
    hess = np.array([[(V(y + a + b) - V(y + a - b) - V(y - a + b) + V(y - a - b)) / (4 * d * d) for b in E] for a in E])
    assert np.abs(grad - rep.grad).max() < 1e-7
    assert np.abs(hess - rep.hess).max() < 1e-5


def test_symmetric_potential_has_zero_gradient():
    ctx = build_context(0.4 * projector(6), 0.2)
    assert np.abs(renormalised_potential(ctx, 0.0, 0.0, np.zeros(6)).grad).max() < 1e-14


@given(st.integers(3, 8).filter(lambda n: n % 2 == 0), st.sampled_from([0.1, 0.3]), st.integers(0, 2**31))
def test_potential_hessian_bound(n, beta, seed):
    rng = np.random.default_rng(seed)
    ctx = build_context(normalised_random(n, rng), beta)
    rep = renormalised_potential(ctx, rng.normal(scale=2, size=n), 0.0, zero_sum(n, rng, 3.0))
    assert rep.min_eig >= beta - 2 * beta**2 - 1e-9


def test_nu0_strict_concavity(rng):
    n, beta = 6, 0.3
    ctx = build_context(normalised_random(n, rng), beta)
    h = rng.normal(size=n)
    y = rng.normal(size=n - 1)
    f = lambda yy: nu0_log_density(ctx, h, 0.0, ctx.U @ yy)
    d = 1e-4
    E = np.eye(n - 1) * d
    H = np.array([[(f(y + a + b) - f(y + a - b) - f(y - a + b) + f(y - a - b)) / (4 * d * d) for b in E] for a in E])
    lower = np.linalg.eigvalsh(ctx.C_inv_r).min() + beta - 2 * beta**2
    assert np.linalg.eigvalsh(-H).min() >= lower - 1e-5


def test_fluctuation_measure_endpoints(rng):
    n, beta = 6, 0.25
    ctx = build_context(normalised_random(n, rng), beta)
    h = rng.normal(size=n)
    phi = zero_sum(n, rng)
    mu0 = fluctuation_measure(ctx, h, 0.0, 0.0, phi)
    pi = product_measure(h + beta * phi, n, 0.0)
    assert np.abs(mu0.p - pi.p).max() < 1e-15
    mub = fluctuation_measure(ctx, h, 0.0, beta, np.zeros(n))
    nu = ising_measure(ctx, h, 0.0)
    assert np.max(np.abs(mub.p / nu.p - 1)) < 1e-10


@given(st.sampled_from([0.0, 0.1, 0.2, 0.35]), st.integers(0, 2**31))
def test_fluctuation_covariance_bound(t, seed):
    rng = np.random.default_rng(seed)
    n = 6
    ctx = build_context(normalised_random(n, rng), 0.4)
    mu = fluctuation_measure(ctx, rng.normal(size=n), 0.0, t, zero_sum(n, rng, 2.0))
    _, cov = moments(mu)
    assert np.linalg.eigvalsh(cov).max() <= 1 / (0.5 - t) + 1e-9


def test_entropic_stability(rng):
    n, beta = 6, 0.2
    ctx = build_context(normalised_random(n, rng), beta)
    space = StateSpace.canonical(n, 3)
    h = rng.normal(size=n)
    const = entropic_stability_check(ctx, h, 0.0, 0.1, np.zeros(n), np.ones(space.size))
    assert const["holds"] and const["lhs"] == pytest.approx(0.0, abs=1e-15)
    for _ in range(40):
        F = rng.dirichlet(np.full(space.size, 0.5))
        for t in (0.0, beta / 2):
            assert entropic_stability_check(ctx, h, 0.0, t, zero_sum(n, rng, 2.0), F)["holds"]


def test_sqrt_mean_gradient_by_finite_differences(rng):
    n = 6
    ctx = build_context(normalised_random(n, rng), 0.3)
    h = rng.normal(size=n)
    F = rng.exponential(size=20)
    phi = zero_sum(n, rng)
    exact = sqrt_mean_gradient(ctx, h, 0.0, 0.1, phi, F)
    fd = sqrt_mean_gradient(ctx, h, 0.0, 0.1, phi, F, fd_step=1e-5)
    assert np.abs(exact - fd).max() < 1e-5


@pytest.mark.parametrize("n", [4, 6])
@pytest.mark.parametrize("frac", [0.0, 0.5])
def test_convolution_identity(n, frac):
    c = CouplingMatrix.from_graph(cycle_graph(n))
    ctx = build_context(c.normalised, 0.2)
    rep = convolution_identity_check(ctx, 0.0, 0.0, frac * 0.2)
    assert rep.spread < 1e-6


def test_convolution_identity_small_beta():
    ctx = build_context(0.5 * projector(4), 1e-4)
    assert convolution_identity_check(ctx, 0.0, 0.0, 0.0).spread < 1e-8


@pytest.mark.parametrize("beta", [0.1, 0.3])
def test_variance_decomposition_and_bound(beta, rng):
    n = 6
    ctx = build_context(normalised_random(n, rng), beta)
    h = rng.normal(size=n)
    f = rng.normal(size=n)
    r = variance_decomposition(ctx, h, 0.0, f)
    assert r["decomposition"] == pytest.approx(r["enumeration"], abs=1e-8)
    assert r["enumeration"] <= f @ f / (0.5 - beta) + 1e-9


def test_K_scalar_coupling_hand_formula(rng):
    n, eps, beta = 6, 0.4, 0.2
    ctx = build_context(eps * projector(n), beta)
    h = rng.normal(size=n)
    sigma = np.array([1, 1, 1, -1, -1, -1], dtype=float)
    i, j = 0, 4
    K, d = K_constant(ctx, h, 0.0, sigma, i, j, detail=True)
    J = d["J"]
    w = np.exp(2 * h[J] - logsumexp(2 * h[J]))
    factor = np.where((J == i) | (J == j), 1.0, math.exp(4 * beta * (1 - eps)))
    assert K == pytest.approx(float(w @ factor), rel=1e-8)
    assert d["exponents"][0] == pytest.approx(0.0, abs=1e-12)


def test_K_invariance_and_bound(rng):
    n, beta = 6, 0.25
    ctx = build_context(normalised_random(n, rng), beta)
    h = rng.normal(size=n)
    sigma = np.array([1, -1, 1, -1, 1, -1], dtype=float)
    a = K_constant(ctx, h, 0.0, sigma, 0, 1)
    b = K_constant(ctx, h + 3.7, 0.0, sigma, 0, 1)
    assert a == pytest.approx(b, abs=1e-12)
    r = K_max(ctx, h, 0.0)
    assert r["K"] <= math.exp(8 * beta) + 1e-9
    assert r["k_equals_i_residual"] < 1e-12


def test_K_rejects_inadmissible(rng):
    ctx = build_context(0.3 * projector(4), 0.2)
    with pytest.raises(ParameterError):
        K_constant(ctx, 0.0, 0.0, np.array([1, 1, -1, -1.0]), 0, 1)


def test_dirichlet_comparison_routes_agree(rng):
    n, beta = 6, 0.15
    ctx = build_context(normalised_random(n, rng), beta)
    h = rng.normal(scale=0.5, size=n)
    sigma = np.array([1, -1, 1, -1, 1, -1], dtype=float)
    r = dirichlet_comparison_check(ctx, h, 0.0, sigma, 0, 1, n_samples=200_000, seed=1)
    assert r["reliable"]
    se = math.hypot(r["se_is"], r["se_gauss"])
    assert abs(r["lhs_is"] - r["lhs_gauss"]) <= 4 * se
    assert r["lhs_is"] <= r["rhs"] + 3 * r["se_is"]


def test_dirichlet_comparison_small_beta():
    ctx = build_context(0.5 * projector(4), 1e-6)
    sigma = np.array([1, 1, -1, -1.0])
    r = dirichlet_comparison_check(ctx, 0.0, 0.0, sigma, 0, 2, n_samples=20_000, seed=0)
    assert r["ratio"] == pytest.approx(1.0, abs=1e-3)
