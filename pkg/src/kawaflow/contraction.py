"""Particle-removal decompositions of measures on k-subsets and the entropy bounds they give.

A configuration phi with k - l particles sits below sigma (phi <= sigma) when its
particles are a subset of those of sigma.  Level l carries
    nu_l(phi) = pi(sigma >= phi) / C(k, l),     mu_l^phi = pi( . | sigma >= phi).
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from itertools import combinations

import numpy as np
import scipy.sparse as sp
from scipy.optimize import minimize
from scipy.special import logsumexp

from .dynamics import GeneratorMatrix
from .errors import DomainError, ParameterError
from .funcineq import entropy, relative_entropy
from .ising import Measure


def _bit_positions(space) -> np.ndarray:
    occ = space.occupation
    return np.nonzero(occ)[1].reshape(space.size, space.k)


@dataclass(eq=False)
class LevelDecomposition:
    ell: int
    n: int
    k: int
    phis: np.ndarray          # masks with k - ell particles, sorted
    mass: np.ndarray          # pi(sigma >= phi)
    nu: np.ndarray            # mass / C(k, ell)
    mu: sp.csr_matrix         # row phi: conditional measure pi( . | sigma >= phi)
    below: sp.csr_matrix      # (n_phi, n_sigma) incidence 1[phi <= sigma]

    def conditional_expectation(self, F) -> np.ndarray:
        return self.mu @ np.asarray(F, dtype=float)

    def conditional_entropy(self, F) -> np.ndarray:
        F = np.asarray(F, dtype=float)
        out = np.zeros(len(self.phis))
        for r in range(len(self.phis)):
            lo, hi = self.mu.indptr[r], self.mu.indptr[r + 1]
            out[r] = entropy(self.mu.data[lo:hi], F[self.mu.indices[lo:hi]])
        return out

    def rank(self, masks) -> np.ndarray:
        pos = np.searchsorted(self.phis, masks)
        pos = np.minimum(pos, len(self.phis) - 1)
        return np.where(self.phis[pos] == masks, pos, -1)


def level_decomposition(pi: Measure, ell: int) -> LevelDecomposition:
    space = pi.space
    k = space.k
    if not 0 <= ell <= k:
        raise ParameterError(f"level {ell} outside [0, {k}]")
    pos = _bit_positions(space)
    one = np.int64(1)
    rows, cols = [], []
    for c in combinations(range(k), ell):
        removed = np.zeros(space.size, dtype=np.int64)
        for a in c:
            removed |= one << pos[:, a]
        rows.append(space.masks ^ removed)
        cols.append(np.arange(space.size))
    sub = np.concatenate(rows)
    sig = np.concatenate(cols)
    phis, inv = np.unique(sub, return_inverse=True)
    below = sp.csr_matrix((np.ones(len(sig)), (inv, sig)), shape=(len(phis), space.size))
    mass = below @ pi.p
    mu = sp.diags(1.0 / mass) @ below @ sp.diags(pi.p)
    return LevelDecomposition(ell, space.n, k, phis, mass, mass / math.comb(k, ell), sp.csr_matrix(mu), below)


def transfer_operator(upper: LevelDecomposition, lower: LevelDecomposition) -> sp.csr_matrix:
    """P_{l,l+1}: rows indexed by level l+1 configurations psi, columns by level l
    configurations psi + 1_i, entries pi(sigma >= psi + 1_i) / ((l+1) pi(sigma >= psi))."""
    if lower.ell != upper.ell + 1:
        raise ParameterError("levels must be consecutive")
    ell = upper.ell
    bits = np.int64(1) << np.arange(upper.n, dtype=np.int64)
    psi = lower.phis[:, None]
    grown = psi | bits[None, :]
    cols = upper.rank(grown.ravel()).reshape(grown.shape)
    valid = ((psi & bits[None, :]) == 0) & (cols >= 0)
    rows, sites = np.nonzero(valid)
    cols = cols[rows, sites]
    vals = upper.mass[cols] / ((ell + 1) * lower.mass[rows])
    return sp.csr_matrix((vals, (rows, cols)), shape=(len(lower.phis), len(upper.phis)))


def entropy_contraction_check(pi: Measure, F, p: int, tol: float = 1e-12) -> dict:
    """Ent_pi F <= (k/p) E_{nu_p}[Ent_{mu_p} F]."""
    k = pi.space.k
    if not 1 <= p <= k:
        raise ParameterError("p must lie in [1, k]")
    lev = level_decomposition(pi, p)
    lhs = entropy(pi, F)
    rhs = k / p * float(lev.nu @ lev.conditional_entropy(F))
    return {"lhs": lhs, "rhs": rhs, "holds": lhs <= rhs + tol}


def level_chain(pi: Measure, F) -> dict:
    """Per-level quantities E_l = E_{nu_l}[Ent_{mu_l} F] and the one-level losses.

    Returns the chain-rule residuals, the per-level loss inequalities and the
    exact telescoped factor prod_{l=p}^{k-1} (l+1)/l = k/p.
    """
    F = np.asarray(F, dtype=float)
    k = pi.space.k
    levels = [level_decomposition(pi, ell) for ell in range(k + 1)]
    E = [float(lv.nu @ lv.conditional_entropy(F)) for lv in levels]
    chain_residual, loss_margin, mean_residual = [], [], []
    for ell in range(k):
        lo, up = levels[ell], levels[ell + 1]
        P = transfer_operator(lo, up)
        g = lo.conditional_expectation(F)
        # E_{mu_{l+1}} F = P g and E_{nu_{l+1}} P g = E_{nu_l} g
        mean_residual.append(float(np.abs(P @ g - up.conditional_expectation(F)).max()))
        ent_P = np.array([entropy(P.data[P.indptr[r]:P.indptr[r + 1]], g[P.indices[P.indptr[r]:P.indptr[r + 1]]])
                          for r in range(P.shape[0])])
        chain_residual.append(E[ell + 1] - E[ell] - float(up.nu @ ent_P))
        loss_margin.append(float(np.min(up.conditional_entropy(F) / (ell + 1) - ent_P)))
    factors = {p: math.prod(Fraction(ell + 1, ell) for ell in range(p, k)) for p in range(1, k + 1)}
    return {"E": E, "chain_residual": chain_residual, "loss_margin": loss_margin,
            "mean_residual": mean_residual, "telescoped": factors,
            "row_sum_error": max(float(np.abs(np.asarray(transfer_operator(levels[l], levels[l + 1]).sum(axis=1)).ravel() - 1).max())
                                 for l in range(k))}


# ---------------------------------------------------------------- entropic independence


def projection_to_sites(measure_p: np.ndarray, space) -> np.ndarray:
    """mu D_{k->1}: (1/k) P_mu[sigma_i = +1]."""
    return space.occupation.T.astype(float) @ measure_p / space.k


def entropic_independence_check(pi: Measure, mu, tol: float = 1e-10) -> dict:
    """H(mu D | pi D) <= H(mu | pi)/k."""
    q = mu.p if isinstance(mu, Measure) else np.asarray(mu, dtype=float)
    k = pi.space.k
    if np.any((q > 0) & (pi.p <= 0)):
        raise DomainError("mu is not absolutely continuous w.r.t. pi")
    lhs = relative_entropy(projection_to_sites(q, pi.space), projection_to_sites(pi.p, pi.space))
    rhs = relative_entropy(q, pi.p) / k
    return {"lhs": lhs, "rhs": rhs, "holds": lhs <= rhs + tol}


def adversarial_entropic_independence(pi: Measure, n_starts: int = 50, seed: int = 0, maxiter: int = 300) -> dict:
    """Maximise H(mu D | pi D) - H(mu | pi)/k over mu = softmax(theta) * pi."""
    space = pi.space
    k = space.k
    O = space.occupation.astype(float)
    p_site = O.T @ pi.p / k
    logpi = pi.logp

    def obj(theta):
        logmu = theta + logpi
        logmu -= logsumexp(logmu)
        mu = np.exp(logmu)
        q = O.T @ mu / k
        lq = np.log(np.maximum(q, 1e-300))
        H1 = float(np.sum(q * (lq - np.log(p_site))))
        H2 = float(mu @ (logmu - logpi))
        J = H1 - H2 / k
        g_mu = O @ (lq - np.log(p_site) + 1.0) / k - (logmu - logpi + 1.0) / k
        g = mu * (g_mu - mu @ g_mu)
        return -J, -g

    rng = np.random.default_rng(seed)
    best, best_mu = -np.inf, pi.p
    for s in range(n_starts):
        scale = [0.3, 1.0, 3.0, 8.0][s % 4]
        theta0 = rng.normal(scale=scale, size=space.size)
        res = minimize(obj, theta0, jac=True, method="L-BFGS-B", options={"maxiter": maxiter})
        J = -obj(res.x)[0]
        if J > best:
            logmu = res.x + logpi
            best, best_mu = J, np.exp(logmu - logsumexp(logmu))
    return {"max_gap": best, "mu": best_mu}


# ---------------------------------------------------------------- down-up factorisation


def down_up_factorisation(pi: Measure) -> tuple[sp.csr_matrix, sp.csr_matrix]:
    """D_{k->k-1} (remove a uniform particle) and U_{k-1->k} (add one proportionally to pi)."""
    lev = level_decomposition(pi, 1)
    D = (lev.below.T / pi.space.k).tocsr()
    U = lev.mu.tocsr()
    return sp.csr_matrix(D), U


def two_particle_contraction(pi: Measure, F, tol: float = 1e-10) -> dict:
    """Ent(P F) <= Ent(F)/2 for P = D_{2->1} U_{1->2}, plus the Jensen-step bound."""
    if pi.space.k != 2:
        raise ParameterError("two-particle contraction needs k = 2")
    F = np.asarray(F, dtype=float)
    D, U = down_up_factorisation(pi)
    P = (D @ U).toarray()
    PF = P @ F
    lhs = entropy(pi, PF)
    rhs = 0.5 * entropy(pi, F)
    return {"lhs": lhs, "rhs": rhs, "holds": lhs <= rhs + tol, "jensen": jensen_step(pi, F, D)}


def jensen_step(pi: Measure, F, D=None) -> dict:
    """Ent(P F) <= E[F] H(pi^F D | pi D) with pi^F = F pi / E F."""
    F = np.asarray(F, dtype=float)
    if D is None:
        D, U = down_up_factorisation(pi)
    else:
        U = level_decomposition(pi, 1).mu
    P = (D @ U).toarray()
    lhs = entropy(pi, P @ F)
    mean = pi.p @ F
    piF = F * pi.p / mean
    rhs = mean * relative_entropy(D.T @ piF, D.T @ pi.p)
    return {"lhs": float(lhs), "rhs": float(rhs), "holds": bool(lhs <= rhs + 1e-12 * max(1.0, rhs))}


# ---------------------------------------------------------------- one-particle reduction


def independent_sampler_lsi(p: np.ndarray) -> float:
    """Exact gamma (Ent <= 2 D(sqrt F)/gamma) of the chain jumping to y at rate p(y).

    This is twice the classical log-Sobolev constant (1 - 2 p*)/log(1/p* - 1),
    p* = min p, with value 1 when p* = 1/2.
    """
    p = np.asarray(p, dtype=float)
    if len(p) < 2:
        return math.inf
    ps = float(p.min())
    if abs(ps - 0.5) < 1e-12:
        return 1.0
    return 2.0 * (1.0 - 2.0 * ps) / math.log(1.0 / ps - 1.0)


@dataclass
class ReductionReport:
    gamma_lower: float
    per_phi: np.ndarray
    exact: np.ndarray
    phis: np.ndarray
    weights: dict

    def rhs(self, gen: GeneratorMatrix, F) -> float:
        """sum_sigma pi(sigma) sum_{i in I, j} q(sigma, sigma^{ij}) [sqrt F(sigma^{ij}) - sqrt F(sigma)]^2 / gamma(sigma - 1_i)."""
        R = np.sqrt(np.asarray(F, dtype=float))
        w = self.weights["inv_gamma"]
        return float(np.sum(gen.mu[gen.src] * gen.rate * w * (R[gen.dst] - R[gen.src]) ** 2))


def one_particle_reduction(gen: GeneratorMatrix, pi: Measure | None = None) -> ReductionReport:
    """Assemble the k-particle LSI bound from one-particle chains.

    For phi with k-1 particles the one-particle chain lives on the sites i with
    phi + 1_i in the support, with law mu_1^phi and rates q(phi + 1_i, phi + 1_j).
    Its LSI constant is exact when the rates are those of the independent sampler
    (the down-up case); otherwise it is bounded below by comparison with the
    independent sampler using min_{i != j} p_i q_ij / (p_i p_j).
    The returned gamma_lower = min_phi gamma(q, phi) satisfies Ent F <= 2 D(sqrt F) / gamma_lower.
    """
    pi = gen.measure if pi is None else pi
    space = pi.space
    lev = level_decomposition(pi, 1)
    n_phi = len(lev.phis)
    rate_of = {}
    for s, d, r in zip(gen.src, gen.dst, gen.rate):
        rate_of[(int(s), int(d))] = r
    gammas = np.zeros(n_phi)
    exact = np.zeros(n_phi, dtype=bool)
    for r in range(n_phi):
        lo, hi = lev.mu.indptr[r], lev.mu.indptr[r + 1]
        states = lev.mu.indices[lo:hi]
        p = lev.mu.data[lo:hi]
        if len(states) < 2:
            gammas[r] = math.inf
            exact[r] = True
            continue
        g_ind = independent_sampler_lsi(p)
        ratio = np.inf
        indep = True
        for a, x in enumerate(states):
            for b, y in enumerate(states):
                if a == b:
                    continue
                q = rate_of.get((int(x), int(y)), 0.0)
                ratio = min(ratio, q / p[b])
                indep &= abs(q - p[b]) <= 1e-12
        exact[r] = indep
        gammas[r] = g_ind * ratio
    # weight per transition sigma -> sigma^{ij}: 1/gamma(sigma - 1_i) with i the site leaving
    diff = space.masks[gen.src] & ~space.masks[gen.dst]
    phi = space.masks[gen.src] ^ diff
    idx = lev.rank(phi)
    inv_gamma = np.where(idx >= 0, 1.0 / gammas[np.maximum(idx, 0)], 0.0)
    return ReductionReport(float(gammas.min()), gammas, exact, lev.phis, {"inv_gamma": inv_gamma})
