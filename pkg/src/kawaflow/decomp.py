"""Gaussian decomposition of the canonical measure and the rate-comparison constant.

Everything lives on the zero-sum subspace X = {x : sum(x) = 0}, handled in an
explicit orthonormal basis U (n x (n-1)).  Reduced matrices carry a trailing _r.
The coupling must vanish on constants and have its nontrivial spectrum in (0, 1).
"""
from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from numpy.polynomial.hermite_e import hermegauss
from scipy.special import logsumexp

from ._linalg import projector, sym, zero_sum_basis
from .errors import CapacityError, DomainError, ModelError, ParameterError
from .funcineq import entropy
from .ising import Measure, StateSpace, moments, particles, product_measure

QUADRATURE_NODE_CAP = 4_000_000


@dataclass(eq=False)
class DecompositionContext:
    A: np.ndarray
    beta: float
    n: int = field(init=False)
    U: np.ndarray = field(init=False, repr=False)
    A_r: np.ndarray = field(init=False, repr=False)
    spectrum: np.ndarray = field(init=False)

    def __post_init__(self):
        A = sym(np.asarray(self.A, dtype=float))
        self.A = A
        self.n = A.shape[0]
        if np.abs(A.sum(axis=1)).max() > 1e-10 * max(1.0, np.abs(A).max()):
            raise ModelError("coupling must vanish on constants (use the normalised coupling)")
        self.U = zero_sum_basis(self.n)
        self.A_r = sym(self.U.T @ A @ self.U)
        self.spectrum = np.linalg.eigvalsh(self.A_r)

    @property
    def P(self) -> np.ndarray:
        return projector(self.n)

    def lift(self, M_r: np.ndarray) -> np.ndarray:
        """Extend a reduced operator to R^n, acting as zero on constants."""
        return self.U @ M_r @ self.U.T

    def reduce(self, x) -> np.ndarray:
        return np.asarray(x, dtype=float) @ self.U

    def precision_r(self, t: float) -> np.ndarray:
        """C_t^{-1} = t A + (beta - t) on X."""
        return sym(t * self.A_r + (self.beta - t) * np.eye(self.n - 1))

    def C_t_r(self, t: float) -> np.ndarray:
        if not 0 <= t <= self.beta:
            raise ParameterError("t must lie in [0, beta]")
        return sym(np.linalg.inv(self.precision_r(t)))

    def C_t(self, t: float) -> np.ndarray:
        return self.lift(self.C_t_r(t))

    def C_dot_r(self, t: float) -> np.ndarray:
        """d/dt C_t = C_t (P - A) C_t."""
        Ct = self.C_t_r(t)
        return sym(Ct @ (np.eye(self.n - 1) - self.A_r) @ Ct)

    @cached_property
    def C_r(self) -> np.ndarray:
        """C = C_beta - C_0 = (beta A)^{-1} - P / beta."""
        return sym(np.linalg.inv(self.beta * self.A_r) - np.eye(self.n - 1) / self.beta)

    @cached_property
    def C_inv_r(self) -> np.ndarray:
        return sym(np.linalg.inv(self.C_r))

    @cached_property
    def gauss_cov_r(self) -> np.ndarray:
        """(C^{-1} + beta P)^{-1}, computed by inversion."""
        return sym(np.linalg.inv(self.C_inv_r + self.beta * np.eye(self.n - 1)))

    @property
    def gauss_cov(self) -> np.ndarray:
        return self.lift(self.gauss_cov_r)

    def mean_map(self, sigma) -> np.ndarray:
        """a^sigma = beta (C^{-1} + beta P)^{-1} P sigma, a vector in X."""
        return self.beta * (self.gauss_cov @ (self.P @ np.asarray(sigma, dtype=float)))

    def identity_residuals(self) -> dict:
        I = np.eye(self.n - 1)
        closed_cov = (I - self.A_r) / self.beta
        ratio = self.A_r @ np.linalg.inv(I - self.A_r)
        return {
            "gauss_cov": float(np.abs(self.gauss_cov_r - closed_cov).max()),
            # relative: the ratio grows like 1/(1 - max spectrum)
            "beta_C_inverse": float(np.abs(np.linalg.inv(self.beta * self.C_r) - ratio).max()
                                    / max(1.0, np.abs(ratio).max())),
        }


def build_context(A_norm, beta: float, tol: float = 1e-10) -> DecompositionContext:
    if not 0 < beta < 1:
        raise ParameterError("beta must lie in (0, 1)")
    ctx = DecompositionContext(A_norm, beta)
    lo, hi = ctx.spectrum.min(), ctx.spectrum.max()
    if lo <= 0 or hi >= 1:
        raise ModelError(f"nontrivial spectrum [{lo:.3g}, {hi:.3g}] not inside (0, 1)")
    if beta >= 0.5:
        warnings.warn("beta >= 1/2: covariance and Hessian bounds no longer apply", stacklevel=2)
    res = ctx.identity_residuals()
    scale = max(1.0, 1.0 / beta, 1.0 / (1.0 - hi))
    if max(res.values()) > tol * scale ** 2:
        raise ModelError(f"decomposition identities fail: {res}")
    return ctx


def _space(ctx, m, space):
    if space is None:
        return StateSpace.canonical(ctx.n, particles(ctx.n, m))
    if space.n != ctx.n:
        raise ParameterError("state space size differs from coupling")
    return space


def _field(h, n):
    h = np.asarray(h, dtype=float)
    return np.full(n, float(h)) if h.ndim == 0 else h


# ---------------------------------------------------------------- renormalised potential


@dataclass
class PotentialReport:
    V0: float
    grad: np.ndarray
    hess: np.ndarray

    @property
    def min_eig(self) -> float:
        return float(np.linalg.eigvalsh(self.hess).min())


def renormalised_potential(ctx: DecompositionContext, h, m: float, phi, space=None) -> PotentialReport:
    """V_0(phi) = -log sum_s exp(-beta/2 |phi - s|^2) pi_h(s), with reduced gradient and Hessian.

    The tilted measure exp(-beta/2 |phi - s|^2) pi_h(s) is pi_{h + beta phi}, so
    grad = beta P (phi - E s) and Hess = beta P - beta^2 P cov P.
    """
    space = _space(ctx, m, space)
    h = _field(h, ctx.n)
    phi = ctx.P @ np.asarray(phi, dtype=float)
    S = space.spins
    log_pi = S @ h
    log_pi -= logsumexp(log_pi)
    d2 = ((phi[None, :] - S) ** 2).sum(axis=1)
    V0 = -float(logsumexp(log_pi - 0.5 * ctx.beta * d2))
    tilted = product_measure(h + ctx.beta * phi, ctx.n, space.m, space)
    mean, cov = moments(tilted)
    U, b = ctx.U, ctx.beta
    grad = b * U.T @ (phi - mean)
    hess = sym(b * np.eye(ctx.n - 1) - b * b * U.T @ cov @ U)
    return PotentialReport(V0, grad, hess)


def nu0_log_density(ctx: DecompositionContext, h, m: float, phi, space=None) -> float:
    """Unnormalised log density of the renormalised measure at phi in X."""
    y = ctx.reduce(ctx.P @ np.asarray(phi, dtype=float))
    return float(-0.5 * y @ ctx.C_inv_r @ y - renormalised_potential(ctx, h, m, phi, space).V0)


# ---------------------------------------------------------------- fluctuation measures


def fluctuation_measure(ctx: DecompositionContext, h, m: float, t: float, phi, space=None) -> Measure:
    """mu_t^phi(s) proportional to exp(-1/2 (s - phi, C_t^{-1} (s - phi))) pi_h(s)."""
    space = _space(ctx, m, space)
    h = _field(h, ctx.n)
    x = space.spins @ ctx.U - ctx.reduce(np.asarray(phi, dtype=float))[None, :]
    B = ctx.precision_r(t)
    logw = -0.5 * np.einsum("ij,jk,ik->i", x, B, x) + space.spins @ h
    return Measure.from_log_weights(space, logw)


def ising_measure(ctx: DecompositionContext, h, m: float, space=None, beta: float | None = None) -> Measure:
    """nu(s) proportional to exp(-beta/2 (s, A s) + (h, s)) with the context coupling."""
    space = _space(ctx, m, space)
    b = ctx.beta if beta is None else beta
    S = space.spins
    logw = -0.5 * b * np.einsum("ij,jk,ik->i", S, ctx.A, S) + S @ _field(h, ctx.n)
    return Measure.from_log_weights(space, logw)


def sqrt_mean_gradient(ctx, h, m, t, phi, F, space=None, fd_step: float | None = None) -> np.ndarray:
    """Reduced gradient of phi -> sqrt(E_{mu_t^phi} F).

    Exact route: grad E = C_t^{-1} cov(F, P s); with fd_step set, central differences.
    """
    F = np.asarray(F, dtype=float)
    if fd_step is not None:
        g = np.zeros(ctx.n - 1)
        for a in range(ctx.n - 1):
            e = fd_step * ctx.U[:, a]
            fp = fluctuation_measure(ctx, h, m, t, np.asarray(phi) + e, space).p @ F
            fm = fluctuation_measure(ctx, h, m, t, np.asarray(phi) - e, space).p @ F
            g[a] = (math.sqrt(fp) - math.sqrt(fm)) / (2 * fd_step)
        return g
    mu = fluctuation_measure(ctx, h, m, t, phi, space)
    X = mu.space.spins @ ctx.U
    mean = mu.p @ F
    c = (mu.p * (F - mean)) @ (X - mu.p @ X)
    return ctx.precision_r(t) @ c / (2.0 * math.sqrt(mean))


def entropic_stability_check(ctx, h, m, t, phi, F, space=None, tol: float = 1e-12) -> dict:
    """2 |grad sqrt E_{mu_t^phi} F|^2_{dC_t/dt} <= (1/2 - t)^{-1} Ent_{mu_t^phi} F."""
    if not 0 <= t < 0.5:
        raise ParameterError("entropic stability needs 0 <= t < 1/2")
    F = np.asarray(F, dtype=float)
    if np.any(F < 0):
        raise DomainError("F must be nonnegative")
    mu = fluctuation_measure(ctx, h, m, t, phi, space)
    if mu.p @ F == 0:
        return {"lhs": 0.0, "rhs": 0.0, "holds": True}
    g = sqrt_mean_gradient(ctx, h, m, t, phi, F, space)
    lhs = float(2.0 * g @ ctx.C_dot_r(t) @ g)
    rhs = float(entropy(mu, F) / (0.5 - t))
    return {"lhs": lhs, "rhs": rhs, "holds": lhs <= rhs + tol * max(1.0, rhs)}


# ---------------------------------------------------------------- quadrature


def _tensor_nodes(dim: int, n_nodes: int):
    x, w = hermegauss(n_nodes)
    w = w / w.sum()
    if n_nodes ** dim > QUADRATURE_NODE_CAP:
        raise CapacityError(f"{n_nodes}^{dim} quadrature nodes exceed cap")
    Z = np.array(list(itertools.product(x, repeat=dim))) if dim else np.zeros((1, 0))
    lw = np.log(np.array(list(itertools.product(w, repeat=dim)))).sum(axis=1) if dim else np.zeros(1)
    return Z, lw


def _gaussian_lme(precision: np.ndarray, B: np.ndarray, n_nodes: int, chunk: int = 200_000) -> np.ndarray:
    """log E[exp((y, b))] for y ~ N(0, precision^{-1}) and each column b of B, by tensor Gauss-Hermite."""
    dim = precision.shape[0]
    R = np.linalg.cholesky(np.linalg.inv(precision))
    Z, lw = _tensor_nodes(dim, n_nodes)
    K = R.T @ B
    out = np.full(B.shape[1], -np.inf)
    for s in range(0, len(Z), chunk):
        E = Z[s:s + chunk] @ K + lw[s:s + chunk, None]
        out = np.logaddexp(out, logsumexp(E, axis=0))
    return out


@dataclass
class QuadratureReport:
    spread: float
    n_nodes: int
    converged: bool
    history: list


def convolution_identity_check(ctx: DecompositionContext, h, m: float, t: float, space=None,
                               start_nodes: int = 8, step: int = 4, tol: float = 1e-12) -> QuadratureReport:
    """Relative spread over sigma of exp(-1/2 (s, C_beta^{-1} s)) / integral of the Gaussian convolution.

    The integral over y in X of exp(-1/2 (x-y) B (x-y) - 1/2 y G y), B = C_t^{-1},
    G = (C_beta - C_t)^{-1}, is evaluated by tensor Gauss-Hermite quadrature
    against exp(-1/2 y (B+G) y); node counts grow until the log ratios settle.
    """
    if not 0 <= t < ctx.beta:
        raise ParameterError("t must lie in [0, beta)")
    space = _space(ctx, m, space)
    X = space.spins @ ctx.U
    B = ctx.precision_r(t)
    G = sym(np.linalg.inv(ctx.C_t_r(ctx.beta) - ctx.C_t_r(t)))
    lhs = -0.5 * np.einsum("ij,jk,ik->i", X, ctx.precision_r(ctx.beta), X)
    dim = ctx.n - 1
    history, prev, n = [], None, start_nodes
    converged = False
    while n ** dim <= QUADRATURE_NODE_CAP:
        rhs = -0.5 * np.einsum("ij,jk,ik->i", X, B, X) + _gaussian_lme(B + G, B @ X.T, n)
        logr = lhs - rhs
        spread = float(math.expm1(np.ptp(logr)))
        history.append((n, spread))
        if prev is not None and np.abs((logr - logr.mean()) - (prev - prev.mean())).max() < tol:
            converged = True
            break
        prev, n = logr, n + step
    return QuadratureReport(history[-1][1], history[-1][0], converged, history)


def variance_decomposition(ctx: DecompositionContext, h, m: float, f, space=None, n_nodes: int = 16) -> dict:
    """var_nu((f, s)) two ways: E_{nu0}[var_pi] + var_{nu0}(E_pi) by quadrature, and by enumeration."""
    space = _space(ctx, m, space)
    h = _field(h, ctx.n)
    f = np.asarray(f, dtype=float)
    S = space.spins
    X = S @ ctx.U
    fs = S @ f
    dim = ctx.n - 1
    Lam = ctx.C_inv_r + ctx.beta * np.eye(dim)
    R = np.linalg.cholesky(np.linalg.inv(Lam))
    Z, lw = _tensor_nodes(dim, n_nodes)
    # log joint weight of (node, s) without the Gaussian part
    L = ctx.beta * (Z @ R.T) @ X.T + (S @ h)[None, :]
    log_row = logsumexp(L, axis=1)
    pi = np.exp(L - log_row[:, None])
    w = np.exp(lw + log_row - logsumexp(lw + log_row))
    m1 = pi @ fs
    var_pi = pi @ fs ** 2 - m1 ** 2
    decomp = float(w @ var_pi + w @ m1 ** 2 - (w @ m1) ** 2)
    nu = ising_measure(ctx, h, m, space)
    direct = float(nu.p @ fs ** 2 - (nu.p @ fs) ** 2)
    return {"decomposition": decomp, "enumeration": direct, "within": float(w @ var_pi),
            "between": float(w @ m1 ** 2 - (w @ m1) ** 2)}


# ---------------------------------------------------------------- rate comparison constant


def _admissible(space: StateSpace, mask: int, i: int) -> np.ndarray:
    """J_i(sigma): i together with the holes k for which sigma^{ik} is in the space."""
    holes = [k for k in range(space.n) if not (mask >> k) & 1]
    cand = np.array([mask ^ (1 << i) ^ (1 << k) for k in holes], dtype=np.int64)
    ok = space.ranks(cand) >= 0 if len(cand) else np.zeros(0, dtype=bool)
    return np.array([i] + [k for k, o in zip(holes, ok) if o], dtype=int)


def _exponents(ctx: DecompositionContext, sigma: np.ndarray, i: int, j: int, J: np.ndarray):
    """Per-k exponent 2 beta (a_j - a_k) + 2 beta^2 (d_jk, cov d_jk) + c_k and c_k itself."""
    b = ctx.beta
    A = ctx.A
    a = ctx.mean_map(sigma)
    cov = ctx.gauss_cov
    energy = sigma @ A @ sigma

    def grad(k):
        if k == i:
            return 0.0
        s2 = sigma.copy()
        s2[i], s2[k] = s2[k], s2[i]
        return s2 @ A @ s2 - energy

    gij = grad(j)
    c = np.array([0.5 * b * (gij - grad(k)) for k in J])
    quad = np.array([cov[j, j] + cov[k, k] - 2 * cov[j, k] for k in J])
    expo = 2 * b * (a[j] - a[J]) + 2 * b * b * quad + c
    return expo, c


def K_constant(ctx: DecompositionContext, h, m: float, sigma, i: int, j: int, space=None, detail: bool = False):
    """E_{U_h}[ exp(2 beta (a_j - a_k) + 2 beta^2 (d_jk, cov d_jk)) e^{c_k} ], with U_h(k) ~ e^{2 h_k + c_k} on J_i."""
    space = _space(ctx, m, space)
    h = _field(h, ctx.n)
    sigma = np.asarray(sigma, dtype=float)
    mask = int(np.sum((sigma > 0) << np.arange(ctx.n)))
    if not space.contains(mask):
        raise ParameterError("configuration not in the state space")
    if sigma[i] != 1 or sigma[j] != -1:
        raise ParameterError("need sigma_i = +1 and sigma_j = -1")
    J = _admissible(space, mask, i)
    if j not in J:
        raise ParameterError("j is not admissible for i")
    expo, c = _exponents(ctx, sigma, i, j, J)
    logU = 2 * h[J] + c
    logU -= logsumexp(logU)
    K = float(np.exp(logsumexp(logU + expo)))
    if detail:
        return K, {"J": J, "exponents": expo, "U": np.exp(logU)}
    return K


def K_max(ctx: DecompositionContext, h, m: float, space=None) -> dict:
    """max of K over all admissible (sigma, i, j), with the largest single exponent."""
    space = _space(ctx, m, space)
    best, arg, max_expo, k_i_term = -np.inf, None, -np.inf, 0.0
    for mask, sigma in zip(space.masks, space.spins):
        for i in np.flatnonzero(sigma > 0):
            J = _admissible(space, int(mask), int(i))
            for j in J[1:]:
                K, d = K_constant(ctx, h, m, sigma, int(i), int(j), space, detail=True)
                max_expo = max(max_expo, float(d["exponents"].max()))
                k_i_term = max(k_i_term, abs(float(d["exponents"][0])))
                if K > best:
                    best, arg = K, (int(mask), int(i), int(j))
    return {"K": best, "argmax": arg, "max_exponent": max_expo, "k_equals_i_residual": k_i_term,
            "bound": math.exp(8 * ctx.beta)}


def _downup_rate_field(space, mask, i, j, field):
    """Down-up rate of pi_field: e^{2 f_j} / sum_{k in J_i} e^{2 f_k}, vectorised over rows of field."""
    J = _admissible(space, mask, i)
    z = 2.0 * field[..., J]
    return np.exp(2.0 * field[..., j] - logsumexp(z, axis=-1))


def dirichlet_comparison_check(ctx: DecompositionContext, h, m: float, sigma, i: int, j: int,
                               n_samples: int = 100_000, seed: int = 0, space=None) -> dict:
    """Compare E_{nu0}[pi(s) c_pi(s, s^{ij})] with nu(s) c_nu(s, s^{ij}).

    Two estimates of the left side:
    importance sampling of nu0 from a Gaussian with precision C^{-1} + (beta - 2 beta^2)
    centred at the mode (weights bounded by the Hessian bound), and direct sampling of the
    Gaussian with covariance (P - A)/beta and mean a^sigma.
    """
    space = _space(ctx, m, space)
    h = _field(h, ctx.n)
    sigma = np.asarray(sigma, dtype=float)
    mask = int(np.sum((sigma > 0) << np.arange(ctx.n)))
    x = space.rank(mask)
    rng = np.random.default_rng(seed)
    dim = ctx.n - 1
    S = space.spins
    Xs = S @ ctx.U
    b = ctx.beta
    log_h = S @ h

    def log_target(Y):
        # -1/2 y C^{-1} y - V0 up to constants; also returns pi_{h + beta phi}(sigma)
        L = b * Y @ Xs.T + log_h[None, :]
        lz = logsumexp(L, axis=1)
        return -0.5 * np.einsum("ij,jk,ik->i", Y, ctx.C_inv_r, Y) - 0.5 * b * (Y * Y).sum(axis=1) + lz, L[:, x] - lz

    # Newton iterations for the mode of nu0
    y = np.zeros(dim)
    for _ in range(50):
        pr = renormalised_potential(ctx, h, m, ctx.U @ y, space)
        g = ctx.C_inv_r @ y + pr.grad
        Hm = ctx.C_inv_r + pr.hess
        step = np.linalg.solve(Hm, g)
        y = y - step
        if np.abs(step).max() < 1e-13:
            break
    prec = ctx.C_inv_r + (b - 2 * b * b) * np.eye(dim)
    R = np.linalg.cholesky(np.linalg.inv(prec))
    Y = y[None, :] + rng.standard_normal((n_samples, dim)) @ R.T
    lt, log_pi_sigma = log_target(Y)
    lq = -0.5 * np.einsum("ij,jk,ik->i", Y - y, prec, Y - y)
    lw = lt - lq
    w = np.exp(lw - lw.max())
    w /= w.sum()
    ess = 1.0 / float(np.sum(w * w))
    phi = Y @ ctx.U.T
    rate_pi = _downup_rate_field(space, mask, i, j, b * phi + h[None, :])
    vals = np.exp(log_pi_sigma) * rate_pi
    lhs_is = float(w @ vals)
    se_is = float(np.sqrt(np.sum(w * w * (vals - lhs_is) ** 2)))
    nu = ising_measure(ctx, h, m, space)
    # Gaussian route: phi = a^sigma + psi with psi ~ N(0, (P - A)/beta)
    Rg = np.linalg.cholesky(ctx.gauss_cov_r + 1e-300 * np.eye(dim))
    psi = rng.standard_normal((n_samples, dim)) @ Rg.T
    phi_g = (psi + ctx.reduce(ctx.mean_map(sigma))[None, :]) @ ctx.U.T
    r_g = _downup_rate_field(space, mask, i, j, b * phi_g + h[None, :])
    lhs_g = float(nu.p[x] * r_g.mean())
    se_g = float(nu.p[x] * r_g.std(ddof=1) / math.sqrt(n_samples))
    # rate of nu itself
    J = _admissible(space, mask, i)
    dst = space.ranks(np.array([mask ^ (1 << i) ^ (1 << int(k)) for k in J]))
    logs = nu.logp[dst]
    c_nu = float(np.exp(nu.logp[space.rank(mask ^ (1 << i) ^ (1 << j))] - logsumexp(logs)))
    rhs = float(math.exp(8 * b) * nu.p[x] * c_nu)
    return {"lhs_is": lhs_is, "se_is": se_is, "ess": ess, "reliable": ess >= 100,
            "lhs_gauss": lhs_g, "se_gauss": se_g, "nu_rate": float(nu.p[x] * c_nu), "rhs": rhs,
            "ratio": float(lhs_is / rhs), "mode": y}
