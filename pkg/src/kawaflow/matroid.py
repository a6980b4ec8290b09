"""Matroid bases (uniform, graphic, explicit), perturbed measures on them and their down-up walk."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from itertools import combinations

import numpy as np
from scipy.special import logsumexp

from ._linalg import sym
from .dynamics import RateKernel, make_kernel
from .errors import CapacityError, DomainError, ParameterError
from .graph import Graph
from .ising import ENUMERATION_CAP, CouplingMatrix, Measure, StateSpace, check_sc, project_coupling, quadratic_forms

GRAPHIC_EDGE_CAP = 24


class _DSU:
    def __init__(self, n):
        self.p = list(range(n))

    def find(self, x):
        while self.p[x] != x:
            self.p[x] = self.p[self.p[x]]
            x = self.p[x]
        return x

    def union(self, a, b) -> bool:
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return False
        self.p[ra] = rb
        return True


@dataclass(eq=False)
class MatroidOracle:
    """Bases as bitmasks over the ground set {0, ..., N-1}.

    kind: "uniform" (rank k), "graphic" (edges of ``graph``, bases = spanning trees)
    or "explicit" (a given list of bases).
    """

    kind: str
    ground_size: int
    rank: int
    graph: Graph | None = None
    bases: tuple = field(default=(), repr=False)

    @classmethod
    def uniform(cls, n: int, k: int) -> "MatroidOracle":
        if not 0 <= k <= n:
            raise ParameterError("rank outside [0, N]")
        return cls("uniform", n, k)

    @classmethod
    def graphic(cls, g: Graph) -> "MatroidOracle":
        if not g.is_connected():
            raise ParameterError("graphic matroid needs a connected graph")
        return cls("graphic", g.n_edges, g.n - 1, g)

    @classmethod
    def explicit(cls, n: int, bases) -> "MatroidOracle":
        bs = sorted({tuple(sorted(int(e) for e in b)) for b in bases})
        if not bs:
            raise ParameterError("no bases given")
        if len({len(b) for b in bs}) != 1:
            raise ParameterError("bases must be equicardinal")
        return cls("explicit", n, len(bs[0]), None, tuple(bs))

    @cached_property
    def _explicit_masks(self) -> frozenset:
        return frozenset(sum(1 << e for e in b) for b in self.bases)

    def is_basis(self, mask: int) -> bool:
        mask = int(mask)
        if bin(mask).count("1") != self.rank:
            return False
        if self.kind == "uniform":
            return True
        if self.kind == "explicit":
            return mask in self._explicit_masks
        dsu = _DSU(self.graph.n)
        for e in range(self.ground_size):
            if (mask >> e) & 1:
                u, v = self.graph.edges[e]
                if not dsu.union(int(u), int(v)):
                    return False
        return True

    def exchange_set(self, mask: int, a: int) -> list:
        """J_a(B): a together with the b outside B such that B - a + b is a basis."""
        mask = int(mask)
        if not (mask >> a) & 1:
            raise ParameterError("element not in the basis")
        rest = mask ^ (1 << a)
        out = [a]
        if self.kind == "graphic":
            dsu = _DSU(self.graph.n)
            for e in range(self.ground_size):
                if (rest >> e) & 1:
                    u, v = self.graph.edges[e]
                    dsu.union(int(u), int(v))
            for b in range(self.ground_size):
                if (mask >> b) & 1:
                    continue
                u, v = self.graph.edges[b]
                if dsu.find(int(u)) != dsu.find(int(v)):
                    out.append(b)
            return out
        for b in range(self.ground_size):
            if not (mask >> b) & 1 and self.is_basis(rest | (1 << b)):
                out.append(b)
        return out

    def enumerate_bases(self, cap: int = ENUMERATION_CAP) -> StateSpace:
        n, k = self.ground_size, self.rank
        if self.kind == "uniform":
            return StateSpace.canonical(n, k, cap)
        if self.kind == "explicit":
            return StateSpace.from_masks(n, sorted(self._explicit_masks), cap)
        if n > GRAPHIC_EDGE_CAP or math.comb(n, k) > 50 * cap:
            raise CapacityError("graph too large for exhaustive spanning-tree enumeration")
        masks = [sum(1 << e for e in c) for c in combinations(range(n), k)]
        return StateSpace.from_masks(n, [m for m in masks if self.is_basis(m)], cap)


def matrix_tree_count(g: Graph) -> float:
    """Number of spanning trees as a reduced Laplacian determinant."""
    Lap = np.diag(g.degree_sequence.astype(float)) - g.adjacency.toarray()
    sign, logdet = np.linalg.slogdet(Lap[1:, 1:])
    return float(sign * math.exp(logdet))


def check_exchange_property(oracle: MatroidOracle, space: StateSpace | None = None) -> bool:
    """For all bases A, B and a in A - B some b in B - A has A - a + b a basis."""
    space = oracle.enumerate_bases() if space is None else space
    masks = [int(m) for m in space.masks]
    members = set(masks)
    for A in masks:
        for B in masks:
            diff = A & ~B
            while diff:
                a = diff & -diff
                diff ^= a
                cand = B & ~A
                ok = False
                while cand:
                    b = cand & -cand
                    cand ^= b
                    if (A ^ a ^ b) in members:
                        ok = True
                        break
                if not ok:
                    return False
    return True


# ---------------------------------------------------------------- perturbed measures


@dataclass(eq=False)
class PerturbedMeasure:
    """mu(w) proportional to prod_{e,f} (1 + eps_ef w_e w_f) exp(2 (h, w)) on the bases.

    The product runs over ordered pairs.  With L = log(1 + eps) and s = 2w - 1 this is the
    Ising form beta = 1, A = -L/2, field h + L 1/2 (up to constants on the bases).
    """

    oracle: MatroidOracle
    eps: np.ndarray
    h: np.ndarray | None = None

    def __post_init__(self):
        n = self.oracle.ground_size
        eps = np.asarray(self.eps, dtype=float)
        if eps.shape != (n, n):
            raise ParameterError("eps must be N x N")
        if not np.allclose(eps, eps.T, atol=0, rtol=0):
            raise ParameterError("eps must be symmetric")
        if np.any(eps <= -1):
            raise DomainError("eps entries must exceed -1")
        self.eps = eps
        self.h = np.zeros(n) if self.h is None else np.asarray(self.h, dtype=float)

    @property
    def eps_bar(self) -> float:
        return float(np.abs(self.eps).sum(axis=1).max())

    @cached_property
    def space(self) -> StateSpace:
        return self.oracle.enumerate_bases()

    def direct_log_weights(self) -> np.ndarray:
        occ = self.space.occupation.astype(float)
        L = np.log1p(self.eps)
        return np.einsum("si,ij,sj->s", occ, L, occ) + 2.0 * occ @ self.h

    def ising_parameters(self) -> tuple[float, np.ndarray, np.ndarray]:
        L = np.log1p(self.eps)
        return 1.0, -0.5 * L, self.h + 0.5 * L.sum(axis=1)

    def ising_log_weights(self) -> np.ndarray:
        beta, A, h = self.ising_parameters()
        S = self.space.spins
        return -0.5 * beta * quadratic_forms(A, S) + S @ h

    def measure(self) -> Measure:
        return Measure.from_log_weights(self.space, self.direct_log_weights())

    def ising_measure(self) -> Measure:
        return Measure.from_log_weights(self.space, self.ising_log_weights())

    def normalised_coupling(self) -> tuple[CouplingMatrix, float, np.ndarray]:
        """Projected coupling, its normalised inverse temperature and the adjusted field."""
        beta, A, h = self.ising_parameters()
        m = self.space.m
        A_p, h_p = project_coupling(A, h, beta, m)
        c = CouplingMatrix(A_p)
        return c, c.beta_rescale(beta), h_p

    def theorem_constant(self) -> dict:
        """e^{8 beta_n} / (1 - 4 beta_n) with beta_n the normalised inverse temperature."""
        c, bn, _ = self.normalised_coupling()
        ok = bn < 0.25
        M = 1.0 / (1.0 - 4.0 * bn) if ok else math.inf
        return {"beta_n": bn, "M": M, "C": math.exp(8 * bn) * M, "eps_bar": self.eps_bar,
                "delta": c.delta, "sc": check_sc(c, 1.0).__dict__}


def perturbed_weights(oracle: MatroidOracle, eps, h=None, tol: float = 1e-10) -> dict:
    pm = PerturbedMeasure(oracle, eps, h)
    mu = pm.measure()
    nu = pm.ising_measure()
    dev = float(np.abs(mu.logp - nu.logp).max())
    if dev > tol:
        raise DomainError(f"Ising map disagrees with the product form by {dev:.3g}")
    beta, A, hh = pm.ising_parameters()
    return {"measure": mu, "ising": nu, "beta": beta, "A": A, "h": hh, "max_log_deviation": dev,
            "eps_bar": pm.eps_bar}


def random_eps(n: int, eps_bar: float, rng, density: float = 0.5) -> np.ndarray:
    """Symmetric zero-diagonal perturbation with max row sum of |eps| equal to eps_bar."""
    E = rng.uniform(-1, 1, size=(n, n)) * (rng.random((n, n)) < density)
    E = np.triu(E, 1)
    E = E + E.T
    s = np.abs(E).sum(axis=1).max()
    return E * (eps_bar / s) if s > 0 else E


# ---------------------------------------------------------------- walks and polynomials


def downup_on_bases(oracle: MatroidOracle, measure: Measure) -> RateKernel:
    if measure.space.n != oracle.ground_size:
        raise ParameterError("measure not on this ground set")
    return make_kernel("down_up", measure)


def kernel_exchange_sets(kernel: RateKernel) -> dict:
    """(basis mask, a) -> {b : positive down-up rate from B to B - a + b} plus a."""
    src, dst, rate, i, j = kernel.transitions()
    masks = kernel.space.masks
    out: dict = {}
    for s, a, b, r in zip(src, i, j, rate):
        if r > 0:
            out.setdefault((int(masks[s]), int(a)), {int(a)}).add(int(b))
    return out


def generating_polynomial(measure: Measure, z) -> float:
    """E[z^I] with I the occupied elements."""
    z = np.asarray(z, dtype=float)
    if np.any(z <= 0):
        raise DomainError("z must be positive")
    occ = measure.space.occupation
    return float(np.exp(logsumexp(measure.logp + occ.astype(float) @ np.log(z))))


def log_hessian(measure: Measure, z=None) -> np.ndarray:
    """Hessian of log g at z (default the all-ones vector)."""
    n = measure.space.n
    z = np.ones(n) if z is None else np.asarray(z, dtype=float)
    if np.any(z <= 0):
        raise DomainError("z must be positive")
    occ = measure.space.occupation.astype(float)
    w = np.exp(measure.logp + occ @ np.log(z))
    g = w.sum()
    Y = occ / z[None, :]
    grad = w @ Y
    H2 = (Y * w[:, None]).T @ Y
    np.fill_diagonal(H2, 0.0)
    return sym(H2 / g - np.outer(grad, grad) / g**2)
