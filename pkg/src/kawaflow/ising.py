"""Canonical (fixed magnetisation) Ising measures on exactly enumerated state spaces."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from itertools import combinations

import numpy as np
import scipy.sparse as sp
from scipy.special import logsumexp

from . import graph as _graph
from ._linalg import projector, sym
from .errors import CapacityError, ModelError, ParameterError

ENUMERATION_CAP = 2_000_000
EPS0 = 1e-3


def particles(n: int, m: float) -> int:
    """k = N(1+m)/2, requiring Nm to be an integer of the right parity."""
    k = n * (1.0 + m) / 2.0
    kr = int(round(k))
    if abs(k - kr) > 1e-9 or not 0 <= kr <= n:
        raise ParameterError(f"N*m must be an integer with N(1+m)/2 in [0, N] (N={n}, m={m})")
    return kr


def magnetisation(n: int, k: int) -> float:
    return (2.0 * k - n) / n


# ---------------------------------------------------------------- state space


@dataclass(eq=False)
class StateSpace:
    """Configurations with k plus spins as bitmasks, sorted ascending.

    For a fixed popcount the integer order of masks is the colexicographic order
    of the plus sets, so rank is a binary search.
    """

    n: int
    k: int
    masks: np.ndarray
    full: bool = True

    @classmethod
    def canonical(cls, n: int, k: int, cap: int = ENUMERATION_CAP) -> "StateSpace":
        if not 0 <= k <= n:
            raise ParameterError("k out of range")
        if n > 62:
            raise CapacityError("bitmask representation limited to N <= 62")
        size = math.comb(n, k)
        if size > cap:
            raise CapacityError(f"C({n},{k}) = {size} exceeds enumeration cap {cap}")
        bits = 1 << np.arange(n, dtype=np.int64)
        if k == 0:
            masks = np.zeros(1, dtype=np.int64)
        else:
            combos = np.fromiter(
                (c for comb in combinations(range(n), k) for c in comb), dtype=np.int64, count=size * k
            ).reshape(size, k)
            masks = bits[combos].sum(axis=1)
        return cls(n, k, np.sort(masks), True)

    @classmethod
    def for_magnetisation(cls, n: int, m: float, cap: int = ENUMERATION_CAP) -> "StateSpace":
        return cls.canonical(n, particles(n, m), cap)

    @classmethod
    def from_masks(cls, n: int, masks, cap: int = ENUMERATION_CAP) -> "StateSpace":
        masks = np.unique(np.asarray(masks, dtype=np.int64))
        if masks.size == 0:
            raise ParameterError("empty support")
        if masks.size > cap:
            raise CapacityError("support exceeds enumeration cap")
        pc = popcount(masks)
        if np.any(pc != pc[0]):
            raise ParameterError("support configurations must have equal particle number")
        k = int(pc[0])
        return cls(n, k, masks, masks.size == math.comb(n, k))

    @property
    def size(self) -> int:
        return len(self.masks)

    @property
    def m(self) -> float:
        return magnetisation(self.n, self.k)

    def ranks(self, masks) -> np.ndarray:
        """Index of each mask, -1 where the mask is not in the space."""
        q = np.asarray(masks, dtype=np.int64)
        pos = np.searchsorted(self.masks, q)
        pos = np.minimum(pos, self.size - 1)
        return np.where(self.masks[pos] == q, pos, -1)

    def rank(self, mask: int) -> int:
        r = int(self.ranks(np.array([mask]))[0])
        if r < 0:
            raise KeyError(mask)
        return r

    def unrank(self, idx: int) -> int:
        return int(self.masks[idx])

    @cached_property
    def occupation(self) -> np.ndarray:
        """Boolean (size, n): True where sigma_i = +1."""
        return ((self.masks[:, None] >> np.arange(self.n, dtype=np.int64)) & 1).astype(bool)

    @cached_property
    def spins(self) -> np.ndarray:
        return np.where(self.occupation, 1.0, -1.0)

    def contains(self, mask: int) -> bool:
        return self.ranks(np.array([mask]))[0] >= 0


def popcount(masks: np.ndarray) -> np.ndarray:
    x = np.asarray(masks, dtype=np.uint64).copy()
    c = np.zeros(x.shape, dtype=np.int64)
    while np.any(x):
        c += (x & np.uint64(1)).astype(np.int64)
        x >>= np.uint64(1)
    return c


def spins_to_mask(sigma) -> int:
    s = np.asarray(sigma)
    return int(sum(1 << i for i in np.flatnonzero(s > 0)))


def mask_to_spins(mask: int, n: int) -> np.ndarray:
    return np.array([1.0 if (mask >> i) & 1 else -1.0 for i in range(n)])


# ---------------------------------------------------------------- couplings


@dataclass(eq=False)
class CouplingMatrix:
    """Symmetric coupling with the constant vector as an eigenvector.

    ``normalised`` is scale * (P A P + shift_c P): it vanishes on constants and has
    its nontrivial spectrum inside [eps0, 1 - eps0].  On a fixed magnetisation
    sector, beta * (s, A s) and beta_rescale(beta) * (s, normalised s) differ by a
    configuration independent constant.
    """

    raw: object
    eps0: float = EPS0
    spectrum_mode: str = "auto"

    def __post_init__(self):
        if not sp.issparse(self.raw):
            self.raw = np.asarray(self.raw, dtype=float)
        self.lambda_1 = _graph.constant_eigenvalue(self.raw)

    @classmethod
    def from_graph(cls, g, sign: float = -1.0, **kw) -> "CouplingMatrix":
        """sign=-1 gives the ferromagnetic coupling A = -adjacency."""
        return cls(sign * g.adjacency.astype(float), **kw)

    @property
    def n(self) -> int:
        return self.raw.shape[0]

    @cached_property
    def spectrum(self) -> _graph.SpectrumReport:
        return _graph.spectrum(self.raw, self.spectrum_mode)

    @property
    def delta(self) -> float:
        return self.spectrum.delta

    @property
    def dense(self) -> np.ndarray:
        return self.raw.toarray() if sp.issparse(self.raw) else self.raw

    @property
    def scale(self) -> float:
        d = self.delta
        return (1.0 - 2.0 * self.eps0) / d if d > 0 else 0.0

    @property
    def shift_c(self) -> float:
        d = self.delta
        if d <= 0:
            return 0.0
        return self.eps0 * d / (1.0 - 2.0 * self.eps0) - self.spectrum.lambda_2

    @cached_property
    def normalised(self) -> np.ndarray:
        n = self.n
        P = projector(n)
        if self.delta <= 0:
            # (s, A s) is constant on every sector; any admissible matrix will do
            return 0.5 * P
        PAP = P @ self.dense @ P
        return sym(self.scale * (PAP + self.shift_c * P))

    def beta_rescale(self, beta: float) -> float:
        """Inverse temperature to pair with ``normalised``."""
        if self.delta <= 0:
            return 0.0
        return beta / self.scale


def project_coupling(A: np.ndarray, h: np.ndarray, beta: float, m: float):
    """Replace (A, h) by (P A P, h') giving the same canonical measure at magnetisation m.

    (s, A s) = (Ps, A Ps) + 2m (A1, Ps) + const when sum(s) = Nm.
    """
    n = A.shape[0]
    P = projector(n)
    A = np.asarray(A, dtype=float)
    h2 = np.asarray(h, dtype=float) - beta * m * (P @ (A @ np.ones(n)))
    return sym(P @ A @ P), h2


@dataclass(eq=False)
class CanonicalModel:
    """nu(s) proportional to exp(-beta/2 (s, A s) + (h, s)) on sum(s) = N m."""

    coupling: CouplingMatrix
    beta: float
    h: np.ndarray
    m: float = 0.0

    def __post_init__(self):
        if not isinstance(self.coupling, CouplingMatrix):
            self.coupling = CouplingMatrix(self.coupling)
        n = self.coupling.n
        h = np.asarray(self.h, dtype=float)
        self.h = np.full(n, float(h)) if h.ndim == 0 else h
        if self.h.shape != (n,):
            raise ParameterError("field length differs from N")
        if self.beta < 0:
            raise ParameterError("beta must be nonnegative")
        self.k = particles(n, self.m)

    @property
    def n(self) -> int:
        return self.coupling.n

    @property
    def A(self):
        return self.coupling.raw

    def space(self, cap: int = ENUMERATION_CAP) -> StateSpace:
        return StateSpace.canonical(self.n, self.k, cap)

    def normalised(self) -> "CanonicalModel":
        c = self.coupling
        return CanonicalModel(CouplingMatrix(c.normalised), c.beta_rescale(self.beta), self.h, self.m)

    def log_weight(self, sigma: np.ndarray) -> float:
        s = np.asarray(sigma, dtype=float)
        return float(-0.5 * self.beta * s @ (self.A @ s) + self.h @ s)


@dataclass(eq=False)
class Measure:
    """Normalised probability vector on a StateSpace (stored with its logs)."""

    space: StateSpace
    p: np.ndarray
    logp: np.ndarray
    log_z: float = 0.0

    @classmethod
    def from_log_weights(cls, space: StateSpace, logw: np.ndarray) -> "Measure":
        logw = np.asarray(logw, dtype=float)
        log_z = float(logsumexp(logw))
        logp = logw - log_z
        return cls(space, np.exp(logp), logp, log_z)

    @classmethod
    def uniform(cls, space: StateSpace) -> "Measure":
        return cls.from_log_weights(space, np.zeros(space.size))

    def expect(self, F) -> float:
        return float(self.p @ np.asarray(F, dtype=float))


def quadratic_forms(A, S: np.ndarray) -> np.ndarray:
    """(s, A s) for each row s of S."""
    AS = np.asarray(A @ S.T).T if sp.issparse(A) else S @ np.asarray(A)
    return np.einsum("ij,ij->i", AS, S)


def log_weights(model: CanonicalModel, space: StateSpace) -> np.ndarray:
    _check_space(space, model.n, model.k)
    S = space.spins
    return S @ model.h - 0.5 * model.beta * quadratic_forms(model.A, S)


def weights(model: CanonicalModel, space: StateSpace | None = None) -> Measure:
    space = model.space() if space is None else space
    return Measure.from_log_weights(space, log_weights(model, space))


def product_measure(h, n: int, m: float, space: StateSpace | None = None) -> Measure:
    """pi_{N,m,h}(s) proportional to exp((h, s)) on the sector."""
    h = np.asarray(h, dtype=float)
    h = np.full(n, float(h)) if h.ndim == 0 else h
    space = StateSpace.canonical(n, particles(n, m)) if space is None else space
    _check_space(space, n, None)
    return Measure.from_log_weights(space, space.spins @ h)


def _check_space(space: StateSpace, n: int, k: int | None):
    if space.n != n or (k is not None and space.k != k):
        raise ParameterError("state space inconsistent with (N, m)")


def moments(measure: Measure) -> tuple[np.ndarray, np.ndarray]:
    S = measure.space.spins
    p = measure.p
    mean = p @ S
    cov = (S * p[:, None]).T @ S - np.outer(mean, mean)
    return mean, sym(cov)


def linear_variance(measure: Measure, f) -> float:
    """var((f, s)) by direct summation over the support."""
    x = measure.space.spins @ np.asarray(f, dtype=float)
    mu = measure.p @ x
    return float(measure.p @ (x - mu) ** 2)


def max_pair_covariance(measure: Measure) -> float:
    """max over i != j of cov(s_i, s_j); nonpositive under negative correlation."""
    _, cov = moments(measure)
    off = cov[~np.eye(cov.shape[0], dtype=bool)]
    return float(off.max()) if off.size else 0.0


def variance_bound_check(measure: Measure, fs, factor: float, tol: float = 1e-9) -> dict:
    """var((f, s)) <= factor |f|^2 for every row f of ``fs``."""
    fs = np.atleast_2d(np.asarray(fs, dtype=float))
    lhs = np.array([linear_variance(measure, f) for f in fs])
    rhs = factor * np.einsum("ij,ij->i", fs, fs)
    return {"max_ratio": float((lhs / np.maximum(rhs, 1e-300)).max()),
            "violations": int(np.sum(lhs > rhs + tol)), "n": len(fs)}


# ---------------------------------------------------------------- conditions


@dataclass
class ConditionReport:
    kind: str
    holds: bool
    M_beta: float
    detail: dict = field(default_factory=dict)


def check_sc(coupling, beta: float) -> ConditionReport:
    """Spectral condition beta < 1/(2 delta) with M = 1/(1 - 2 beta delta)."""
    if not isinstance(coupling, CouplingMatrix):
        coupling = CouplingMatrix(coupling)
    delta = coupling.delta
    if delta <= 0:
        return ConditionReport("SC", True, 1.0, {"delta": 0.0, "beta": beta})
    x = 2.0 * beta * delta
    holds = x < 1.0
    M = 1.0 / (1.0 - x) if holds else math.inf
    return ConditionReport("SC", holds, M, {"delta": delta, "beta": beta, "threshold": 1.0 / (2.0 * delta)})


def _top_cov(A, beta, h, space):
    model = CanonicalModel(CouplingMatrix(A) if not isinstance(A, CouplingMatrix) else A, beta, h, space.m)
    mu = weights(model, space)
    mean, cov = moments(mu)
    ev, evec = np.linalg.eigh(cov)
    v = evec[:, -1]
    S = mu.space.spins
    X = S @ v - mean @ v
    grad = (mu.p * X * X) @ (S - mean)
    return ev[-1], grad


def sup_top_covariance(A, t: float, n: int, m: float, restarts: int = 32, steps: int = 60,
                       h_max: float = 8.0, seed: int = 0) -> tuple[float, np.ndarray, bool]:
    """Search estimate (a lower bound) of sup_h lambda_max(cov nu_{t,h})."""
    space = StateSpace.canonical(n, particles(n, m))
    rng = np.random.default_rng(seed)
    best, best_h, exhausted = -np.inf, np.zeros(n), False
    for r in range(restarts):
        h = np.zeros(n) if r == 0 else rng.normal(scale=1.0 + r % 4, size=n)
        val, g = _top_cov(A, t, h, space)
        eta = 1.0
        converged = False
        for _ in range(steps):
            while eta > 1e-8:
                h_new = np.clip(h + eta * g, -h_max, h_max)
                v_new, g_new = _top_cov(A, t, h_new, space)
                if v_new > val:
                    break
                eta *= 0.5
            else:
                converged = True
                break
            gain = v_new - val
            h, val, g = h_new, v_new, g_new
            eta *= 2.0
            if gain < 1e-13:
                converged = True
                break
        exhausted |= not converged
        if val > best:
            best, best_h = val, h
    return float(best), best_h, exhausted


def chi0_bar(A, t_grid, n: int, m: float, restarts: int = 32, steps: int = 60, seed: int = 0) -> ConditionReport:
    """Covariance condition report with M = exp(right-endpoint sum of the searched chi0)."""
    grid = np.asarray(t_grid, dtype=float)
    if np.any(np.diff(grid) <= 0):
        raise ParameterError("t_grid must be increasing")
    if grid[0] > 0:
        grid = np.concatenate([[0.0], grid])
    chi = []
    exhausted = False
    for i, t in enumerate(grid):
        v, _, ex = sup_top_covariance(A, float(t), n, m, restarts, steps, seed=seed + i)
        chi.append(v)
        exhausted |= ex
    chi = np.array(chi)
    integral = float(np.sum(chi[1:] * np.diff(grid)))
    return ConditionReport(
        "CC", True, math.exp(integral),
        {"grid": grid.tolist(), "chi0": chi.tolist(), "integral": integral,
         "lower_estimate": True, "budget_exhausted": bool(exhausted)},
    )


def beta_thresholds(d: int) -> dict:
    """Regular-tree reference temperatures (annotations only)."""
    return {
        "beta_sc": 1.0 / (8.0 * math.sqrt(d - 1)),
        "beta_c": math.atanh(1.0 / (d - 1)),
        "beta_r": math.atanh(1.0 / math.sqrt(d - 1)),
    }
