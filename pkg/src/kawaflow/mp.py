"""Moving-particle comparisons between exchange Dirichlet forms.

An exchange form with pair set E and pair weights w is
    E(F) = sum_{(i,j) in E} w_ij E_nu[(F(s) - F(s^{ij}))^2],
a quadratic form F^T L F with L a weighted Laplacian on the state space.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .errors import ModelError, ParameterError
from .graph import Graph, PathSystem, cycle_graph, geodesic_paths, lattice_graph
from .ising import Measure


def _swap_targets(space, i: int, j: int):
    occ = space.occupation
    x = np.flatnonzero(occ[:, i] != occ[:, j])
    flip = (np.int64(1) << np.int64(i)) | (np.int64(1) << np.int64(j))
    y = space.ranks(space.masks[x] ^ flip)
    keep = y >= 0
    return x[keep], y[keep]


def pair_laplacian(measure: Measure, pairs, weights=None) -> sp.csr_matrix:
    """Laplacian L with F^T L F = sum_pairs w E_nu[(F(s) - F(s^{ij}))^2]."""
    space = measure.space
    rows, cols, vals = [], [], []
    w_all = np.ones(len(pairs)) if weights is None else np.asarray(weights, dtype=float)
    for (i, j), w in zip(pairs, w_all):
        x, y = _swap_targets(space, int(i), int(j))
        rows.append(x)
        cols.append(y)
        vals.append(w * measure.p[x])
    n = space.size
    if rows:
        W = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n))
    else:
        W = sp.csr_matrix((n, n))
    S = W + W.T
    return sp.csr_matrix(sp.diags(np.asarray(S.sum(axis=1)).ravel()) - S)


def exchange_form(measure: Measure, pairs, F, weights=None) -> float:
    """Direct double sum, independent of the Laplacian assembly."""
    space = measure.space
    F = np.asarray(F, dtype=float)
    w_all = np.ones(len(pairs)) if weights is None else np.asarray(weights, dtype=float)
    total = 0.0
    for (i, j), w in zip(pairs, w_all):
        x, y = _swap_targets(space, int(i), int(j))
        total += w * float(measure.p[x] @ (F[x] - F[y]) ** 2)
    return total


@dataclass
class ComparisonReport:
    exact_constant: float | None
    analytic_bound: float | None
    witness: np.ndarray | None
    geometry: str
    congestion: float | None = None
    C_mp: float | None = None
    detail: dict = field(default_factory=dict)


def _generalized_max(Lf: np.ndarray, Lr: np.ndarray, rtol: float = 1e-10):
    """sup F^T Lf F / F^T Lr F over F outside ker Lr, requiring ker Lr in ker Lf."""
    lam, V = np.linalg.eigh(Lr)
    scale = max(abs(lam).max(), 1e-300)
    pos = lam > rtol * scale
    K = V[:, ~pos]
    if K.shape[1] and np.abs(Lf @ K).max() > 1e-8 * max(np.abs(Lf).max(), 1e-300):
        raise ModelError("restricted form has a kernel on which the full form is positive")
    Vp = V[:, pos] / np.sqrt(lam[pos])
    M = Vp.T @ Lf @ Vp
    mu, Z = np.linalg.eigh(0.5 * (M + M.T))
    return float(mu[-1]), Vp @ Z[:, -1]


def exact_comparison(measure: Measure, full_pairs, restricted_pairs, full_weights=None,
                     restricted_weights=None, geometry: str = "") -> ComparisonReport:
    """Largest generalized eigenvalue of the full form against the restricted form."""
    Lf = pair_laplacian(measure, full_pairs, full_weights).toarray()
    Lr = pair_laplacian(measure, restricted_pairs, restricted_weights).toarray()
    val, F = _generalized_max(Lf, Lr)
    return ComparisonReport(val, None, F, geometry)


def witness_ratio(measure: Measure, full_pairs, restricted_pairs, F, full_weights=None, restricted_weights=None) -> float:
    return exchange_form(measure, full_pairs, F, full_weights) / exchange_form(measure, restricted_pairs, F, restricted_weights)


def _blocks(space, sites):
    """Group configurations by their spins outside ``sites``."""
    outside = np.ones(space.n, dtype=bool)
    outside[list(sites)] = False
    key = space.masks & np.int64(sum(1 << int(s) for s in np.flatnonzero(outside)))
    _, inv = np.unique(key, return_inverse=True)
    return inv


def conditional_comparison(measure: Measure, full_pairs, restricted_pairs, full_weights=None,
                           restricted_weights=None) -> float:
    """Same constant as exact_comparison, computed block by block on the conditional
    measures given the spins off the sites touched by the pairs."""
    sites = sorted({int(a) for p in list(full_pairs) + list(restricted_pairs) for a in p})
    inv = _blocks(measure.space, sites)
    Lf = pair_laplacian(measure, full_pairs, full_weights).tocsr()
    Lr = pair_laplacian(measure, restricted_pairs, restricted_weights).tocsr()
    best = 0.0
    for b in range(inv.max() + 1):
        idx = np.flatnonzero(inv == b)
        if len(idx) < 2:
            continue
        lf = Lf[idx][:, idx].toarray()
        if not np.any(lf):
            continue
        lr = Lr[idx][:, idx].toarray()
        # normalising by the block mass turns these into the conditional forms
        val, _ = _generalized_max(lf / measure.p[idx].sum(), lr / measure.p[idx].sum())
        best = max(best, val)
    return best


# ---------------------------------------------------------------- interval


def nn_pairs(i: int, j: int) -> list:
    lo, hi = min(i, j), max(i, j)
    return [(k, k + 1) for k in range(lo, hi)]


def interval_constant(measure: Measure, i: int, j: int) -> ComparisonReport:
    """sup_F E[(F - F^{ij})^2] / sum_{k=i}^{j-1} E[(F - F^{k,k+1})^2]."""
    rep = exact_comparison(measure, [(i, j)], nn_pairs(i, j), geometry="interval")
    rep.detail["distance"] = abs(j - i)
    return rep


def calibrate_interval_constant(measure: Measure, max_distance: int | None = None) -> float:
    """max over pairs i < j of the exact interval constant divided by |i - j|."""
    n = measure.space.n
    max_distance = n - 1 if max_distance is None else max_distance
    best = 0.0
    for i in range(n):
        for j in range(i + 1, min(n, i + max_distance + 1)):
            c = conditional_comparison(measure, [(i, j)], nn_pairs(i, j))
            best = max(best, c / (j - i))
    return best


@dataclass
class IntervalBound:
    """F -> (E[(F - F^{ij})^2], C |i - j| sum_k E[(F - F^{k,k+1})^2])."""

    measure: Measure
    i: int
    j: int
    C: float

    def lhs(self, F) -> float:
        return exchange_form(self.measure, [(self.i, self.j)], F)

    def rhs(self, F) -> float:
        return self.C * abs(self.j - self.i) * exchange_form(self.measure, nn_pairs(self.i, self.j), F)

    def holds(self, F, tol: float = 1e-12) -> bool:
        return self.lhs(F) <= self.rhs(F) + tol


def interval_path_bound(measure: Measure, i: int, j: int, C: float | None = None, R: int = 1) -> IntervalBound:
    """Instantiated telescoping bound; C defaults to the exact calibration on this instance."""
    if R != 1:
        raise ParameterError("only nearest-neighbour (R = 1) intervals are supported")
    if not (0 <= min(i, j) and max(i, j) < measure.space.n and i != j):
        raise ParameterError("pair outside the interval")
    if C is None:
        C = conditional_comparison(measure, [(i, j)], nn_pairs(i, j)) / abs(j - i)
    return IntervalBound(measure, min(i, j), max(i, j), C)


# ---------------------------------------------------------------- path systems and census


def path_census(paths: dict, n: int, norm: float) -> tuple[float, dict]:
    """max_e norm * sum over the listed (ordered) pairs of |path| 1[e in path]."""
    load: dict = {}
    for p in paths.values():
        ell = len(p) - 1
        for a, b in zip(p[:-1], p[1:]):
            e = (a, b) if a < b else (b, a)
            load[e] = load.get(e, 0) + ell
    if not load:
        return 0.0, load
    return norm * max(load.values()), load


def ordered_geodesics(ps: PathSystem) -> dict:
    out = {}
    for (i, j), p in ps.paths.items():
        out[(i, j)] = tuple(p)
        out[(j, i)] = tuple(reversed(p))
    return out


def coordinate_path(i: int, j: int, L: int, d: int) -> tuple:
    """Nearest-neighbour path correcting coordinate 0 first, then 1, and so on."""
    x = [(i // L**a) % L for a in range(d)]
    y = [(j // L**a) % L for a in range(d)]
    cur = list(x)
    out = [i]
    for a in range(d):
        step = 1 if y[a] > cur[a] else -1
        while cur[a] != y[a]:
            cur[a] += step
            out.append(sum(c * L**b for b, c in enumerate(cur)))
    return tuple(out)


def lattice_paths(L: int, d: int) -> dict:
    n = L**d
    return {(i, j): coordinate_path(i, j, L, d) for i in range(n) for j in range(n) if i != j}


def lattice_congestion(L: int, d: int) -> float:
    """max_e L^{-d} sum_{i != j} |path_ij| 1[e in path_ij]."""
    val, _ = path_census(lattice_paths(L, d), L**d, 1.0 / L**d)
    return val


def _path_pairs(path) -> list:
    return [(min(a, b), max(a, b)) for a, b in zip(path[:-1], path[1:])]


def path_step_constant(measure: Measure, paths: dict) -> float:
    """max over pairs of sup_F E_ij(F) / (|path| sum_{e in path} E_e(F)), computed blockwise."""
    best = 0.0
    seen = set()
    for (i, j), p in paths.items():
        key = (min(i, j), max(i, j), tuple(sorted(_path_pairs(p))))
        if key in seen:
            continue
        seen.add(key)
        if len(p) == 2:
            best = max(best, 1.0)
            continue
        c = conditional_comparison(measure, [(i, j)], _path_pairs(p))
        best = max(best, c / (len(p) - 1))
    return best


def lattice_path_bound(L: int, d: int, measure: Measure | None = None) -> ComparisonReport:
    """Coordinate-path congestion on the open cube and, for a small measure, the exact constant
    of (1/L^d) sum_{i,j} E_ij against sum_{i~j} E_ij with the instantiated path bound."""
    cong = lattice_congestion(L, d)
    rep = ComparisonReport(None, None, None, "cube", cong, None, {"L": L, "d": d, "ratio_L2": cong / L**2})
    if measure is not None:
        n = L**d
        if measure.space.n != n:
            raise ParameterError("measure does not live on the cube")
        g = lattice_graph(L, d)
        full = [(i, j) for i in range(n) for j in range(n) if i != j]
        ex = exact_comparison(measure, full, [tuple(e) for e in g.edges], np.full(len(full), 1.0 / n), geometry="cube")
        Cmp = path_step_constant(measure, lattice_paths(L, d))
        rep.exact_constant, rep.witness, rep.C_mp = ex.exact_constant, ex.witness, Cmp
        rep.analytic_bound = Cmp * cong
    return rep


def graph_path_bound(graph: Graph, ps: PathSystem | None = None, measure: Measure | None = None,
                     C_mp: float | None = None) -> ComparisonReport:
    """(1/N) sum_{i,j} E_ij <= 2 C_mp cong sum_{i~j} E_ij with cong = max_e (1/2N) sum |path| 1[e in path]."""
    ps = geodesic_paths(graph) if ps is None else ps
    n = graph.n
    cong, _ = path_census(ordered_geodesics(ps), n, 1.0 / (2 * n))
    rep = ComparisonReport(None, None, None, "graph", cong, C_mp, {"diameter": max(len(p) - 1 for p in ps.paths.values())})
    if measure is not None:
        if C_mp is None:
            C_mp = path_step_constant(measure, ordered_geodesics(ps))
        full = [(i, j) for i in range(n) for j in range(n) if i != j]
        ex = exact_comparison(measure, full, [tuple(e) for e in graph.edges], np.full(len(full), 1.0 / n), geometry="graph")
        rep.exact_constant, rep.witness = ex.exact_constant, ex.witness
    if C_mp is not None:
        rep.C_mp = C_mp
        rep.analytic_bound = 2.0 * C_mp * cong
    return rep


def cycle_constant(measure: Measure) -> float:
    """Exact constant of (1/N) sum_{i,j} E_ij against the cycle nearest-neighbour form."""
    n = measure.space.n
    g = cycle_graph(n)
    full = [(i, j) for i in range(n) for j in range(n) if i != j]
    return exact_comparison(measure, full, [tuple(e) for e in g.edges], np.full(len(full), 1.0 / n),
                            geometry="cycle").exact_constant


def rrg_chain_value(n: int, d: int, diameter: int) -> dict:
    """D^3 (d-1)^D / N against log^4 N."""
    v = diameter**3 * (d - 1) ** diameter / n
    return {"chain": v, "log4": math.log(n) ** 4, "ratio": v / math.log(n) ** 4}
