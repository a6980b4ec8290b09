"""Interaction graphs: random regular sampling, spectra, BFS geometry, geodesic congestion."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numba
import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components
from scipy.sparse.linalg import LinearOperator, eigsh

from ._linalg import householder_vector
from .errors import ModelError, ParameterError, SamplingError

DENSE_SPECTRUM_MAX = 2000


@dataclass(eq=False)
class Graph:
    """Simple undirected graph on vertices 0..n-1 with a sorted, deduplicated edge array."""

    n: int
    edges: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        e = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)
        if e.size and (e.min() < 0 or e.max() >= self.n):
            raise ParameterError("edge endpoint out of range")
        if np.any(e[:, 0] == e[:, 1]):
            raise ParameterError("self-loop in edge list")
        e = np.sort(e, axis=1)
        key = e[:, 0] * self.n + e[:, 1]
        order = np.argsort(key, kind="stable")
        e, key = e[order], key[order]
        if np.any(np.diff(key) == 0):
            raise ParameterError("parallel edges in edge list")
        self.edges = e

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @cached_property
    def degree_sequence(self) -> np.ndarray:
        return np.bincount(self.edges.ravel(), minlength=self.n)

    @cached_property
    def adjacency(self) -> sp.csr_matrix:
        u, v = self.edges[:, 0], self.edges[:, 1]
        data = np.ones(2 * len(u))
        A = sp.csr_matrix((data, (np.r_[u, v], np.r_[v, u])), shape=(self.n, self.n))
        A.sort_indices()
        return A

    @cached_property
    def csr_edge_ids(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(indptr, indices, edge id) with neighbours sorted ascending."""
        m = self.n_edges
        u, v = self.edges[:, 0], self.edges[:, 1]
        rows = np.r_[u, v]
        cols = np.r_[v, u]
        eid = np.r_[np.arange(m), np.arange(m)]
        order = np.lexsort((cols, rows))
        rows, cols, eid = rows[order], cols[order], eid[order]
        indptr = np.zeros(self.n + 1, dtype=np.int64)
        np.add.at(indptr, rows + 1, 1)
        return np.cumsum(indptr), cols.astype(np.int64), eid.astype(np.int64)

    def edge_id(self, u: int, v: int) -> int:
        a, b = min(u, v), max(u, v)
        key = self.edges[:, 0] * self.n + self.edges[:, 1]
        pos = np.searchsorted(key, a * self.n + b)
        if pos >= len(key) or key[pos] != a * self.n + b:
            raise KeyError((u, v))
        return int(pos)

    def is_regular(self, d: int | None = None) -> bool:
        deg = self.degree_sequence
        target = deg[0] if d is None else d
        return bool(np.all(deg == target))

    def n_components(self) -> int:
        return int(connected_components(self.adjacency, directed=False)[0])

    def is_connected(self) -> bool:
        return self.n_components() == 1


def complete_graph(n: int) -> Graph:
    iu = np.triu_indices(n, 1)
    return Graph(n, np.column_stack(iu))


def cycle_graph(n: int) -> Graph:
    u = np.arange(n)
    return Graph(n, np.column_stack([u, (u + 1) % n]))


def path_graph(n: int) -> Graph:
    u = np.arange(n - 1)
    return Graph(n, np.column_stack([u, u + 1]))


def petersen_graph() -> Graph:
    outer = [(i, (i + 1) % 5) for i in range(5)]
    spokes = [(i, i + 5) for i in range(5)]
    inner = [(5 + i, 5 + (i + 2) % 5) for i in range(5)]
    return Graph(10, np.array(outer + spokes + inner))


def lattice_index(coords, L: int) -> int:
    return int(sum(int(c) * L**a for a, c in enumerate(coords)))


def lattice_graph(L: int, d: int) -> Graph:
    """Open-boundary cube {0..L-1}^d; vertex index sum_a x_a L^a."""
    n = L**d
    idx = np.arange(n)
    edges = []
    for a in range(d):
        x_a = (idx // L**a) % L
        src = idx[x_a < L - 1]
        edges.append(np.column_stack([src, src + L**a]))
    return Graph(n, np.vstack(edges) if edges else np.zeros((0, 2), dtype=np.int64))


def sample_regular(n: int, d: int, seed: int, max_attempts: int = 10_000) -> Graph:
    """Uniform simple connected d-regular graph by the pairing model with full restart."""
    if d < 3 or n <= d:
        raise ParameterError("need d >= 3 and n > d")
    if (n * d) % 2:
        raise ParameterError("n * d must be even")
    rng = np.random.default_rng(seed)
    stubs = np.repeat(np.arange(n, dtype=np.int64), d)
    disconnected = 0
    for attempt in range(1, max_attempts + 1):
        perm = rng.permutation(stubs)
        u, v = perm[0::2], perm[1::2]
        if np.any(u == v):
            continue
        a, b = np.minimum(u, v), np.maximum(u, v)
        key = a * n + b
        if np.unique(key).size != key.size:
            continue
        g = Graph(n, np.column_stack([a, b]))
        if not g.is_connected():
            disconnected += 1
            continue
        g.meta.update(seed=int(seed), attempts=attempt, resamples_disconnected=disconnected, d=d)
        return g
    raise SamplingError(f"pairing model exceeded {max_attempts} attempts for n={n}, d={d}")


# ---------------------------------------------------------------- spectra


@dataclass
class SpectrumReport:
    lambda_1: float
    lambda_2: float
    lambda_N: float
    delta: float
    method: str
    eigenvalues: np.ndarray | None = None

    def within_window(self, d: int, eps: float) -> bool:
        r = 2.0 * math.sqrt(d - 1) + eps
        return -r <= self.lambda_2 and self.lambda_N <= r


def _as_matrix(obj):
    if isinstance(obj, Graph):
        return obj.adjacency
    raw = getattr(obj, "raw", None)
    if raw is not None:
        return raw
    return obj


def constant_eigenvalue(A, tol: float = 1e-10) -> float:
    n = A.shape[0]
    v = np.asarray(A @ np.ones(n)).ravel()
    lam = float(v.mean())
    scale = max(1.0, float(np.abs(v).max()))
    if np.abs(v - lam).max() > tol * scale:
        raise ModelError("constant vector is not an eigenvector of the coupling")
    return lam


def _check_symmetric(A, tol=1e-12):
    if sp.issparse(A):
        diff = abs(A - A.T)
        bad = diff.max() if diff.nnz else 0.0
    else:
        bad = np.abs(A - A.T).max() if A.size else 0.0
    if bad > tol * max(1.0, abs(A).max()):
        raise ModelError("coupling matrix is not symmetric")


def _restricted_dense(A: np.ndarray) -> np.ndarray:
    """H A H with H the Householder map e_0 -> 1/sqrt(n); drop the constant row/column."""
    n = A.shape[0]
    w = householder_vector(n)
    Aw = A @ w
    wAw = w @ Aw
    B = A - 2.0 * np.outer(w, Aw) - 2.0 * np.outer(Aw, w) + 4.0 * wAw * np.outer(w, w)
    return B[1:, 1:]


def spectrum(g_or_A, mode: str = "auto", tol: float = 1e-10) -> SpectrumReport:
    """Constant eigenvalue and the extremes of the nontrivial spectrum (on the zero-sum subspace)."""
    A = _as_matrix(g_or_A)
    n = A.shape[0]
    _check_symmetric(A)
    lam1 = constant_eigenvalue(A, tol)
    if n < 2:
        raise ParameterError("need at least two vertices")
    if mode == "auto":
        mode = "exact" if n <= DENSE_SPECTRUM_MAX else "iterative"
    if mode == "exact":
        dense = A.toarray() if sp.issparse(A) else np.asarray(A, dtype=float)
        ev = sla.eigvalsh(_restricted_dense(dense))
        lo, hi = float(ev[0]), float(ev[-1])
        return SpectrumReport(lam1, lo, hi, hi - lo, "exact-dense", ev)
    if mode != "iterative":
        raise ParameterError(f"unknown spectrum mode {mode!r}")
    if n < 4:
        return spectrum(A, "exact", tol)
    Asp = sp.csr_matrix(A, dtype=float)
    w = householder_vector(n)

    def matvec(y):
        y = np.ravel(y)
        x = np.concatenate([[0.0], y])
        x = x - 2.0 * w * (w @ x)
        z = Asp @ x
        z = z - 2.0 * w * (w @ z)
        return z[1:]

    op = LinearOperator((n - 1, n - 1), matvec=matvec, dtype=float)
    v0 = np.random.default_rng(0).standard_normal(n - 1)
    ncv = min(n - 1, 64)
    lo = eigsh(op, k=1, which="SA", tol=1e-12, ncv=ncv, v0=v0, return_eigenvectors=False, maxiter=50 * n)[0]
    hi = eigsh(op, k=1, which="LA", tol=1e-12, ncv=ncv, v0=v0, return_eigenvectors=False, maxiter=50 * n)[0]
    return SpectrumReport(lam1, float(lo), float(hi), float(hi - lo), "iterative")


# ---------------------------------------------------------------- BFS geometry


@numba.njit(cache=True)
def _bfs(indptr, indices, src, dist, queue):
    dist[:] = -1
    dist[src] = 0
    queue[0] = src
    head = 0
    tail = 1
    while head < tail:
        u = queue[head]
        head += 1
        du = dist[u] + 1
        for p in range(indptr[u], indptr[u + 1]):
            v = indices[p]
            if dist[v] < 0:
                dist[v] = du
                queue[tail] = v
                tail += 1
    return tail


@numba.njit(cache=True)
def _geodesic_sweep(indptr, indices, eid, n, m, with_load):
    """All-sources BFS. Returns (diameter, reached_all, edge loads).

    Pair (i, j) with i < j uses the geodesic from the BFS tree of i in which every
    vertex points to its lowest-index neighbour one level closer to i.  The load of
    an edge is sum over such pairs of |path| * 1[edge on path].
    """
    dist = np.empty(n, dtype=np.int64)
    queue = np.empty(n, dtype=np.int64)
    acc = np.zeros(n, dtype=np.float64)
    parent = np.empty(n, dtype=np.int64)
    parent_e = np.empty(n, dtype=np.int64)
    load = np.zeros(m, dtype=np.float64)
    diam = 0
    connected = True
    for i in range(n):
        reached = _bfs(indptr, indices, i, dist, queue)
        if reached < n:
            connected = False
        ecc = dist[queue[reached - 1]]
        if ecc > diam:
            diam = ecc
        if not with_load:
            continue
        for q in range(1, reached):
            v = queue[q]
            best = n
            be = -1
            for p in range(indptr[v], indptr[v + 1]):
                u = indices[p]
                if dist[u] == dist[v] - 1 and u < best:
                    best = u
                    be = eid[p]
            parent[v] = best
            parent_e[v] = be
            acc[v] = dist[v] if v > i else 0.0
        for q in range(reached - 1, 0, -1):
            v = queue[q]
            a = acc[v]
            if a != 0.0:
                load[parent_e[v]] += a
                if parent[v] != i:
                    acc[parent[v]] += a
    return diam, connected, load


def _sweep(g: Graph, with_load: bool):
    indptr, indices, eid = g.csr_edge_ids
    return _geodesic_sweep(indptr, indices, eid, g.n, g.n_edges, with_load)


def diameter(g: Graph) -> int | float:
    """Exact diameter; math.inf for a disconnected graph (see n_components)."""
    diam, connected, _ = _sweep(g, False)
    return int(diam) if connected else math.inf


def bfs_distances(g: Graph, src: int) -> np.ndarray:
    indptr, indices, _ = g.csr_edge_ids
    dist = np.empty(g.n, dtype=np.int64)
    queue = np.empty(g.n, dtype=np.int64)
    _bfs(indptr, indices, src, dist, queue)
    return dist


@dataclass
class PathSystem:
    """One path per unordered pair (i, j), i < j, as a vertex tuple from i to j."""

    n: int
    paths: dict
    graph: Graph | None = None

    @property
    def lengths(self) -> dict:
        return {key: len(p) - 1 for key, p in self.paths.items()}

    def path(self, i: int, j: int) -> tuple:
        if i < j:
            return self.paths[(i, j)]
        return tuple(reversed(self.paths[(j, i)]))


def geodesic_path(g: Graph, i: int, j: int) -> tuple:
    if i > j:
        return tuple(reversed(geodesic_path(g, j, i)))
    dist = bfs_distances(g, i)
    if dist[j] < 0:
        raise ParameterError("graph is disconnected")
    indptr, indices, _ = g.csr_edge_ids
    path = [j]
    v = j
    while v != i:
        nb = indices[indptr[v]:indptr[v + 1]]
        v = int(nb[dist[nb] == dist[v] - 1].min())
        path.append(v)
    return tuple(reversed(path))


def geodesic_paths(g: Graph) -> PathSystem:
    """Materialised geodesic path system (lowest-index parent tie-breaking)."""
    if not g.is_connected():
        raise ParameterError("graph is disconnected")
    indptr, indices, _ = g.csr_edge_ids
    paths = {}
    for i in range(g.n):
        dist = bfs_distances(g, i)
        parent = np.full(g.n, -1)
        for v in range(g.n):
            if v == i:
                continue
            nb = indices[indptr[v]:indptr[v + 1]]
            parent[v] = nb[dist[nb] == dist[v] - 1].min()
        for j in range(i + 1, g.n):
            p = [j]
            while p[-1] != i:
                p.append(int(parent[p[-1]]))
            paths[(i, j)] = tuple(reversed(p))
    return PathSystem(g.n, paths, g)


@dataclass
class CongestionReport:
    value: float
    diameter: int
    bound: float | None
    edge_loads: np.ndarray | None = None


def path_bound(n: int, d: int | None, diam: int) -> float | None:
    if d is None:
        return None
    return diam**3 * float(d - 1) ** diam / n


def congestion(ps: PathSystem, n: int | None = None, graph: Graph | None = None) -> CongestionReport:
    """max_e (1/2N) sum over ordered pairs of |path| 1[e in path], by explicit census."""
    n = ps.n if n is None else n
    load: dict = {}
    diam = 0
    for p in ps.paths.values():
        ell = len(p) - 1
        diam = max(diam, ell)
        for a, b in zip(p[:-1], p[1:]):
            e = (min(a, b), max(a, b))
            load[e] = load.get(e, 0) + ell
    value = max(load.values()) / n if load else 0.0
    g = graph if graph is not None else ps.graph
    d = None
    if g is not None and g.is_regular():
        d = int(g.degree_sequence[0])
        loads = np.array([load.get((int(u), int(v)), 0) for u, v in g.edges], dtype=float)
    else:
        loads = None
    return CongestionReport(value, diam, path_bound(n, d, diam), loads)


def geodesic_congestion(g: Graph) -> CongestionReport:
    """Same quantity as congestion(geodesic_paths(g)) without materialising the paths."""
    diam, connected, load = _sweep(g, True)
    if not connected:
        raise ParameterError("graph is disconnected")
    d = int(g.degree_sequence[0]) if g.is_regular() else None
    return CongestionReport(float(load.max()) / g.n, int(diam), path_bound(g.n, d, int(diam)), load)


# ---------------------------------------------------------------- file format


def write_graph(g: Graph, path) -> None:
    lines = [f"{g.n} {g.n_edges}"] + [f"{u} {v}" for u, v in g.edges]
    Path(path).write_text("\n".join(lines) + "\n")


def read_graph(path) -> Graph:
    rows = [ln.split() for ln in Path(path).read_text().splitlines() if ln.strip()]
    if not rows or len(rows[0]) != 2:
        raise ParameterError(f"{path}: header must be 'N M'")
    n, m = int(rows[0][0]), int(rows[0][1])
    if len(rows) - 1 != m:
        raise ParameterError(f"{path}: header says {m} edges, found {len(rows) - 1}")
    edges = np.array([[int(a), int(b)] for a, b in rows[1:]], dtype=np.int64).reshape(-1, 2)
    return Graph(n, edges)
