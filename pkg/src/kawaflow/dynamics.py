"""Exchange dynamics: rate kernels, exact generators, and continuous-time simulation."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components
from scipy.special import expit

from .errors import ModelError, ParameterError
from .graph import Graph
from .ising import CanonicalModel, Measure, StateSpace, log_weights, mask_to_spins, spins_to_mask

KINDS = ("standard", "down_up", "up_down", "kawasaki")
FLAVOURS = ("heat_bath", "metropolis")


@dataclass(eq=False)
class RateKernel:
    """Exchange rates c(s, s^{ij}) for one of the conservative dynamics.

    For ``standard`` and ``kawasaki`` the mover i is the plus site; for
    ``down_up`` i is a particle jumping to an admissible site j; for ``up_down``
    i is a hole.  ``measure`` is the reversible measure on ``space``.
    """

    kind: str
    n: int
    k: int
    model: CanonicalModel | None = None
    measure: Measure | None = None
    graph: Graph | None = None
    flavour: str = "heat_bath"

    @property
    def space(self) -> StateSpace:
        return self.measure.space

    @cached_property
    def adjacency(self) -> np.ndarray | None:
        if self.graph is None:
            return None
        return self.graph.adjacency.toarray() > 0

    def ensure_measure(self) -> Measure:
        if self.measure is None:
            space = self.model.space()
            self.measure = Measure.from_log_weights(space, log_weights(self.model, space))
        return self.measure

    def transitions(self):
        """All positive-rate moves: arrays (src, dst, rate, i, j) over the enumerated space."""
        mu = self.ensure_measure()
        space = mu.space
        occ = space.occupation
        if self.kind == "up_down":
            mover, target = ~occ, occ
        else:
            mover, target = occ, ~occ
        pair = mover[:, :, None] & target[:, None, :]
        if self.kind == "kawasaki":
            pair &= self.adjacency[None, :, :]
        x, i, j = np.nonzero(pair)
        flip = (np.int64(1) << i.astype(np.int64)) | (np.int64(1) << j.astype(np.int64))
        dst = space.ranks(space.masks[x] ^ flip)
        keep = dst >= 0
        x, i, j, dst = x[keep], i[keep], j[keep], dst[keep]
        dl = mu.logp[dst] - mu.logp[x]
        rate = _rates_from_log_ratio(self.kind, self.flavour, self.n, dl, x * self.n + i, space.size * self.n)
        return x, dst, rate, i, j

    def rate(self, mask: int, i: int, j: int) -> float:
        """Rate of the single move of site i with site j from configuration ``mask``."""
        mu = self.ensure_measure()
        space = mu.space
        x = space.rank(mask)
        occ = space.occupation[x]
        mover_is_plus = self.kind != "up_down"
        if occ[i] != mover_is_plus or occ[j] == mover_is_plus:
            return 0.0
        if self.kind == "kawasaki" and not self.adjacency[i, j]:
            return 0.0
        y = space.ranks(np.array([mask ^ (1 << i) ^ (1 << j)]))[0]
        if y < 0:
            return 0.0
        dl = mu.logp[y] - mu.logp[x]
        if self.kind in ("down_up", "up_down"):
            alts = np.flatnonzero(occ != mover_is_plus)
            ys = space.ranks(np.array([mask ^ (1 << i) ^ (1 << int(l)) for l in alts]))
            ys = ys[ys >= 0]
            return float(np.exp(dl) / (1.0 + np.exp(mu.logp[ys] - mu.logp[x]).sum()))
        return float(_rates_from_log_ratio(self.kind, self.flavour, self.n, np.array([dl]), None, None)[0])


def _rates_from_log_ratio(kind, flavour, n, dl, group, n_groups):
    if kind == "standard":
        return (1.0 + np.exp(dl)) / (2.0 * n)
    if kind == "kawasaki":
        if flavour == "metropolis":
            return np.exp(np.minimum(dl, 0.0))
        return expit(dl)
    r = np.exp(dl)
    denom = 1.0 + np.bincount(group, weights=r, minlength=n_groups)
    return r / denom[group]


def make_kernel(kind: str, target, graph: Graph | None = None, flavour: str = "heat_bath") -> RateKernel:
    """Rate kernel reversible for ``target`` (a CanonicalModel or a Measure).

    kind="auto" picks the down-up walk for m <= 0 and the up-down walk for m > 0.
    """
    if isinstance(target, CanonicalModel):
        model, measure, n, k = target, None, target.n, target.k
    elif isinstance(target, Measure):
        model, measure, n, k = None, target, target.space.n, target.space.k
    else:
        raise ParameterError("target must be a CanonicalModel or a Measure")
    if kind == "auto":
        kind = "down_up" if 2 * k <= n else "up_down"
    if kind not in KINDS:
        raise ParameterError(f"unknown kernel kind {kind!r}")
    if kind == "kawasaki" and graph is None:
        raise ParameterError("kawasaki dynamics needs a graph")
    if flavour not in FLAVOURS:
        raise ParameterError(f"unknown kawasaki flavour {flavour!r}")
    if graph is not None and graph.n != n:
        raise ParameterError("graph size differs from N")
    return RateKernel(kind, n, k, model, measure, graph, flavour)


def kawasaki_rate_flavour(target, graph: Graph, flavour: str = "heat_bath") -> RateKernel:
    return make_kernel("kawasaki", target, graph, flavour)


# ---------------------------------------------------------------- generators


@dataclass(eq=False)
class GeneratorMatrix:
    Q: sp.csr_matrix
    mu: np.ndarray
    space: StateSpace
    Lambda: float
    kind: str = ""
    src: np.ndarray = field(default=None, repr=False)
    dst: np.ndarray = field(default=None, repr=False)
    rate: np.ndarray = field(default=None, repr=False)

    @property
    def size(self) -> int:
        return self.space.size

    @property
    def measure(self) -> Measure:
        return Measure(self.space, self.mu, np.log(self.mu))

    def stationarity_residual(self) -> float:
        return float(np.abs(self.mu @ self.Q).max())

    def detailed_balance_residual(self) -> float:
        F = sp.diags(self.mu) @ self.Q
        D = F - F.T
        return float(abs(D).max()) if D.nnz else 0.0

    def components(self) -> tuple[int, np.ndarray]:
        return connected_components(self.Q, directed=True, connection="strong")

    def is_irreducible(self) -> bool:
        return self.components()[0] == 1

    def symmetrised(self) -> np.ndarray:
        """D^{1/2} Q D^{-1/2}, dense and exactly symmetric."""
        s = np.sqrt(self.mu)
        S = (self.Q.toarray() * s[:, None]) / s[None, :]
        return 0.5 * (S + S.T)

    def uniformised(self, Lam: float | None = None) -> np.ndarray:
        Lam = self.Lambda if Lam is None else Lam
        return np.eye(self.size) + self.Q.toarray() / Lam

    def dirichlet(self, F, G=None) -> float:
        F = np.asarray(F, dtype=float)
        G = F if G is None else np.asarray(G, dtype=float)
        w = self.mu[self.src] * self.rate
        return float(0.5 * np.sum(w * (F[self.dst] - F[self.src]) * (G[self.dst] - G[self.src])))


def build_generator(kernel: RateKernel, check: bool = True) -> GeneratorMatrix:
    mu = kernel.ensure_measure()
    src, dst, rate, _, _ = kernel.transitions()
    size = mu.space.size
    exit_rate = np.bincount(src, weights=rate, minlength=size)
    Q = sp.csr_matrix((np.r_[rate, -exit_rate], (np.r_[src, np.arange(size)], np.r_[dst, np.arange(size)])),
                      shape=(size, size))
    Q.sum_duplicates()
    gen = GeneratorMatrix(Q, mu.p, mu.space, float(exit_rate.max()) if size else 0.0, kernel.kind, src, dst, rate)
    if check:
        scale = max(1.0, gen.Lambda)
        if gen.stationarity_residual() > 1e-10 * scale:
            raise ModelError(f"{kernel.kind} kernel is not stationary for its measure")
    return gen


def dirichlet_form(gen: GeneratorMatrix | RateKernel, F, G=None) -> float:
    """1/2 sum mu(s) c(s, s') (F(s') - F(s)) (G(s') - G(s))."""
    if isinstance(gen, RateKernel):
        gen = build_generator(gen)
    return gen.dirichlet(F, G)


def coo_text(gen: GeneratorMatrix) -> str:
    """Header 'size nnz' then one 'row col value' line per entry, row-major."""
    Q = gen.Q.tocoo()
    order = np.lexsort((Q.col, Q.row))
    lines = [f"{gen.size} {Q.nnz}"]
    lines += [f"{r} {c} {float(v)!r}" for r, c, v in zip(Q.row[order], Q.col[order], Q.data[order])]
    return "\n".join(lines) + "\n"


def export_coo(gen: GeneratorMatrix, path) -> None:
    Path(path).write_text(coo_text(gen))


# ---------------------------------------------------------------- simulation


@dataclass
class Trajectory:
    times: np.ndarray
    observables: dict
    n_events: int
    n_moves: int
    seed: int

    def columns(self) -> list[str]:
        return ["time"] + list(self.observables)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(self.columns())
            cols = [self.times] + [self.observables[c] for c in self.observables]
            for row in zip(*cols):
                w.writerow([repr(float(v)) for v in row])

    def batch_mean(self, name: str, burn_in: float = 0.1, n_batches: int = 20) -> tuple[float, float]:
        """Mean after burn-in and its batch-means standard error."""
        x = np.asarray(self.observables[name])
        x = x[int(burn_in * len(x)):]
        nb = len(x) // n_batches
        if nb == 0:
            raise ParameterError("too few records for batch means")
        b = x[: nb * n_batches].reshape(n_batches, nb).mean(axis=1)
        return float(x.mean()), float(b.std(ddof=1) / np.sqrt(n_batches))


class _Buffer:
    """Chunked uniform random numbers to keep the event loop cheap."""

    def __init__(self, rng, size=8192):
        self.rng, self.size = rng, size
        self._fill()

    def _fill(self):
        self.buf = self.rng.random(self.size)
        self.pos = 0

    def __call__(self) -> float:
        if self.pos == self.size:
            self._fill()
        u = self.buf[self.pos]
        self.pos += 1
        return u


class _LocalModel:
    """Spin vector with cached local fields A s for O(N) move evaluation."""

    def __init__(self, model: CanonicalModel, sigma):
        A = model.A
        self.sparse = sp.issparse(A)
        self.A = sp.csc_matrix(A) if self.sparse else np.asarray(A, dtype=float)
        self.diag = np.asarray(self.A.diagonal()).ravel()
        self.beta, self.h, self.n = model.beta, model.h, model.n
        self.s = np.asarray(sigma, dtype=float).copy()
        self.field = np.asarray(self.A @ self.s).ravel()

    def col(self, i):
        if not self.sparse:
            return self.A[:, i]
        out = np.zeros(self.n)
        lo, hi = self.A.indptr[i], self.A.indptr[i + 1]
        out[self.A.indices[lo:hi]] = self.A.data[lo:hi]
        return out

    def dlog(self, i, js, Ai=None):
        """log nu(s^{ij}) - log nu(s) for the move plus site i -> minus sites js."""
        Ai = self.col(i) if Ai is None else Ai
        dq = 4.0 * (self.field[js] - self.field[i]) + 4.0 * (self.diag[i] + self.diag[js] - 2.0 * Ai[js])
        return -0.5 * self.beta * dq + 2.0 * (self.h[js] - self.h[i])

    def move(self, i, j):
        self.field += 2.0 * self.col(j) - 2.0 * self.col(i)
        self.s[i], self.s[j] = -1.0, 1.0

    def energy(self):
        return float(self.s @ self.field)


def _standard_cmax(st: "_LocalModel", plus, minus, offdiag_max: float) -> float:
    """Upper bound on every standard exchange rate out of the current state."""
    fp, fm = st.field[plus], st.field[minus]
    dq_lo = 4.0 * (fm.min() - fp.max()) + 4.0 * (2.0 * st.diag.min() - 2.0 * offdiag_max)
    dl_hi = -0.5 * st.beta * dq_lo + 2.0 * (st.h[minus].max() - st.h[plus].min())
    return (1.0 + np.exp(dl_hi)) / (2.0 * st.n)


def run_chain(kernel: RateKernel, start, t_max: float, seed: int, record_times=None,
              functionals=None, n_records: int = 200, check_conservation: bool = False) -> Trajectory:
    """Continuous-time trajectory by uniformisation (thinning) or exact event sampling.

    ``start`` is a spin vector or bitmask.  Observables recorded at ``record_times``
    (default: an even grid): energy (s, A s) when a model is attached, overlap
    (s, s0)/N, magnetisation, and each row f of ``functionals`` as (f, s).
    """
    if t_max <= 0:
        raise ParameterError("t_max must be positive")
    n = kernel.n
    sigma0 = mask_to_spins(start, n) if isinstance(start, (int, np.integer)) else np.asarray(start, dtype=float)
    if sigma0.shape != (n,) or int(np.sum(sigma0 > 0)) != kernel.k:
        raise ParameterError("start configuration has the wrong size or particle number")
    times = np.linspace(0.0, t_max, n_records) if record_times is None else np.asarray(record_times, dtype=float)
    Fm = np.zeros((0, n)) if functionals is None else np.atleast_2d(np.asarray(functionals, dtype=float))
    rng = np.random.default_rng(seed)
    if kernel.model is not None:
        return _run_local(kernel, sigma0, times, Fm, rng, seed, check_conservation)
    return _run_enumerated(kernel, sigma0, times, Fm, rng, seed, check_conservation)


def _recorder(times, Fm, sigma0):
    rec = {"energy": np.full(len(times), np.nan), "overlap": np.zeros(len(times)),
           "magnetisation": np.zeros(len(times))}
    for a in range(len(Fm)):
        rec[f"f{a}"] = np.zeros(len(times))
    n = len(sigma0)

    def write(r, s, energy):
        rec["energy"][r] = energy
        rec["overlap"][r] = s @ sigma0 / n
        rec["magnetisation"][r] = s.sum() / n
        for a in range(len(Fm)):
            rec[f"f{a}"][r] = Fm[a] @ s

    return rec, write


def _run_local(kernel, sigma0, times, Fm, rng, seed, check):
    st = _LocalModel(kernel.model, sigma0)
    n, k = kernel.n, kernel.k
    u = _Buffer(rng)
    plus = list(np.flatnonzero(st.s > 0))
    minus = list(np.flatnonzero(st.s < 0))
    pos = {int(v): a for a, v in enumerate(plus)}
    pos.update({int(v): a for a, v in enumerate(minus)})
    kind = kernel.kind
    if kind == "kawasaki":
        edges = kernel.graph.edges
        Lam = float(len(edges))
    elif kind == "standard":
        A = st.A
        offdiag = (A - sp.diags(st.diag)) if st.sparse else A - np.diag(st.diag)
        offdiag_max = float(offdiag.max()) if (not st.sparse or offdiag.nnz) else 0.0
        n_pairs = n * (n - 1) // 2
        Lam = 0.0
    elif kind == "down_up":
        Lam = float(k)
    else:
        Lam = float(n - k)
    rec, write = _recorder(times, Fm, sigma0)
    total = st.s.sum()

    def swap(i, j):
        # i plus -> minus, j minus -> plus
        a, b = pos[i], pos[j]
        plus[a], minus[b] = j, i
        pos[j], pos[i] = a, b
        st.move(i, j)

    t, r, n_events, n_moves = 0.0, 0, 0, 0
    while r < len(times):
        if kind == "standard":
            # state-dependent dominating rate; valid since it is constant between events
            cmax = _standard_cmax(st, plus, minus, offdiag_max)
            Lam = n_pairs * cmax
        t_next = t - np.log(1.0 - u()) / Lam if Lam > 0 else np.inf
        while r < len(times) and times[r] < t_next:
            write(r, st.s, st.energy())
            r += 1
        if r == len(times):
            break
        t = t_next
        n_events += 1
        moved = None
        if kind == "kawasaki":
            a, b = edges[int(u() * len(edges))]
            if st.s[a] != st.s[b]:
                i, j = (a, b) if st.s[a] > 0 else (b, a)
                dl = st.dlog(i, np.array([j]))[0]
                c = np.exp(min(dl, 0.0)) if kernel.flavour == "metropolis" else expit(dl)
                if u() < c:
                    moved = (i, j)
        elif kind == "standard":
            a = int(u() * n)
            b = int(u() * (n - 1))
            b += b >= a
            if st.s[a] != st.s[b]:
                i, j = (a, b) if st.s[a] > 0 else (b, a)
                dl = st.dlog(i, np.array([j]))[0]
                c = (1.0 + np.exp(dl)) / (2.0 * n)
                if u() * cmax < c:
                    moved = (i, j)
        elif kind == "down_up":
            i = plus[int(u() * len(plus))]
            js = np.array(minus)
            w = np.exp(st.dlog(i, js))
            cum = np.cumsum(np.r_[1.0, w])
            pick = int(np.searchsorted(cum, u() * cum[-1], side="right"))
            if pick > 0:
                moved = (i, int(js[pick - 1]))
        else:
            hole = minus[int(u() * len(minus))]
            js = np.array(plus)
            # particle j -> hole
            w = np.array([np.exp(st.dlog(int(j), np.array([hole]))[0]) for j in js])
            cum = np.cumsum(np.r_[1.0, w])
            pick = int(np.searchsorted(cum, u() * cum[-1], side="right"))
            if pick > 0:
                moved = (int(js[pick - 1]), hole)
        if moved is not None:
            swap(int(moved[0]), int(moved[1]))
            n_moves += 1
            if check and st.s.sum() != total:
                raise ModelError("magnetisation changed along the trajectory")
    return Trajectory(times, rec, n_events, n_moves, seed)


def _run_enumerated(kernel, sigma0, times, Fm, rng, seed, check):
    gen = build_generator(kernel)
    space = gen.space
    Q = gen.Q.tocsr()
    exit_rate = -Q.diagonal()
    x = space.rank(spins_to_mask(sigma0))
    rec, write = _recorder(times, Fm, sigma0)
    S = space.spins
    t, r, n_events = 0.0, 0, 0
    while r < len(times):
        q = exit_rate[x]
        t_next = t + rng.exponential(1.0 / q) if q > 0 else np.inf
        while r < len(times) and times[r] < t_next:
            write(r, S[x], np.nan)
            r += 1
        if r == len(times):
            break
        t = t_next
        lo, hi = Q.indptr[x], Q.indptr[x + 1]
        cols, vals = Q.indices[lo:hi], Q.data[lo:hi].copy()
        vals[cols == x] = 0.0
        cum = np.cumsum(vals)
        x = int(cols[np.searchsorted(cum, rng.random() * cum[-1], side="right")])
        n_events += 1
    return Trajectory(times, rec, n_events, n_events, seed)


def autocorrelation_time(x, c: float = 5.0) -> float:
    """Integrated autocorrelation time (in samples) with an automatic window."""
    x = np.asarray(x, dtype=float) - np.mean(x)
    n = len(x)
    if n < 4 or np.allclose(x, 0):
        return 1.0
    f = np.fft.rfft(x, n=2 * n)
    acf = np.fft.irfft(f * np.conj(f))[:n]
    acf /= acf[0]
    tau = 2.0 * np.cumsum(acf) - 1.0
    for w in range(1, n):
        if w >= c * tau[w]:
            return float(tau[w])
    return float(tau[-1])
