"""Command line front end: ``kawaflow <group> <verb> [options]``, ``kawaflow run <manifest>``.

Every verb returns a JSON record carrying the parameters, seed, version and an
instance hash.  With ``--out DIR`` the record and any data files (CSV, float64
binaries, edge lists) are written atomically into DIR.  Exit codes: 0 ok,
2 configuration error, 3 capacity, 4 failed check.
"""
from __future__ import annotations

import argparse
import math
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .contraction import adversarial_entropic_independence, entropic_independence_check, level_chain, two_particle_contraction
from .decomp import K_max, build_context, convolution_identity_check, entropic_stability_check, renormalised_potential
from .dynamics import KINDS, autocorrelation_time, build_generator, coo_text, make_kernel, run_chain
from .errors import CheckFailed, KawaflowError, ParameterError
from .funcineq import lsi_search, mixing_time_bound, mlsi_search, spectral_gap_exact, tv_mixing_exact
from .graph import (Graph, complete_graph, cycle_graph, diameter, geodesic_congestion, lattice_graph, path_graph,
                    petersen_graph, read_graph, sample_regular, spectrum)
from .ising import (CanonicalModel, CouplingMatrix, Measure, StateSpace, check_sc, chi0_bar, max_pair_covariance,
                    moments, particles, product_measure, variance_bound_check, weights)
from .manifest import OutputSink, dumps, instance_hash, run_manifest, task_seed
from .matroid import (MatroidOracle, PerturbedMeasure, check_exchange_property, downup_on_bases, generating_polynomial,
                      kernel_exchange_sets, log_hessian, matrix_tree_count, random_eps)
from .mp import exact_comparison, graph_path_bound, interval_constant, lattice_path_bound
from .studies import RRGStudyConfig, SweepConfig, gap_sweep, study_rrg

TOL = 1e-9


# ---------------------------------------------------------------- parsing helpers


def parse_graph(spec: str, seed: int) -> Graph:
    """complete:N | cycle:N | path:N | petersen | lattice:L:d | rrg:N:d | file:PATH."""
    kind, _, rest = spec.partition(":")
    parts = rest.split(":") if rest else []
    try:
        if kind == "complete":
            return complete_graph(int(parts[0]))
        if kind == "cycle":
            return cycle_graph(int(parts[0]))
        if kind == "path":
            return path_graph(int(parts[0]))
        if kind == "petersen":
            return petersen_graph()
        if kind == "lattice":
            return lattice_graph(int(parts[0]), int(parts[1]))
        if kind == "rrg":
            return sample_regular(int(parts[0]), int(parts[1]), seed)
        if kind == "file":
            return read_graph(rest)
    except (IndexError, ValueError):
        raise ParameterError(f"malformed graph spec '{spec}'") from None
    raise ParameterError(f"unknown graph kind '{kind}'")


def parse_vector(spec, n: int, rng) -> np.ndarray:
    """Scalar, comma list, normal:SCALE, uniform:A or file:PATH."""
    if spec is None:
        return np.zeros(n)
    s = str(spec)
    try:
        if s.startswith("normal:"):
            return rng.normal(0.0, float(s[7:]), n)
        if s.startswith("uniform:"):
            a = float(s[8:])
            return rng.uniform(-a, a, n)
        if s.startswith("file:"):
            v = np.loadtxt(s[5:], dtype=float).ravel()
        elif "," in s:
            v = np.array([float(x) for x in s.split(",")])
        else:
            return np.full(n, float(s))
    except (OSError, ValueError) as e:
        raise ParameterError(f"cannot read vector '{s}': {e}") from None
    if v.shape != (n,):
        raise ParameterError(f"vector '{s}' has length {v.size}, expected {n}")
    return v


def parse_floats(s: str) -> list:
    try:
        return [float(x) for x in str(s).split(",") if x.strip()]
    except ValueError:
        raise ParameterError(f"expected a comma separated list of numbers, got '{s}'") from None


def parse_ints(s: str) -> list:
    try:
        return [int(x) for x in str(s).split(",") if x.strip()]
    except ValueError:
        raise ParameterError(f"expected a comma separated list of integers, got '{s}'") from None


def parse_pairs(s: str, n: int) -> list:
    out = []
    for tok in s.split(","):
        a, sep, b = tok.strip().partition("-")
        try:
            i, j = int(a), int(b)
        except ValueError:
            raise ParameterError(f"malformed pair '{tok}'") from None
        if not sep or i == j or not (0 <= i < n and 0 <= j < n):
            raise ParameterError(f"pair '{tok}' is not a pair of distinct sites in [0, {n})")
        out.append((i, j))
    return out


def read_key_values(path) -> dict:
    out = {}
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as e:
        raise ParameterError(f"cannot read model file: {e}") from None
    for ln in lines:
        ln = ln.split("#", 1)[0].strip()
        if not ln:
            continue
        k, sep, v = ln.partition("=")
        if not sep:
            raise ParameterError(f"{path}: expected 'key = value', got '{ln}'")
        out[k.strip().replace("-", "_")] = v.strip()
    return out


def read_bases(path) -> list:
    try:
        return [[int(x) for x in ln.split()] for ln in Path(path).read_text().splitlines() if ln.strip()]
    except (OSError, ValueError) as e:
        raise ParameterError(f"cannot read bases file: {e}") from None


# ---------------------------------------------------------------- task context


MODEL_DEFAULTS = {"graph": "cycle:6", "coupling": "ferro", "beta": 0.0, "m": None, "k": None, "h": "0"}


@dataclass
class Task:
    args: argparse.Namespace
    seed: int
    sink: OutputSink

    def __post_init__(self):
        self._graph = None
        if not hasattr(self.args, "model"):
            return
        if self.args.model:
            for k, v in read_key_values(self.args.model).items():
                if k not in MODEL_DEFAULTS:
                    raise ParameterError(f"unknown model key '{k}'")
                if getattr(self.args, k, None) is None:
                    setattr(self.args, k, v)
        for k, v in MODEL_DEFAULTS.items():
            if getattr(self.args, k) is None:
                setattr(self.args, k, v)

    def sub_rng(self, name: str):
        return np.random.default_rng(task_seed(self.seed, name))

    @property
    def graph(self) -> Graph:
        if self._graph is None:
            self._graph = parse_graph(self.args.graph, task_seed(self.seed, "graph"))
        return self._graph

    @property
    def n(self) -> int:
        return self.graph.n

    @property
    def m(self) -> float:
        a = self.args
        if a.k is not None and a.m is not None:
            raise ParameterError("give either m or k, not both")
        if a.k is not None:
            k = int(a.k)
            if not 0 <= k <= self.n:
                raise ParameterError("k outside [0, N]")
            return (2.0 * k - self.n) / self.n
        m = 0.0 if a.m is None else float(a.m)
        particles(self.n, m)
        return m

    def coupling(self) -> CouplingMatrix:
        sign = {"ferro": -1.0, "antiferro": 1.0}.get(self.args.coupling)
        if sign is None:
            raise ParameterError("coupling must be 'ferro' or 'antiferro'")
        return CouplingMatrix.from_graph(self.graph, sign)

    def field(self) -> np.ndarray:
        return parse_vector(self.args.h, self.n, self.sub_rng("h"))

    def model(self) -> CanonicalModel:
        return CanonicalModel(self.coupling(), float(self.args.beta), self.field(), self.m)

    def measure(self) -> Measure:
        return weights(self.model())

    def kernel(self):
        kind = self.args.kernel
        return make_kernel(kind, self.model(), self.graph if kind in ("kawasaki", "auto") else None, self.args.flavour)

    def context(self):
        return build_context(self.coupling().normalised, float(self.args.beta))


def _model_args(p):
    g = p.add_argument_group("model")
    g.add_argument("--model", help="key = value file with graph, coupling, beta, m, k, h")
    g.add_argument("--graph", help="complete:N | cycle:N | path:N | petersen | lattice:L:d | rrg:N:d | file:PATH")
    g.add_argument("--coupling", help="ferro (A = -adjacency) or antiferro")
    g.add_argument("--beta", type=float)
    g.add_argument("--m", type=float, help="magnetisation; N m must be an integer")
    g.add_argument("--k", type=int, help="particle number (alternative to --m)")
    g.add_argument("--h", help="field: scalar, list, normal:S, uniform:A or file:PATH")


def _kernel_args(p):
    p.add_argument("--kernel", "--kind", dest="kernel", default="kawasaki", choices=KINDS + ("auto",))
    p.add_argument("--flavour", default="heat_bath", choices=("heat_bath", "metropolis"))


def _search_args(p):
    p.add_argument("--n-random", type=int, default=8)
    p.add_argument("--maxiter", type=int, default=400)


# ---------------------------------------------------------------- verbs

VERBS: dict = {}


def verb(group: str, name: str, help: str, *configure):
    def deco(fn):
        VERBS[(group, name)] = (fn, help, configure)
        return fn
    return deco


def _graph_sample_args(p):
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--d", type=int, default=3)


@verb("graph", "sample", "sample a uniform connected d-regular graph", _graph_sample_args)
def graph_sample(t: Task):
    g = sample_regular(t.args.n, t.args.d, t.seed)
    lines = [f"{g.n} {g.n_edges}"] + [f"{u} {v}" for u, v in g.edges]
    t.sink.text("graph.txt", "\n".join(lines) + "\n")
    return {"n": g.n, "d": t.args.d, "n_edges": g.n_edges, "diameter": diameter(g), **g.meta}


def _graph_in(p):
    p.add_argument("--graph", "--in", dest="graph", required=True, help="graph spec or file:PATH")


def _window_args(p):
    _graph_in(p)
    p.add_argument("--mode", default="auto", choices=("auto", "exact", "iterative"))
    p.add_argument("--eps", "--window", dest="window", type=float, default=0.2,
                   help="slack in the window [-2 sqrt(d-1) - eps, 2 sqrt(d-1) + eps]")


@verb("graph", "spectrum", "nontrivial adjacency spectrum", _window_args)
def graph_spectrum(t: Task):
    g = parse_graph(t.args.graph, task_seed(t.seed, "graph"))
    s = spectrum(g, t.args.mode)
    out = {"lambda_1": s.lambda_1, "lambda_2": s.lambda_2, "lambda_N": s.lambda_N, "delta": s.delta, "method": s.method}
    if g.is_regular():
        d = int(g.degree_sequence[0])
        out["ramanujan_window"] = 2 * math.sqrt(max(d - 1, 0)) + t.args.window
        out["within_window"] = s.within_window(d, t.args.window)
    return out


@verb("graph", "congestion", "geodesic congestion, diameter and the path bound", _graph_in)
def graph_congestion(t: Task):
    g = parse_graph(t.args.graph, task_seed(t.seed, "graph"))
    c = geodesic_congestion(g)
    t.sink.f64("edge_loads.f64", c.edge_loads)
    out = {"congestion": c.value, "diameter": c.diameter, "bound": c.bound}
    if c.bound is not None:
        out["passed"] = c.value <= c.bound
    return out


@verb("ising", "weights", "exact canonical weights", _model_args)
def ising_weights(t: Task):
    mu = t.measure()
    t.sink.f64("weights.f64", mu.p)
    t.sink.text("masks.txt", "\n".join(str(int(m)) for m in mu.space.masks) + "\n")
    return {"size": mu.space.size, "log_z": mu.log_z, "max_p": float(mu.p.max()), "min_p": float(mu.p.min())}


@verb("ising", "moments", "mean and covariance of the spins", _model_args)
def ising_moments(t: Task):
    mu = t.measure()
    mean, cov = moments(mu)
    return {"mean": mean, "cov": cov, "max_pair_covariance": max_pair_covariance(mu)}


@verb("ising", "check-sc", "spectral condition report", _model_args)
def ising_check_sc(t: Task):
    r = check_sc(t.coupling(), float(t.args.beta))
    return {"condition": r.kind, "holds": r.holds, "M_beta": r.M_beta, **r.detail}


def _cc_args(p):
    _model_args(p)
    p.add_argument("--n-t", type=int, default=4)
    p.add_argument("--restarts", type=int, default=16)


@verb("ising", "check-cc", "covariance condition on the normalised coupling (beta is normalised)", _cc_args)
def ising_check_cc(t: Task):
    b = float(t.args.beta)
    grid = np.linspace(0.0, b, t.args.n_t + 1)[1:]
    r = chi0_bar(t.coupling().normalised, grid, t.n, t.m, restarts=t.args.restarts, seed=t.seed % 2**31)
    return {"condition": r.kind, "M_beta": r.M_beta, **r.detail}


def _gen_args(p):
    _model_args(p)
    _kernel_args(p)


@verb("dyn", "generator", "exact generator, residuals and COO export", _gen_args)
def dyn_generator(t: Task):
    gen = build_generator(t.kernel())
    t.sink.text("generator.coo", coo_text(gen))
    return {"size": gen.size, "nnz": gen.Q.nnz, "Lambda": gen.Lambda, "irreducible": gen.is_irreducible(),
            "stationarity": gen.stationarity_residual(), "detailed_balance": gen.detailed_balance_residual()}


def _run_args(p):
    _gen_args(p)
    p.add_argument("--t-max", "--tmax", dest="t_max", type=float, default=50.0)
    p.add_argument("--records", type=int, default=200)


@verb("dyn", "run", "continuous-time trajectory with observables", _run_args)
def dyn_run(t: Task):
    kernel = t.kernel()
    n, k = kernel.n, kernel.k
    start = np.full(n, -1.0)
    start[t.sub_rng("start").permutation(n)[:k]] = 1.0
    traj = run_chain(kernel, start, t.args.t_max, task_seed(t.seed, "chain"), n_records=t.args.records)
    cols = traj.columns()
    data = [traj.times] + [traj.observables[c] for c in cols[1:]]
    t.sink.csv("trajectory.csv", cols, zip(*data))
    dt = t.args.t_max / max(t.args.records - 1, 1)
    return {"events": traj.n_events, "moves": traj.n_moves,
            "tau": {c: autocorrelation_time(traj.observables[c]) * dt for c in cols[1:]
                    if np.all(np.isfinite(traj.observables[c]))}}


@verb("fi", "gap", "exact spectral gap", _gen_args)
def fi_gap(t: Task):
    r = spectral_gap_exact(build_generator(t.kernel()))
    return r.record()


def _fi_search_args(p):
    _gen_args(p)
    _search_args(p)
    p.add_argument("--require-at-least", type=float, help="fail unless the bracket stays above this value")


def _search_verb(t: Task, which):
    gen = build_generator(t.kernel())
    fn = mlsi_search if which == "mlsi" else lsi_search
    r = fn(gen, n_random=t.args.n_random, maxiter=t.args.maxiter, seed=task_seed(t.seed, which) % 2**32)
    if r.witness is not None:
        t.sink.f64("witness.f64", r.witness)
    out = r.record()
    if t.args.require_at_least is not None:
        out["passed"] = r.value >= t.args.require_at_least - TOL
    return out


@verb("fi", "mlsi", "adversarial search for the modified log-Sobolev constant", _fi_search_args)
def fi_mlsi(t: Task):
    return _search_verb(t, "mlsi")


@verb("fi", "lsi", "adversarial search for the log-Sobolev constant", _fi_search_args)
def fi_lsi(t: Task):
    return _search_verb(t, "lsi")


def _mix_args(p):
    _gen_args(p)
    p.add_argument("--eps", type=float, default=1.0 / math.e)
    p.add_argument("--gamma", type=float, help="certified LSI constant for the bound")


@verb("fi", "mix", "exact total-variation mixing time and the LSI bound", _mix_args)
def fi_mix(t: Task):
    gen = build_generator(t.kernel())
    tmix = tv_mixing_exact(gen, t.args.eps)
    out = {"t_mix": tmix, "eps": t.args.eps, "min_prob": float(gen.mu.min())}
    if t.args.gamma is not None:
        b = mixing_time_bound(t.args.gamma, float(gen.mu.min()))
        out.update(bound=b, passed=tmix <= b)
    return out


def _contraction_args(p):
    _model_args(p)
    p.add_argument("--n-f", type=int, default=20)


@verb("fi", "contraction", "level-by-level entropy contraction on random positive F", _contraction_args)
def fi_contraction(t: Task):
    pi = t.measure()
    rng = t.sub_rng("F")
    worst_margin, worst_chain, worst_top, two = math.inf, 0.0, 0.0, None
    for _ in range(t.args.n_f):
        F = np.exp(rng.normal(0.0, 1.5, pi.space.size))
        r = level_chain(pi, F)
        worst_margin = min(worst_margin, min(r["loss_margin"]) if r["loss_margin"] else 0.0)
        worst_chain = max(worst_chain, max(map(abs, r["chain_residual"]), default=0.0))
        if pi.space.k == 2:
            tp = two_particle_contraction(pi, F)
            gap = tp["lhs"] - tp["rhs"]
            two = gap if two is None else max(two, gap)
    out = {"k": pi.space.k, "min_loss_margin": worst_margin, "max_chain_residual": worst_chain,
           "factors": {str(p): str(f) for p, f in r["telescoped"].items()} if t.args.n_f else {}}
    ok = worst_margin >= -1e-12 and worst_chain <= 1e-10
    if two is not None:
        out["two_particle_max_gap"] = two
        ok &= two <= 1e-10
    out["passed"] = ok
    return out


def _ei_args(p):
    _model_args(p)
    p.add_argument("--n-random-mu", type=int, default=1000)
    p.add_argument("--n-starts", type=int, default=50)


def _ei_verb(t: Task, pi: Measure):
    rng = t.sub_rng("mu")
    worst = -math.inf
    for mu in rng.dirichlet(np.full(pi.space.size, 0.5), size=t.args.n_random_mu):
        r = entropic_independence_check(pi, mu)
        worst = max(worst, r["lhs"] - r["rhs"])
    adv = adversarial_entropic_independence(pi, n_starts=t.args.n_starts, seed=task_seed(t.seed, "adv") % 2**32)
    worst = max(worst, adv["max_gap"])
    return {"k": pi.space.k, "size": pi.space.size, "random_max_gap": worst, "adversarial_max_gap": adv["max_gap"],
            "passed": worst <= 1e-10}


@verb("fi", "ei-check", "entropic independence against random and adversarial measures", _ei_args)
def fi_ei(t: Task):
    return _ei_verb(t, t.measure())


def _sweep_args(p):
    _model_args(p)
    p.add_argument("--betas", default="0,0.05,0.1,0.2,0.4")
    p.add_argument("--kinds", default="kawasaki,down_up,standard")
    p.add_argument("--flavour", default="heat_bath", choices=("heat_bath", "metropolis"))


@verb("fi", "sweep", "exact gaps on a beta grid for several dynamics", _sweep_args)
def fi_sweep(t: Task):
    kinds = tuple(k for k in t.args.kinds.split(",") if k)
    rows = gap_sweep(SweepConfig(t.graph, tuple(parse_floats(t.args.betas)), t.m, kinds, t.args.flavour, t.field()))
    t.sink.csv("gaps.csv", ["beta", *kinds], [[r["beta"], *(r[k] for k in kinds)] for r in rows])
    return {"rows": rows}


def _decomp_args(p):
    _model_args(p)
    p.add_argument("--t", type=float, default=0.0)
    p.add_argument("--n-samples", type=int, default=20)


@verb("decomp", "check-identity", "Gaussian convolution identity by quadrature (beta normalised)", _decomp_args)
def decomp_identity(t: Task):
    ctx = t.context()
    r = convolution_identity_check(ctx, t.field(), t.m, t.args.t)
    return {"spread": r.spread, "nodes": r.n_nodes, "converged": r.converged, "history": r.history,
            "passed": r.spread < 1e-6}


@verb("decomp", "hessian", "minimum Hessian eigenvalue of the renormalised potential", _decomp_args)
def decomp_hessian(t: Task):
    ctx = t.context()
    rng = t.sub_rng("phi")
    b = ctx.beta
    worst = math.inf
    for _ in range(t.args.n_samples):
        phi = rng.normal(0.0, 2.0, ctx.n)
        worst = min(worst, renormalised_potential(ctx, t.field(), t.m, phi).min_eig)
    bound = b - 2 * b * b
    return {"min_eig": worst, "bound": bound, "passed": worst >= bound - TOL}


def _k_args(p):
    _model_args(p)
    p.add_argument("--all-pairs", action="store_true", help="accepted for compatibility; every admissible move is scanned")


@verb("decomp", "k-constant", "maximal comparison constant over admissible moves (beta normalised)", _k_args)
def decomp_k(t: Task):
    ctx = t.context()
    r = K_max(ctx, t.field(), t.m)
    return {**r, "passed": r["K"] <= r["bound"] + TOL}


@verb("decomp", "stability", "entropic stability of the fluctuation measures", _decomp_args)
def decomp_stability(t: Task):
    ctx = t.context()
    rng = t.sub_rng("F")
    space = StateSpace.canonical(ctx.n, particles(ctx.n, t.m))
    worst = -math.inf
    for _ in range(t.args.n_samples):
        phi = rng.normal(0.0, 1.0, ctx.n)
        F = np.exp(rng.normal(0.0, 1.0, space.size))
        r = entropic_stability_check(ctx, t.field(), t.m, t.args.t, phi, F, space)
        worst = max(worst, r["lhs"] - r["rhs"])
    return {"max_gap": worst, "passed": worst <= 1e-12}


def _mp_args(p):
    _model_args(p)
    p.add_argument("--geometry", default="graph", choices=("graph", "interval"))
    p.add_argument("--pairs", help="restricted pairs 'i-j,i-j,...' (default: the graph edges)")
    p.add_argument("--i", type=int, default=0)
    p.add_argument("--j", type=int, default=1)


@verb("mp", "exact", "exact comparison constant of full and restricted exchange forms", _mp_args)
def mp_exact(t: Task):
    pi = product_measure(t.field(), t.n, t.m)
    if t.args.geometry == "interval":
        r = interval_constant(pi, t.args.i, t.args.j)
    else:
        n = t.n
        full = [(i, j) for i in range(n) for j in range(n) if i != j]
        restricted = [tuple(e) for e in t.graph.edges] if t.args.pairs is None else parse_pairs(t.args.pairs, n)
        r = exact_comparison(pi, full, restricted, np.full(len(full), 1.0 / n), geometry="graph")
    if r.witness is not None:
        t.sink.f64("witness.f64", r.witness)
    return {"exact_constant": r.exact_constant, "geometry": r.geometry}


@verb("mp", "graph-bound", "geodesic path bound against the exact constant", _model_args)
def mp_graph_bound(t: Task):
    pi = product_measure(t.field(), t.n, t.m)
    r = graph_path_bound(t.graph, measure=pi)
    return {"exact_constant": r.exact_constant, "bound": r.analytic_bound, "congestion": r.congestion,
            "C_mp": r.C_mp, "passed": r.exact_constant <= r.analytic_bound + TOL}


def _lattice_args(p):
    p.add_argument("--L", type=int, required=True)
    p.add_argument("--d", type=int, default=2)
    p.add_argument("--k", type=int, help="particles for the exact constant (small cubes only)")
    p.add_argument("--h", help="field for the exact constant")


@verb("mp", "lattice", "coordinate-path congestion on the cube", _lattice_args)
def mp_lattice(t: Task):
    L, d = t.args.L, t.args.d
    pi = None
    if t.args.k is not None:
        n = L**d
        pi = product_measure(parse_vector(t.args.h, n, t.sub_rng("h")), n, (2.0 * t.args.k - n) / n)
    r = lattice_path_bound(L, d, pi)
    out = {"congestion": r.congestion, "ratio_L2": r.detail["ratio_L2"]}
    if pi is not None:
        out.update(exact_constant=r.exact_constant, bound=r.analytic_bound, C_mp=r.C_mp,
                   passed=r.exact_constant <= r.analytic_bound + TOL)
    return out


def _oracle_args(p):
    p.add_argument("--graph", help="graphic matroid of this graph")
    p.add_argument("--uniform", help="N:k")
    p.add_argument("--bases", help="file with one basis per line")
    p.add_argument("--ground-size", type=int)


def _oracle(t: Task) -> MatroidOracle:
    a = t.args
    given = [x for x in (a.graph, a.uniform, a.bases) if x]
    if len(given) != 1:
        raise ParameterError("give exactly one of --graph, --uniform, --bases")
    if a.graph:
        return MatroidOracle.graphic(parse_graph(a.graph, task_seed(t.seed, "graph")))
    if a.uniform:
        try:
            n, k = (int(x) for x in a.uniform.split(":"))
        except ValueError:
            raise ParameterError("--uniform expects N:k") from None
        return MatroidOracle.uniform(n, k)
    bases = read_bases(a.bases)
    n = a.ground_size if a.ground_size is not None else 1 + max(max(b) for b in bases if b)
    return MatroidOracle.explicit(n, bases)


@verb("matroid", "enum", "enumerate bases and verify the exchange property", _oracle_args)
def matroid_enum(t: Task):
    o = _oracle(t)
    space = o.enumerate_bases()
    lines = [" ".join(str(e) for e in np.flatnonzero(row)) for row in space.occupation]
    t.sink.text("bases.txt", "\n".join(lines) + "\n")
    out = {"ground_size": o.ground_size, "rank": o.rank, "n_bases": space.size,
           "exchange_property": check_exchange_property(o, space)}
    ok = out["exchange_property"]
    if o.kind == "graphic":
        out["matrix_tree"] = matrix_tree_count(o.graph)
        ok &= abs(out["matrix_tree"] - space.size) < 1e-6 * max(1, space.size)
    out["passed"] = bool(ok)
    return out


def _perturb_args(p):
    _oracle_args(p)
    p.add_argument("--eps-bar", type=float, default=0.05)
    p.add_argument("--eps-file", help="N x N symmetric perturbation matrix (text)")
    p.add_argument("--density", type=float, default=0.5)
    p.add_argument("--h", help="field on the ground set")
    p.add_argument("--search", action="store_true", help="run the mLSI witness search against the theorem constant")
    _search_args(p)


def _perturbed(t: Task):
    o = _oracle(t)
    n = o.ground_size
    if t.args.eps_file:
        try:
            eps = np.loadtxt(t.args.eps_file, dtype=float, ndmin=2)
        except (OSError, ValueError) as e:
            raise ParameterError(f"cannot read eps file: {e}") from None
    else:
        eps = random_eps(n, t.args.eps_bar, t.sub_rng("eps"), t.args.density)
    return o, PerturbedMeasure(o, eps, parse_vector(t.args.h, n, t.sub_rng("h")))


@verb("matroid", "perturb", "perturbed measure on bases, its Ising form and the theorem constant", _perturb_args)
def matroid_perturb(t: Task):
    o, pm = _perturbed(t)
    mu, nu = pm.measure(), pm.ising_measure()
    dev = float(np.abs(mu.logp - nu.logp).max())
    t.sink.f64("weights.f64", mu.p)
    tc = pm.theorem_constant()
    out = {"n_bases": mu.space.size, "max_log_deviation": dev, **{k: tc[k] for k in ("beta_n", "M", "C", "eps_bar", "delta")}}
    ok = dev <= 1e-10
    if t.args.search:
        gen = build_generator(downup_on_bases(o, mu))
        r = mlsi_search(gen, n_random=t.args.n_random, maxiter=t.args.maxiter, seed=task_seed(t.seed, "mlsi") % 2**32)
        out["mlsi"] = r.value
        out["required"] = 1.0 / (2.0 * tc["C"])
        ok &= r.value >= out["required"] - TOL
    out["passed"] = bool(ok)
    return out


@verb("matroid", "walk", "down-up walk on bases: reversibility, gap and exchange sets", _perturb_args)
def matroid_walk(t: Task):
    o, pm = _perturbed(t)
    kernel = downup_on_bases(o, pm.measure())
    gen = build_generator(kernel)
    ex = kernel_exchange_sets(kernel)
    mism = sum(set(o.exchange_set(B, a)) != s for (B, a), s in ex.items())
    gap = spectral_gap_exact(gen).value
    return {"size": gen.size, "detailed_balance": gen.detailed_balance_residual(), "gap": gap,
            "exchange_mismatches": int(mism), "passed": mism == 0 and gen.detailed_balance_residual() < 1e-10}


def _gpoly_args(p):
    _perturb_args(p)
    p.add_argument("--z", help="evaluation point (default all ones)")
    p.add_argument("--n-f", type=int, default=200)


@verb("matroid", "gpoly", "generating polynomial, log-Hessian and the factor-4 variance bound", _gpoly_args)
def matroid_gpoly(t: Task):
    o, pm = _perturbed(t)
    mu = pm.measure()
    n = o.ground_size
    z = np.ones(n) if t.args.z is None else parse_vector(t.args.z, n, t.sub_rng("z"))
    H = log_hessian(mu, z)
    top = float(np.linalg.eigvalsh(H).max())
    var = variance_bound_check(mu, t.sub_rng("f").normal(size=(t.args.n_f, n)), 4.0)
    return {"g": generating_polynomial(mu, z), "log_hessian_max_eig": top, "variance": var,
            "passed": var["violations"] == 0}


# ---------------------------------------------------------------- top level


def _rrg_args(p):
    p.add_argument("--d", type=int, default=3)
    p.add_argument("--beta", type=float, default=0.08)
    p.add_argument("--m", type=float, default=0.0)
    p.add_argument("--n-exact", default="12")
    p.add_argument("--n-chain", default="")
    p.add_argument("--seeds", type=int, default=2)
    p.add_argument("--t-chain", type=float, default=200.0)


def rrg(t: Task):
    a = t.args
    cfg = RRGStudyConfig(a.d, a.beta, a.m, tuple(parse_ints(a.n_exact)), tuple(parse_ints(a.n_chain)),
                         tuple(range(a.seeds)), t_chain=a.t_chain)
    res = study_rrg(cfg, seed_of=lambda n, s: task_seed(t.seed, f"rrg/{n}/{s}") % 2**63)
    for name in ("graphs", "exact", "chains"):
        rows = res[name]
        if rows:
            cols = list(rows[0])
            t.sink.csv(f"{name}.csv", cols, [[r[c] for c in cols] for r in rows])
    return res


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="kawaflow", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    groups = ap.add_subparsers(dest="group", required=True)

    def common(p):
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out", help="directory for the record and data files")
        p.add_argument("--quiet", action="store_true")

    sub: dict = {}
    for (g, name), (fn, help_, configure) in VERBS.items():
        if g not in sub:
            sub[g] = groups.add_parser(g).add_subparsers(dest="verb", required=True)
        p = sub[g].add_parser(name, help=help_)
        for c in configure:
            c(p)
        common(p)
        p.set_defaults(handler=fn)
    p = groups.add_parser("study-rrg", help="random regular graph study")
    _rrg_args(p)
    common(p)
    p.set_defaults(handler=rrg, verb=None)
    p = groups.add_parser("run", help="run a manifest")
    p.add_argument("manifest")
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(handler=None, verb=None)
    return ap


PRIVATE = {"handler", "out", "quiet", "seed", "group", "verb"}


def execute(argv, seed=None, out=None, inputs=None) -> tuple[int, dict]:
    """Run one verb; returns (exit status, record).  Check failures give status 4."""
    args = build_parser().parse_args(argv)
    if args.handler is None:
        raise ParameterError("manifests cannot run other manifests")
    if seed is not None:
        args.seed = seed
    if out is not None:
        args.out = str(out)
    sink = OutputSink(Path(args.out) if args.out else None)
    task = Task(args, int(args.seed), sink)
    verb_name = " ".join(x for x in (args.group, args.verb) if x)
    params = {k: v for k, v in sorted(vars(args).items()) if k not in PRIVATE}
    result = args.handler(task)
    status = 4 if result.get("passed") is False else 0
    record = {"verb": verb_name, "params": params, "seed": task.seed, "version": __version__,
              "instance_hash": instance_hash({"verb": verb_name, "params": params, "inputs": inputs or {}}),
              "inputs": inputs or {}, "result": result, "files": dict(sorted(sink.digests.items())),
              "status": status}
    if sink.directory is not None:
        sink.json("record.json", record)
    return status, record


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as e:
        return 2 if e.code not in (0, None) else 0
    try:
        if args.group == "run":
            status, records = run_manifest(args.manifest, execute)
            if not args.quiet:
                for name, r in sorted(records.items()):
                    print(f"{name}: status {r['status']} ({r['verb']})")
            return status
        status, record = execute(argv)
        if not args.quiet:
            sys.stdout.write(dumps(record["result"]))
        if status == 4:
            print("check failed", file=sys.stderr)
        return status
    except CheckFailed as e:
        print(f"check failed: {e}", file=sys.stderr)
        return e.exit_code
    except KawaflowError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code


if __name__ == "__main__":
    raise SystemExit(main())
