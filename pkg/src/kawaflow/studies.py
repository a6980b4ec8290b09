"""Desk-scale studies over random regular graphs and inverse-temperature grids."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .dynamics import autocorrelation_time, build_generator, make_kernel, run_chain
from .errors import ParameterError
from .funcineq import spectral_gap_exact, tv_mixing_exact
from .graph import Graph, diameter, geodesic_congestion, sample_regular, spectrum
from .ising import CanonicalModel, CouplingMatrix, beta_thresholds, check_sc, particles

EXACT_N_MAX = 16


@dataclass
class RRGStudyConfig:
    d: int = 3
    beta: float = 0.08
    m: float = 0.0
    n_exact: tuple = (12,)
    n_chain: tuple = ()
    seeds: tuple = (0,)
    flavour: str = "heat_bath"
    t_chain: float = 200.0
    n_records: int = 400

    def validate(self) -> None:
        if self.d < 3:
            raise ParameterError("d must be at least 3")
        thr = beta_thresholds(self.d)["beta_sc"]
        if not 0 <= self.beta < thr:
            raise ParameterError(
                f"beta = {self.beta} violates the spectral threshold beta < 1/(8 sqrt(d-1)) = {thr:.5f} for d = {self.d}")
        for n in tuple(self.n_exact) + tuple(self.n_chain):
            if n * self.d % 2:
                raise ParameterError(f"N d must be even (N={n}, d={self.d})")
            particles(n, self.m)
        if any(n > EXACT_N_MAX for n in self.n_exact):
            raise ParameterError(f"exact pipeline limited to N <= {EXACT_N_MAX}")


def _graph_row(g: Graph, n: int, seed: int, beta: float) -> dict:
    spec = spectrum(g)
    cong = geodesic_congestion(g)
    sc = check_sc(CouplingMatrix.from_graph(g), beta)
    return {"n": n, "seed": seed, "diameter": int(diameter(g)), "lambda_2": spec.lambda_2,
            "lambda_N": spec.lambda_N, "delta": spec.delta, "sc_holds": sc.holds, "M_beta": sc.M_beta,
            "congestion": cong.value, "congestion_bound": cong.bound,
            "congestion_ok": cong.bound is None or cong.value <= cong.bound}


def study_rrg(cfg: RRGStudyConfig, seed_of=lambda n, s: s) -> dict:
    """Per graph: SC report, congestion and diameter; exact Kawasaki gap and mixing time for
    small N; integrated autocorrelation times of the energy for the chain grid."""
    cfg.validate()
    graphs, exact, chains = [], [], []
    for n in sorted(set(cfg.n_exact) | set(cfg.n_chain)):
        for s in cfg.seeds:
            g = sample_regular(n, cfg.d, seed_of(n, s))
            row = _graph_row(g, n, s, cfg.beta)
            graphs.append(row)
            model = CanonicalModel(CouplingMatrix.from_graph(g), cfg.beta, 0.0, cfg.m)
            kernel = make_kernel("kawasaki", model, g, cfg.flavour)
            if n in cfg.n_exact:
                gen = build_generator(kernel)
                gap = spectral_gap_exact(gen).value
                tmix = tv_mixing_exact(gen, 1.0 / math.e)
                # reversible chains: t_mix(eps) >= log(1/(2 eps)) / gap
                exact.append({"n": n, "seed": s, "size": gen.size, "gap": gap, "t_mix": tmix,
                              "detailed_balance": gen.detailed_balance_residual(),
                              "gap_positive": gap > 0,
                              "t_mix_ge_relaxation_floor": tmix >= (1.0 - math.log(2.0)) / gap * (1 - 1e-3)})
            if n in cfg.n_chain:
                rng = np.random.default_rng(seed_of(n, s) + 1)
                start = np.full(n, -1.0)
                start[rng.permutation(n)[: model.k]] = 1.0
                traj = run_chain(kernel, start, cfg.t_chain, seed_of(n, s) + 2, n_records=cfg.n_records)
                dt = cfg.t_chain / (cfg.n_records - 1)
                chains.append({"n": n, "seed": s, "tau_energy": autocorrelation_time(traj.observables["energy"]) * dt,
                               "tau_overlap": autocorrelation_time(traj.observables["overlap"]) * dt,
                               "events": traj.n_events})
    checks = all(r["sc_holds"] and r["congestion_ok"] for r in graphs) and \
        all(r["gap_positive"] and r["t_mix_ge_relaxation_floor"] for r in exact)
    return {"config": asdict(cfg), "thresholds": beta_thresholds(cfg.d), "graphs": graphs, "exact": exact,
            "chains": chains, "passed": bool(checks)}


@dataclass
class SweepConfig:
    graph: Graph
    betas: tuple
    m: float = 0.0
    kinds: tuple = ("kawasaki", "down_up", "standard")
    flavour: str = "heat_bath"
    h: np.ndarray | float = 0.0


def gap_sweep(cfg: SweepConfig) -> list:
    """Exact spectral gaps per inverse temperature and dynamics kind."""
    rows = []
    for b in cfg.betas:
        model = CanonicalModel(CouplingMatrix.from_graph(cfg.graph), float(b), cfg.h, cfg.m)
        row = {"beta": float(b)}
        for kind in cfg.kinds:
            gen = build_generator(make_kernel(kind, model, cfg.graph, cfg.flavour))
            row[kind] = spectral_gap_exact(gen).value
        rows.append(row)
    return rows
