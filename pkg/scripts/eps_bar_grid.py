"""Largest perturbation size on a grid for which the witness search finds no violation of the
down-up mLSI with the assembled constant, for perturbed measures on spanning trees.

Exploratory only: the admissible perturbation size is not quantified, so nothing is asserted
beyond the grid.
"""
import argparse

import numpy as np

from kawaflow.cli import parse_graph
from kawaflow.dynamics import build_generator
from kawaflow.funcineq import mlsi_search
from kawaflow.matroid import MatroidOracle, PerturbedMeasure, downup_on_bases, random_eps


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--graph", default="complete:4")
    p.add_argument("--grid", type=float, nargs="*", default=[0.01, 0.02, 0.05, 0.1, 0.2, 0.3, 0.5])
    p.add_argument("--draws", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    a = p.parse_args()
    oracle = MatroidOracle.graphic(parse_graph(a.graph, a.seed))
    rng = np.random.default_rng(a.seed)
    largest = None
    print("eps_bar  beta_n    C        min witness ratio  1/(2C)   ok")
    for eb in a.grid:
        ok_all, worst, C = True, np.inf, np.nan
        for _ in range(a.draws):
            pm = PerturbedMeasure(oracle, random_eps(oracle.ground_size, eb, rng))
            const = pm.theorem_constant()
            C = const["C"]
            if not np.isfinite(C):
                ok_all = False
                break
            rep = mlsi_search(build_generator(downup_on_bases(oracle, pm.measure())), n_random=4)
            worst = min(worst, rep.method["witness_ratio"])
            ok_all &= rep.method["witness_ratio"] >= 1 / (2 * C)
        print(f"{eb:<8} {const['beta_n']:<9.4f} {C:<8.4g} {worst:<18.5f} {1 / (2 * C):<8.4f} {ok_all}")
        if ok_all:
            largest = eb
        else:
            break
    print(f"largest eps_bar on the grid without a violation: {largest}")


if __name__ == "__main__":
    main()
