"""Log-Sobolev constant from the mLSI constant over an N grid: 20 C log(1/c_min) with the
minimal transition probability of the standard dynamics at fixed inverse temperature."""
import argparse
import math

from kawaflow.dynamics import build_generator, make_kernel
from kawaflow.funcineq import lsi_from_mlsi, min_transition_probability
from kawaflow.graph import cycle_graph
from kawaflow.ising import CanonicalModel, CouplingMatrix, check_sc


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--beta", type=float, default=0.05)
    p.add_argument("--sizes", type=int, nargs="*", default=[4, 6, 8, 10, 12])
    a = p.parse_args()
    print("N    M       c_min      C_lsi      C_lsi / log N")
    for n in a.sizes:
        c = CouplingMatrix.from_graph(cycle_graph(n))
        sc = check_sc(c, a.beta)
        model = CanonicalModel(c, a.beta, 0.0, 0.0)
        cmin = min_transition_probability(build_generator(make_kernel("standard", model)))
        C = lsi_from_mlsi(sc.M_beta * math.exp(8 * c.beta_rescale(a.beta)), cmin)
        print(f"{n:<4} {sc.M_beta:<7.4f} {cmin:<10.4g} {C:<10.4g} {C / math.log(n):.4g}")


if __name__ == "__main__":
    main()
