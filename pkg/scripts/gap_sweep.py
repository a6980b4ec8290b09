"""Exact spectral gaps of Kawasaki, down-up and standard dynamics over an inverse-temperature grid."""
import argparse
import csv
import sys

import numpy as np

from kawaflow.cli import parse_graph
from kawaflow.studies import SweepConfig, gap_sweep


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--graph", default="cycle:10")
    p.add_argument("--betas", type=float, nargs="*", default=list(np.round(np.linspace(0, 0.8, 9), 3)))
    p.add_argument("--m", type=float, default=0.0)
    p.add_argument("--kinds", nargs="*", default=["kawasaki", "down_up", "standard"])
    p.add_argument("--flavour", default="heat_bath")
    a = p.parse_args()
    rows = gap_sweep(SweepConfig(parse_graph(a.graph, 0), tuple(a.betas), a.m, tuple(a.kinds), a.flavour))
    w = csv.DictWriter(sys.stdout, fieldnames=["beta", *a.kinds])
    w.writeheader()
    w.writerows(rows)


if __name__ == "__main__":
    main()
