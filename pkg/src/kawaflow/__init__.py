"""Conservative Ising dynamics: exact generators, functional inequalities and their certificates."""

__version__ = "0.1.0"
