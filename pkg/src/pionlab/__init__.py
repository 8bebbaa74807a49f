"""Physics-informed operator-network laboratory.

Branch/trunk operator models for four PDE benchmarks, trained from the
governing equations alone, with reference solvers for data generation and a
nonparametric equivalence-testing toolkit for comparing model variants.
"""

__version__ = "0.1.0"
