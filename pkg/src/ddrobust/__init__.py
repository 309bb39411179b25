"""Monte Carlo and average-Hamiltonian tools for dynamical-decoupling robustness."""

__version__ = "0.1.0"
