"""Desk-scale toolkit for quantum-assisted machine learning experiments.

Exact and emulated Ising samplers, hardware embeddings, Boltzmann machine
trainers with effective-temperature estimation, a quantum-assisted
Helmholtz machine and quantum-like cognition models.
"""

__version__ = "0.1.0"
