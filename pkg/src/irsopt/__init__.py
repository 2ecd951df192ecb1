"""Phase-shift optimisation for IRS-aided MISO downlinks.

Channel simulation, classical solvers, a DDPG agent with parameter-space
noise, and a seeded robustness/benchmark harness.
"""

__version__ = "0.1.0"
