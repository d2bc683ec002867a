"""Leader-follower flocking laboratory.

Finite-N controlled alignment dynamics, empirical measures with exact
Wasserstein-1 distances, an L1-sparse control optimizer, and convergence
experiment harnesses, all behind a config-driven runner exposed as a small
HTTP service plus a thin CLI.
"""

__version__ = "0.1.0"
