"""Independent brute-force oracles, deliberately decoupled from the package.

Everything here is computed from first principles (plain python + fsum) so
the fast paths in the package are checked against genuinely different code.
"""

import itertools
import math

import numpy as np


def w1_permutation_minimum(atoms_a, atoms_b):
    """Exact W1 between two uniform equal-count atom sets: min over pairings."""
    atoms_a = np.asarray(atoms_a, dtype=float)
    atoms_b = np.asarray(atoms_b, dtype=float)
    n = atoms_a.shape[0]
    assert atoms_b.shape[0] == n and n <= 8, "factorial oracle is for tiny n"
    best = math.inf
    for perm in itertools.permutations(range(n)):
        cost = math.fsum(
            float(np.linalg.norm(atoms_a[i] - atoms_b[perm[i]])) for i in range(n)
        )
        best = min(best, cost / n)
    return best


def cucker_smale_pair(dx, dv, strength, scale, exponent, sign):
    r2 = math.fsum(float(c) * float(c) for c in dx)
    rate = strength / (scale * scale + r2) ** exponent
    return sign * rate * np.asarray(dv, dtype=float)


def repulsion_attraction_pair(dx, dv, sigma_r, sigma_a, eps):
    r = max(float(np.linalg.norm(dx)), eps)
    f = sigma_r / r**4 - sigma_a / r**0.4
    return f * np.asarray(dx, dtype=float)


def naive_convolution(pair_fn, atoms, weights, query):
    """sum_j w_j H(query - atom_j), accumulated exactly with fsum."""
    query = np.asarray(query, dtype=float)
    d = query.size // 2
    terms = []
    for atom, wt in zip(atoms, weights):
        dx = query[:d] - atom[:d]
        dv = query[d:] - atom[d:]
        terms.append(wt * pair_fn(dx, dv))
    return np.array([math.fsum(t[c] for t in terms) for c in range(d)])


def two_body_relative_velocity(w0, t):
    """Closed form for two mutually aligning agents with unit rate."""
    return w0 * math.exp(-t)


def quadratic_tracking_gradient(w0, target, horizon, n_grid):
    """d/dc of the trapezoid discretization of int |w0 + c t - target|^2 dt."""
    ts = np.linspace(0.0, horizon, n_grid + 1)
    wts = np.full(n_grid + 1, horizon / n_grid)
    wts[0] *= 0.5
    wts[-1] *= 0.5

    def grad(c):
        return math.fsum(wts[j] * 2.0 * (w0 + c * ts[j] - target) * ts[j] for j in range(n_grid + 1))

    return grad
