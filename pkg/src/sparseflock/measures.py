"""Empirical measures on phase space, configuration norms, and exact W1.

The 1-Wasserstein distance is computed exactly: uniform measures with equal
atom counts go through a minimum-cost assignment, uniform measures whose
counts divide go through atom replication plus assignment, and everything
else solves the dense transportation LP.  Costs are assembled with
``math.fsum`` so equal-optimum matchings give identical floats.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray
from scipy.optimize import linear_sum_assignment, linprog
from scipy.spatial.distance import cdist

FloatArray = NDArray[np.float64]

WEIGHT_TOL = 1e-12
_LP_OPTIONS = {
    "presolve": True,
    "primal_feasibility_tolerance": 1e-10,
    "dual_feasibility_tolerance": 1e-10,
}


class EmptyMeasureError(ValueError):
    pass


@dataclass(frozen=True)
class EmpiricalMeasure:
    """Weighted atoms in R^{2d}: columns [x_1..x_d, v_1..v_d]."""

    atoms: FloatArray
    weights: FloatArray

    def __post_init__(self):
        atoms = np.ascontiguousarray(np.atleast_2d(np.asarray(self.atoms, dtype=float)))
        object.__setattr__(self, "atoms", atoms)
        if atoms.size == 0:
            raise EmptyMeasureError("measure needs at least one atom")
        if atoms.shape[1] % 2 != 0:
            raise ValueError("atoms must have an even number of columns (x then v)")
        if not np.all(np.isfinite(atoms)):
            raise ValueError("atoms must be finite")
        weights = np.ascontiguousarray(np.asarray(self.weights, dtype=float))
        object.__setattr__(self, "weights", weights)
        if weights.shape != (atoms.shape[0],):
            raise ValueError("weights must be one per atom")
        if np.any(weights <= 0):
            raise ValueError("weights must be positive")
        if abs(float(np.sum(weights)) - 1.0) > WEIGHT_TOL:
            raise ValueError("weights must sum to 1 within 1e-12")

    @staticmethod
    def uniform(atoms: FloatArray) -> "EmpiricalMeasure":
        atoms = np.atleast_2d(np.asarray(atoms, dtype=float))
        n = atoms.shape[0]
        return EmpiricalMeasure(atoms, np.full(n, 1.0 / n))

    @property
    def n_atoms(self) -> int:
        return self.atoms.shape[0]

    @property
    def dimension(self) -> int:
        return self.atoms.shape[1] // 2

    @property
    def positions(self) -> FloatArray:
        return self.atoms[:, : self.dimension]

    @property
    def velocities(self) -> FloatArray:
        return self.atoms[:, self.dimension :]

    @property
    def is_uniform(self) -> bool:
        return bool(np.all(np.abs(self.weights - 1.0 / self.n_atoms) <= WEIGHT_TOL))

    def support_radius(self) -> float:
        return float(np.max(np.linalg.norm(self.atoms, axis=1)))

    def first_moment(self) -> float:
        return float(self.weights @ np.linalg.norm(self.atoms, axis=1))


@dataclass(frozen=True)
class Configuration:
    """Full state of m leaders and N followers in R^{2d(m+N)}."""

    leaders_y: FloatArray
    leaders_w: FloatArray
    followers_x: FloatArray
    followers_v: FloatArray

    def __post_init__(self):
        for name in ("leaders_y", "leaders_w", "followers_x", "followers_v"):
            arr = np.ascontiguousarray(np.asarray(getattr(self, name), dtype=float))
            if arr.ndim != 2:
                raise ValueError(f"{name} must be a 2-d array (count, dimension)")
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} must be finite")
            object.__setattr__(self, name, arr)
        if self.leaders_y.shape != self.leaders_w.shape:
            raise ValueError("leader position/velocity shapes differ")
        if self.followers_x.shape != self.followers_v.shape:
            raise ValueError("follower position/velocity shapes differ")
        if self.m < 1:
            raise ValueError("need at least one leader")
        if self.n_followers == 0:
            empty = np.zeros((0, self.d))
            object.__setattr__(self, "followers_x", empty)
            object.__setattr__(self, "followers_v", empty.copy())
        elif self.followers_x.shape[1] != self.d:
            raise ValueError("leader and follower dimensions differ")

    @property
    def m(self) -> int:
        return self.leaders_y.shape[0]

    @property
    def n_followers(self) -> int:
        return self.followers_x.shape[0]

    @property
    def d(self) -> int:
        return self.leaders_y.shape[1]

    def followers_as_measure(self) -> EmpiricalMeasure:
        if self.n_followers == 0:
            raise EmptyMeasureError("configuration has no followers")
        return EmpiricalMeasure.uniform(
            np.hstack([self.followers_x, self.followers_v])
        )

    def leaders_as_measure(self) -> EmpiricalMeasure:
        return EmpiricalMeasure.uniform(np.hstack([self.leaders_y, self.leaders_w]))


def config_norm(c: Configuration) -> float:
    """(1/m) sum_k (|y_k| + |w_k|) + (1/N) sum_i (|x_i| + |v_i|)."""
    total = math.fsum(np.linalg.norm(c.leaders_y, axis=1)) + math.fsum(
        np.linalg.norm(c.leaders_w, axis=1)
    )
    out = total / c.m
    if c.n_followers > 0:
        foll = math.fsum(np.linalg.norm(c.followers_x, axis=1)) + math.fsum(
            np.linalg.norm(c.followers_v, axis=1)
        )
        out += foll / c.n_followers
    return out


def config_diff_norm(a: Configuration, b: Configuration) -> float:
    """config_norm of the componentwise difference (same m, N, d)."""
    if (a.m, a.n_followers, a.d) != (b.m, b.n_followers, b.d):
        raise ValueError("configurations must have matching shapes")
    diff = Configuration(
        a.leaders_y - b.leaders_y,
        a.leaders_w - b.leaders_w,
        a.followers_x - b.followers_x,
        a.followers_v - b.followers_v,
    )
    return config_norm(diff)


# -- Wasserstein-1 ---------------------------------------------------------


def _cost_matrix(mu: EmpiricalMeasure, nu: EmpiricalMeasure) -> FloatArray:
    return cdist(mu.atoms, nu.atoms)


def _assignment_cost(mu_atoms: FloatArray, nu_atoms: FloatArray) -> tuple[float, FloatArray]:
    n = mu_atoms.shape[0]
    cost = cdist(mu_atoms, nu_atoms)
    rows, cols = linear_sum_assignment(cost)
    total = math.fsum(cost[rows, cols])
    return total / n, cols


def w1_distance(mu: EmpiricalMeasure, nu: EmpiricalMeasure) -> float:
    return w1_distance_with_plan(mu, nu)[0]


def w1_distance_with_plan(
    mu: EmpiricalMeasure, nu: EmpiricalMeasure
) -> tuple[float, FloatArray]:
    """Exact W1 plus an optimal transport plan (n_mu, n_nu).

    The plan is one optimizer among possibly many; only the cost is part of
    the public contract.
    """
    if mu.dimension != nu.dimension:
        raise ValueError("measures live on different phase spaces")
    nm, nn = mu.n_atoms, nu.n_atoms
    if mu.is_uniform and nu.is_uniform:
        if nm == nn:
            value, cols = _assignment_cost(mu.atoms, nu.atoms)
            plan = np.zeros((nm, nn))
            plan[np.arange(nm), cols] = 1.0 / nm
            return value, plan
        small, big, swapped = (mu, nu, False) if nm < nn else (nu, mu, True)
        if big.n_atoms % small.n_atoms == 0:
            rep = big.n_atoms // small.n_atoms
            expanded = np.repeat(small.atoms, rep, axis=0)
            value, cols = _assignment_cost(expanded, big.atoms)
            plan_sb = np.zeros((small.n_atoms, big.n_atoms))
            for a, col in enumerate(cols):
                plan_sb[a // rep, col] += 1.0 / big.n_atoms
            plan = plan_sb.T if swapped else plan_sb
            return value, plan
    return _w1_lp(mu, nu)


def _w1_lp(mu: EmpiricalMeasure, nu: EmpiricalMeasure) -> tuple[float, FloatArray]:
    """Dense transportation LP via HiGHS; exact at desk scale."""
    nm, nn = mu.n_atoms, nu.n_atoms
    if nm * nn > 4_000_000:
        raise ValueError("transportation problem too large for the dense LP path")
    cost = _cost_matrix(mu, nu)
    c = cost.ravel()
    # row sums = mu.weights, column sums = nu.weights
    a_eq = []
    b_eq = []
    for i in range(nm):
        row = np.zeros((nm, nn))
        row[i, :] = 1.0
        a_eq.append(row.ravel())
        b_eq.append(mu.weights[i])
    for j in range(nn - 1):  # drop one redundant constraint
        col = np.zeros((nm, nn))
        col[:, j] = 1.0
        a_eq.append(col.ravel())
        b_eq.append(nu.weights[j])
    res = linprog(
        c,
        A_eq=np.array(a_eq),
        b_eq=np.array(b_eq),
        bounds=(0, None),
        method="highs",
        options=_LP_OPTIONS,
    )
    if not res.success:
        raise RuntimeError(f"transportation LP failed: {res.message}")
    plan = res.x.reshape(nm, nn)
    value = math.fsum((plan * cost).ravel())
    return value, plan


def w1_atomic_upper_bound(
    mu: EmpiricalMeasure, nu: EmpiricalMeasure, pairing: NDArray | None = None
) -> float:
    """(1/m) sum_k |xi_k - xi'_{pairing(k)}|; always an upper bound for W1."""
    if not (mu.is_uniform and nu.is_uniform):
        raise ValueError("atomic pairing bound needs uniform weights")
    if mu.n_atoms != nu.n_atoms:
        raise ValueError("atomic pairing bound needs equal atom counts")
    n = mu.n_atoms
    if pairing is None:
        pairing = np.arange(n)
    pairing = np.asarray(pairing, dtype=int)
    if sorted(pairing.tolist()) != list(range(n)):
        raise ValueError("pairing must be a permutation of the atom indices")
    dists = np.linalg.norm(mu.atoms - nu.atoms[pairing], axis=1)
    return math.fsum(dists) / n


def x_metric(
    a: tuple[FloatArray, FloatArray, EmpiricalMeasure],
    b: tuple[FloatArray, FloatArray, EmpiricalMeasure],
) -> float:
    """Distance on leader states plus W1 on follower measures.

    (1/m) sum_k (|y_k - y'_k| + |w_k - w'_k|) + W1(mu, mu').
    """
    ya, wa, mua = a
    yb, wb, mub = b
    ya, wa, yb, wb = (np.atleast_2d(np.asarray(v, dtype=float)) for v in (ya, wa, yb, wb))
    if ya.shape != yb.shape or wa.shape != wb.shape or ya.shape != wa.shape:
        raise ValueError("leader blocks must have matching shapes")
    m = ya.shape[0]
    lead = (
        math.fsum(np.linalg.norm(ya - yb, axis=1))
        + math.fsum(np.linalg.norm(wa - wb, axis=1))
    ) / m
    return lead + w1_distance(mua, mub)


# -- initial data ----------------------------------------------------------

DENSITY_FAMILIES = ("uniform_box", "gaussian_truncated", "two_cluster")


@dataclass(frozen=True)
class InitialDensitySpec:
    """Seeded density on phase space for follower initial data.

    families:
      uniform_box        -- uniform on [low, high] per phase coordinate
      gaussian_truncated -- isotropic gaussian at ``mean``, rejected outside
                            |xi - mean| <= radius
      two_cluster        -- even mixture of two truncated gaussians at
                            ``mean`` and ``mean2``
    Atom i only consumes draws from its own generator stream, so the first N
    atoms are identical for every N' >= N (nested refinement).
    """

    family: str
    dimension: int
    mean: FloatArray | None = None
    mean2: FloatArray | None = None
    scale: float = 0.0
    radius: float = 1.0
    low: FloatArray | None = None
    high: FloatArray | None = None

    def __post_init__(self):
        if self.family not in DENSITY_FAMILIES:
            raise ValueError(f"unknown density family {self.family!r}")
        if self.dimension < 1:
            raise ValueError("dimension must be positive")
        two_d = 2 * self.dimension
        if self.family == "uniform_box":
            if self.low is None or self.high is None:
                raise ValueError("uniform_box needs low and high bounds")
            low = np.asarray(self.low, dtype=float)
            high = np.asarray(self.high, dtype=float)
            if low.shape != (two_d,) or high.shape != (two_d,):
                raise ValueError(f"bounds must have shape ({two_d},)")
            if np.any(high < low):
                raise ValueError("high must be >= low")
            object.__setattr__(self, "low", low)
            object.__setattr__(self, "high", high)
        else:
            if self.mean is None:
                raise ValueError(f"{self.family} needs a mean")
            mean = np.asarray(self.mean, dtype=float)
            if mean.shape != (two_d,):
                raise ValueError(f"mean must have shape ({two_d},)")
            object.__setattr__(self, "mean", mean)
            if self.scale < 0 or self.radius <= 0:
                raise ValueError("need scale >= 0 and radius > 0")
            if self.family == "two_cluster":
                if self.mean2 is None:
                    raise ValueError("two_cluster needs mean2")
                mean2 = np.asarray(self.mean2, dtype=float)
                if mean2.shape != (two_d,):
                    raise ValueError(f"mean2 must have shape ({two_d},)")
                object.__setattr__(self, "mean2", mean2)

    def support_radius(self) -> float:
        """Radius of a ball at the origin containing the support."""
        if self.family == "uniform_box":
            corner = np.maximum(np.abs(self.low), np.abs(self.high))
            return float(np.linalg.norm(corner))
        r = float(np.linalg.norm(self.mean)) + self.radius
        if self.family == "two_cluster":
            r = max(r, float(np.linalg.norm(self.mean2)) + self.radius)
        return r


def _draw_atom(spec: InitialDensitySpec, rng: np.random.Generator) -> FloatArray:
    two_d = 2 * spec.dimension
    if spec.family == "uniform_box":
        return spec.low + rng.random(two_d) * (spec.high - spec.low)
    if spec.family == "two_cluster":
        center = spec.mean if rng.random() < 0.5 else spec.mean2
    else:
        center = spec.mean
    if spec.scale == 0.0:
        return center.copy()
    while True:
        xi = center + spec.scale * rng.standard_normal(two_d)
        if np.linalg.norm(xi - center) <= spec.radius:
            return xi


def sample_initial_measure(
    spec: InitialDensitySpec, n: int, seed: int
) -> EmpiricalMeasure:
    """n uniform-weight atoms drawn i.i.d. from the spec's density.

    Per-atom generator streams give the prefix property: for a fixed seed the
    first n atoms agree across runs and across larger n.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    atoms = np.empty((n, 2 * spec.dimension))
    for i in range(n):
        rng = np.random.default_rng(np.random.SeedSequence([seed, i]))
        atoms[i] = _draw_atom(spec, rng)
    return EmpiricalMeasure.uniform(atoms)


def push_forward(point_map, mu: EmpiricalMeasure) -> EmpiricalMeasure:
    """Image measure under a pointwise map of R^{2d}; weights preserved."""
    images = np.array([point_map(a) for a in mu.atoms], dtype=float)
    if images.shape != mu.atoms.shape:
        raise ValueError("map must preserve the phase-space dimension")
    if not np.all(np.isfinite(images)):
        raise ValueError("map produced non-finite atom images")
    return EmpiricalMeasure(images, mu.weights.copy())


# -- serialization ---------------------------------------------------------


def measure_to_csv(mu: EmpiricalMeasure) -> str:
    d = mu.dimension
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    header = [f"x{i + 1}" for i in range(d)] + [f"v{i + 1}" for i in range(d)] + ["weight"]
    writer.writerow(header)
    for atom, wt in zip(mu.atoms, mu.weights):
        writer.writerow([repr(float(v)) for v in atom] + [repr(float(wt))])
    return buf.getvalue()


def measure_from_csv(text: str) -> EmpiricalMeasure:
    rows = list(csv.reader(io.StringIO(text)))
    if len(rows) < 2:
        raise EmptyMeasureError("measure CSV has no atom rows")
    body = np.array([[float(v) for v in row] for row in rows[1:]])
    return EmpiricalMeasure(body[:, :-1], body[:, -1])
