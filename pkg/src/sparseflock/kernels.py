"""Interaction kernels with sublinear growth, and their empirical convolutions.

Every kernel H : R^{2d} -> R^d shipped here has the product form
``H(dx, dv) = alpha(|dx|) * dv + phi(|dx|) * dx`` with exactly one of the two
scalar profiles nonzero, and carries a declared growth constant C such that
|H(xi)| <= C (1 + |xi|) everywhere.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray

from . import accel

FloatArray = NDArray[np.float64]

FAMILIES = ("zero", "cucker_smale", "repulsion_attraction", "custom_table")

_CODES = {
    "zero": accel.ZERO,
    "cucker_smale": accel.CUCKER_SMALE,
    "repulsion_attraction": accel.REPULSION_ATTRACTION,
    "custom_table": accel.CUSTOM_TABLE,
}


class GrowthBoundError(ValueError):
    """Sampled |H(xi)| / (1 + |xi|) exceeded the declared growth constant."""

    def __init__(self, estimate: float, declared: float, witness: FloatArray):
        self.estimate = estimate
        self.declared = declared
        self.witness = witness
        super().__init__(
            f"growth estimate {estimate:.6g} exceeds declared constant "
            f"{declared:.6g} at point {witness.tolist()}"
        )


@dataclass(frozen=True)
class Kernel:
    """An interaction law plus the metadata the well-posedness bounds need.

    Use the family constructors (:meth:`cucker_smale`, ...) rather than
    building instances directly; they fill the packed parameter vector the
    compiled loops consume and derive a valid growth constant.
    """

    family: str
    dimension: int
    growth_constant: float
    params: FloatArray = field(repr=False)

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown kernel family {self.family!r}")
        if self.dimension < 1:
            raise ValueError("dimension must be a positive integer")
        if not (self.growth_constant > 0 and np.isfinite(self.growth_constant)):
            raise ValueError("growth_constant must be positive and finite")

    @property
    def code(self) -> int:
        return _CODES[self.family]

    # -- constructors ------------------------------------------------------

    @staticmethod
    def zero(dimension: int) -> "Kernel":
        return Kernel("zero", dimension, 1e-12, np.zeros(1))

    @staticmethod
    def cucker_smale(
        dimension: int,
        strength: float = 1.0,
        scale: float = 1.0,
        exponent: float = 0.45,
        sign: float = -1.0,
        growth_constant: float | None = None,
    ) -> "Kernel":
        """H(dx, dv) = sign * a(|dx|) * dv with rate a(r) = K / (sigma^2 + r^2)^beta."""
        if strength <= 0 or scale <= 0 or exponent < 0:
            raise ValueError("need strength > 0, scale > 0, exponent >= 0")
        if sign not in (1.0, -1.0):
            raise ValueError("sign must be +1 or -1")
        if growth_constant is None:
            # a is nonincreasing, so |H| <= a(0) |dv| <= a(0) (1 + |xi|)
            growth_constant = strength * scale ** (-2.0 * exponent)
        params = np.array([strength, scale * scale, exponent, sign])
        return Kernel("cucker_smale", dimension, growth_constant, params)

    @staticmethod
    def repulsion_attraction(
        dimension: int,
        sigma_r: float = 1.0,
        sigma_a: float = 1.0,
        regularizer: float = 1e-3,
        growth_constant: float | None = None,
    ) -> "Kernel":
        """H(dx, dv) = f(max(|dx|, eps)) * dx, f(r) = sigma_r/r^4 - sigma_a/r^0.4.

        The cap at eps removes the singularity at the origin so the kernel
        stays locally Lipschitz and finite.
        """
        if sigma_r < 0 or sigma_a < 0 or regularizer <= 0:
            raise ValueError("need sigma_r >= 0, sigma_a >= 0, regularizer > 0")
        params = np.array([sigma_r, sigma_a, regularizer])
        if growth_constant is None:
            growth_constant = _radial_growth_bound(
                accel.REPULSION_ATTRACTION, params, regularizer
            )
        return Kernel("repulsion_attraction", dimension, growth_constant, params)

    @staticmethod
    def custom_table(
        dimension: int,
        radii: FloatArray,
        values: FloatArray,
        regularizer: float = 1e-3,
        growth_constant: float | None = None,
    ) -> "Kernel":
        """Piecewise-linear radial profile: H = f(max(|dx|, eps)) * dx.

        f interpolates (radii, values) linearly and is clamped to the end
        values outside the table.
        """
        radii = np.asarray(radii, dtype=float)
        values = np.asarray(values, dtype=float)
        if radii.ndim != 1 or radii.shape != values.shape or radii.size < 2:
            raise ValueError("radii and values must be 1-d arrays of equal length >= 2")
        if not np.all(np.diff(radii) > 0):
            raise ValueError("radii must be strictly increasing")
        if regularizer <= 0:
            raise ValueError("regularizer must be positive")
        params = np.concatenate(([regularizer, float(radii.size)], radii, values))
        if growth_constant is None:
            growth_constant = _radial_growth_bound(
                accel.CUSTOM_TABLE, params, regularizer, r_hi=radii[-1] * 10 + 1
            )
        return Kernel("custom_table", dimension, growth_constant, params)


def _radial_growth_bound(code, params, eps, r_hi=1e8, n=8192) -> float:
    """Numerical sup of |f(max(r,eps))| * r / (1 + r) with a safety margin.

    Valid bound for position-type kernels because |H| = |f| |dx| and
    |dx| <= |xi| there.
    """
    grid = np.concatenate(
        [np.array([eps * 0.5, eps, 2 * eps]), np.geomspace(max(eps, 1e-12), r_hi, n)]
    )
    best = 0.0
    for r in grid:
        _, phi = accel._pair_scalars.py_func(code, params, r * r)
        best = max(best, abs(phi) * r / (1.0 + r))
    return best * 1.05 + 1e-12


def eval_kernel(kernel: Kernel, dx: FloatArray, dv: FloatArray) -> FloatArray:
    """Evaluate H(dx, dv) for a single displacement pair."""
    dx = np.asarray(dx, dtype=float)
    dv = np.asarray(dv, dtype=float)
    if dx.shape != (kernel.dimension,) or dv.shape != (kernel.dimension,):
        raise ValueError(
            f"expected displacement vectors of shape ({kernel.dimension},), "
            f"got {dx.shape} and {dv.shape}"
        )
    if not (np.all(np.isfinite(dx)) and np.all(np.isfinite(dv))):
        raise ValueError("displacement components must be finite")
    alpha, phi = accel._pair_scalars.py_func(kernel.code, kernel.params, float(dx @ dx))
    return alpha * dv + phi * dx


def convolve_empirical(kernel: Kernel, atoms, query: FloatArray) -> FloatArray:
    """H * mu at a phase-space query point, for an atomic measure mu.

    Summation is compensated and runs in atom index order, making the result
    independent of thread count, bit for bit.
    """
    from .measures import EmpiricalMeasure  # local import to avoid a cycle

    if not isinstance(atoms, EmpiricalMeasure):
        raise TypeError("atoms must be an EmpiricalMeasure")
    d = kernel.dimension
    if atoms.dimension != d:
        raise ValueError("measure dimension does not match kernel dimension")
    query = np.asarray(query, dtype=float)
    if query.shape != (2 * d,):
        raise ValueError(f"query must have shape ({2 * d},)")
    # canonical atom order: the sum is invariant to relabeling, bit for bit
    keys = np.column_stack([atoms.atoms, atoms.weights])
    order = np.lexsort(keys.T[::-1])
    out = np.zeros((1, d))
    accel.convolve_points(
        kernel.code,
        kernel.params,
        query[np.newaxis, :d],
        query[np.newaxis, d:],
        np.ascontiguousarray(atoms.positions[order]),
        np.ascontiguousarray(atoms.velocities[order]),
        np.ascontiguousarray(atoms.weights[order]),
        out,
    )
    return out[0]


def estimate_growth_constant(
    kernel: Kernel,
    sample_box: float | FloatArray,
    n_samples: int,
    seed: int,
) -> float:
    """Empirical sup of |H(xi)| / (1 + |xi|) over seeded samples of the box.

    ``sample_box`` is either a radius R (samples uniform in [-R, R]^{2d}) or an
    explicit (2, 2d) array of lower/upper bounds.  Raises GrowthBoundError if
    the estimate exceeds the declared growth constant.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    d = kernel.dimension
    box = np.asarray(sample_box, dtype=float)
    if box.ndim == 0:
        lo = np.full(2 * d, -float(box))
        hi = np.full(2 * d, float(box))
    else:
        if box.shape != (2, 2 * d):
            raise ValueError(f"sample_box must be a radius or a (2, {2 * d}) array")
        lo, hi = box[0], box[1]
    rng = np.random.default_rng(seed)
    pts = lo + rng.random((n_samples, 2 * d)) * (hi - lo)
    best = 0.0
    witness = pts[0]
    for p in pts:
        h = eval_kernel(kernel, p[:d], p[d:])
        ratio = float(np.linalg.norm(h) / (1.0 + np.linalg.norm(p)))
        if ratio > best:
            best = ratio
            witness = p
    if best > kernel.growth_constant:
        raise GrowthBoundError(best, kernel.growth_constant, witness)
    return best


def lipschitz_bound(kernel: Kernel, radius: float, n: int = 4096) -> float:
    """Upper bound for the Lipschitz constant of H on the ball |xi| <= radius.

    Uses the analytic Jacobian of the radial profiles maximized on a dense
    grid, with a small safety margin; adequate for the stability envelopes,
    not a certified bound.
    """
    if radius <= 0:
        raise ValueError("radius must be positive")
    rs = np.linspace(0.0, 2.0 * radius, n)
    best = 0.0
    for r in rs:
        alpha, phi, da, dp = accel._pair_scalars_d.py_func(
            kernel.code, kernel.params, r * r
        )
        # |J| <= |alpha| + |phi| + 2r(|da| * dv_max + |dp| * r), dv_max <= 2*radius
        j = abs(alpha) + abs(phi) + 2.0 * r * (abs(da) * 2.0 * radius + abs(dp) * r)
        best = max(best, j)
    return best * 1.05
