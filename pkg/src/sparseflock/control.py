"""Piecewise-constant control signals, the admissible set, and cost terms.

The admissible set is a product of per-leader Euclidean balls B(0, U).  The
control penalty is (1/m) sum_k integral |u_k(t)| dt, computed exactly for
piecewise-constant signals; running costs are integrated with the composite
trapezoid rule on the trajectory grid (second order).
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray

from .measures import EmpiricalMeasure, w1_distance, w1_distance_with_plan

FloatArray = NDArray[np.float64]

COST_FAMILIES = ("velocity_consensus", "leader_tracking", "measure_target")


@dataclass(frozen=True)
class ControlSignal:
    """u : [0, T] -> U^m, constant on each of n_cells equal cells.

    cell_values has shape (n_cells, m, d); cell i covers
    [i T / n_cells, (i+1) T / n_cells).
    """

    cell_values: FloatArray
    horizon: float
    admissible_radius: float

    def __post_init__(self):
        vals = np.ascontiguousarray(np.asarray(self.cell_values, dtype=float))
        if vals.ndim != 3:
            raise ValueError("cell_values must have shape (n_cells, m, d)")
        if not np.all(np.isfinite(vals)):
            raise ValueError("cell values must be finite")
        object.__setattr__(self, "cell_values", vals)
        if not (self.horizon > 0 and np.isfinite(self.horizon)):
            raise ValueError("horizon must be positive")
        if not (self.admissible_radius > 0):
            raise ValueError("admissible_radius must be positive")

    @staticmethod
    def zero(n_cells: int, m: int, d: int, horizon: float, admissible_radius: float) -> "ControlSignal":
        return ControlSignal(np.zeros((n_cells, m, d)), horizon, admissible_radius)

    @property
    def n_cells(self) -> int:
        return self.cell_values.shape[0]

    @property
    def m(self) -> int:
        return self.cell_values.shape[1]

    @property
    def d(self) -> int:
        return self.cell_values.shape[2]

    @property
    def cell_width(self) -> float:
        return self.horizon / self.n_cells

    def breakpoints(self) -> tuple[float, ...]:
        return tuple(self.horizon * i / self.n_cells for i in range(1, self.n_cells))

    def cell_of(self, t: float) -> int:
        if t < 0 or t > self.horizon * (1 + 1e-12):
            raise ValueError(f"time {t} outside [0, {self.horizon}]")
        return min(int(t / self.horizon * self.n_cells), self.n_cells - 1)

    def value_at(self, t: float) -> FloatArray:
        return self.cell_values[self.cell_of(t)]

    def is_admissible(self, tol: float = 0.0) -> bool:
        norms = np.linalg.norm(self.cell_values, axis=2)
        return bool(np.all(norms <= self.admissible_radius * (1 + tol) + tol))


def project_admissible(u: ControlSignal) -> ControlSignal:
    """Radial projection of every per-leader cell vector onto B(0, U)."""
    norms = np.linalg.norm(u.cell_values, axis=2, keepdims=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        factor = np.where(norms > u.admissible_radius, u.admissible_radius / norms, 1.0)
    projected = u.cell_values * factor
    if np.all(factor == 1.0):
        return u  # already admissible: bitwise unchanged
    return ControlSignal(projected, u.horizon, u.admissible_radius)


def control_l1_cost(u: ControlSignal) -> float:
    """(1/m) sum_k integral_0^T |u_k(t)| dt, exact for piecewise-constant u."""
    norms = np.linalg.norm(u.cell_values, axis=2)  # (n_cells, m)
    return u.cell_width / u.m * math.fsum(norms.ravel())


def control_primitive(u: ControlSignal, t: float) -> FloatArray:
    """integral_0^t u(s) ds, exact; shape (m, d)."""
    if t < -1e-12 or t > u.horizon * (1 + 1e-12):
        raise ValueError(f"time {t} outside [0, {u.horizon}]")
    t = min(max(t, 0.0), u.horizon)
    width = u.cell_width
    full = min(int(math.floor(t / width)), u.n_cells)
    out = np.zeros((u.m, u.d))
    for i in range(full):
        out += width * u.cell_values[i]
    rem = t - full * width
    if rem > 0 and full < u.n_cells:
        out += rem * u.cell_values[full]
    return out


@dataclass(frozen=True)
class RunningCost:
    """State cost L(y, w, mu), continuous in the leader+W1 metric.

    families:
      velocity_consensus -- weight * integral |v - mean_v(mu)|^2 dmu
      leader_tracking    -- weight * (1/m) sum_k (|y_k - y*_k|^2 + |w_k - w*_k|^2)
      measure_target     -- weight * W1(mu, target)
    """

    family: str
    weight: float = 1.0
    target_y: FloatArray | None = None
    target_w: FloatArray | None = None
    target_measure: EmpiricalMeasure | None = None

    def __post_init__(self):
        if self.family not in COST_FAMILIES:
            raise ValueError(f"unknown running-cost family {self.family!r}")
        if self.weight < 0:
            raise ValueError("weight must be >= 0")
        if self.family == "leader_tracking":
            if self.target_y is None or self.target_w is None:
                raise ValueError("leader_tracking needs target_y and target_w")
            object.__setattr__(self, "target_y", np.atleast_2d(np.asarray(self.target_y, dtype=float)))
            object.__setattr__(self, "target_w", np.atleast_2d(np.asarray(self.target_w, dtype=float)))
        if self.family == "measure_target" and self.target_measure is None:
            raise ValueError("measure_target needs a target measure")

    def with_weight(self, weight: float) -> "RunningCost":
        return RunningCost(self.family, weight, self.target_y, self.target_w, self.target_measure)


def running_cost(
    spec: RunningCost, leaders_y: FloatArray, leaders_w: FloatArray, mu: EmpiricalMeasure | None
) -> float:
    """Evaluate L at one instant."""
    if spec.weight == 0.0:
        return 0.0
    if spec.family == "velocity_consensus":
        if mu is None:
            raise ValueError("velocity_consensus needs a follower measure")
        vel = mu.velocities
        mean = mu.weights @ vel
        sq = np.sum((vel - mean) ** 2, axis=1)
        return spec.weight * float(mu.weights @ sq)
    if spec.family == "leader_tracking":
        ty, tw = spec.target_y, spec.target_w
        if ty.shape[1] != leaders_y.shape[1]:
            raise ValueError("target dimension does not match leaders")
        dy = np.sum((leaders_y - ty) ** 2, axis=1)
        dw = np.sum((leaders_w - tw) ** 2, axis=1)
        return spec.weight * float(np.mean(dy + dw))
    if mu is None:
        raise ValueError("measure_target needs a follower measure")
    return spec.weight * w1_distance(mu, spec.target_measure)


def running_cost_state_gradient(
    spec: RunningCost, leaders_y, leaders_w, x, v
) -> tuple[FloatArray, FloatArray, FloatArray, FloatArray]:
    """Gradient of L with respect to (y, w, x, v) at one instant.

    For measure_target this is the a.e. gradient obtained from one optimal
    transport plan (Danskin); at ties it is a subgradient element.
    """
    gy = np.zeros_like(leaders_y)
    gw = np.zeros_like(leaders_w)
    gx = np.zeros_like(x)
    gv = np.zeros_like(v)
    if spec.weight == 0.0:
        return gy, gw, gx, gv
    if spec.family == "velocity_consensus":
        n = v.shape[0]
        if n == 0:
            return gy, gw, gx, gv
        mean = v.mean(axis=0)
        gv[:] = spec.weight * 2.0 / n * (v - mean)
        return gy, gw, gx, gv
    if spec.family == "leader_tracking":
        m = leaders_y.shape[0]
        gy[:] = spec.weight * 2.0 / m * (leaders_y - spec.target_y)
        gw[:] = spec.weight * 2.0 / m * (leaders_w - spec.target_w)
        return gy, gw, gx, gv
    mu = EmpiricalMeasure.uniform(np.hstack([x, v]))
    _, plan = w1_distance_with_plan(mu, spec.target_measure)
    target = spec.target_measure.atoms
    d = x.shape[1]
    for i in range(x.shape[0]):
        row = plan[i]
        for j in np.nonzero(row > 1e-15)[0]:
            diff = mu.atoms[i] - target[j]
            norm = np.linalg.norm(diff)
            if norm > 0:
                g = spec.weight * row[j] / norm * diff
                gx[i] += g[:d]
                gv[i] += g[d:]
    return gy, gw, gx, gv


def trapezoid_weights(times: FloatArray) -> FloatArray:
    """Composite trapezoid weights on a (possibly non-uniform) grid."""
    h = np.diff(times)
    wts = np.zeros(len(times))
    wts[:-1] += 0.5 * h
    wts[1:] += 0.5 * h
    return wts


def total_cost(traj, u: ControlSignal, spec: RunningCost) -> float:
    """integral L dt along the trajectory (trapezoid) plus the exact L1 term.

    The trajectory grid must contain every control-cell edge; mismatch is
    rejected rather than silently re-gridded.
    """
    times = traj.times
    tol = 1e-9 * max(1.0, u.horizon)
    if abs(times[0]) > tol or abs(times[-1] - u.horizon) > tol:
        raise ValueError("trajectory does not span the control horizon")
    for b in u.breakpoints():
        if np.min(np.abs(times - b)) > tol:
            raise ValueError(f"trajectory grid is missing the control breakpoint t = {b}")
    wts = trapezoid_weights(times)
    values = []
    for j in range(traj.n_instants):
        mu = None
        if spec.family != "leader_tracking" and traj.x.shape[1] > 0:
            mu = EmpiricalMeasure.uniform(np.hstack([traj.x[j], traj.v[j]]))
        values.append(running_cost(spec, traj.y[j], traj.w[j], mu))
    quad = math.fsum(w * val for w, val in zip(wts, values))
    return quad + control_l1_cost(u)


# -- serialization ---------------------------------------------------------


def control_to_csv(u: ControlSignal) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["cell", "t_start", "t_end", "leader"] + [f"u{i + 1}" for i in range(u.d)])
    width = u.cell_width
    for i in range(u.n_cells):
        for k in range(u.m):
            writer.writerow(
                [i, repr(i * width), repr((i + 1) * width), k]
                + [repr(float(val)) for val in u.cell_values[i, k]]
            )
    return buf.getvalue()
