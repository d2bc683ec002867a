"""Proximal-gradient solver for the finite-N sparse control problem.

Objective over discretized controls u (n_cells, m, d):

    J(u) = integral L(y, w, mu_N) dt  +  (1/m) sum_k integral |u_k| dt

subject to the leader-follower dynamics and |u_k(t)| <= U.  The smooth part
is differentiated by the exact discrete adjoint of the RK4 transcription
(discretize-then-optimize), the nonsmooth part is handled by its closed-form
prox: radial soft-shrinkage followed by projection onto the ball.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray

from . import accel
from .control import (
    ControlSignal,
    RunningCost,
    control_l1_cost,
    running_cost_state_gradient,
    total_cost,
    trapezoid_weights,
)
from .dynamics import StageCache, TimeGrid, Trajectory, integrate
from .kernels import Kernel
from .measures import Configuration

FloatArray = NDArray[np.float64]


@dataclass(frozen=True)
class OptimizerParams:
    max_iters: int = 2000
    eta0: float = 1.0
    backtrack: float = 0.5
    tol_j_rel: float = 1e-8  # stop when |dJ| <= tol_j_rel * (1 + |J0|)
    tol_u_rel: float = 1e-6  # and max |du| <= tol_u_rel * U
    eta_min: float = 1e-12

    def __post_init__(self):
        if self.max_iters < 1 or self.eta0 <= 0 or not (0 < self.backtrack < 1):
            raise ValueError("invalid optimizer parameters")


@dataclass(frozen=True)
class OptimalControlProblem:
    initial: Configuration
    kernel: Kernel
    cost: RunningCost
    grid: TimeGrid
    n_cells: int
    control_radius: float
    params: OptimizerParams = field(default_factory=OptimizerParams)

    def __post_init__(self):
        if self.n_cells < 1:
            raise ValueError("n_cells must be >= 1")
        if self.control_radius <= 0:
            raise ValueError("control_radius must be positive")
        tol = 1e-9 * max(1.0, self.grid.horizon)
        for b in self.template().breakpoints():
            if np.min(np.abs(self.grid.instants - b)) > tol:
                raise ValueError("grid does not refine the control cells")

    def template(self) -> ControlSignal:
        return ControlSignal.zero(
            self.n_cells, self.initial.m, self.initial.d, self.grid.horizon, self.control_radius
        )

    def signal(self, cell_values: FloatArray) -> ControlSignal:
        return ControlSignal(cell_values, self.grid.horizon, self.control_radius)


@dataclass
class SolveReport:
    control: ControlSignal
    cost: float
    history: list[float]
    sparsity_fraction: float
    converged: bool
    stalled: bool = False
    n_iters: int = 0
    trajectory: Trajectory | None = None


def sparsity_fraction(u: ControlSignal) -> float:
    """Share of (cell, leader) vectors that are exactly zero."""
    zero = np.all(u.cell_values == 0.0, axis=2)
    return float(np.mean(zero))


def prox_l1_ball(cell_value: FloatArray, threshold: float, radius: float) -> FloatArray:
    """prox of threshold*|.| composed with projection onto B(0, radius).

    Shrink-then-project is the exact prox of the sum because both pieces are
    radial: the prox only rescales the magnitude, never the direction.
    """
    if threshold < 0 or radius <= 0:
        raise ValueError("need threshold >= 0 and radius > 0")
    v = np.asarray(cell_value, dtype=float)
    norm = float(np.linalg.norm(v))
    if norm <= threshold:
        return np.zeros_like(v)
    shrunk = (norm - threshold) / norm
    out = v * shrunk
    new_norm = norm - threshold
    if new_norm > radius:
        out = out * (radius / new_norm)
    return out


def _prox_signal(values: FloatArray, threshold: float, radius: float) -> FloatArray:
    norms = np.linalg.norm(values, axis=2, keepdims=True)
    target = np.minimum(np.maximum(norms - threshold, 0.0), radius)
    scale = np.zeros_like(norms)
    np.divide(target, norms, out=scale, where=norms > 0)
    out = values * scale
    # force killed cells to clean +0.0 so zeros are bitwise exact
    out[np.broadcast_to(target == 0.0, out.shape)] = 0.0
    return out


def smooth_cost(p: OptimalControlProblem, u: ControlSignal) -> float:
    """The integral-of-L part of the objective on the problem grid."""
    traj = integrate(p.initial, u, p.kernel, p.grid)
    return total_cost(traj, u, p.cost) - control_l1_cost(u)


def smooth_gradient(
    p: OptimalControlProblem, u: ControlSignal
) -> tuple[FloatArray, float, Trajectory]:
    """Exact gradient of the discretized smooth cost w.r.t. each control cell.

    Reverse sweep through the stored RK4 stages; returns (gradient, value,
    trajectory) so callers get the forward pass for free.
    """
    traj, cache = integrate(p.initial, u, p.kernel, p.grid, keep_stages=True)
    value = total_cost(traj, u, p.cost) - control_l1_cost(u)
    grad = np.zeros_like(u.cell_values)

    wts = trapezoid_weights(traj.times)
    code, params = p.kernel.code, p.kernel.params
    m, d = p.initial.leaders_y.shape
    n = p.initial.n_followers

    def cost_grad(j):
        return running_cost_state_gradient(p.cost, traj.y[j], traj.w[j], traj.x[j], traj.v[j])

    def rhs_vjp(yy, ww, xx, vv, ny, nw, nx, nv):
        """(d g / d z)^T nu for the full RHS at stage state (yy, ww, xx, vv)."""
        ly = np.zeros((m, d))
        lw = np.zeros((m, d))
        lx = np.zeros((n, d))
        lv = np.zeros((n, d))
        accel.interaction_vjp(code, params, yy, ww, xx, vv, nw, nv, ly, lw, lx, lv)
        lw += ny  # dy/dt = w
        lv += nx  # dx/dt = v
        return ly, lw, lx, lv

    n_steps = len(traj.times) - 1
    last = cost_grad(n_steps)
    lam = [wts[n_steps] * g for g in last]

    for s in range(n_steps - 1, -1, -1):
        h = cache.h[s]
        cell = cache.cell[s]
        z1 = (traj.y[s], traj.w[s], traj.x[s], traj.v[s])
        z2 = (cache.stage_y[s, 0], cache.stage_w[s, 0], cache.stage_x[s, 0], cache.stage_v[s, 0])
        z3 = (cache.stage_y[s, 1], cache.stage_w[s, 1], cache.stage_x[s, 1], cache.stage_v[s, 1])
        z4 = (cache.stage_y[s, 2], cache.stage_w[s, 2], cache.stage_x[s, 2], cache.stage_v[s, 2])

        nu4 = [(h / 6.0) * l for l in lam]
        lz4 = rhs_vjp(*z4, *nu4)
        nu3 = [(h / 3.0) * l + h * g for l, g in zip(lam, lz4)]
        lz3 = rhs_vjp(*z3, *nu3)
        nu2 = [(h / 3.0) * l + (h / 2.0) * g for l, g in zip(lam, lz3)]
        lz2 = rhs_vjp(*z2, *nu2)
        nu1 = [(h / 6.0) * l + (h / 2.0) * g for l, g in zip(lam, lz2)]
        lz1 = rhs_vjp(*z1, *nu1)

        # control enters additively in the leader-velocity block of every stage
        grad[cell] += nu1[1] + nu2[1] + nu3[1] + nu4[1]

        lam = [l + a + b + c + e for l, a, b, c, e in zip(lam, lz1, lz2, lz3, lz4)]
        gj = cost_grad(s)
        lam = [l + wts[s] * g for l, g in zip(lam, gj)]

    return grad, value, traj


def solve(p: OptimalControlProblem, u0: ControlSignal | None = None, seed: int = 0) -> SolveReport:
    """Proximal gradient with backtracking on the smooth-part majorizer.

    Accepted steps never increase the full objective.  Termination: |dJ| and
    max cell change below tolerance, or max_iters; if no step is accepted at
    the minimum step size the report is flagged stalled, not raised.
    """
    del seed  # deterministic; kept for interface stability
    if u0 is None:
        u0 = p.template()
    if not u0.is_admissible(tol=1e-12):
        raise ValueError("u0 must be admissible")
    opts = p.params
    width = p.grid.horizon / p.n_cells
    u = u0.cell_values.copy()

    grad, s_val, _ = smooth_gradient(p, p.signal(u))
    j_val = s_val + control_l1_cost(p.signal(u))
    tol_j = opts.tol_j_rel * (1.0 + abs(j_val))
    tol_u = opts.tol_u_rel * p.control_radius
    history = [j_val]
    eta = opts.eta0
    converged = False
    stalled = False
    iters = 0

    for iters in range(1, opts.max_iters + 1):
        accepted = False
        while eta >= opts.eta_min:
            threshold = eta * width / p.initial.m
            cand = _prox_signal(u - eta * grad, threshold, p.control_radius)
            diff = cand - u
            diff_sq = float(np.vdot(diff, diff))
            if diff_sq == 0.0:
                accepted = True
                cand_s = s_val
                break
            cand_s = smooth_cost(p, p.signal(cand))
            if cand_s <= s_val + float(np.vdot(grad, diff)) + diff_sq / (2.0 * eta):
                accepted = True
                break
            eta *= opts.backtrack
        if not accepted:
            stalled = True
            break

        new_j = cand_s + control_l1_cost(p.signal(cand))
        max_du = float(np.max(np.abs(cand - u))) if cand.size else 0.0
        delta_j = abs(j_val - new_j)
        u = cand
        j_val = new_j
        history.append(j_val)
        if delta_j <= tol_j and max_du <= tol_u:
            converged = True
            break
        grad, s_val, _ = smooth_gradient(p, p.signal(u))
        eta = min(eta * 2.0, opts.eta0 * 1e3)

    signal = p.signal(u)
    traj = integrate(p.initial, signal, p.kernel, p.grid)
    return SolveReport(
        control=signal,
        cost=j_val,
        history=history,
        sparsity_fraction=sparsity_fraction(signal),
        converged=converged,
        stalled=stalled,
        n_iters=iters,
        trajectory=traj,
    )


def brute_force_solve(p: OptimalControlProblem, levels_per_axis: int) -> SolveReport:
    """Exhaustive lattice search, the oracle for tiny instances.

    Enumerates {-U, ..., 0, ..., U} per control coordinate (levels_per_axis
    values), skips candidates outside the per-leader ball, simulates each one
    and returns the exact lattice minimizer; ties break to the lowest
    candidate index.
    """
    if levels_per_axis < 2:
        raise ValueError("levels_per_axis must be >= 2")
    m, d = p.initial.m, p.initial.d
    dofs = p.n_cells * m * d
    n_candidates = levels_per_axis**dofs
    if n_candidates > 1_000_000:
        raise ValueError(
            f"{n_candidates} lattice candidates exceed the brute-force budget (1e6)"
        )
    axis = np.linspace(-p.control_radius, p.control_radius, levels_per_axis)
    best = None
    best_vals = None
    for combo in itertools.product(range(levels_per_axis), repeat=dofs):
        values = axis[np.array(combo)].reshape(p.n_cells, m, d)
        if np.any(np.linalg.norm(values, axis=2) > p.control_radius * (1 + 1e-12)):
            continue
        u = p.signal(values)
        traj = integrate(p.initial, u, p.kernel, p.grid)
        j = total_cost(traj, u, p.cost)
        if best is None or j < best:
            best = j
            best_vals = values
    if best is None:
        raise RuntimeError("no admissible lattice candidate (should not happen)")
    signal = p.signal(best_vals)
    return SolveReport(
        control=signal,
        cost=best,
        history=[best],
        sparsity_fraction=sparsity_fraction(signal),
        converged=True,
        n_iters=0,
        trajectory=integrate(p.initial, signal, p.kernel, p.grid),
    )
