"""Time integration of the coupled leader-follower system.

The right-hand side is
    dy_k = w_k
    dw_k = H*mu_N(y_k,w_k) + H*mu_m(y_k,w_k) + u_k
    dx_i = v_i
    dv_i = H*mu_N(x_i,v_i) + H*mu_m(x_i,v_i)
integrated with classic RK4.  Controls are piecewise constant, and the grid
never straddles a control breakpoint, so the RHS is smooth inside every step
and RK4 keeps its classical order piecewise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray

from . import accel
from .control import ControlSignal
from .kernels import Kernel
from .measures import Configuration, config_norm

FloatArray = NDArray[np.float64]

GRID_TOL = 1e-9


class IntegrationError(RuntimeError):
    """Non-finite state during integration (kernel blow-up or step too large)."""

    def __init__(self, step_index: int, time: float):
        self.step_index = step_index
        self.time = time
        super().__init__(f"non-finite state at step {step_index} (t = {time:.6g})")


@dataclass(frozen=True)
class TimeGrid:
    """Uniform base grid on [0, T] with mandatory instants spliced in.

    ``control_breakpoints`` lists times that must fall on step boundaries:
    control-cell edges and any evaluation instants.  Base steps are split
    there, so no step straddles a discontinuity of the control.
    """

    horizon: float
    n_steps: int
    control_breakpoints: tuple[float, ...] = ()
    instants: FloatArray = field(init=False, repr=False)

    def __post_init__(self):
        if not (self.horizon > 0 and np.isfinite(self.horizon)):
            raise ValueError("horizon must be positive and finite")
        if self.n_steps < 1:
            raise ValueError("n_steps must be >= 1")
        t = self.horizon
        base = np.linspace(0.0, t, self.n_steps + 1)
        extra = np.asarray(self.control_breakpoints, dtype=float)
        if extra.size and (extra.min() < -GRID_TOL or extra.max() > t + GRID_TOL):
            raise ValueError("breakpoints must lie in [0, T]")
        merged = np.sort(np.concatenate([base, extra]))
        keep = [merged[0]]
        tol = GRID_TOL * max(1.0, t)
        for v in merged[1:]:
            if v - keep[-1] > tol:
                keep.append(v)
        keep[-1] = t
        object.__setattr__(self, "instants", np.array(keep))

    @staticmethod
    def default(horizon: float, n_cells: int = 1, extra: tuple[float, ...] = ()) -> "TimeGrid":
        """Default step rule h = min(T/200, cell_width/4)."""
        h = min(horizon / 200.0, horizon / n_cells / 4.0)
        n_steps = int(math.ceil(horizon / h))
        cells = tuple(horizon * i / n_cells for i in range(1, n_cells))
        return TimeGrid(horizon, n_steps, cells + tuple(extra))

    def index_of(self, time: float) -> int:
        """Index of a grid instant (the instant must be on the grid)."""
        i = int(np.searchsorted(self.instants, time))
        for j in (i - 1, i, i + 1):
            if 0 <= j < len(self.instants) and abs(self.instants[j] - time) <= GRID_TOL * max(1.0, self.horizon):
                return j
        raise ValueError(f"time {time} is not a grid instant")


@dataclass(frozen=True)
class Trajectory:
    """States at every grid instant, stacked time-major."""

    times: FloatArray
    y: FloatArray  # (n_t, m, d)
    w: FloatArray
    x: FloatArray  # (n_t, N, d)
    v: FloatArray

    @property
    def n_instants(self) -> int:
        return len(self.times)

    def state(self, j: int) -> Configuration:
        return Configuration(self.y[j], self.w[j], self.x[j], self.v[j])

    def final_state(self) -> Configuration:
        return self.state(self.n_instants - 1)


@dataclass
class StageCache:
    """Internal RK4 stage states kept for the discrete adjoint sweep."""

    h: FloatArray  # (n_steps,)
    cell: NDArray[np.int64]  # (n_steps,) control cell per step
    stage_y: FloatArray  # (n_steps, 3, m, d) stages z2, z3, z4
    stage_w: FloatArray
    stage_x: FloatArray
    stage_v: FloatArray


def canonical_atom_order(pos: FloatArray, vel: FloatArray) -> NDArray[np.int64]:
    """Lexicographic order of atoms by phase coordinates (relabel-invariant)."""
    keys = np.hstack([pos, vel])
    return np.lexsort(keys.T[::-1])


def _forces(kernel: Kernel, y, w, x, v):
    m, d = y.shape
    n = x.shape[0]
    f_lead = np.empty((m, d))
    f_foll = np.empty((n, d))
    lead_order = canonical_atom_order(y, w)
    ay = np.ascontiguousarray(y[lead_order])
    aw = np.ascontiguousarray(w[lead_order])
    if n > 0:
        foll_order = canonical_atom_order(x, v)
        ax = np.ascontiguousarray(x[foll_order])
        av = np.ascontiguousarray(v[foll_order])
    else:
        ax, av = x, v
    accel.interaction_forces(
        kernel.code, kernel.params, y, w, x, v, ay, aw, ax, av, f_lead, f_foll
    )
    return f_lead, f_foll


def rhs(t: float, c: Configuration, u_now: FloatArray, kernel: Kernel) -> Configuration:
    """Tangent (dy, dw, dx, dv) at state c under the instantaneous control."""
    u_now = np.asarray(u_now, dtype=float)
    if u_now.shape != c.leaders_y.shape:
        raise ValueError("control block must be (m, d)")
    if kernel.dimension != c.d:
        raise ValueError("kernel dimension does not match the configuration")
    f_lead, f_foll = _forces(kernel, c.leaders_y, c.leaders_w, c.followers_x, c.followers_v)
    return Configuration(c.leaders_w, f_lead + u_now, c.followers_v, f_foll)


def integrate(
    c0: Configuration,
    control: ControlSignal,
    kernel: Kernel,
    grid: TimeGrid,
    keep_stages: bool = False,
) -> Trajectory | tuple[Trajectory, StageCache]:
    """RK4 integration with the control held at its cell value on each step."""
    if control.m != c0.m or control.d != c0.d:
        raise ValueError("control shape does not match the configuration")
    if abs(control.horizon - grid.horizon) > GRID_TOL * max(1.0, grid.horizon):
        raise ValueError("control and grid horizons differ")
    if kernel.dimension != c0.d:
        raise ValueError("kernel dimension does not match the configuration")

    times = grid.instants
    n_steps = len(times) - 1
    m, d = c0.leaders_y.shape
    n = c0.n_followers

    ys = np.empty((n_steps + 1, m, d))
    ws = np.empty_like(ys)
    xs = np.empty((n_steps + 1, n, d))
    vs = np.empty_like(xs)
    ys[0], ws[0] = c0.leaders_y, c0.leaders_w
    xs[0], vs[0] = c0.followers_x, c0.followers_v

    cache = None
    if keep_stages:
        cache = StageCache(
            h=np.diff(times),
            cell=np.empty(n_steps, dtype=np.int64),
            stage_y=np.empty((n_steps, 3, m, d)),
            stage_w=np.empty((n_steps, 3, m, d)),
            stage_x=np.empty((n_steps, 3, n, d)),
            stage_v=np.empty((n_steps, 3, n, d)),
        )

    code, params = kernel.code, kernel.params
    y, w, x, v = ys[0], ws[0], xs[0], vs[0]
    for s in range(n_steps):
        h = times[s + 1] - times[s]
        mid = times[s] + 0.5 * h
        cell = control.cell_of(mid)
        u = control.cell_values[cell]
        if cache is not None:
            cache.cell[s] = cell

        def f(yy, ww, xx, vv):
            fl, ff = _forces(kernel, yy, ww, xx, vv)
            return ww, fl + u, vv, ff

        k1 = f(y, w, x, v)
        z2 = (y + 0.5 * h * k1[0], w + 0.5 * h * k1[1], x + 0.5 * h * k1[2], v + 0.5 * h * k1[3])
        k2 = f(*z2)
        z3 = (y + 0.5 * h * k2[0], w + 0.5 * h * k2[1], x + 0.5 * h * k2[2], v + 0.5 * h * k2[3])
        k3 = f(*z3)
        z4 = (y + h * k3[0], w + h * k3[1], x + h * k3[2], v + h * k3[3])
        k4 = f(*z4)
        if cache is not None:
            for slot, z in enumerate((z2, z3, z4)):
                cache.stage_y[s, slot] = z[0]
                cache.stage_w[s, slot] = z[1]
                cache.stage_x[s, slot] = z[2]
                cache.stage_v[s, slot] = z[3]
        y = y + (h / 6.0) * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0])
        w = w + (h / 6.0) * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1])
        x = x + (h / 6.0) * (k1[2] + 2.0 * k2[2] + 2.0 * k3[2] + k4[2])
        v = v + (h / 6.0) * (k1[3] + 2.0 * k2[3] + 2.0 * k3[3] + k4[3])
        if not (
            np.all(np.isfinite(y))
            and np.all(np.isfinite(w))
            and np.all(np.isfinite(x))
            and np.all(np.isfinite(v))
        ):
            raise IntegrationError(s, float(times[s + 1]))
        ys[s + 1], ws[s + 1], xs[s + 1], vs[s + 1] = y, w, x, v

    traj = Trajectory(times.copy(), ys, ws, xs, vs)
    if keep_stages:
        return traj, cache
    return traj


def cbar(growth_constant: float, control_radius: float) -> float:
    """Linear-growth constant of the assembled RHS in the configuration norm.

    From |H * mu(xi)| <= C (1 + |xi| + first moment) applied to both
    sub-populations plus the velocity pass-through and the control bound:
        ||g(t, zeta)|| <= (4C + U) + (2 + 8C) ||zeta||,
    so C_bar = max(4C + U, 2 + 8C), independent of N.
    """
    c = growth_constant
    return max(4.0 * c + control_radius, 2.0 + 8.0 * c)


def envelopes(
    c0: Configuration, kernel: Kernel, control_radius: float, horizon: float
) -> tuple[float, float]:
    """Growth and time-Lipschitz envelopes of trajectories from c0.

    growth_bound    B = (||zeta0|| + C_bar T) e^{C_bar T}
    lipschitz_bound L = C_bar (1 + B)
    """
    cb = cbar(kernel.growth_constant, control_radius)
    norm0 = config_norm(c0)
    growth = (norm0 + cb * horizon) * math.exp(cb * horizon)
    return growth, cb * (1.0 + growth)
