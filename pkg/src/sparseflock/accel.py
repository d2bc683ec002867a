"""Numba-compiled pairwise interaction loops.

All convolution sums run in canonical atom-index order with Neumaier
compensated summation, so results are bitwise identical no matter how many
worker threads numba uses: parallel loops only partition independent output
entries, never a reduction.
"""

from __future__ import annotations

import os

# Allow --threads above the physical core count (the determinism contract is
# exercised by varying the partitioning, not by actual speedup).  Must be set
# before numba is first imported.
os.environ.setdefault("NUMBA_NUM_THREADS", str(max(4, os.cpu_count() or 1)))
os.environ.setdefault("NUMBA_THREADING_LAYER", "workqueue")

import numpy as np
from numba import njit, prange

# kernel family codes, mirrored by kernels.Kernel
ZERO = 0
CUCKER_SMALE = 1
REPULSION_ATTRACTION = 2
CUSTOM_TABLE = 3


@njit(cache=True, inline="always")
def _pair_scalars(code, params, rho):
    """(alpha, phi) such that H(dx, dv) = alpha*dv + phi*dx at rho = |dx|^2."""
    if code == CUCKER_SMALE:
        k = params[0]
        sig2 = params[1]
        beta = params[2]
        s = params[3]
        if beta == 0.0:
            return s * k, 0.0
        if beta == 0.5:
            return s * k / np.sqrt(sig2 + rho), 0.0
        return s * k * (sig2 + rho) ** (-beta), 0.0
    if code == REPULSION_ATTRACTION:
        sr = params[0]
        sa = params[1]
        eps = params[2]
        r = np.sqrt(rho)
        if r < eps:
            r = eps
        return 0.0, sr / r**4 - sa / r**0.4
    if code == CUSTOM_TABLE:
        eps = params[0]
        n = int(params[1])
        r = np.sqrt(rho)
        if r < eps:
            r = eps
        if r <= params[2]:
            return 0.0, params[2 + n]
        if r >= params[1 + n]:
            return 0.0, params[1 + 2 * n]
        lo = 0
        hi = n - 1
        while hi - lo > 1:
            mid = (lo + hi) // 2
            if params[2 + mid] <= r:
                lo = mid
            else:
                hi = mid
        r0 = params[2 + lo]
        r1 = params[2 + hi]
        f0 = params[2 + n + lo]
        f1 = params[2 + n + hi]
        t = (r - r0) / (r1 - r0)
        return 0.0, f0 + t * (f1 - f0)
    return 0.0, 0.0


@njit(cache=True, inline="always")
def _pair_scalars_d(code, params, rho):
    """(alpha, phi, d alpha/d rho, d phi/d rho); derivatives a.e. in rho."""
    if code == CUCKER_SMALE:
        k = params[0]
        sig2 = params[1]
        beta = params[2]
        s = params[3]
        if beta == 0.0:
            return s * k, 0.0, 0.0, 0.0
        base = sig2 + rho
        if beta == 0.5:
            a = s * k / np.sqrt(base)
        else:
            a = s * k * base ** (-beta)
        return a, 0.0, -beta * a / base, 0.0
    if code == REPULSION_ATTRACTION:
        sr = params[0]
        sa = params[1]
        eps = params[2]
        r = np.sqrt(rho)
        if r <= eps:
            f = sr / eps**4 - sa / eps**0.4
            return 0.0, f, 0.0, 0.0
        f = sr / r**4 - sa / r**0.4
        fprime = -4.0 * sr / r**5 + 0.4 * sa / r**1.4
        return 0.0, f, 0.0, fprime / (2.0 * r)
    if code == CUSTOM_TABLE:
        eps = params[0]
        n = int(params[1])
        r = np.sqrt(rho)
        if r <= eps:
            alpha, phi = _pair_scalars(code, params, rho)
            return alpha, phi, 0.0, 0.0
        if r <= params[2] or r >= params[1 + n]:
            alpha, phi = _pair_scalars(code, params, rho)
            return alpha, phi, 0.0, 0.0
        lo = 0
        hi = n - 1
        while hi - lo > 1:
            mid = (lo + hi) // 2
            if params[2 + mid] <= r:
                lo = mid
            else:
                hi = mid
        r0 = params[2 + lo]
        r1 = params[2 + hi]
        f0 = params[2 + n + lo]
        f1 = params[2 + n + hi]
        slope = (f1 - f0) / (r1 - r0)
        phi = f0 + (r - r0) * slope
        return 0.0, phi, 0.0, slope / (2.0 * r)
    return 0.0, 0.0, 0.0, 0.0


@njit(cache=True, inline="always")
def _conv_at(code, params, qp, qv, apos, avel, wconst, res):
    """res <- sum_j wconst * H(qp - apos[j], qv - avel[j]), Neumaier-compensated."""
    na = apos.shape[0]
    d = qp.shape[0]
    for c in range(d):
        res[c] = 0.0
    comp = np.zeros(d)
    for j in range(na):
        rho = 0.0
        for c in range(d):
            dxc = qp[c] - apos[j, c]
            rho += dxc * dxc
        alpha, phi = _pair_scalars(code, params, rho)
        for c in range(d):
            val = wconst * (alpha * (qv[c] - avel[j, c]) + phi * (qp[c] - apos[j, c]))
            t = res[c] + val
            if abs(res[c]) >= abs(val):
                comp[c] += (res[c] - t) + val
            else:
                comp[c] += (val - t) + res[c]
            res[c] = t
    for c in range(d):
        res[c] = res[c] + comp[c]


@njit(cache=True, parallel=True)
def convolve_points(code, params, qpos, qvel, apos, avel, weights, out):
    """out[i] <- sum_j weights[j] * H(qpos[i]-apos[j], qvel[i]-avel[j])."""
    nq, d = qpos.shape
    na = apos.shape[0]
    for i in prange(nq):
        acc = np.zeros(d)
        comp = np.zeros(d)
        for j in range(na):
            rho = 0.0
            for c in range(d):
                dxc = qpos[i, c] - apos[j, c]
                rho += dxc * dxc
            alpha, phi = _pair_scalars(code, params, rho)
            wj = weights[j]
            for c in range(d):
                val = wj * (alpha * (qvel[i, c] - avel[j, c]) + phi * (qpos[i, c] - apos[j, c]))
                t = acc[c] + val
                if abs(acc[c]) >= abs(val):
                    comp[c] += (acc[c] - t) + val
                else:
                    comp[c] += (val - t) + acc[c]
                acc[c] = t
        for c in range(d):
            out[i, c] = acc[c] + comp[c]


@njit(cache=True, parallel=True)
def interaction_forces(code, params, y, w, x, v, ay, aw, ax, av, f_lead, f_foll):
    """Convolution forces of the coupled leader-follower system.

    f_lead[k] = H*mu_N(y_k,w_k) + H*mu_m(y_k,w_k)   (control added by caller)
    f_foll[i] = H*mu_N(x_i,v_i) + H*mu_m(x_i,v_i)

    (y, w, x, v) are the query states in caller order; (ay, aw) and (ax, av)
    hold the same atoms in canonical (value-sorted) order, which makes the
    sums invariant to relabeling.  The two convolutions are separate
    compensated sums, added at the end, so each one is bitwise equal to
    convolve_points on the same atoms.
    """
    m, d = y.shape
    n = x.shape[0]
    wn = 1.0 / n if n > 0 else 0.0
    wm = 1.0 / m
    for k in prange(m):
        from_foll = np.zeros(d)
        from_lead = np.zeros(d)
        if n > 0:
            _conv_at(code, params, y[k], w[k], ax, av, wn, from_foll)
        _conv_at(code, params, y[k], w[k], ay, aw, wm, from_lead)
        for c in range(d):
            f_lead[k, c] = from_foll[c] + from_lead[c]
    for i in prange(n):
        from_foll = np.zeros(d)
        from_lead = np.zeros(d)
        _conv_at(code, params, x[i], v[i], ax, av, wn, from_foll)
        _conv_at(code, params, x[i], v[i], ay, aw, wm, from_lead)
        for c in range(d):
            f_foll[i, c] = from_foll[c] + from_lead[c]


@njit(cache=True, inline="always")
def _vjp_query_side(code, params, qp, qv, apos, avel, wconst, nu, out_p, out_v):
    """Accumulate d(conv at query)^T nu with respect to the query point."""
    na = apos.shape[0]
    d = qp.shape[0]
    for j in range(na):
        rho = 0.0
        for c in range(d):
            dxc = qp[c] - apos[j, c]
            rho += dxc * dxc
        alpha, phi, da, dp = _pair_scalars_d(code, params, rho)
        dvdot = 0.0
        dxdot = 0.0
        for c in range(d):
            dvdot += (qv[c] - avel[j, c]) * nu[c]
            dxdot += (qp[c] - apos[j, c]) * nu[c]
        g = da * dvdot + dp * dxdot
        for c in range(d):
            out_p[c] += wconst * (2.0 * g * (qp[c] - apos[j, c]) + phi * nu[c])
            out_v[c] += wconst * alpha * nu[c]


@njit(cache=True, inline="always")
def _vjp_atom_side(code, params, qpos, qvel, ap, av, wconst, nus, out_p, out_v):
    """Accumulate d(conv at all queries)^T nus with respect to one atom."""
    nq = qpos.shape[0]
    d = ap.shape[0]
    for i in range(nq):
        rho = 0.0
        for c in range(d):
            dxc = qpos[i, c] - ap[c]
            rho += dxc * dxc
        alpha, phi, da, dp = _pair_scalars_d(code, params, rho)
        dvdot = 0.0
        dxdot = 0.0
        for c in range(d):
            dvdot += (qvel[i, c] - av[c]) * nus[i, c]
            dxdot += (qpos[i, c] - ap[c]) * nus[i, c]
        g = da * dvdot + dp * dxdot
        for c in range(d):
            out_p[c] -= wconst * (2.0 * g * (qpos[i, c] - ap[c]) + phi * nus[i, c])
            out_v[c] -= wconst * alpha * nus[i, c]


@njit(cache=True, parallel=True)
def interaction_vjp(code, params, y, w, x, v, nu_w, nu_v, ly, lw, lx, lv):
    """Vector-Jacobian product of interaction_forces.

    Given cotangents nu_w (against f_lead) and nu_v (against f_foll), fills
    ly, lw, lx, lv with the pullback onto (y, w, x, v).  Each output entry is
    accumulated by exactly one parallel iteration (race-free, deterministic).
    """
    m, d = y.shape
    n = x.shape[0]
    wn = 1.0 / n if n > 0 else 0.0
    wm = 1.0 / m
    for k in prange(m):
        op = np.zeros(d)
        ov = np.zeros(d)
        if n > 0:
            _vjp_query_side(code, params, y[k], w[k], x, v, wn, nu_w[k], op, ov)
        _vjp_query_side(code, params, y[k], w[k], y, w, wm, nu_w[k], op, ov)
        _vjp_atom_side(code, params, y, w, y[k], w[k], wm, nu_w, op, ov)
        if n > 0:
            _vjp_atom_side(code, params, x, v, y[k], w[k], wm, nu_v, op, ov)
        for c in range(d):
            ly[k, c] = op[c]
            lw[k, c] = ov[c]
    for i in prange(n):
        op = np.zeros(d)
        ov = np.zeros(d)
        _vjp_query_side(code, params, x[i], v[i], x, v, wn, nu_v[i], op, ov)
        _vjp_query_side(code, params, x[i], v[i], y, w, wm, nu_v[i], op, ov)
        _vjp_atom_side(code, params, x, v, x[i], v[i], wn, nu_v, op, ov)
        _vjp_atom_side(code, params, y, w, x[i], v[i], wn, nu_w, op, ov)
        for c in range(d):
            lx[i, c] = op[c]
            lv[i, c] = ov[c]
