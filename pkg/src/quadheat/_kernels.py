"""Compiled inner loops: RK4 in the phase plane and the IMEX step.

Potentials are passed as ``(kind, param, table_x, table_v, limit)`` so the
loops never call back into Python.
"""

from __future__ import annotations

import numba
import numpy as np

# integrate_phase status codes
GLOBAL = 0
NONGLOBAL = 1


@numba.njit(cache=True)
def phi_eval(kind, param, tx, tv, limit, x):
    if kind == 0:
        return (x * x - param) * np.exp(-0.5 * x * x)
    if kind == 1:
        return param * np.exp(-0.5 * x * x)
    if kind == 2:
        return param
    n = tx.shape[0]
    if x <= tx[0] or x >= tx[n - 1]:
        return limit
    dx = (tx[n - 1] - tx[0]) / (n - 1)
    j = int((x - tx[0]) / dx)
    if j > n - 2:
        j = n - 2
    w = (x - tx[j]) / dx
    return (1.0 - w) * tv[j] + w * tv[j + 1]


@numba.njit(cache=True)
def _rk4(f, fp, x, s, kind, param, tx, tv, limit):
    k1f = fp
    k1p = f * f - phi_eval(kind, param, tx, tv, limit, x)
    pm = phi_eval(kind, param, tx, tv, limit, x + 0.5 * s)
    f2 = f + 0.5 * s * k1f
    p2 = fp + 0.5 * s * k1p
    k2f = p2
    k2p = f2 * f2 - pm
    f3 = f + 0.5 * s * k2f
    p3 = fp + 0.5 * s * k2p
    k3f = p3
    k3p = f3 * f3 - pm
    f4 = f + s * k3f
    p4 = fp + s * k3p
    k4f = p4
    k4p = f4 * f4 - phi_eval(kind, param, tx, tv, limit, x + s)
    return (f + s / 6.0 * (k1f + 2.0 * k2f + 2.0 * k3f + k4f),
            fp + s / 6.0 * (k1p + 2.0 * k2p + 2.0 * k3p + k4p))


@numba.njit(cache=True)
def integrate(f, fp, x0, x1, step, kind, param, tx, tv, limit, guard):
    """RK4 for f'' = f^2 - phi from x0 to x1 (either direction).

    The nominal step is shortened so it divides the interval, and halved
    while |f| > 10.  Returns (f, fp, x, status).
    """
    span = x1 - x0
    if span == 0.0:
        return f, fp, x0, GLOBAL
    sgn = 1.0 if span > 0 else -1.0
    n = int(np.ceil(abs(span) / step - 1e-9))
    if n < 1:
        n = 1
    s = span / n
    x = x0
    for i in range(n):
        if abs(f) > 10.0:
            # four half-steps replacing one
            for _ in range(2):
                f, fp = _rk4(f, fp, x, 0.5 * s, kind, param, tx, tv, limit)
                x += 0.5 * s
                if not abs(f) < guard:
                    return f, fp, x, NONGLOBAL
        else:
            f, fp = _rk4(f, fp, x, s, kind, param, tx, tv, limit)
            x = x0 + (i + 1) * s
            if not abs(f) < guard:
                return f, fp, x, NONGLOBAL
    return f, fp, x1, GLOBAL


@numba.njit(cache=True)
def integrate_many(fs, fps, x0, x1, step, kind, param, tx, tv, limit, guard):
    m = fs.shape[0]
    out = np.empty((m, 3))
    for i in range(m):
        f, fp, x, st = integrate(fs[i], fps[i], x0, x1, step, kind, param, tx, tv, limit, guard)
        out[i, 0] = f
        out[i, 1] = fp
        out[i, 2] = st
    return out


@numba.njit(cache=True)
def integrate_path(f, fp, xs, sub, kind, param, tx, tv, limit, guard):
    """Sample the orbit at the nodes ``xs`` (monotone), ``sub`` RK4 steps between nodes."""
    m = xs.shape[0]
    out = np.full((m, 2), np.nan)
    out[0, 0] = f
    out[0, 1] = fp
    for j in range(m - 1):
        s = (xs[j + 1] - xs[j]) / sub
        x = xs[j]
        for i in range(sub):
            f, fp = _rk4(f, fp, x, s, kind, param, tx, tv, limit)
            x = xs[j] + (i + 1) * s
        if not abs(f) < guard:
            return out
        out[j + 1, 0] = f
        out[j + 1, 1] = fp
    return out


@numba.njit(cache=True)
def filter_coefficient(dx, h):
    """Pole of the lattice Green's function of I - h D2; tends to exp(-dx/sqrt(h))."""
    q = dx * dx / h
    return 1.0 + 0.5 * q - np.sqrt(q + 0.25 * q * q)


@numba.njit(cache=True)
def resolvent_inplace(v, u, C, r, gl, gr):
    """u = (I - h D2)^{-1} v with Dirichlet far-field values gl, gr beyond the ends.

    Causal and anticausal first-order passes give the infinite-lattice
    convolution with the kernel k r^|i-j|; two decaying homogeneous modes
    then correct the values one node outside the grid to gl and gr.
    """
    n = v.shape[0]
    k = (1.0 - r) / (1.0 + r)
    C[0] = v[0]
    for i in range(1, n):
        C[i] = r * C[i - 1] + v[i]
    a = v[n - 1]
    pr = k * r * C[n - 1]
    u[n - 1] = k * C[n - 1]
    for i in range(n - 2, -1, -1):
        a = r * a + v[i]
        u[i] = k * (C[i] + a - v[i])
    pl = k * r * a
    # amplitudes of r^(i+1) and r^(n-i) so that both ghost values are met
    rho = r ** (n + 1)
    det = 1.0 - rho * rho
    el = gl - pl
    er = gr - pr
    wl = (el - rho * er) / det * r
    wr = (er - rho * el) / det * r
    for i in range(n):
        u[i] += wl
        wl *= r
        if wl == 0.0:
            break
    for i in range(n - 1, -1, -1):
        u[i] += wr
        wr *= r
        if wr == 0.0:
            break


@numba.njit(cache=True)
def imex_advance(u, coef, h, r, gl, gr, nsteps, threshold):
    """Advance ``u`` in place by up to ``nsteps`` IMEX steps.

    ``coef`` holds the reaction coefficients a_i(x), shape (N+1, n), with
    G(u) = sum_i a_i u^i.  Returns the number of completed steps and a flag
    that is 1 when the step that would follow exceeded ``threshold`` (or went
    non-finite); in that case ``u`` holds the offending state.
    """
    n = u.shape[0]
    deg = coef.shape[0]
    v = np.empty(n)
    C = np.empty(n)
    for s in range(nsteps):
        for i in range(n):
            g = coef[deg - 1, i]
            for p in range(deg - 2, -1, -1):
                g = g * u[i] + coef[p, i]
            v[i] = u[i] + h * g
        resolvent_inplace(v, u, C, r, gl, gr)
        for i in range(n):
            if not abs(u[i]) <= threshold:
                return s + 1, 1
    return nsteps, 0
