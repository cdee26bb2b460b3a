"""Compiled kernels: cubic B-spline interpolation of a 3D grid and Verlet stepping.

The interpolant is C2, so the force -grad(U) is continuous everywhere and
is an exact gradient field.  Before prefiltering, the grid is extended by
``PAD`` ghost layers of odd reflection (2 f(edge) - f(mirror)), which keeps
linear trends across the edge; plain mirroring puts a slope kink there and
spoils the interpolant several cells inwards.
"""

import numpy as np
from numba import njit
from scipy import ndimage

PAD = 6


def spline_coefficients(values):
    ext = np.pad(np.asarray(values, dtype=float), PAD, mode="reflect", reflect_type="odd")
    return np.ascontiguousarray(ndimage.spline_filter(ext, order=3, mode="mirror"))


@njit(cache=True, inline="always")
def _basis(t, w, dw):
    t2 = t * t
    t3 = t2 * t
    s = 1.0 - t
    w[0] = s * s * s / 6.0
    w[1] = (3.0 * t3 - 6.0 * t2 + 4.0) / 6.0
    w[2] = (-3.0 * t3 + 3.0 * t2 + 3.0 * t + 1.0) / 6.0
    w[3] = t3 / 6.0
    dw[0] = -0.5 * s * s
    dw[1] = 1.5 * t2 - 2.0 * t
    dw[2] = -1.5 * t2 + t + 0.5
    dw[3] = 0.5 * t2


@njit(cache=True)
def _eval_point(c, n0, n1, n2, f0, f1, f2, wx, wy, wz, dx, dy, dz):
    """Value and index-space gradient at fractional index (f0, f1, f2).

    Returns inside=False (and zeros) when the point is outside [0, n-1]^3.
    """
    if not (0.0 <= f0 <= n0 - 1 and 0.0 <= f1 <= n1 - 1 and 0.0 <= f2 <= n2 - 1):
        return False, 0.0, 0.0, 0.0, 0.0
    i0 = min(int(f0), n0 - 2)
    i1 = min(int(f1), n1 - 2)
    i2 = min(int(f2), n2 - 2)
    _basis(f0 - i0, wx, dx)
    _basis(f1 - i1, wy, dy)
    _basis(f2 - i2, wz, dz)
    v = 0.0
    g0 = 0.0
    g1 = 0.0
    g2 = 0.0
    for a in range(4):
        for b in range(4):
            # sums over the third axis first
            s = 0.0
            sd = 0.0
            for cc in range(4):
                coef = c[i0 + a - 1 + PAD, i1 + b - 1 + PAD, i2 + cc - 1 + PAD]
                s += coef * wz[cc]
                sd += coef * dz[cc]
            v += wx[a] * wy[b] * s
            g0 += dx[a] * wy[b] * s
            g1 += wx[a] * dy[b] * s
            g2 += wx[a] * wy[b] * sd
    return True, v, g0, g1, g2


@njit(cache=True)
def evaluate(c, shape, origin, spacing, pos):
    """Values, gradients (physical units) and inside flags for points (N, 3)."""
    n = pos.shape[0]
    val = np.zeros(n)
    grad = np.zeros((n, 3))
    inside = np.zeros(n, dtype=np.bool_)
    wx = np.empty(4)
    wy = np.empty(4)
    wz = np.empty(4)
    dx = np.empty(4)
    dy = np.empty(4)
    dz = np.empty(4)
    for k in range(n):
        f0 = (pos[k, 0] - origin[0]) / spacing[0]
        f1 = (pos[k, 1] - origin[1]) / spacing[1]
        f2 = (pos[k, 2] - origin[2]) / spacing[2]
        ok, v, g0, g1, g2 = _eval_point(c, shape[0], shape[1], shape[2], f0, f1, f2,
                                        wx, wy, wz, dx, dy, dz)
        inside[k] = ok
        val[k] = v
        grad[k, 0] = g0 / spacing[0]
        grad[k, 1] = g1 / spacing[1]
        grad[k, 2] = g2 / spacing[2]
    return val, grad, inside


@njit(cache=True)
def verlet(c, shape, origin, spacing, pos, vel, inv_mass, dt, nsteps, alive, record_every):
    """Velocity-Verlet for every alive atom, in place.

    Atoms that step outside the grid are marked dead and frozen at the
    first outside position.  When ``record_every`` > 0 the positions and
    velocities of atom 0 are stored every ``record_every`` steps.
    """
    n = pos.shape[0]
    nrec = nsteps // record_every + 1 if record_every > 0 else 0
    rec = np.zeros((nrec, 6))
    wx = np.empty(4)
    wy = np.empty(4)
    wz = np.empty(4)
    dx = np.empty(4)
    dy = np.empty(4)
    dz = np.empty(4)
    half = 0.5 * dt * inv_mass
    for k in range(n):
        if not alive[k]:
            continue
        x0 = pos[k, 0]
        x1 = pos[k, 1]
        x2 = pos[k, 2]
        v0 = vel[k, 0]
        v1 = vel[k, 1]
        v2 = vel[k, 2]
        ok, u, g0, g1, g2 = _eval_point(c, shape[0], shape[1], shape[2],
                                        (x0 - origin[0]) / spacing[0],
                                        (x1 - origin[1]) / spacing[1],
                                        (x2 - origin[2]) / spacing[2],
                                        wx, wy, wz, dx, dy, dz)
        if not ok:
            alive[k] = False
            continue
        a0 = -g0 / spacing[0]
        a1 = -g1 / spacing[1]
        a2 = -g2 / spacing[2]
        if record_every > 0 and k == 0:
            rec[0, 0] = x0
            rec[0, 1] = x1
            rec[0, 2] = x2
            rec[0, 3] = v0
            rec[0, 4] = v1
            rec[0, 5] = v2
        for s in range(nsteps):
            v0 += half * a0
            v1 += half * a1
            v2 += half * a2
            x0 += dt * v0
            x1 += dt * v1
            x2 += dt * v2
            ok, u, g0, g1, g2 = _eval_point(c, shape[0], shape[1], shape[2],
                                            (x0 - origin[0]) / spacing[0],
                                            (x1 - origin[1]) / spacing[1],
                                            (x2 - origin[2]) / spacing[2],
                                            wx, wy, wz, dx, dy, dz)
            if not ok:
                alive[k] = False
                break
            a0 = -g0 / spacing[0]
            a1 = -g1 / spacing[1]
            a2 = -g2 / spacing[2]
            v0 += half * a0
            v1 += half * a1
            v2 += half * a2
            if record_every > 0 and k == 0 and (s + 1) % record_every == 0:
                r = (s + 1) // record_every
                rec[r, 0] = x0
                rec[r, 1] = x1
                rec[r, 2] = x2
                rec[r, 3] = v0
                rec[r, 4] = v1
                rec[r, 5] = v2
        pos[k, 0] = x0
        pos[k, 1] = x1
        pos[k, 2] = x2
        vel[k, 0] = v0
        vel[k, 1] = v1
        vel[k, 2] = v2
    return rec
