"""Trapping potentials from intensity volumes, and their depth, curvature and forces."""

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import NamedTuple

import numpy as np
from scipy import ndimage

from . import _spline
from .constants import (
    C_LIGHT, EPS0, K_B, M_RB87, POLARIZABILITY_820, WAVELENGTH, ponderomotive_coefficient,
)
from .grids import Grid3D

RYDBERG = "rydberg_ponderomotive"
GROUND = "ground_dipole"


class NotATrapError(ValueError):
    """The potential has no strict local minimum where one was required."""


class OutOfGridError(IndexError):
    pass


@dataclass
class TrapPotential(Grid3D):
    """Potential energy grid in joules, zero at zero field."""

    species: str = RYDBERG
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        super().__post_init__()
        if self.species == RYDBERG and np.any(self.values < 0):
            raise ValueError("ponderomotive potential must be non-negative")
        if self.species == GROUND and np.any(self.values > 0):
            raise ValueError("red-detuned dipole potential must be non-positive")
        if self.species not in (RYDBERG, GROUND):
            raise ValueError(f"unknown species {self.species!r}")

    @cached_property
    def spline(self):
        return _spline.spline_coefficients(self.values)

    def _eval(self, positions):
        p = np.ascontiguousarray(np.atleast_2d(np.asarray(positions, dtype=float)))
        return _spline.evaluate(self.spline, np.array(self.shape, dtype=np.int64),
                                np.array(self.origin), np.array(self.spacing), p)

    def energy_at(self, positions, outside=0.0):
        """Interpolated potential at (N, 3) positions; ``outside`` beyond the grid."""
        val, _, inside = self._eval(positions)
        return np.where(inside, val, outside)

    def scaled(self, factor):
        if factor < 0:
            raise ValueError("scale factor must be non-negative")
        return TrapPotential(self.values * factor, self.spacing, self.origin,
                             species=self.species, meta=dict(self.meta))

    def shifted(self, offset):
        """Same potential translated by ``offset`` (m)."""
        origin = tuple(np.asarray(self.origin) + np.asarray(offset, dtype=float))
        pot = TrapPotential(self.values, self.spacing, origin, species=self.species,
                            meta=dict(self.meta))
        pot.__dict__["spline"] = self.spline
        return pot


def ponderomotive_potential(volume, wavelength=None):
    """Quasi-free electron energy e^2 I / (2 eps0 c m_e omega^2), pointwise."""
    lam = volume.wavelength if wavelength is None else wavelength
    if lam <= 0:
        raise ValueError("wavelength must be positive")
    return TrapPotential(ponderomotive_coefficient(lam) * volume.values, volume.spacing,
                         volume.origin, species=RYDBERG,
                         meta={"wavelength": lam, "power": volume.total_power})


def dipole_potential(volume, polarizability=POLARIZABILITY_820):
    """Red-detuned dipole potential -alpha I / (2 eps0 c)."""
    if polarizability <= 0:
        raise ValueError("polarizability must be positive (red detuning)")
    return TrapPotential(-polarizability / (2 * EPS0 * C_LIGHT) * volume.values,
                         volume.spacing, volume.origin, species=GROUND,
                         meta={"polarizability": polarizability, "power": volume.total_power})


class TrapDepth(NamedTuple):
    depth: float
    open: bool
    center_index: tuple
    barrier: float


_NEIGHBOURS = [(a, b, c) for a in (-1, 0, 1) for b in (-1, 0, 1) for c in (-1, 0, 1)
               if (a, b, c) != (0, 0, 0)]


def _neighbour_values(u, idx):
    out = []
    for d in _NEIGHBOURS:
        j = tuple(i + di for i, di in zip(idx, d))
        if all(0 <= jj < n for jj, n in zip(j, u.shape)):
            out.append((u[j], j))
    return out


def _on_boundary(idx, shape):
    return any(i == 0 or i == n - 1 for i, n in zip(idx, shape))


def descend_to_minimum(u, start):
    """Steepest descent over the 26-neighbourhood; stops at a local minimum or the boundary."""
    idx = tuple(start)
    while not _on_boundary(idx, u.shape):
        val, nxt = min(_neighbour_values(u, idx), key=lambda t: t[0])
        if val >= u[idx]:
            return idx
        idx = nxt
    return idx


def _escape_level(u, center):
    """Lowest level L such that {u <= L} connects ``center`` to the grid boundary."""
    levels = np.unique(u[u >= u[center]])
    border = np.zeros(u.shape, dtype=bool)
    border[[0, -1], :, :] = border[:, [0, -1], :] = border[:, :, [0, -1]] = True

    def escapes(level):
        lab, _ = ndimage.label(u <= level)
        return np.any(lab[border] == lab[center])

    lo, hi = 0, len(levels) - 1
    while lo < hi:
        mid = (lo + hi) // 2
        if escapes(levels[mid]):
            hi = mid
        else:
            lo = mid + 1
    return float(levels[lo])


def trap_depth(pot, center=None):
    """Depth of the trap at ``center`` (m); the grid minimum nearest the middle if None.

    Ponderomotive traps: lowest barrier on any escape path to the grid
    boundary minus the value at the minimum (watershed).  A repulsive hill
    or a basin reaching the boundary is reported as open with depth 0.
    Dipole traps: |U(center)|.
    """
    u = pot.values
    if pot.species == GROUND:
        idx = np.unravel_index(np.argmin(u), u.shape) if center is None else pot.nearest_index(center)
        idx = tuple(int(i) for i in idx)
        if center is not None and any(v < u[idx] for v, _ in _neighbour_values(u, idx)):
            raise NotATrapError("center is not a maximum of |U|")
        return TrapDepth(abs(float(u[idx])), False, idx, 0.0)

    start = pot.center_index() if center is None else pot.nearest_index(center)
    nbrs = [v for v, _ in _neighbour_values(u, start)]
    if center is not None and not (all(v >= u[start] for v in nbrs) or all(v < u[start] for v in nbrs)):
        raise NotATrapError("center is not a local extremum of the potential")
    idx = descend_to_minimum(u, start)
    if _on_boundary(idx, u.shape):
        return TrapDepth(0.0, True, idx, float(u[idx]))
    barrier = _escape_level(u, idx)
    depth = barrier - float(u[idx])
    return TrapDepth(depth, depth <= 0, idx, barrier)


@dataclass
class QuadraticFit:
    center: np.ndarray
    hessian: np.ndarray
    gradient: np.ndarray
    value: float


def local_quadratic_fit(pot, center=None, window=5):
    """Least-squares quadratic through the window^3 samples around the minimum."""
    u = pot.values
    if center is None:
        idx = descend_to_minimum(u, pot.center_index())
    else:
        idx = pot.nearest_index(center)
    h = window // 2
    if any(i - h < 0 or i + h >= n for i, n in zip(idx, u.shape)):
        raise NotATrapError("minimum too close to the grid boundary for the fit window")
    sl = tuple(slice(i - h, i + h + 1) for i in idx)
    off = np.arange(-h, h + 1)
    gx, gy, gz = np.meshgrid(off * pot.spacing[0], off * pot.spacing[1], off * pot.spacing[2],
                             indexing="ij")
    x, y, z = gx.ravel(), gy.ravel(), gz.ravel()
    design = np.stack([np.ones_like(x), x, y, z, x * x, y * y, z * z, x * y, x * z, y * z], axis=1)
    # scale columns for conditioning
    norm = np.abs(design).max(axis=0)
    coef, *_ = np.linalg.lstsq(design / norm, u[sl].ravel(), rcond=None)
    coef = coef / norm
    c0, bx, by, bz, axx, ayy, azz, axy, axz, ayz = coef
    hess = np.array([[2 * axx, axy, axz], [axy, 2 * ayy, ayz], [axz, ayz, 2 * azz]])
    grad = np.array([bx, by, bz])
    node = pot.position_of(idx)
    try:
        shift = -np.linalg.solve(hess, grad)
    except np.linalg.LinAlgError:
        shift = np.zeros(3)
    if np.any(np.abs(shift) > h * np.asarray(pot.spacing)):
        shift = np.zeros(3)
    value = c0 + grad @ shift + 0.5 * shift @ hess @ shift
    return QuadraticFit(node + shift, hess, grad, float(value))


def harmonic_frequencies(pot, center=None, mass=M_RB87, window=5):
    """Trap frequencies (Hz) along the principal axes nearest to x, y, z."""
    fit = local_quadratic_fit(pot, center, window)
    evals, evecs = np.linalg.eigh(fit.hessian)
    if np.any(evals <= 0):
        raise NotATrapError(f"Hessian has non-positive eigenvalues {evals}")
    nu = np.sqrt(evals / mass) / (2 * math.pi)
    out = np.empty(3)
    free = list(range(3))
    for axis in np.argsort(-np.max(np.abs(evecs), axis=1)):
        j = max(free, key=lambda col: abs(evecs[axis, col]))
        out[axis] = nu[j]
        free.remove(j)
    return out


def force_at(pot, position):
    """-grad U (N) of the C2 spline interpolant at one position."""
    _, grad, inside = pot._eval(position)
    if not inside[0]:
        raise OutOfGridError(f"position {np.asarray(position)} is outside the potential grid")
    return -grad[0]


def forces_at(pot, positions):
    _, grad, inside = pot._eval(positions)
    return -grad, inside


@dataclass
class TrapCharacterization:
    center: np.ndarray
    depth: float
    frequencies: np.ndarray
    open: bool = False

    @property
    def depth_uK(self):
        return self.depth / K_B * 1e6


def characterize(pot, mass=M_RB87):
    d = trap_depth(pot)
    fit = local_quadratic_fit(pot)
    nu = harmonic_frequencies(pot, mass=mass)
    return TrapCharacterization(fit.center, d.depth, nu, d.open)


@dataclass(frozen=True)
class GaussianTweezer:
    """Analytic red-detuned Gaussian-beam dipole trap (beam along z)."""

    depth: float
    waist: float
    wavelength: float = WAVELENGTH
    center: tuple = (0.0, 0.0, 0.0)

    @property
    def rayleigh_range(self):
        return math.pi * self.waist**2 / self.wavelength

    def energy_at(self, positions):
        p = np.atleast_2d(np.asarray(positions, dtype=float)) - np.asarray(self.center)
        q = 1 + (p[:, 2] / self.rayleigh_range) ** 2
        r2 = p[:, 0] ** 2 + p[:, 1] ** 2
        return -self.depth / q * np.exp(-2 * r2 / (self.waist**2 * q))

    def frequencies(self, mass=M_RB87):
        wr = math.sqrt(4 * self.depth / (mass * self.waist**2))
        wz = math.sqrt(2 * self.depth / (mass * self.rayleigh_range**2))
        return np.array([wr, wr, wz]) / (2 * math.pi)


def harmonic_surrogate(frequencies, depth, window, mass=M_RB87, species=RYDBERG):
    """Quadratic well with the given frequencies, flattened at ``depth`` (J).

    ``window`` is an ``optics.FocalWindow``-like object providing ``axes()``.
    Useful as an exactly harmonic stand-in for a bottle beam.
    """
    xs, ys, zs = window.axes()
    w2 = (2 * math.pi * np.asarray(frequencies, dtype=float)) ** 2
    gx, gy, gz = np.meshgrid(xs, ys, zs, indexing="ij")
    u = 0.5 * mass * (w2[0] * gx**2 + w2[1] * gy**2 + w2[2] * gz**2)
    u = np.minimum(u, depth)
    origin = (xs[0], ys[0], zs[0])
    spacing = (xs[1] - xs[0], ys[1] - ys[0], zs[1] - zs[0])
    return TrapPotential(u, spacing, origin, species=species)
