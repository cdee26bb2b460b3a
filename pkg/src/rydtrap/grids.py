"""Sampled fields and volumes shared by the optics and potential code.

Coordinates: x and y are transverse, z is the optical axis (the focusing
beam propagates towards +z).  Every 3D grid stores the position of sample
(0, 0, 0) in ``origin`` and a per-axis sample spacing.
"""

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class ComplexField:
    """Complex scalar field on a square grid centred on the optical axis.

    ``amplitude`` is in sqrt(W)/m so that sum(|E|^2) * spacing^2 is a power.
    """

    amplitude: np.ndarray
    plane_z: float
    spacing: float

    def __post_init__(self):
        a = np.asarray(self.amplitude, dtype=complex)
        if a.ndim != 2:
            raise ValueError("ComplexField amplitude must be 2D")
        if not np.all(np.isfinite(a)):
            raise ValueError("ComplexField amplitude has non-finite entries")
        object.__setattr__(self, "amplitude", a)

    @property
    def shape(self):
        return self.amplitude.shape

    @property
    def power(self):
        return float(np.sum(np.abs(self.amplitude) ** 2) * self.spacing**2)

    def coords(self):
        n = self.amplitude.shape[0]
        return (np.arange(n) - n // 2) * self.spacing

    def intensity(self):
        return np.abs(self.amplitude) ** 2


@dataclass
class Grid3D:
    values: np.ndarray
    spacing: tuple
    origin: tuple

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 3:
            raise ValueError("expected a 3D grid")
        self.spacing = tuple(float(s) for s in self.spacing)
        self.origin = tuple(float(o) for o in self.origin)
        if any(s <= 0 for s in self.spacing):
            raise ValueError("grid spacings must be positive")

    @property
    def shape(self):
        return self.values.shape

    def axes(self):
        return tuple(
            o + d * np.arange(n) for o, d, n in zip(self.origin, self.spacing, self.values.shape)
        )

    def position_of(self, index):
        return np.array([o + d * i for o, d, i in zip(self.origin, self.spacing, index)])

    def fractional_index(self, position):
        """Continuous grid coordinates of one or many positions (..., 3)."""
        p = np.asarray(position, dtype=float)
        return (p - np.asarray(self.origin)) / np.asarray(self.spacing)

    def nearest_index(self, position):
        idx = np.rint(self.fractional_index(position)).astype(int)
        if np.any(idx < 0) or np.any(idx >= np.array(self.values.shape)):
            raise IndexError(f"position {position} lies outside the grid")
        return tuple(int(i) for i in idx)

    def center_index(self):
        return tuple(n // 2 for n in self.values.shape)

    def extent(self):
        lo = np.asarray(self.origin)
        hi = lo + np.asarray(self.spacing) * (np.array(self.values.shape) - 1)
        return lo, hi


@dataclass
class IntensityVolume(Grid3D):
    """Intensity in W/m^2 sampled around the focus."""

    total_power: float = 0.0
    wavelength: float = 820e-9
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        super().__post_init__()
        if np.any(self.values < 0):
            raise ValueError("intensity must be non-negative")

    def plane_power(self, k):
        """Power crossing the k-th plane of constant z."""
        dx, dy, _ = self.spacing
        return float(self.values[:, :, k].sum() * dx * dy)

    def scaled(self, factor):
        return IntensityVolume(
            self.values * factor, self.spacing, self.origin,
            total_power=self.total_power * factor, wavelength=self.wavelength,
            meta=dict(self.meta),
        )
