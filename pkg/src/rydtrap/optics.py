"""Phase masks for the SLMs and scalar propagation of the pupil field to the focus.

The focusing lens is an ideal Fourier transformer: a pupil sample at
transverse position u maps onto the plane-wave component with transverse
wavevector k*u/f at the focus.  Two independent numerical routes give the
focal volume:

* ``propagate_to_focus``: FFT of the whole pupil to the focal plane, then
  angular-spectrum steps to the other planes (full field of view).
* ``focal_volume``: direct matrix DFT of the pupil onto an arbitrary, fine
  window around a point of interest (used for bottle beams).
"""

import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .constants import FOCAL_LENGTH, TWEEZER_WAIST, WAVELENGTH
from .grids import ComplexField, IntensityVolume

log = logging.getLogger(__name__)

TWO_PI = 2 * math.pi


class AliasingError(ValueError):
    """A requested spot or phase gradient exceeds the alias-free field of view."""


class SamplingError(ValueError):
    """The pupil grid is too coarse for the requested beam."""


def input_waist_for(focal_waist, wavelength=WAVELENGTH, focal_length=FOCAL_LENGTH):
    """Gaussian waist on the pupil that focuses to ``focal_waist``."""
    return focal_length * wavelength / (math.pi * focal_waist)


@dataclass(frozen=True)
class PupilSpec:
    grid_size: int = 1024
    physical_extent: float = 16.384e-3
    wavelength: float = WAVELENGTH
    focal_length: float = FOCAL_LENGTH
    input_waist: float = input_waist_for(TWEEZER_WAIST)

    def __post_init__(self):
        n = self.grid_size
        if n < 64 or n & (n - 1):
            raise ValueError(f"grid_size must be a power of two >= 64, got {n}")
        if self.physical_extent <= 0:
            raise ValueError("physical_extent must be positive")
        if self.wavelength <= 0 or self.focal_length <= 0 or self.input_waist <= 0:
            raise ValueError("wavelength, focal_length and input_waist must be positive")

    @property
    def spacing(self):
        return self.physical_extent / self.grid_size

    @property
    def focal_spacing(self):
        """Sample spacing of the FFT focal plane."""
        return self.wavelength * self.focal_length / self.physical_extent

    @property
    def field_of_view(self):
        """Alias-free focal field of view (full width)."""
        return self.wavelength * self.focal_length / self.spacing

    def coords(self):
        return (np.arange(self.grid_size) - self.grid_size // 2) * self.spacing

    def mesh(self):
        u = self.coords()
        return np.meshgrid(u, u, indexing="ij")

    def gradient_for_shift(self, shift):
        """Linear phase gradient (rad/m) that moves the focus by ``shift``."""
        return TWO_PI * shift / (self.wavelength * self.focal_length)

    def check_gradient(self, grad):
        if abs(grad) * self.spacing >= math.pi:
            raise AliasingError(
                f"phase gradient {grad:.3g} rad/m exceeds pi per pupil sample "
                f"({self.spacing:.3g} m)"
            )


@dataclass(frozen=True)
class PhaseMask:
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 2 or not np.all(np.isfinite(v)):
            raise ValueError("phase mask must be a finite 2D array")
        object.__setattr__(self, "values", v)

    @property
    def shape(self):
        return self.values.shape

    @classmethod
    def zeros(cls, pupil):
        return cls(np.zeros((pupil.grid_size, pupil.grid_size)))

    def __neg__(self):
        return PhaseMask(np.mod(-self.values, TWO_PI))


@dataclass(frozen=True)
class BobMaskParams:
    """pi-phase disk inside a 0-phase pupil, light outside the pupil is dumped.

    ``inner_grad`` tilts the pupil along x, ``outer_grad`` tilts the dump
    region along y, so the two are orthogonal by construction.
    """

    inner_radius: float
    outer_radius: float
    inner_grad: float = 0.0
    outer_grad: float = 0.0

    def __post_init__(self):
        if not 0 < self.inner_radius < self.outer_radius:
            raise ValueError(
                f"need 0 < inner_radius < outer_radius, got "
                f"{self.inner_radius:.4g} / {self.outer_radius:.4g}"
            )

    @property
    def ratio(self):
        return self.inner_radius / self.outer_radius

    def validate(self, pupil):
        if self.outer_radius > pupil.physical_extent / 2:
            raise ValueError("outer_radius exceeds half the pupil extent")
        pupil.check_gradient(self.inner_grad)
        pupil.check_gradient(self.outer_grad)


@dataclass(frozen=True)
class ArrayGeometry:
    rows: int = 3
    cols: int = 6
    pitch: float = 15e-6
    offsets: np.ndarray = None  # (rows*cols, 2) transverse offsets per site
    center: tuple = (0.0, 0.0)

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1:
            raise ValueError("rows and cols must be >= 1")
        if self.pitch < 0 or (self.pitch == 0 and self.rows * self.cols > 1):
            raise ValueError("pitch must be positive for more than one site")
        if self.offsets is not None:
            off = np.asarray(self.offsets, dtype=float).reshape(self.n_sites, 2)
            if self.pitch > 0 and np.max(np.abs(off)) > 0.1 * self.pitch:
                raise ValueError("site offsets must be small compared to the pitch")
            object.__setattr__(self, "offsets", off)

    @property
    def n_sites(self):
        return self.rows * self.cols

    def site_positions(self):
        """(n_sites, 2) transverse positions, row-major, columns along x."""
        r, c = np.meshgrid(np.arange(self.rows), np.arange(self.cols), indexing="ij")
        x = (c.ravel() - (self.cols - 1) / 2) * self.pitch + self.center[0]
        y = (r.ravel() - (self.rows - 1) / 2) * self.pitch + self.center[1]
        pos = np.stack([x, y], axis=1)
        if self.offsets is not None:
            pos = pos + self.offsets
        return pos


def _check_sampling(pupil, waist=None):
    w = pupil.input_waist if waist is None else waist
    if w < 4 * pupil.spacing:
        raise SamplingError(
            f"input waist {w:.3g} m spans fewer than 4 pupil samples ({pupil.spacing:.3g} m)"
        )


def gaussian_illumination(pupil, power, waist=None, aperture=None):
    """Gaussian beam on the pupil carrying ``power`` (inside ``aperture`` if given)."""
    _check_sampling(pupil, waist)
    w = pupil.input_waist if waist is None else waist
    uu, vv = pupil.mesh()
    r2 = uu**2 + vv**2
    amp = np.exp(-r2 / w**2).astype(complex)
    inside = np.ones_like(r2, dtype=bool) if aperture is None else r2 < aperture**2
    p_in = np.sum(np.abs(amp[inside]) ** 2) * pupil.spacing**2
    amp *= math.sqrt(power / p_in)
    return ComplexField(amp, -pupil.focal_length, pupil.spacing)


def apply_mask(pupil_field, mask, aperture=None):
    if pupil_field.shape != mask.shape:
        raise ValueError(f"mask shape {mask.shape} != field shape {pupil_field.shape}")
    amp = pupil_field.amplitude * np.exp(1j * mask.values)
    if aperture is not None:
        n = amp.shape[0]
        u = (np.arange(n) - n // 2) * pupil_field.spacing
        uu, vv = np.meshgrid(u, u, indexing="ij")
        amp = np.where(uu**2 + vv**2 < aperture**2, amp, 0)
    return ComplexField(amp, pupil_field.plane_z, pupil_field.spacing)


def compose_masks(masks):
    """Sum of phase masks wrapped to [0, 2pi)."""
    masks = list(masks)
    if not masks:
        raise ValueError("no masks to compose")
    shape = masks[0].shape
    total = np.zeros(shape)
    for m in masks:
        if m.shape != shape:
            raise ValueError(f"mask shape mismatch: {m.shape} vs {shape}")
        total = total + m.values
    return PhaseMask(np.mod(total, TWO_PI))


def make_tweezer_mask(pupil, geom, defocus=None, seed=0):
    """Gratings-and-lenses hologram for the sites of ``geom``.

    Each site gets a blazed grating (transverse position) and a Fresnel lens
    (axial ``defocus``, default 0); the mask is the phase of the complex sum.
    Sites other than the first carry a pseudo-random phase (fixed by ``seed``)
    to avoid the strong interference of an all-in-phase sum.
    """
    _check_sampling(pupil)
    pos = geom.site_positions()
    reach = np.max(np.abs(pos)) if len(pos) else 0.0
    if reach >= pupil.field_of_view / 2:
        raise AliasingError(
            f"site at {reach * 1e6:.1f} um is outside the alias-free half field of view "
            f"{pupil.field_of_view / 2 * 1e6:.1f} um"
        )
    n = len(pos)
    dz = np.zeros(n) if defocus is None else np.broadcast_to(np.asarray(defocus, float), (n,))
    if n == 1 and np.allclose(pos, 0) and dz[0] == 0:
        return PhaseMask.zeros(pupil)
    uu, vv = pupil.mesh()
    r2 = uu**2 + vv**2
    kf = TWO_PI / (pupil.wavelength * pupil.focal_length)
    phases = np.random.default_rng(seed).uniform(0, TWO_PI, n)
    phases[0] = 0.0
    total = np.zeros(uu.shape, dtype=complex)
    for (x, y), z, ph in zip(pos, dz, phases):
        lens = math.pi * r2 * z / (pupil.wavelength * pupil.focal_length**2)
        total += np.exp(1j * (kf * (x * uu + y * vv) + lens + ph))
    return PhaseMask(np.mod(np.angle(total), TWO_PI))


def make_bob_mask(pupil, params):
    params.validate(pupil)
    uu, vv = pupil.mesh()
    r2 = uu**2 + vv**2
    inside = r2 < params.outer_radius**2
    phase = np.where(r2 < params.inner_radius**2, math.pi, 0.0) + params.inner_grad * uu
    phase = np.where(inside, phase, params.outer_grad * vv)
    return PhaseMask(np.mod(phase, TWO_PI))


def zernike_mask(pupil, radius, coefficients):
    """Aberration-correction phase from {(n, m): radians} Zernike coefficients."""
    uu, vv = pupil.mesh()
    rho = np.hypot(uu, vv) / radius
    theta = np.arctan2(vv, uu)
    out = np.zeros_like(rho)
    for (n, m), a in coefficients.items():
        am = abs(m)
        if (n - am) % 2 or am > n:
            raise ValueError(f"invalid Zernike index ({n}, {m})")
        radial = np.zeros_like(rho)
        for s in range((n - am) // 2 + 1):
            c = (-1) ** s * math.factorial(n - s) / (
                math.factorial(s) * math.factorial((n + am) // 2 - s) * math.factorial((n - am) // 2 - s)
            )
            radial += c * rho ** (n - 2 * s)
        ang = np.cos(am * theta) if m >= 0 else np.sin(am * theta)
        out += a * radial * ang
    out[rho > 1] = 0.0
    return PhaseMask(np.mod(out, TWO_PI))


def _kz(kx, ky, wavelength):
    k = TWO_PI / wavelength
    kt2 = kx**2 + ky**2
    prop = kt2 < k**2
    kz = np.sqrt(np.where(prop, k**2 - kt2, 0.0))
    return kz, prop


def angular_spectrum_step(field, dz, wavelength):
    """Exact scalar free-space propagation by ``dz``; evanescent waves are dropped."""
    if not math.isfinite(dz):
        raise ValueError("dz must be finite")
    if dz == 0:
        return field
    n = field.shape[0]
    k1 = TWO_PI * np.fft.fftfreq(n, field.spacing)
    kx, ky = np.meshgrid(k1, k1, indexing="ij")
    kz, prop = _kz(kx, ky, wavelength)
    h = np.where(prop, np.exp(1j * kz * dz), 0)
    spec = np.fft.fft2(np.fft.ifftshift(field.amplitude))
    out = np.fft.fftshift(np.fft.ifft2(spec * h))
    return ComplexField(out, field.plane_z + dz, field.spacing)


def focal_plane(pupil_field, pupil):
    """Field in the focal plane (z = 0) via a centred FFT of the pupil."""
    if pupil_field.shape != (pupil.grid_size, pupil.grid_size):
        raise ValueError("pupil field does not match the pupil grid")
    scale = pupil.spacing**2 / (pupil.wavelength * pupil.focal_length)
    amp = np.fft.fftshift(np.fft.fft2(np.fft.ifftshift(pupil_field.amplitude))) * scale
    return ComplexField(amp, 0.0, pupil.focal_spacing)


def _max_defocus(pupil):
    # Angular-spectrum aliasing: the axial phase of the outermost pupil
    # sample may not change by more than pi between neighbouring samples.
    na = min(pupil.physical_extent / 2 / pupil.focal_length, 0.999)
    k = TWO_PI / pupil.wavelength
    dkt = k * pupil.spacing / pupil.focal_length
    dkz_dkt = na / math.sqrt(1 - na**2)
    return math.pi / (dkt * dkz_dkt)


def propagate_to_focus(pupil_field, pupil, z_planes, crop=None):
    """Intensity volume around the focus on the FFT focal grid.

    ``crop`` keeps only the central ``crop`` x ``crop`` focal samples.
    """
    z_planes = np.atleast_1d(np.asarray(z_planes, dtype=float))
    zmax = _max_defocus(pupil)
    if np.any(np.abs(z_planes) > zmax):
        raise SamplingError(
            f"|z| up to {np.max(np.abs(z_planes)):.3g} m exceeds the angular-spectrum "
            f"sampling bound {zmax:.3g} m"
        )
    focus = focal_plane(pupil_field, pupil)
    n = pupil.grid_size
    sl = slice(None) if crop is None else slice(n // 2 - crop // 2, n // 2 - crop // 2 + crop)
    planes = []
    for z in z_planes:
        f = angular_spectrum_step(focus, float(z), pupil.wavelength)
        planes.append(np.abs(f.amplitude[sl, sl]) ** 2)
    vals = np.stack(planes, axis=-1)
    m = vals.shape[0]
    dxf = pupil.focal_spacing
    dz = float(z_planes[1] - z_planes[0]) if len(z_planes) > 1 else 1.0
    origin = (-(m // 2) * dxf, -(m // 2) * dxf, float(z_planes[0]))
    return IntensityVolume(
        vals, (dxf, dxf, dz), origin, total_power=pupil_field.power,
        wavelength=pupil.wavelength, meta={"z_planes": z_planes.tolist()},
    )


def focal_volume(pupil_field, pupil, xs, ys, zs):
    """Intensity on an arbitrary (xs, ys, zs) grid by direct pupil summation.

    Only pupil rows/columns containing light enter the sums, so fine windows
    around one focus are cheap.  Grids must be uniformly spaced.
    """
    xs, ys, zs = (np.atleast_1d(np.asarray(a, dtype=float)) for a in (xs, ys, zs))
    amp = pupil_field.amplitude
    rows = np.flatnonzero(np.any(amp != 0, axis=1))
    cols = np.flatnonzero(np.any(amp != 0, axis=0))
    u = pupil.coords()
    uc, vc = u[rows], u[cols]
    ac = amp[np.ix_(rows, cols)]
    lf = pupil.wavelength * pupil.focal_length
    ax = np.exp(-1j * TWO_PI * np.outer(xs, uc) / lf)
    ay = np.exp(-1j * TWO_PI * np.outer(vc, ys) / lf)
    k = TWO_PI / pupil.wavelength
    kzc, _ = _kz(k * uc[:, None] / pupil.focal_length, k * vc[None, :] / pupil.focal_length,
                 pupil.wavelength)
    scale = (pupil.spacing**2 / lf) ** 2
    out = np.empty((len(xs), len(ys), len(zs)))
    for i, z in enumerate(zs):
        e = ax @ (ac * np.exp(1j * (kzc - k) * z)) @ ay
        out[:, :, i] = (e.real**2 + e.imag**2) * scale

    def step(a):
        return float(a[1] - a[0]) if len(a) > 1 else 1.0

    return IntensityVolume(
        out, (step(xs), step(ys), step(zs)), (xs[0], ys[0], zs[0]),
        total_power=pupil_field.power, wavelength=pupil.wavelength,
    )


@dataclass(frozen=True)
class FocalWindow:
    """Uniform sampling box around a focus."""

    half_width: float = 3e-6
    step: float = 0.1e-6
    half_length: float = 20e-6
    axial_step: float = 0.5e-6
    center: tuple = (0.0, 0.0, 0.0)

    def axes(self):
        nt = int(round(self.half_width / self.step))
        nz = int(round(self.half_length / self.axial_step))
        t = np.arange(-nt, nt + 1) * self.step
        z = np.arange(-nz, nz + 1) * self.axial_step
        return t + self.center[0], t + self.center[1], z + self.center[2]


@dataclass(frozen=True)
class BobDesign:
    """Bottle-beam pupil: illumination, pupil radius and dump deflection."""

    pupil: PupilSpec
    outer_radius: float = 5.5e-3
    dump_shift: float = 100e-6  # deflection of light outside the pupil, along y
    inner_shift: float = 0.0  # in-pupil first-order shift, along x

    def params(self, ratio):
        return BobMaskParams(
            inner_radius=ratio * self.outer_radius,
            outer_radius=self.outer_radius,
            inner_grad=self.pupil.gradient_for_shift(self.inner_shift),
            outer_grad=self.pupil.gradient_for_shift(self.dump_shift),
        )

    def focus_center(self):
        return (self.inner_shift, 0.0, 0.0)


def default_bob_design(grid_size=256):
    """Pupil geometry used throughout: 5.5 mm pupil radius at 0.7 fill factor."""
    outer = 5.5e-3
    pupil = PupilSpec(grid_size=grid_size, input_waist=outer / 0.7)
    return BobDesign(pupil=pupil, outer_radius=outer)


def bob_pupil_field(design, ratio, power, include_dump=False):
    """Masked pupil field carrying ``power`` inside the bottle-beam pupil.

    Without ``include_dump`` the light outside the pupil, which the mask
    deflects away from the atoms, is removed.
    """
    params = design.params(ratio)
    mask = make_bob_mask(design.pupil, params)
    illum = gaussian_illumination(design.pupil, power, aperture=design.outer_radius)
    return apply_mask(illum, mask, aperture=None if include_dump else design.outer_radius)


def bob_volume(design, ratio, power, window=FocalWindow(), include_dump=False):
    window = FocalWindow(window.half_width, window.step, window.half_length,
                         window.axial_step, design.focus_center())
    field_ = bob_pupil_field(design, ratio, power, include_dump)
    vol = focal_volume(field_, design.pupil, *window.axes())
    vol.meta.update(ratio=ratio, power=power)
    return vol


@dataclass
class BobOptimum:
    ratio: float
    depth: float
    multimodal: bool = False
    samples: list = field(default_factory=list)


def _is_unimodal(values, rtol=1e-3):
    v = np.asarray(values, dtype=float)
    tol = rtol * np.max(np.abs(v)) if len(v) else 0.0
    d = np.diff(v)
    d = d[np.abs(d) > tol]
    signs = np.sign(d)
    # increasing run followed by a decreasing run
    return not np.any((signs[:-1] < 0) & (signs[1:] > 0))


def optimize_bob_ratio(design, search_interval=(0.4, 0.8), power=20e-3,
                       window=FocalWindow(), tol=1e-3, n_scan=7):
    """Inner/outer radius ratio that maximises the ponderomotive trap depth.

    A coarse scan brackets the maximum, then golden-section search refines
    it to ``tol``.  A non-unimodal coarse scan returns the best sample with
    ``multimodal`` set.
    """
    from .potentials import ponderomotive_potential, trap_depth

    lo, hi = map(float, search_interval)
    if not 0 < lo <= hi < 1:
        raise ValueError("search interval must lie inside (0, 1)")
    samples = {}

    def depth(r):
        r = float(r)
        if r not in samples:
            vol = bob_volume(design, r, power, window)
            pot = ponderomotive_potential(vol, design.pupil.wavelength)
            samples[r] = trap_depth(pot).depth
        return samples[r]

    if hi - lo <= tol:
        r = 0.5 * (lo + hi)
        return BobOptimum(r, depth(r), False, sorted(samples.items()))

    grid = np.linspace(lo, hi, n_scan)
    vals = [depth(r) for r in grid]
    if not _is_unimodal(vals):
        best = max(samples, key=samples.get)
        warnings.warn("bottle-beam depth is not unimodal over the search interval")
        return BobOptimum(best, samples[best], True, sorted(samples.items()))
    i = int(np.argmax(vals))
    a, b = grid[max(i - 1, 0)], grid[min(i + 1, n_scan - 1)]
    g = (math.sqrt(5) - 1) / 2
    c, d = b - g * (b - a), a + g * (b - a)
    while b - a > tol:
        if depth(c) >= depth(d):
            b, d = d, c
            c = b - g * (b - a)
        else:
            a, c = c, d
            d = a + g * (b - a)
    best = max(samples, key=samples.get)
    log.debug("bob ratio optimum %.4f, %d depth evaluations", best, len(samples))
    return BobOptimum(best, samples[best], False, sorted(samples.items()))


def locate_spots(plane, xs, ys, n_spots, min_separation=3):
    """Sub-sample positions of the ``n_spots`` brightest local maxima of a 2D plane."""
    peaks = (plane == ndimage.maximum_filter(plane, size=2 * min_separation + 1)) & (plane > 0)
    idx = np.argwhere(peaks)
    order = np.argsort(plane[peaks])[::-1][:n_spots]
    out = []
    dx, dy = xs[1] - xs[0], ys[1] - ys[0]
    for i, j in idx[order]:
        i = int(np.clip(i, 1, plane.shape[0] - 2))
        j = int(np.clip(j, 1, plane.shape[1] - 2))
        lx = np.log(np.maximum(plane[i - 1:i + 2, j], 1e-300))
        ly = np.log(np.maximum(plane[i, j - 1:j + 2], 1e-300))
        # parabolic refinement on log-intensity (exact for Gaussian spots)
        ox = 0.5 * (lx[0] - lx[2]) / (lx[0] - 2 * lx[1] + lx[2])
        oy = 0.5 * (ly[0] - ly[2]) / (ly[0] - 2 * ly[1] + ly[2])
        out.append((xs[i] + ox * dx, ys[j] + oy * dy, plane[i, j]))
    return np.array(out)
