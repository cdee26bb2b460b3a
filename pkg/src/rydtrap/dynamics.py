"""Monte-Carlo atom motion: thermal sampling, Verlet trajectories, release-recapture.

Random numbers come from per-chunk substreams ``SeedSequence(seed,
spawn_key=(stream, chunk))`` so results depend only on the seed and the
atom index, never on evaluation order.
"""

import math
from dataclasses import dataclass

import numpy as np

from . import _spline
from .constants import K_B, M_RB87
from .potentials import GaussianTweezer

CHUNK = 4096
GRAVITY = 9.80665
GRAVITY_AXIS = (0.0, -1.0, 0.0)

# stream ids
POSITION_STREAM = 0
VELOCITY_STREAM = 1


def standard_normals(seed, stream, n, dim=3):
    out = np.empty((n, dim))
    for c, start in enumerate(range(0, n, CHUNK)):
        ss = np.random.SeedSequence(seed, spawn_key=(stream, c))
        rng = np.random.Generator(np.random.PCG64(ss))
        stop = min(start + CHUNK, n)
        out[start:stop] = rng.standard_normal((stop - start, dim))
    return out


@dataclass
class AtomSample:
    """Positions and velocities of N atoms, arrays of shape (N, 3)."""

    position: np.ndarray
    velocity: np.ndarray
    mass: float = M_RB87

    def __post_init__(self):
        self.position = np.array(np.atleast_2d(self.position), dtype=float)
        self.velocity = np.array(np.atleast_2d(self.velocity), dtype=float)
        if self.position.shape != self.velocity.shape or self.position.shape[1] != 3:
            raise ValueError("position and velocity must both be (N, 3)")
        if not (np.all(np.isfinite(self.position)) and np.all(np.isfinite(self.velocity))):
            raise ValueError("atom sample has non-finite components")

    def __len__(self):
        return len(self.position)

    def copy(self):
        return AtomSample(self.position.copy(), self.velocity.copy(), self.mass)

    def kinetic_energy(self):
        return 0.5 * self.mass * np.sum(self.velocity**2, axis=1)


@dataclass(frozen=True)
class ThermalSpec:
    temperature: float
    frequencies: tuple
    center: tuple = (0.0, 0.0, 0.0)

    def __post_init__(self):
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if any(f <= 0 for f in self.frequencies):
            raise ValueError("trap frequencies must be positive")

    def sigmas(self, mass=M_RB87):
        sv = math.sqrt(K_B * self.temperature / mass)
        sx = np.array([sv / (2 * math.pi * f) for f in self.frequencies])
        return sx, sv


def thermal_spec_for(temperature, tweezer, mass=M_RB87):
    return ThermalSpec(temperature, tuple(tweezer.frequencies(mass)), tweezer.center)


def sample_thermal(spec, n, seed, mass=M_RB87):
    """Harmonic-trap Boltzmann sample of ``n`` atoms, deterministic in ``seed``."""
    if n < 1:
        raise ValueError("n must be >= 1")
    sx, sv = spec.sigmas(mass)
    pos = np.asarray(spec.center) + standard_normals(seed, POSITION_STREAM, n) * sx
    vel = standard_normals(seed, VELOCITY_STREAM, n) * sv
    return AtomSample(pos, vel, mass)


def free_flight(sample, duration, acceleration=(0.0, 0.0, 0.0)):
    a = np.asarray(acceleration, dtype=float)
    pos = sample.position + sample.velocity * duration + 0.5 * a * duration**2
    vel = sample.velocity + a * duration
    return AtomSample(pos, vel, sample.mass)


def default_timestep(frequencies):
    return 1.0 / (100.0 * max(frequencies))


def _steps(duration, dt):
    n = max(int(math.ceil(duration / dt - 1e-9)), 1)
    return n, duration / n


def evolve(sample, pot, dt, duration, alive=None):
    """Evolve an ensemble in ``pot`` (free flight if None), in place.

    Returns the boolean mask of atoms still inside the potential grid.
    """
    if alive is None:
        alive = np.ones(len(sample), dtype=bool)
    if duration <= 0:
        return alive
    if pot is None:
        sample.position += sample.velocity * duration
        return alive
    n, h = _steps(duration, dt)
    pos = np.ascontiguousarray(sample.position)
    vel = np.ascontiguousarray(sample.velocity)
    _spline.verlet(pot.spline, np.array(pot.shape, dtype=np.int64), np.array(pot.origin),
                   np.array(pot.spacing), pos, vel, 1.0 / sample.mass, h, n, alive, 0)
    sample.position, sample.velocity = pos, vel
    return alive


@dataclass
class Trajectory:
    times: np.ndarray
    positions: np.ndarray
    velocities: np.ndarray
    escaped: bool


def integrate_trajectory(atom, pot, dt, duration, record_every=1):
    """Velocity-Verlet trajectory of a single atom; exact straight line if ``pot`` is None."""
    atom = AtomSample(atom.position[:1], atom.velocity[:1], atom.mass)
    n, h = _steps(duration, dt)
    times = np.arange(0, n + 1, record_every) * h
    if pot is None:
        pos = atom.position + np.outer(times, atom.velocity[0])
        vel = np.repeat(atom.velocity, len(times), axis=0)
        return Trajectory(times, pos, vel, False)
    alive = np.ones(1, dtype=bool)
    pos = np.ascontiguousarray(atom.position)
    vel = np.ascontiguousarray(atom.velocity)
    rec = _spline.verlet(pot.spline, np.array(pot.shape, dtype=np.int64), np.array(pot.origin),
                         np.array(pot.spacing), pos, vel, 1.0 / atom.mass, h, n, alive,
                         record_every)
    m = len(times)
    if not alive[0]:
        # keep only the samples recorded before the atom left the grid
        filled = np.flatnonzero(np.any(rec != 0, axis=1))
        m = int(filled[-1]) + 1 if len(filled) else 1
    return Trajectory(times[:m], rec[:m, :3], rec[:m, 3:], not bool(alive[0]))


def total_energy(sample, pot):
    return sample.kinetic_energy() + pot.energy_at(sample.position)


@dataclass
class RecaptureCurve:
    abscissa: np.ndarray
    mean: np.ndarray
    stderr: np.ndarray
    n_samples: np.ndarray

    def rows(self):
        return zip(self.abscissa, self.mean, self.stderr, self.n_samples)


def _binomial_curve(x, recaptured, n):
    p = np.asarray(recaptured, dtype=float) / n
    return RecaptureCurve(np.asarray(x, dtype=float), p, np.sqrt(p * (1 - p) / n),
                          np.full(len(p), n, dtype=int))


@dataclass(frozen=True)
class ReleaseRecaptureConfig:
    off_times: tuple
    depth: float
    waist: float
    atoms_per_point: int = 10000
    recoil_kick: float = 0.0
    kick_time: float = 0.0
    kick_axis: tuple = (1.0, 0.0, 0.0)
    gravity: bool = False
    wavelength: float = 820e-9

    def __post_init__(self):
        if any(t < 0 for t in self.off_times):
            raise ValueError("off times must be >= 0")
        if self.atoms_per_point < 1:
            raise ValueError("atoms_per_point must be >= 1")
        if self.depth <= 0 or self.waist <= 0:
            raise ValueError("depth and waist must be positive")

    def tweezer(self):
        return GaussianTweezer(self.depth, self.waist, self.wavelength)


def release_recapture(cfg, spec, seed, mass=M_RB87):
    """Recapture probability after switching the tweezer off for each time in ``cfg``.

    The same atoms (common random numbers) are used for every off time; an
    atom is recaptured when its total energy in the restored tweezer is < 0.
    """
    tw = cfg.tweezer()
    sample = sample_thermal(spec, cfg.atoms_per_point, seed, mass)
    g = GRAVITY * np.asarray(GRAVITY_AXIS) if cfg.gravity else np.zeros(3)
    kick = cfg.recoil_kick * np.asarray(cfg.kick_axis, dtype=float)
    counts = []
    for tau in cfg.off_times:
        after = max(tau - cfg.kick_time, 0.0)
        kicked = tau > cfg.kick_time
        pos = sample.position + sample.velocity * tau + 0.5 * g * tau**2 + kick * after
        vel = sample.velocity + g * tau + (kick if kicked else 0.0)
        e = 0.5 * mass * np.sum(vel**2, axis=1) + tw.energy_at(pos)
        counts.append(np.count_nonzero(e < 0))
    return _binomial_curve(cfg.off_times, counts, cfg.atoms_per_point)


def rms_drift_time(temperature, tweezer, distance=None, mass=M_RB87):
    """Time at which the r.m.s. distance of freely expanding atoms from the
    trap centre reaches ``distance`` (the tweezer waist by default).

    Closed form for a thermal harmonic-trap cloud: <r^2>(t) = sum(sx^2) + 3 sv^2 t^2.
    """
    d = tweezer.waist if distance is None else distance
    sx, sv = thermal_spec_for(temperature, tweezer, mass).sigmas(mass)
    rem = d**2 - np.sum(sx**2)
    if rem <= 0:
        return 0.0
    return math.sqrt(rem / (3 * sv**2))


def rms_drift_time_mc(temperature, tweezer, seed, n=20000, distance=None, mass=M_RB87):
    """Monte-Carlo estimate of ``rms_drift_time`` from a sampled, freely expanding cloud."""
    d = tweezer.waist if distance is None else distance
    s = sample_thermal(thermal_spec_for(temperature, tweezer, mass), n, seed, mass)
    r0 = s.position - np.asarray(tweezer.center)
    # <|r0 + v t|^2> = a + 2 b t + c t^2 is exact for the sample
    a = np.mean(np.sum(r0**2, axis=1))
    b = np.mean(np.sum(r0 * s.velocity, axis=1))
    c = np.mean(np.sum(s.velocity**2, axis=1))
    disc = b**2 - c * (a - d**2)
    return max((-b + math.sqrt(disc)) / c, 0.0)


@dataclass(frozen=True)
class OscillationConfig:
    bob_offset: float = 300e-9
    offset_axis: tuple = (1.0, 0.0, 0.0)
    off_window: float = 15e-6
    delays: tuple = tuple(np.round(np.arange(16e-6, 120e-6 + 1e-9, 1e-6), 9))
    total_time: float = 210e-6
    atoms_per_point: int = 400
    recoil_kick: float = 6e-3
    kick_axis: tuple = (0.0, 0.0, 1.0)  # along the beams
    dt: float = None

    def __post_init__(self):
        if self.off_window <= 0:
            raise ValueError("off_window must be positive")
        if any(d < 0 for d in self.delays):
            raise ValueError("delays must be >= 0")


def bob_oscillation_experiment(cfg, bob_pot, tweezer, spec, seed, bob_center=None):
    """Recapture probability versus the delay of a bottle-beam off window.

    Atoms start in the tweezer's thermal distribution (tweezer centre at the
    origin) and receive the excitation recoil at t = 0, when the bottle beam
    (minimum displaced by ``bob_offset``) is switched on.  After ``delay`` it
    is switched off for ``off_window``, then on again until ``total_time``;
    the atom counts as recaptured if it is bound in ``tweezer`` at the end.
    """
    from .potentials import harmonic_frequencies, local_quadratic_fit, trap_depth

    if bob_center is None:
        if trap_depth(bob_pot).open:
            raise ValueError("bottle-beam potential is open")
        bob_center = local_quadratic_fit(bob_pot).center
    shift = cfg.bob_offset * np.asarray(cfg.offset_axis, dtype=float) - np.asarray(bob_center)
    pot = bob_pot.shifted(shift)
    dt = cfg.dt
    if dt is None:
        dt = default_timestep(harmonic_frequencies(bob_pot))
    base = sample_thermal(spec, cfg.atoms_per_point, seed)
    base.velocity += cfg.recoil_kick * np.asarray(cfg.kick_axis, dtype=float)
    alive = np.ones(len(base), dtype=bool)
    order = np.argsort(cfg.delays)
    counts = np.zeros(len(cfg.delays), dtype=int)
    t_now = 0.0
    for i in order:
        delay = cfg.delays[i]
        evolve(base, pot, dt, delay - t_now, alive)
        t_now = delay
        s = base.copy()
        a = alive.copy()
        s.position += s.velocity * cfg.off_window
        evolve(s, pot, dt, cfg.total_time - delay - cfg.off_window, a)
        e = s.kinetic_energy() + tweezer.energy_at(s.position)
        counts[i] = np.count_nonzero(a & (e < 0))
    return _binomial_curve(cfg.delays, counts, cfg.atoms_per_point)
