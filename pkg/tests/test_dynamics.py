import math

import numpy as np
import pytest
from scipy import ndimage
from scipy.integrate import solve_ivp

from rydtrap import _spline, dynamics, fitting, potentials
from rydtrap.constants import K_B, M_RB87


def rr_config(taus, n=10000, **kw):
    return dynamics.ReleaseRecaptureConfig(tuple(taus), 1e-3 * K_B, 1.2e-6, n, **kw)


def at_rest(position):
    return dynamics.AtomSample(np.atleast_2d(position), np.zeros((1, 3)))


def test_spline_matches_scipy_evaluation(bob_pot, rng):
    """Compiled kernel against scipy's own B-spline evaluation of the same coefficients."""
    lo, hi = bob_pot.extent()
    pts = rng.uniform(lo, hi, (200, 3))
    ours = bob_pot.energy_at(pts)
    idx = (bob_pot.fractional_index(pts) + _spline.PAD).T
    ref = ndimage.map_coordinates(bob_pot.spline, idx, order=3, mode="mirror", prefilter=False)
    assert np.allclose(ours, ref, rtol=1e-10, atol=1e-12 * bob_pot.values.max())


def test_spline_interpolates_the_grid(bob_pot):
    idx = [(3, 5, 7), (30, 30, 40), (60, 1, 80)]
    pts = np.array([bob_pot.position_of(i) for i in idx])
    want = np.array([bob_pot.values[i] for i in idx])
    assert np.allclose(bob_pot.energy_at(pts), want, rtol=1e-9, atol=1e-12 * bob_pot.values.max())


def test_sampling_is_deterministic_and_order_free():
    spec = dynamics.ThermalSpec(7e-6, (100e3, 100e3, 20e3))
    a = dynamics.sample_thermal(spec, 5000, seed=3)
    b = dynamics.sample_thermal(spec, 5000, seed=3)
    assert np.array_equal(a.position, b.position) and np.array_equal(a.velocity, b.velocity)
    head = dynamics.sample_thermal(spec, 100, seed=3)
    assert np.array_equal(head.position, a.position[:100])
    other = dynamics.sample_thermal(spec, 100, seed=4)
    assert not np.array_equal(other.velocity, head.velocity)


def test_chunks_are_uncorrelated():
    x = dynamics.standard_normals(9, 0, 2 * dynamics.CHUNK, dim=1)[:, 0]
    r = np.corrcoef(x[:dynamics.CHUNK], x[dynamics.CHUNK:])[0, 1]
    assert abs(r) < 4 / math.sqrt(dynamics.CHUNK)


def test_zero_temperature_sample():
    s = dynamics.sample_thermal(dynamics.ThermalSpec(0.0, (1e5, 1e5, 2e4), (1e-7, 0, 0)), 50, 1)
    assert np.all(s.velocity == 0)
    assert np.all(s.position == np.array([1e-7, 0, 0]))


def test_kinetic_energy_moment():
    spec = dynamics.ThermalSpec(6.6e-6, (100e3, 100e3, 20e3))
    s = dynamics.sample_thermal(spec, 10**6, seed=12)
    assert np.mean(s.kinetic_energy()) == pytest.approx(1.5 * K_B * 6.6e-6, rel=0.005)


def test_position_spread_follows_frequencies():
    spec = dynamics.ThermalSpec(10e-6, (80e3, 40e3, 10e3))
    s = dynamics.sample_thermal(spec, 200000, seed=2)
    sx, sv = spec.sigmas()
    assert np.allclose(s.position.std(axis=0), sx, rtol=0.01)
    assert np.allclose(s.velocity.std(axis=0), sv, rtol=0.01)


def test_recoil_is_quarter_of_thermal_velocity():
    sv = math.sqrt(K_B * 7e-6 / M_RB87)
    assert sv == pytest.approx(26e-3, rel=0.02)
    assert 6e-3 / sv == pytest.approx(0.23, abs=0.01)


def test_invalid_specs():
    with pytest.raises(ValueError):
        dynamics.ThermalSpec(-1.0, (1.0, 1.0, 1.0))
    with pytest.raises(ValueError):
        dynamics.ThermalSpec(1e-6, (1.0, 0.0, 1.0))
    with pytest.raises(ValueError):
        dynamics.AtomSample(np.full((1, 3), np.nan), np.zeros((1, 3)))
    with pytest.raises(ValueError):
        rr_config([-1e-6])
    with pytest.raises(ValueError):
        dynamics.OscillationConfig(off_window=0.0)


@pytest.mark.parametrize("dt", [1e-9, 3.7e-6, 1e-3])
def test_free_flight_is_exact(dt):
    atom = dynamics.AtomSample([[1e-6, 0, -2e-6]], [[0.01, -0.02, 0.005]])
    tr = dynamics.integrate_trajectory(atom, None, dt, 1e-3)
    assert np.allclose(tr.positions, atom.position + np.outer(tr.times, atom.velocity[0]), rtol=0, atol=1e-18)
    s = atom.copy()
    dynamics.evolve(s, None, dt, 1e-3)
    assert np.allclose(s.position, atom.position + 1e-3 * atom.velocity, rtol=0, atol=1e-18)
    assert np.array_equal(s.velocity, atom.velocity)


def test_gravity_free_flight():
    s = dynamics.free_flight(at_rest((0, 0, 0)), 1e-3, 9.8 * np.array(dynamics.GRAVITY_AXIS))
    assert s.position[0, 1] == pytest.approx(-0.5 * 9.8e-6)


def _amplitude(tr, omega):
    return np.sqrt(tr.positions[:, 0] ** 2 + (tr.velocities[:, 0] / omega) ** 2)


def test_harmonic_motion_amplitude_and_frequency(surrogate_pot):
    omega = 2 * math.pi * 15.8e3
    tr = dynamics.integrate_trajectory(at_rest((200e-9, 0, 0)), surrogate_pot, 1 / (500 * 15.8e3), 1e-3)
    assert not tr.escaped
    amp = _amplitude(tr, omega)
    assert np.ptp(amp) / amp[0] < 1e-4
    x = tr.positions[:, 0]
    up = np.flatnonzero((x[:-1] < 0) & (x[1:] >= 0))
    tc = tr.times[up] - x[up] * (tr.times[up + 1] - tr.times[up]) / (x[up + 1] - x[up])
    assert 1 / np.mean(np.diff(tc)) == pytest.approx(15.8e3, rel=1e-3)


def test_verlet_energy_bounded(surrogate_pot):
    """1e4 steps at dt = 1/(500 nu): relative energy error stays below 1e-4 and does not drift."""
    dt = 1 / (500 * 15.8e3)
    atom = dynamics.AtomSample([[150e-9, -80e-9, 300e-9]], [[0.0, 0.004, 0.0]])
    tr = dynamics.integrate_trajectory(atom, surrogate_pot, dt, 1e4 * dt)
    assert len(tr.times) == 10001
    e = 0.5 * M_RB87 * np.sum(tr.velocities**2, axis=1) + surrogate_pot.energy_at(tr.positions)
    err = np.abs(e / e[0] - 1)
    assert err.max() < 1e-4
    assert abs(np.mean(err[-1000:]) - np.mean(err[:1000])) < 2e-5


@pytest.mark.parametrize("steps_per_period,bound", [(500, 1e-4), (100, 1e-3)])
def test_energy_over_100_periods(surrogate_pot, steps_per_period, bound):
    """The error oscillates at second order in dt and shows no secular growth."""
    dt = 1 / (steps_per_period * 15.8e3)
    atom = dynamics.AtomSample([[150e-9, -80e-9, 300e-9]], [[0.0, 0.004, 0.0]])
    tr = dynamics.integrate_trajectory(atom, surrogate_pot, dt, 100 / 15.8e3)
    e = 0.5 * M_RB87 * np.sum(tr.velocities**2, axis=1) + surrogate_pot.energy_at(tr.positions)
    err = np.abs(e / e[0] - 1)
    tenth = len(err) // 10
    assert err.max() < bound
    assert np.mean(err[-tenth:]) == pytest.approx(np.mean(err[:tenth]), rel=0.01)


def test_bob_anharmonic_period(bob_pot):
    """300 nm start in the real bottle beam: Verlet period against an adaptive high-order oracle."""
    center = potentials.local_quadratic_fit(bob_pot).center
    nu = potentials.harmonic_frequencies(bob_pot)
    start = center + np.array([300e-9, 0, 0])
    dt = 1 / (500 * nu.max())
    tr = dynamics.integrate_trajectory(at_rest(start), bob_pot, dt, 3 / nu[0])

    def rhs(_, y):
        f, _inside = potentials.forces_at(bob_pot, y[:3])
        return np.concatenate([y[3:], f[0] / M_RB87])

    def crossing(_, y):
        return y[0] - center[0]
    crossing.direction = 1
    sol = solve_ivp(rhs, (0, 3 / nu[0]), np.concatenate([start, np.zeros(3)]), method="DOP853",
                    rtol=1e-11, atol=1e-20, events=crossing)
    oracle = np.mean(np.diff(sol.t_events[0]))
    x = tr.positions[:, 0] - center[0]
    up = np.flatnonzero((x[:-1] < 0) & (x[1:] >= 0))
    tc = tr.times[up] - x[up] * (tr.times[up + 1] - tr.times[up]) / (x[up + 1] - x[up])
    period = np.mean(np.diff(tc))
    assert period == pytest.approx(oracle, rel=2e-3)
    # the well is stiffer than its curvature at the bottom: 300 nm swings run fast
    assert period < 1 / nu[0]


def test_escape_truncates_trajectory(surrogate_pot):
    atom = dynamics.AtomSample([[0.0, 0.0, 0.0]], [[1.0, 0.0, 0.0]])
    tr = dynamics.integrate_trajectory(atom, surrogate_pot, 1e-8, 1e-5)
    assert tr.escaped
    assert tr.times[-1] < 3.1e-6
    assert np.all(np.abs(tr.positions[:, 0]) <= 3e-6)


def test_default_timestep():
    assert dynamics.default_timestep((15.8e3, 15.8e3, 6e3)) == pytest.approx(1 / 1.58e6)


def test_recapture_at_zero_time_is_one(tweezer):
    c = dynamics.release_recapture(rr_config([0.0], 2000), dynamics.thermal_spec_for(6.6e-6, tweezer), 1)
    assert c.mean[0] == 1.0 and c.stderr[0] == 0.0 and c.n_samples[0] == 2000


def test_recapture_non_increasing(tweezer):
    taus = np.arange(0, 151e-6, 10e-6)
    c = dynamics.release_recapture(rr_config(taus), dynamics.thermal_spec_for(6.6e-6, tweezer), 5)
    jumps = np.diff(c.mean)
    noise = 3 * np.sqrt(c.stderr[1:] ** 2 + c.stderr[:-1] ** 2)
    assert np.all(jumps <= noise)


def test_half_loss_time_at_6p6_microkelvin(tweezer):
    taus = np.arange(0, 151e-6, 2e-6)
    c = dynamics.release_recapture(rr_config(taus), dynamics.thermal_spec_for(6.6e-6, tweezer), 6)
    t_half = np.interp(0.5, c.mean[::-1], taus[::-1])
    assert 30e-6 <= t_half <= 80e-6


def test_hotter_atoms_are_lost_sooner(tweezer):
    taus = (40e-6,)
    cold = dynamics.release_recapture(rr_config(taus), dynamics.thermal_spec_for(5e-6, tweezer), 7)
    hot = dynamics.release_recapture(rr_config(taus), dynamics.thermal_spec_for(20e-6, tweezer), 7)
    assert hot.mean[0] < cold.mean[0]


def test_recapture_determinism(tweezer):
    spec = dynamics.thermal_spec_for(6.6e-6, tweezer)
    a = dynamics.release_recapture(rr_config([20e-6, 50e-6], 3000), spec, 11)
    b = dynamics.release_recapture(rr_config([20e-6, 50e-6], 3000), spec, 11)
    assert np.array_equal(a.mean, b.mean)


def test_stderr_scales_as_inverse_root_n(tweezer):
    spec = dynamics.thermal_spec_for(6.6e-6, tweezer)
    errs = [dynamics.release_recapture(rr_config([50e-6], n), spec, 13).stderr[0]
            for n in (10**3, 10**4, 10**5)]
    assert errs[0] / errs[1] == pytest.approx(math.sqrt(10), rel=0.1)
    assert errs[1] / errs[2] == pytest.approx(math.sqrt(10), rel=0.1)


def test_kick_and_gravity_reduce_recapture(tweezer):
    spec = dynamics.thermal_spec_for(6.6e-6, tweezer)
    base = dynamics.release_recapture(rr_config([60e-6]), spec, 14).mean[0]
    kicked = dynamics.release_recapture(rr_config([60e-6], recoil_kick=0.03), spec, 14).mean[0]
    fallen = dynamics.release_recapture(rr_config([60e-6], gravity=True), spec, 14).mean[0]
    assert kicked < base
    # free fall over 60 us is ~18 nm: gravity is a small correction
    assert abs(fallen - base) < 0.02


def test_drift_time_closed_form_matches_monte_carlo(tweezer):
    for t in (7e-6, 23e-6):
        exact = dynamics.rms_drift_time(t, tweezer)
        mc = dynamics.rms_drift_time_mc(t, tweezer, seed=15, n=100000)
        assert mc == pytest.approx(exact, rel=0.01)


def test_drift_time_scales():
    hot = dynamics.rms_drift_time(23e-6, potentials.GaussianTweezer(1e-3 * K_B, 1.2e-6))
    cold = dynamics.rms_drift_time(7e-6, potentials.GaussianTweezer(1e-3 * K_B, 1.2e-6))
    assert 6e-6 <= hot <= 14e-6 and 11.4e-6 <= cold <= 26.6e-6


def test_oscillation_flat_without_offset_or_temperature(bob_pot, tweezer):
    cfg = dynamics.OscillationConfig(bob_offset=0.0, atoms_per_point=20, recoil_kick=0.0,
                                     delays=tuple(np.arange(16e-6, 60e-6, 4e-6)))
    spec = dynamics.ThermalSpec(0.0, tuple(tweezer.frequencies()))
    c = dynamics.bob_oscillation_experiment(cfg, bob_pot, tweezer, spec, 1)
    assert np.ptp(c.mean) == 0.0


def test_oscillation_requires_closed_trap(tweezer):
    hill = potentials.TrapPotential(np.ones((5, 5, 5)), (1e-7,) * 3, (-2e-7,) * 3)
    with pytest.raises(ValueError):
        dynamics.bob_oscillation_experiment(dynamics.OscillationConfig(), hill, tweezer,
                                            dynamics.ThermalSpec(1e-6, (1e3, 1e3, 1e3)), 0)


def test_harmonic_surrogate_oscillates_at_twice_the_trap_frequency(surrogate_pot, tweezer):
    """Phase-space rotation in a pure harmonic well: the recapture signal repeats every half period."""
    spec = dynamics.thermal_spec_for(6.6e-6, tweezer)
    c = dynamics.bob_oscillation_experiment(dynamics.OscillationConfig(), surrogate_pot, tweezer, spec, 21)
    fit = fitting.fit_damped_sine(fitting.Curve(c.abscissa, c.mean, np.maximum(c.stderr, 1e-3)))
    assert fit.converged
    assert fit["frequency"] == pytest.approx(31.6e3, abs=0.5e3)


def test_oscillation_determinism(surrogate_pot, tweezer):
    spec = dynamics.thermal_spec_for(6.6e-6, tweezer)
    cfg = dynamics.OscillationConfig(atoms_per_point=50, delays=(20e-6, 30e-6, 40e-6))
    a = dynamics.bob_oscillation_experiment(cfg, surrogate_pot, tweezer, spec, 2)
    b = dynamics.bob_oscillation_experiment(cfg, surrogate_pot, tweezer, spec, 2)
    assert np.array_equal(a.mean, b.mean)
