"""End-to-end experiment pipelines, one per reproduced measurement.

Each scenario takes a validated configuration, a seed and an output
directory, writes its data files and returns a ``ScenarioResult`` holding
the files written, the fits performed and a table of acceptance checks.
"""

import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import dynamics, export, fitting, optics, populations, potentials
from .config import AXES
from .constants import C_LIGHT, EPS0, K_B, M_RB87, POLARIZABILITY_820


@dataclass
class Check:
    name: str
    passed: bool
    detail: str


@dataclass
class ScenarioResult:
    name: str
    files: dict = field(default_factory=dict)  # file name -> column schema
    fits: dict = field(default_factory=dict)
    checks: list = field(default_factory=list)
    summary: dict = field(default_factory=dict)
    seconds: float = 0.0

    def check(self, name, passed, detail):
        self.checks.append(Check(name, bool(passed), detail))

    @property
    def passed(self):
        return all(c.passed for c in self.checks)


def sub_seed(seed, *tags):
    """Independent integer seed for a named sub-computation."""
    return int(np.random.SeedSequence([seed, *tags]).generate_state(1, np.uint64)[0])


# --- builders ---------------------------------------------------------------

def bob_design(cfg):
    p = cfg.pupil
    pupil = optics.PupilSpec(
        grid_size=p.grid_size,
        physical_extent=p.extent_mm * 1e-3,
        wavelength=p.wavelength_nm * 1e-9,
        focal_length=p.focal_length_mm * 1e-3,
        input_waist=p.bob_radius_mm * 1e-3 / p.bob_fill,
    )
    return optics.BobDesign(pupil=pupil, outer_radius=p.bob_radius_mm * 1e-3,
                            dump_shift=p.dump_shift_um * 1e-6)


def focal_window(cfg):
    w = cfg.window
    return optics.FocalWindow(w.half_width_um * 1e-6, w.step_um * 1e-6,
                              w.half_length_um * 1e-6, w.axial_step_um * 1e-6)


def bob_power(cfg, mw):
    return mw * 1e-3 * cfg.pupil.power_scale


_RATIO_CACHE = {}


def bob_ratio(cfg):
    """Configured ratio, or the depth-maximizing one (memoized per geometry)."""
    if cfg.bob.ratio is not None:
        return cfg.bob.ratio, None
    key = (repr(cfg.as_dict()["pupil"]), repr(cfg.as_dict()["window"]), cfg.bob.search_min,
           cfg.bob.search_max, cfg.powers.bob_mW)
    if key not in _RATIO_CACHE:
        _RATIO_CACHE[key] = optics.optimize_bob_ratio(
            bob_design(cfg), (cfg.bob.search_min, cfg.bob.search_max),
            power=bob_power(cfg, cfg.powers.bob_mW), window=focal_window(cfg))
    opt = _RATIO_CACHE[key]
    return opt.ratio, opt


def bob_potential(cfg, mw):
    design = bob_design(cfg)
    ratio, _ = bob_ratio(cfg)
    vol = optics.bob_volume(design, ratio, bob_power(cfg, mw), focal_window(cfg))
    return vol, potentials.ponderomotive_potential(vol, design.pupil.wavelength)


def tweezer_depth(cfg):
    """Dipole depth of a Gaussian tweezer of the configured power and waist."""
    w = cfg.powers.tweezer_waist_um * 1e-6
    peak = 2 * cfg.powers.tweezer_mW * 1e-3 / (math.pi * w**2)
    return POLARIZABILITY_820 * peak / (2 * EPS0 * C_LIGHT)


def analytic_tweezer(cfg):
    return potentials.GaussianTweezer(tweezer_depth(cfg), cfg.powers.tweezer_waist_um * 1e-6,
                                      cfg.pupil.wavelength_nm * 1e-9)


def array_geometry(cfg):
    return optics.ArrayGeometry(cfg.array.rows, cfg.array.cols, cfg.array.pitch_um * 1e-6)


def site_power_factors(cfg, seed):
    n = cfg.array.rows * cfg.array.cols
    rng = np.random.Generator(np.random.PCG64(sub_seed(seed, 11)))
    f = 1.0 + cfg.array.power_disorder * rng.standard_normal(n)
    return np.clip(f, 1e-3, None)


# --- scenarios --------------------------------------------------------------

def run_bob_profile(cfg, seed, out):
    res = ScenarioResult("bob_profile")
    ratio, opt = bob_ratio(cfg)
    vol, pot = bob_potential(cfg, cfg.powers.bob_mW)
    export.write_volume(out / "bob_volume.vol", vol)
    res.files["bob_volume.vol"] = "binary volume: header line then float64 intensity (W/m^2), C order x,y,z"
    td = potentials.trap_depth(pot)
    i, j, k = td.center_index
    export.write_slice(out / "bob_slice_xz.csv", vol, 1, j)
    export.write_slice(out / "bob_slice_xy.csv", vol, 2, k)
    for name in ("bob_slice_xz.csv", "bob_slice_xy.csv"):
        res.files[name] = ",".join(export.SLICE_COLUMNS)
    if opt is not None:
        export.write_table(out / "bob_ratio_scan.csv", ("ratio", "depth_uK"),
                           [(r, d / K_B * 1e6) for r, d in opt.samples])
        res.files["bob_ratio_scan.csv"] = "ratio,depth_uK"
    darkness = float(vol.values[i, j, k] / vol.values.max())
    res.summary.update(ratio=ratio, depth_uK=td.depth / K_B * 1e6, center_over_shell=darkness)
    res.check("bob_darkness", darkness < 0.02, f"center/shell intensity {darkness:.4f} (< 0.02)")
    if opt is not None:
        interior = cfg.bob.search_min + 1e-3 < ratio < cfg.bob.search_max - 1e-3
        res.check("ratio_interior_optimum", interior and not opt.multimodal,
                  f"optimal ratio {ratio:.4f} inside ({cfg.bob.search_min}, {cfg.bob.search_max})")
    return res


def run_trap_character(cfg, seed, out):
    res = ScenarioResult("trap_character")
    _, pot = bob_potential(cfg, cfg.powers.bob_mW)
    depth_uK = potentials.trap_depth(pot).depth / K_B * 1e6
    _, pot_osc = bob_potential(cfg, cfg.powers.oscillation_bob_mW)
    nu = potentials.harmonic_frequencies(pot_osc)
    nu4 = potentials.harmonic_frequencies(pot_osc.scaled(4.0))
    nu_t = 0.5 * (nu[0] + nu[1])

    factors = site_power_factors(cfg, seed)
    sites = []
    base = potentials.characterize(pot)
    for sid, (pos, f) in enumerate(zip(array_geometry(cfg).site_positions(), factors)):
        tc = potentials.TrapCharacterization(base.center + np.append(pos, 0.0), base.depth * f,
                                             base.frequencies * math.sqrt(f), base.open)
        sites.append((sid, tc))
    export.write_traps(out / "traps_bob.csv", sites)
    res.files["traps_bob.csv"] = ",".join(export.TRAP_COLUMNS)

    # tweezer from a simulated focus of the Gaussian pupil
    w0 = cfg.powers.tweezer_waist_um * 1e-6
    design = bob_design(cfg)
    pupil = optics.PupilSpec(design.pupil.grid_size, design.pupil.physical_extent,
                             design.pupil.wavelength, design.pupil.focal_length,
                             optics.input_waist_for(w0, design.pupil.wavelength,
                                                    design.pupil.focal_length))
    illum = optics.gaussian_illumination(pupil, cfg.powers.tweezer_mW * 1e-3)
    tvol = optics.focal_volume(illum, pupil, *focal_window(cfg).axes())
    tpot = potentials.dipole_potential(tvol)
    ttc = potentials.characterize(tpot)
    export.write_traps(out / "traps_tweezer.csv", [(0, ttc)])
    res.files["traps_tweezer.csv"] = ",".join(export.TRAP_COLUMNS)

    res.summary.update(bob_depth_uK=depth_uK, bob_nu_kHz=list(nu / 1e3),
                       tweezer_depth_mK=ttc.depth_uK / 1e3, tweezer_nu_kHz=list(ttc.frequencies / 1e3))
    res.check("bob_depth", 50 <= depth_uK <= 90,
              f"depth {depth_uK:.1f} uK at {cfg.powers.bob_mW} mW (50-90 uK)")
    res.check("bob_frequency", 12.6e3 <= nu_t <= 19.0e3,
              f"transverse nu {nu_t / 1e3:.2f} kHz at {cfg.powers.oscillation_bob_mW} mW (12.6-19.0 kHz)")
    ratio4 = nu4[:2].mean() / nu_t
    res.check("frequency_power_scaling", abs(ratio4 - 2) < 0.02,
              f"nu(4P)/nu(P) = {ratio4:.5f} (2 within 1%)")
    res.check("tweezer_depth", abs(ttc.depth_uK / 1e3 - 1.0) < 0.1,
              f"tweezer depth {ttc.depth_uK / 1e3:.3f} mK (1 mK within 10%)")
    return res


def run_rabi_array(cfg, seed, out):
    res = ScenarioResult("rabi_array")
    r = cfg.rabi
    geom = array_geometry(cfg)
    pos = geom.site_positions()
    model = populations.RabiArrayModel(pos, r.gradient_MHz_per_mm * 1e9, r.node_um * 1e-6,
                                       r.omega0_kHz * 1e3, r.damping_per_s)
    t = np.arange(0, r.t_max_us * 1e-6 + 1e-12, r.t_step_us * 1e-6)
    per_site, avg = populations.rabi_signal(model, t)
    header = ["t_s"] + [f"site_{i:02d}" for i in range(len(pos))] + ["average"]
    export.write_table(out / "rabi_signal.csv", header, zip(t, *per_site, avg))
    res.files["rabi_signal.csv"] = ",".join(header)

    rows, omegas, sig = [], [], []
    for i, y in enumerate(per_site):
        fit = fitting.fit_damped_sine(fitting.Curve(t, y))
        rows.append((i, pos[i, 0], fit["frequency"], fit.sigmas["frequency"], fit["tau_d"]))
        omegas.append(fit["frequency"])
        sig.append(fit.sigmas["frequency"])
    export.write_table(out / "rabi_fits.csv",
                       ("site_id", "x_m", "rabi_Hz", "rabi_sigma_Hz", "tau_d_s"), rows)
    res.files["rabi_fits.csv"] = "site_id,x_m,rabi_Hz,rabi_sigma_Hz,tau_d_s"
    w = 1.0 / np.maximum(np.asarray(sig), 1e-9 * np.max(omegas))
    slope, icpt = np.polyfit(pos[:, 0], omegas, 1, w=w)
    g = model.gradient
    revival, collapse = populations.revival_time(t, avg)
    expected = 1.0 / (g * geom.pitch)
    res.summary.update(fitted_gradient_MHz_per_mm=slope / 1e9, revival_us=revival * 1e6,
                       collapse_us=collapse * 1e6)
    res.check("rabi_gradient", abs(slope / g - 1) < 0.05,
              f"fitted gradient {slope / 1e9:.4f} MHz/mm vs {g / 1e9:.4f} (5%)")
    res.check("rabi_revival", abs(revival / expected - 1) < 0.05,
              f"revival {revival * 1e6:.2f} us vs 1/(g pitch) {expected * 1e6:.2f} us (5%)")
    return res


def _oscillation_config(cfg, total, n_atoms):
    d = cfg.dynamics
    tm = cfg.timing
    delays = tuple(np.round(np.arange(tm.delay_start_us, tm.delay_stop_us + 1e-9, tm.delay_step_us)
                            * 1e-6, 12))
    return dynamics.OscillationConfig(
        bob_offset=d.offset_nm * 1e-9, offset_axis=AXES[d.offset_axis],
        off_window=tm.off_window_us * 1e-6, delays=delays, total_time=total,
        atoms_per_point=n_atoms, recoil_kick=d.recoil_mm_s * 1e-3, kick_axis=AXES[d.kick_axis])


def bob_survival(cfg, pot, tweezer, taus, seed, n_atoms):
    """Fraction of atoms bound in the tweezer after ``tau`` in the bottle beam."""
    spec = dynamics.thermal_spec_for(cfg.temperatures.atoms_uK * 1e-6, tweezer)
    center = potentials.local_quadratic_fit(pot).center
    p = pot.shifted(-center)
    dt = dynamics.default_timestep(potentials.harmonic_frequencies(pot))
    s = dynamics.sample_thermal(spec, n_atoms, seed)
    s.velocity += cfg.dynamics.recoil_mm_s * 1e-3 * np.asarray(AXES[cfg.dynamics.kick_axis])
    alive = np.ones(n_atoms, dtype=bool)
    out, t_now = [], 0.0
    for tau in taus:
        dynamics.evolve(s, p, dt, tau - t_now, alive)
        t_now = tau
        e = s.kinetic_energy() + tweezer.energy_at(s.position)
        out.append(np.count_nonzero(alive & (e < 0)) / n_atoms)
    return np.array(out)


def run_decay_trapping(cfg, seed, out):
    res = ScenarioResult("decay_trapping")
    tm = cfg.timing
    rm = cfg.rate_model
    model = populations.build_rate_model((rm.n_min, rm.n_max), cfg.temperatures.environment_K,
                                         anchor_lifetime=rm.anchor_lifetime_ms * 1e-3,
                                         leak=rm.leak_per_s)
    det = populations.DetectionModel(cfg.detection.loading, cfg.detection.preparation,
                                     cfg.detection.purity, cfg.detection.optical_recapture,
                                     cfg.detection.background)
    tau_min = tm.tau_min_us * 1e-6
    taus = np.unique(np.concatenate([
        [tau_min], np.geomspace(tau_min, tm.tau_max_ms * 1e-3, cfg.decay.points)]))
    tw = analytic_tweezer(cfg)
    n_atoms = cfg.dynamics.trapping_atoms
    if cfg.decay.bob_enabled:
        _, pot = bob_potential(cfg, cfg.powers.bob_mW)
        survival = bob_survival(cfg, pot, tw, taus, sub_seed(seed, 21), n_atoms)
    else:
        rr = dynamics.ReleaseRecaptureConfig(
            tuple(taus), tw.depth, tw.waist, n_atoms,
            recoil_kick=cfg.dynamics.recoil_mm_s * 1e-3, kick_time=tm.excitation_us * 1e-6,
            kick_axis=AXES[cfg.dynamics.kick_axis], gravity=cfg.dynamics.gravity)
        survival = dynamics.release_recapture(
            rr, dynamics.thermal_spec_for(cfg.temperatures.atoms_uK * 1e-6, tw), sub_seed(seed, 21)).mean
    p52 = populations.decay_reference_curve(model, taus, tau_min, tm.excitation_us * 1e-6,
                                            1.0, rm.level)
    expected = populations.detection_pipeline(p52 * survival, det)
    shots = cfg.fit.trapping_atoms
    rng = np.random.Generator(np.random.PCG64(sub_seed(seed, 22)))
    measured = rng.binomial(shots, expected) / shots
    stderr = np.sqrt(np.clip(measured * (1 - measured), 1.0 / shots, None) / shots)
    anchor = measured[0]
    p_lifetime = populations.decay_reference_curve(model, taus, tau_min, tm.excitation_us * 1e-6,
                                                   anchor, rm.level)
    pn = populations.normalized_trapping(measured, p_lifetime)
    pn_err = stderr / p_lifetime
    header = ("tau_s", "p_recap", "p_recap_stderr", "p_lifetime", "p_n", "p_n_stderr", "survival")
    export.write_table(out / "decay_curve.csv", header,
                       zip(taus, measured, stderr, p_lifetime, pn, pn_err, survival))
    res.files["decay_curve.csv"] = ",".join(header)

    curve = fitting.Curve(taus, pn, pn_err, probability=False)
    fit = fitting.fit_exponential(curve, floor=0.0, t_start=cfg.fit.trapping_start_ms * 1e-3)
    res.fits["trapping_time"] = fit
    export.write_fit(out / "fit_trapping_time.csv", fit)
    res.files["fit_trapping_time.csv"] = ",".join(export.FIT_COLUMNS)
    early = taus <= 1e-3
    res.summary.update(bob_enabled=cfg.decay.bob_enabled, tau_c_s=fit["tau_c"],
                       lifetime_1e_s=populations.one_over_e_time(model, rm.level),
                       departure_lifetime_s=model.lifetime(rm.level))
    if cfg.decay.bob_enabled:
        flat = float(np.mean(pn[early]))
        res.check("bob_trapping_flat", flat > 0.9,
                  f"mean normalized trapping over the first ms {flat:.3f} (> 0.9)")
    else:
        below = taus[survival < 0.5]
        t_half = float(below[0]) if len(below) else math.inf
        res.check("free_flight_collapse", t_half <= 100e-6,
                  f"free-flight survival below 1/2 at {t_half * 1e6:.0f} us (<= 100 us)")
    return res


def run_bob_oscillation(cfg, seed, out):
    res = ScenarioResult("bob_oscillation")
    _, pot = bob_potential(cfg, cfg.powers.oscillation_bob_mW)
    tw = analytic_tweezer(cfg)
    spec = dynamics.thermal_spec_for(cfg.temperatures.atoms_uK * 1e-6, tw)
    ocfg = _oscillation_config(cfg, cfg.timing.oscillation_tau_us * 1e-6,
                               cfg.dynamics.oscillation_atoms)
    nu = potentials.harmonic_frequencies(pot)
    axis = int(np.argmax(np.abs(ocfg.offset_axis)))
    center = potentials.local_quadratic_fit(pot).center
    factors = site_power_factors(cfg, seed)
    curves, rows = [], []
    for sid, f in enumerate(factors):
        c = dynamics.bob_oscillation_experiment(ocfg, pot.scaled(f), tw, spec,
                                                sub_seed(seed, 31, sid), bob_center=center)
        curves.append(c.mean)
        fit = fitting.fit_damped_sine(fitting.Curve(c.abscissa, c.mean, np.maximum(c.stderr, 1e-3)))
        rows.append((sid, f, nu[axis] * math.sqrt(f) / 1e3, fit["frequency"] / 2e3,
                     fit.sigmas["frequency"] / 2e3, fit.converged))
    delays = np.asarray(ocfg.delays)
    avg = np.mean(curves, axis=0)
    header = ["delay_s"] + [f"site_{i:02d}" for i in range(len(curves))] + ["average"]
    export.write_table(out / "oscillation_curves.csv", header, zip(delays, *curves, avg))
    res.files["oscillation_curves.csv"] = ",".join(header)
    fhead = ("site_id", "power_factor", "nu_harmonic_kHz", "nu_fit_kHz", "nu_fit_sigma_kHz", "converged")
    export.write_table(out / "oscillation_fits.csv", fhead, rows)
    res.files["oscillation_fits.csv"] = ",".join(fhead)

    peak, _, _ = fitting.dominant_frequency(delays, avg)
    fitted = np.array([r[3] for r in rows if r[5]])
    res.summary.update(nu_harmonic_kHz=nu[axis] / 1e3, peak_kHz=peak / 1e3,
                       site_mean_kHz=float(np.mean(fitted)) if len(fitted) else math.nan,
                       site_std_kHz=float(np.std(fitted, ddof=1)) if len(fitted) > 1 else math.nan)
    rel = peak / (2 * nu[axis]) - 1
    res.check("oscillation_doubling", abs(rel) <= 0.05,
              f"spectral peak {peak / 1e3:.2f} kHz vs 2 nu_trap {2 * nu[axis] / 1e3:.2f} kHz "
              f"({rel * 100:+.1f}%, 5% allowed)")
    return res


def thermometry_config(cfg, kick=False):
    tm = cfg.timing
    taus = tuple(np.round(np.arange(0.0, tm.release_max_us + 1e-9, tm.release_step_us) * 1e-6, 12))
    tw = analytic_tweezer(cfg)
    return dynamics.ReleaseRecaptureConfig(
        taus, tw.depth, tw.waist, cfg.dynamics.atoms_per_point,
        recoil_kick=cfg.dynamics.recoil_mm_s * 1e-3 if kick else 0.0,
        kick_time=0.0, kick_axis=AXES[cfg.dynamics.kick_axis], gravity=cfg.dynamics.gravity,
        wavelength=cfg.pupil.wavelength_nm * 1e-9)


def temperature_grid(cfg):
    f = cfg.fit
    return np.arange(f.temperature_min_uK, f.temperature_max_uK + 1e-9, f.temperature_step_uK) * 1e-6


def run_thermometry(cfg, seed, out):
    res = ScenarioResult("thermometry")
    rr = thermometry_config(cfg)
    tw = rr.tweezer()
    t_true = cfg.temperatures.atoms_uK * 1e-6
    measured = dynamics.release_recapture(rr, dynamics.thermal_spec_for(t_true, tw), sub_seed(seed, 41))
    export.write_curve(out / "release_recapture.csv", measured)
    res.files["release_recapture.csv"] = ",".join(export.CURVE_COLUMNS)
    fit = fitting.fit_temperature(fitting.Curve.from_recapture(measured), rr, temperature_grid(cfg),
                                  sub_seed(seed, 42))
    res.fits["temperature"] = fit
    export.write_fit(out / "fit_temperature.csv", fit)
    res.files["fit_temperature.csv"] = ",".join(export.FIT_COLUMNS)
    export.write_table(out / "temperature_chi2.csv", ("T_K", "chi2"),
                       zip(fit.extra["grid"], fit.extra["chi2"]))
    res.files["temperature_chi2.csv"] = "T_K,chi2"

    cold = cfg.temperatures.cold_uK * 1e-6
    hot = cfg.temperatures.hot_uK * 1e-6
    ratio = cfg.dynamics.recoil_mm_s * 1e-3 / math.sqrt(K_B * cold / M_RB87)
    t_hot = dynamics.rms_drift_time(hot, tw)
    t_cold = dynamics.rms_drift_time(cold, tw)
    res.summary.update(T_fit_uK=fit["T"] * 1e6, recoil_over_thermal=ratio,
                       drift_time_hot_us=t_hot * 1e6, drift_time_cold_us=t_cold * 1e6)
    res.check("temperature_closure", fit.converged and abs(fit["T"] - t_true) <= 1e-6,
              f"fitted {fit['T'] * 1e6:.2f} uK vs generated {t_true * 1e6:.2f} uK (1 uK)")
    res.check("recoil_ratio", abs(ratio - 0.23) <= 0.01,
              f"recoil / thermal velocity at {cold * 1e6:.0f} uK = {ratio:.4f} (0.23 +- 0.01)")
    res.check("drift_time_hot", 6e-6 <= t_hot <= 14e-6,
              f"r.m.s. drift past the waist at {hot * 1e6:.0f} uK: {t_hot * 1e6:.1f} us (10 us +- 40%)")
    res.check("drift_time_cold", 11.4e-6 <= t_cold <= 26.6e-6,
              f"r.m.s. drift past the waist at {cold * 1e6:.0f} uK: {t_cold * 1e6:.1f} us (19 us +- 40%)")
    return res


SCENARIOS = {
    "bob_profile": (run_bob_profile, "bottle-beam intensity volume and ratio optimization"),
    "trap_character": (run_trap_character, "depths and frequencies of bottle-beam and tweezer sites"),
    "rabi_array": (run_rabi_array, "site-resolved Rabi flopping, gradient fit, collapse and revival"),
    "decay_trapping": (run_decay_trapping, "lifetime-limited recapture and normalized trapping time"),
    "bob_oscillation": (run_bob_oscillation, "recapture versus bottle-beam off-window delay"),
    "thermometry": (run_thermometry, "release-recapture curve and Monte-Carlo temperature fit"),
}


def run_scenario(name, cfg, seed, out):
    if name not in SCENARIOS:
        raise KeyError(f"unknown scenario {name!r}; choose from {', '.join(SCENARIOS)}")
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    res = SCENARIOS[name][0](cfg, seed, out)
    res.seconds = time.perf_counter() - t0
    return res
