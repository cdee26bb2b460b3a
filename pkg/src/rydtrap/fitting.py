"""Least-squares estimators: damped sine, exponential decay and Monte-Carlo temperature.

The damped-sine and exponential fitters wrap ``scipy.optimize.least_squares``.
Binomial standard errors, when present, are used as weights and the
reported uncertainties are then absolute; otherwise unit weights are used
and the covariance is scaled by the reduced chi-square.
"""

import json
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import optimize

XTOL = 1e-8


@dataclass(frozen=True)
class Curve:
    """Sampled curve; ``probability`` enables the [0, 1.05] range check."""

    abscissa: np.ndarray
    ordinate: np.ndarray
    stderr: np.ndarray = None
    probability: bool = True

    def __post_init__(self):
        x = np.asarray(self.abscissa, dtype=float)
        y = np.asarray(self.ordinate, dtype=float)
        if x.ndim != 1 or x.shape != y.shape:
            raise ValueError("abscissa and ordinate must be 1D arrays of equal length")
        if np.any(np.diff(x) <= 0):
            raise ValueError("abscissa must be strictly increasing")
        if not np.all(np.isfinite(y)):
            raise ValueError("ordinate has non-finite values")
        if self.probability and (np.any(y < 0) or np.any(y > 1.05)):
            raise ValueError("probability ordinate outside [0, 1.05]")
        object.__setattr__(self, "abscissa", x)
        object.__setattr__(self, "ordinate", y)
        if self.stderr is not None:
            e = np.asarray(self.stderr, dtype=float)
            if e.shape != y.shape or np.any(e < 0):
                raise ValueError("stderr must be non-negative and match the ordinate")
            object.__setattr__(self, "stderr", e)

    def __len__(self):
        return len(self.abscissa)

    @classmethod
    def from_recapture(cls, rc):
        return cls(rc.abscissa, rc.mean, rc.stderr)

    def weights(self):
        """Per-point sigma used in the residuals; zeros are floored."""
        if self.stderr is None:
            return np.ones(len(self))
        e = self.stderr
        pos = e[e > 0]
        floor = pos.min() if len(pos) else 1.0
        return np.where(e > 0, e, floor)


@dataclass
class FitResult:
    model: str
    params: dict
    sigmas: dict
    redchi: float
    converged: bool
    iterations: int
    message: str = ""
    extra: dict = field(default_factory=dict)

    def __getitem__(self, name):
        return self.params[name]

    def rows(self):
        return [(k, self.params[k], self.sigmas.get(k, math.nan)) for k in self.params]

    def to_text(self):
        block = {
            "model": self.model,
            "converged": self.converged,
            "iterations": self.iterations,
            "redchi": self.redchi,
            "params": {k: {"value": v, "sigma": self.sigmas.get(k)} for k, v in self.params.items()},
        }
        if self.message:
            block["message"] = self.message
        return json.dumps(block, indent=2, sort_keys=True)


def _nonconverged(model, names, message):
    nan = {k: math.nan for k in names}
    return FitResult(model, dict(nan), dict(nan), math.nan, False, 0, message)


def _solve(fun, p0, sigma):
    """Run least squares; returns the solution, its covariance and chi-square."""
    res = optimize.least_squares(fun, p0, method="lm", xtol=XTOL, ftol=1e-15, gtol=1e-15,
                                 x_scale="jac", max_nfev=20000)
    chi2 = float(np.sum(res.fun**2))
    jtj = res.jac.T @ res.jac
    try:
        cov = np.linalg.pinv(jtj)
    except np.linalg.LinAlgError:
        cov = np.full((len(p0), len(p0)), np.nan)
    return res, cov, chi2


def damped_sine(t, amplitude, frequency, tau, phase, offset):
    return offset + amplitude * np.exp(-t / tau) * np.cos(2 * np.pi * frequency * t + phase)


def dominant_frequency(t, y, oversample=8, f_max=None):
    """Frequency of the largest periodogram peak (non-uniform sampling allowed).

    Returns (frequency, captured, complex amplitude at the peak), where
    ``captured`` is the fraction of the variance carried by a sinusoid at the
    peak: about 1 for a clean oscillation, of order 2 ln(N) / N for white noise.
    """
    t = np.asarray(t, dtype=float)
    y = np.asarray(y, dtype=float) - np.mean(y)
    span = t[-1] - t[0]
    if f_max is None:
        f_max = 0.5 / np.median(np.diff(t))
    df = 1.0 / (span * oversample)
    freqs = np.arange(df, f_max + df / 2, df)
    phases = np.exp(-2j * np.pi * np.outer(freqs, t))
    spec = phases @ y
    power = np.abs(spec) ** 2
    k = int(np.argmax(power))
    if 0 < k < len(freqs) - 1:
        a, b, c = np.log(power[k - 1: k + 2] + 1e-300)
        den = a - 2 * b + c
        shift = 0.5 * (a - c) / den if den != 0 else 0.0
    else:
        shift = 0.0
    f = freqs[k] + shift * df
    s = np.exp(-2j * np.pi * f * t) @ y
    var = float(np.mean(y**2))
    captured = 2 * abs(s) ** 2 / len(t) ** 2 / var if var > 0 else 0.0
    return float(f), float(captured), s


FALSE_ALARM = 1e-3


def peak_threshold(n):
    """Captured-variance level a white-noise periodogram exceeds with probability ~FALSE_ALARM."""
    return min(2 * math.log(n / FALSE_ALARM) / n, 0.5)


def fit_damped_sine(curve, initial_guess=None):
    """Fit ``C + A exp(-t/tau_d) cos(2 pi f t + phi)``.

    Result parameters: amplitude, frequency, tau_d, phase, offset.  The
    output is canonical (amplitude > 0, phase in [0, 2 pi)).  The time origin
    is the first abscissa value shifted back to t = 0, i.e. the model is
    evaluated at the absolute abscissa.
    """
    names = ["amplitude", "frequency", "tau_d", "phase", "offset"]
    t, y = curve.abscissa, curve.ordinate
    if len(t) < 8:
        raise ValueError("damped-sine fit needs at least 8 points")
    sigma = curve.weights()
    span = t[-1] - t[0]
    if initial_guess is None:
        f0, captured, s = dominant_frequency(t, y)
        # the periodogram peak of a barely one-period record sits low, hence 0.8
        if captured < peak_threshold(len(t)) or f0 * span < 0.8:
            return _nonconverged("damped_sine", names, "no spectral peak above noise")
        c0 = float(np.median(y))
        q75, q25 = np.percentile(y, [75, 25])
        a0 = max((q75 - q25) / math.sqrt(2), 1e-12)
        # the periodogram phase refers to the absolute time origin
        phi0 = float(np.angle(s))
        starts = [(a0, f0, k0, phi0, c0) for k0 in (0.5 / span, 3.0 / span)]
    else:
        g = dict(zip(names, initial_guess)) if not isinstance(initial_guess, dict) else initial_guess
        starts = [(g["amplitude"], g["frequency"], 1.0 / g["tau_d"], g["phase"], g["offset"])]

    def resid(p):
        a, f, k, ph, c = p
        return (c + a * np.exp(-k * t) * np.cos(2 * np.pi * f * t + ph) - y) / sigma

    best = None
    for p0 in starts:
        try:
            out = _solve(resid, np.array(p0, dtype=float), sigma)
        except (ValueError, FloatingPointError):
            continue
        if best is None or out[2] < best[2]:
            best = out
    if best is None:
        return _nonconverged("damped_sine", names, "solver failed")
    res, cov, chi2 = best
    a, f, k, ph, c = res.x
    if a < 0:
        a, ph = -a, ph + math.pi
    ph = ph % (2 * math.pi)
    dof = max(len(t) - 5, 1)
    redchi = chi2 / dof
    if curve.stderr is None:
        cov = cov * redchi
    err = np.sqrt(np.clip(np.diag(cov), 0, None))
    tau = 1.0 / k if k > 0 else math.inf
    tau_err = err[2] / k**2 if k > 0 else math.inf
    converged = bool(res.status > 0 and f > 0)
    return FitResult(
        "damped_sine",
        {"amplitude": float(a), "frequency": float(f), "tau_d": float(tau), "phase": float(ph),
         "offset": float(c)},
        {"amplitude": float(err[0]), "frequency": float(err[1]), "tau_d": float(tau_err),
         "phase": float(err[3]), "offset": float(err[4])},
        float(redchi), converged, int(res.nfev), res.message,
    )


def exponential(t, amplitude, tau, floor):
    return floor + amplitude * np.exp(-t / tau)


def fit_exponential(curve, floor=0.0, free_floor=False, t_start=None, sensitivity_step=1e-4):
    """Fit ``B + A exp(-t/tau_c)`` to the points with t >= ``t_start``.

    ``floor`` is the fixed background B, or the starting value when
    ``free_floor``.  With a fixed floor the result also carries
    ``extra["dtau_dfloor"]``, the derivative of tau_c with respect to B.
    """
    if t_start is not None:
        keep = curve.abscissa >= t_start
        if curve.stderr is not None:
            curve = Curve(curve.abscissa[keep], curve.ordinate[keep], curve.stderr[keep],
                          curve.probability)
        else:
            curve = Curve(curve.abscissa[keep], curve.ordinate[keep], None, curve.probability)
    t, y = curve.abscissa, curve.ordinate
    if len(t) < 4:
        raise ValueError("exponential fit needs at least 4 points")
    sigma = curve.weights()
    result = _fit_exponential(t, y, sigma, floor, free_floor, curve.stderr is not None)
    if result.converged and not free_floor and sensitivity_step:
        up = _fit_exponential(t, y, sigma, floor + sensitivity_step, False, True)
        dn = _fit_exponential(t, y, sigma, floor - sensitivity_step, False, True)
        if up.converged and dn.converged:
            result.extra["dtau_dfloor"] = (up["tau_c"] - dn["tau_c"]) / (2 * sensitivity_step)
    return result


def _fit_exponential(t, y, sigma, floor, free_floor, absolute):
    names = ["amplitude", "tau_c", "floor"]
    b0 = floor
    z = y - b0
    ok = z > 0
    if ok.sum() >= 2:
        slope, icpt = np.polyfit(t[ok], np.log(z[ok]), 1)
    else:
        slope, icpt = -1.0 / (t[-1] - t[0]), 0.0
    if slope >= 0:
        return _nonconverged("exponential", names, "data do not decay")
    p0 = [math.exp(icpt), -slope] + ([b0] if free_floor else [])

    def resid(p):
        b = p[2] if free_floor else floor
        return (b + p[0] * np.exp(-p[1] * t) - y) / sigma

    res, cov, chi2 = _solve(resid, np.array(p0), sigma)
    npar = 3 if free_floor else 2
    redchi = chi2 / max(len(t) - npar, 1)
    if not absolute:
        cov = cov * redchi
    err = np.sqrt(np.clip(np.diag(cov), 0, None))
    a, k = res.x[0], res.x[1]
    b = float(res.x[2]) if free_floor else float(floor)
    if k <= 0:
        return _nonconverged("exponential", names, "fitted decay rate is not positive")
    return FitResult(
        "exponential",
        {"amplitude": float(a), "tau_c": float(1.0 / k), "floor": b},
        {"amplitude": float(err[0]), "tau_c": float(err[1] / k**2),
         "floor": float(err[2]) if free_floor else 0.0},
        float(redchi), bool(res.status > 0), int(res.nfev), res.message,
    )


def background_shift(curve, delta, reference=None, **fit_kwargs):
    """Relative change of tau_c when a background ``delta`` is subtracted.

    ``delta`` is a recapture probability; when the curve is normalized by a
    reference (the lifetime-only expectation), pass it as ``reference`` so
    the background is divided by it before subtraction.
    Returns (shift, baseline fit, perturbed fit).
    """
    ref = np.ones(len(curve)) if reference is None else np.asarray(reference, dtype=float)
    shifted = Curve(curve.abscissa, curve.ordinate - delta / ref, curve.stderr, probability=False)
    base = fit_exponential(curve, **fit_kwargs)
    pert = fit_exponential(shifted, **fit_kwargs)
    return (pert["tau_c"] - base["tau_c"]) / base["tau_c"], base, pert


def _replica_seed(seed, tag, k):
    return int(np.random.SeedSequence([seed, tag, k]).generate_state(1, np.uint64)[0])


def _chi2_scan(y, var_meas, rr_config, grid, tw, seed):
    from .dynamics import release_recapture, thermal_spec_for

    n = rr_config.atoms_per_point
    chi2 = np.empty(len(grid))
    for i, temp in enumerate(grid):
        model = release_recapture(rr_config, thermal_spec_for(temp, tw), seed)
        p = np.clip(model.mean, 0.5 / n, 1 - 0.5 / n)
        chi2[i] = float(np.sum((y - model.mean) ** 2 / (var_meas + p * (1 - p) / n)))
    return chi2


def _parabolic_minimum(grid, chi2):
    k = int(np.argmin(chi2))
    if k in (0, len(grid) - 1):
        return float(grid[k]), math.nan, float(chi2[k]), True
    c2, c1, c0 = np.polyfit(grid[k - 1: k + 2], chi2[k - 1: k + 2], 2)
    if c2 <= 0:
        return float(grid[k]), math.nan, float(chi2[k]), False
    t = float(-c1 / (2 * c2))
    return t, float(1.0 / math.sqrt(c2)), float(c0 + c1 * t + c2 * t**2), False


def fit_temperature(measured, rr_config, t_grid, seed, tweezer=None, replicas=8):
    """Monte-Carlo temperature fit on a grid with parabolic refinement.

    Every grid point uses the same seed, so the simulated curves share their
    random numbers and chi-square varies smoothly with T.  A minimum at
    either grid edge is flagged in ``extra["edge"]`` and reported as not
    converged.

    All delays reuse one atom sample, in the data as in the model, so the
    residuals are correlated and the chi-square + 1 width understates the
    error (kept as ``extra["sigma_chi2"]``).  The reported sigma is the
    scatter of T over ``replicas`` repetitions of the whole fit on fresh
    data simulated at the best-fit T, each against a fresh model seed.  The
    data are assumed to hold ``rr_config.atoms_per_point`` atoms per delay.
    """
    from .dynamics import release_recapture, thermal_spec_for

    grid = np.asarray(sorted(t_grid), dtype=float)
    if len(grid) < 3:
        raise ValueError("temperature grid needs at least 3 points")
    if np.any(grid <= 0):
        raise ValueError("temperatures must be positive")
    if not np.allclose(measured.abscissa, np.asarray(rr_config.off_times), rtol=1e-12, atol=0):
        rr_config = replace(rr_config, off_times=tuple(measured.abscissa))
    tw = rr_config.tweezer() if tweezer is None else tweezer
    var_meas = measured.stderr**2 if measured.stderr is not None else np.zeros(len(measured))
    chi2 = _chi2_scan(measured.ordinate, var_meas, rr_config, grid, tw, seed)
    t_best, sig_chi2, chi_min, edge = _parabolic_minimum(grid, chi2)
    extra = {"grid": grid, "chi2": chi2, "edge": edge, "sigma_chi2": sig_chi2}
    dof = max(len(measured) - 1, 1)
    if edge:
        return FitResult("temperature", {"T": t_best}, {"T": math.nan}, chi_min / dof, False,
                         len(grid), "minimum at grid edge: range too narrow", extra)
    sig = sig_chi2
    if replicas >= 2:
        spec = thermal_spec_for(t_best, tw)
        reps = []
        for k in range(replicas):
            fake = release_recapture(rr_config, spec, _replica_seed(seed, 1, k))
            c = _chi2_scan(fake.mean, fake.stderr**2, rr_config, grid, tw, _replica_seed(seed, 2, k))
            reps.append(_parabolic_minimum(grid, c)[0])
        extra["replica_T"] = np.array(reps)
        sig = float(np.std(reps, ddof=1))
    return FitResult("temperature", {"T": t_best}, {"T": sig}, chi_min / dof, True,
                     len(grid), "", extra)
