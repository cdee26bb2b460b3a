"""Internal-state populations: circular-ladder relaxation, site-resolved Rabi
flopping and the detection-efficiency model.

Rate matrices follow the column convention ``dP/dt = M @ P`` where
``M[j, i]`` is the rate from level ``i`` to level ``j`` and each column sums
to zero.  The last level is an aggregate sink for everything leaving the
modelled ladder.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy import linalg, optimize, signal

from .constants import H_PLANCK, K_B, M_ELECTRON, M_RB87, RYDBERG_HZ

# Rydberg frequency with the Rb-87 reduced-mass correction
RYDBERG_RB87_HZ = RYDBERG_HZ / (1.0 + M_ELECTRON / M_RB87)

ANCHOR_N = 50
ANCHOR_LIFETIME = 30e-3
REQUIRED_LEVELS = (48, 56)


def spontaneous_rate(n, anchor_n=ANCHOR_N, anchor_lifetime=ANCHOR_LIFETIME):
    """Spontaneous decay rate of circular level n to n-1 (s^-1), n^-5 scaling."""
    return (anchor_n / np.asarray(n, dtype=float)) ** 5 / anchor_lifetime


def transition_frequency(n):
    """Frequency (Hz) of the circular n -> n-1 transition."""
    n = np.asarray(n, dtype=float)
    return RYDBERG_RB87_HZ * (1.0 / (n - 1) ** 2 - 1.0 / n**2)


def thermal_occupation(frequency, temperature):
    """Planck mean photon number; zero at T = 0."""
    f = np.asarray(frequency, dtype=float)
    if temperature < 0:
        raise ValueError("temperature must be >= 0")
    if temperature == 0:
        return np.zeros_like(f)
    with np.errstate(over="ignore", divide="ignore"):
        return 1.0 / np.expm1(H_PLANCK * f / (K_B * temperature))


@dataclass
class RateModel:
    """Circular levels ``n_min..n_max`` plus one sink, with their rate matrix."""

    n_min: int
    n_max: int
    temperature: float
    matrix: np.ndarray
    leak: float = 0.0

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=float)
        size = self.n_max - self.n_min + 2
        if m.shape != (size, size):
            raise ValueError(f"rate matrix must be {size}x{size}")
        off = m - np.diag(np.diag(m))
        if np.any(off < 0):
            raise ValueError("off-diagonal rates must be >= 0")
        scale = max(np.abs(m).max(), 1.0)
        if np.any(np.abs(m.sum(axis=0)) > 1e-12 * scale):
            raise ValueError("rate matrix columns must sum to zero")
        self.matrix = m

    @property
    def levels(self):
        return np.arange(self.n_min, self.n_max + 1)

    @property
    def size(self):
        return self.n_max - self.n_min + 2

    def index(self, n):
        if not self.n_min <= n <= self.n_max:
            raise ValueError(f"level {n} outside [{self.n_min}, {self.n_max}]")
        return n - self.n_min

    def rate(self, n_from, n_to):
        return float(self.matrix[self.index(n_to), self.index(n_from)])

    def lifetime(self, n):
        """Inverse total departure rate of level n."""
        out = -self.matrix[self.index(n), self.index(n)]
        return math.inf if out == 0 else 1.0 / out


def ladder_matrix(n_min, n_max, temperature, leak=0.0, closed=False,
                  anchor_n=ANCHOR_N, anchor_lifetime=ANCHOR_LIFETIME):
    """Rate matrix of the circular ladder.

    Transitions that would leave ``[n_min, n_max]`` feed the sink, or are
    dropped when ``closed`` (used for equilibrium checks).
    """
    if n_max <= n_min:
        raise ValueError("need at least two levels")
    size = n_max - n_min + 2
    sink = size - 1
    m = np.zeros((size, size))

    def add(i, j, rate):
        if rate <= 0:
            return
        if j is None:
            if closed:
                return
            j = sink
        m[j, i] += rate
        m[i, i] -= rate

    for n in range(n_min, n_max + 1):
        i = n - n_min
        down = spontaneous_rate(n, anchor_n, anchor_lifetime)
        down *= 1.0 + thermal_occupation(transition_frequency(n), temperature)
        add(i, i - 1 if n > n_min else None, float(down))
        # absorption n -> n+1 has the stimulated rate of the n+1 -> n line
        up = spontaneous_rate(n + 1, anchor_n, anchor_lifetime)
        up *= thermal_occupation(transition_frequency(n + 1), temperature)
        add(i, i + 1 if n < n_max else None, float(up))
        add(i, None, leak)
    return m


def build_rate_model(n_range=(30, 80), temperature=300.0, anchor_n=ANCHOR_N,
                     anchor_lifetime=ANCHOR_LIFETIME, leak=0.0):
    n_min, n_max = n_range
    if temperature < 0:
        raise ValueError("temperature must be >= 0")
    if n_min > REQUIRED_LEVELS[0] or n_max < REQUIRED_LEVELS[1]:
        raise ValueError(f"level range must contain {REQUIRED_LEVELS}")
    if leak < 0:
        raise ValueError("leak rate must be >= 0")
    m = ladder_matrix(n_min, n_max, temperature, leak, False, anchor_n, anchor_lifetime)
    return RateModel(n_min, n_max, temperature, m, leak)


@dataclass
class PopulationVector:
    """Occupation of each ladder level, with the sink as the last entry."""

    n_min: int
    probs: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=float)
        if np.any(p < -1e-12) or np.any(p > 1 + 1e-12):
            raise ValueError("populations must lie in [0, 1]")
        if abs(p.sum() - 1.0) > 1e-9:
            raise ValueError(f"populations sum to {p.sum()!r}, not 1")
        self.probs = np.clip(p, 0.0, 1.0)

    @classmethod
    def pure(cls, model, n):
        p = np.zeros(model.size)
        p[model.index(n)] = 1.0
        return cls(model.n_min, p)

    def __getitem__(self, n):
        return float(self.probs[n - self.n_min])

    @property
    def sink(self):
        return float(self.probs[-1])

    def total(self):
        return float(self.probs.sum())


def evolve_populations(model, initial, times):
    """Populations at each time via the matrix exponential of the rate matrix."""
    out = []
    for t in np.atleast_1d(np.asarray(times, dtype=float)):
        if t < 0:
            raise ValueError("times must be >= 0")
        out.append(PopulationVector(initial.n_min, linalg.expm(model.matrix * t) @ initial.probs))
    return out


def level_population(model, n, times, start=None):
    """P_n(t) starting from the pure level ``start`` (defaults to n)."""
    init = PopulationVector.pure(model, n if start is None else start)
    return np.array([p[n] for p in evolve_populations(model, init, times)])


def one_over_e_time(model, n=52, t_max=None):
    """First time at which P_n(t), starting pure in n, falls to 1/e."""
    if t_max is None:
        t_max = 50 * model.lifetime(n) if math.isfinite(model.lifetime(n)) else math.inf
    if not math.isfinite(t_max):
        return math.inf
    f = lambda t: level_population(model, n, [t])[0] - math.exp(-1)  # noqa: E731
    if f(t_max) > 0:
        return math.inf
    # P_n decreases monotonically from 1 at early times, so the first crossing is bracketed
    ts = np.linspace(0.0, t_max, 201)
    vals = level_population(model, n, ts) - math.exp(-1)
    k = int(np.flatnonzero(vals <= 0)[0])
    return optimize.brentq(f, ts[k - 1], ts[k], xtol=1e-12, rtol=1e-12)


TAU_MIN = 32e-6
T_EXCITATION = 15e-6


def decay_reference_curve(model, taus, tau_min=TAU_MIN, t_e=T_EXCITATION, anchor=1.0, level=52):
    """Expected recapture without trap losses: P_level(tau - 2 t_e) * anchor.

    ``anchor`` is the measured recapture at ``tau_min``; ``tau - 2 t_e`` is the
    time actually spent in the circular level.
    """
    taus = np.atleast_1d(np.asarray(taus, dtype=float))
    if np.any(taus < tau_min - 1e-15):
        raise ValueError("off times must be >= tau_min")
    t_i = np.maximum(taus - 2 * t_e, 0.0)
    return anchor * level_population(model, level, t_i)


def decay_ratio_by_propagation(model, taus, tau_min=TAU_MIN, t_e=T_EXCITATION, level=52):
    """P_lifetime(tau) / P_lifetime(tau_min) obtained by propagating the state
    reached at tau_min forward, instead of evaluating each time from t = 0."""
    taus = np.atleast_1d(np.asarray(taus, dtype=float))
    t0 = tau_min - 2 * t_e
    start = evolve_populations(model, PopulationVector.pure(model, level), [t0])[0]
    later = evolve_populations(model, start, taus - tau_min)
    return np.array([p[level] for p in later]) / start[level]


@dataclass
class RabiArrayModel:
    """Two-photon Rabi frequency varying linearly along x across the array."""

    positions: np.ndarray
    gradient: float = 1.18e9  # Hz per metre
    node: float = -45e-6
    omega0: float = 0.0
    damping: object = 5e3  # s^-1, scalar or one value per site

    def __post_init__(self):
        self.positions = np.atleast_2d(np.asarray(self.positions, dtype=float))
        if len(self.positions) < 1:
            raise ValueError("need at least one site")
        d = np.broadcast_to(np.asarray(self.damping, dtype=float), (len(self.positions),))
        if np.any(d < 0):
            raise ValueError("damping rates must be >= 0")
        if np.any(self.frequencies() < 0):
            raise ValueError("Rabi frequency is negative at some site; move the node")

    def frequencies(self):
        return self.omega0 + self.gradient * (self.positions[:, 0] - self.node)

    def damping_rates(self):
        return np.broadcast_to(np.asarray(self.damping, dtype=float), (len(self.positions),))


def rabi_signal(model, times):
    """Per-site P52(t) = (1 + exp(-gamma t) cos(2 pi Omega t)) / 2 and the array mean."""
    t = np.asarray(times, dtype=float)
    f = model.frequencies()[:, None]
    g = model.damping_rates()[:, None]
    per_site = 0.5 * (1.0 + np.exp(-g * t) * np.cos(2 * np.pi * f * t))
    return per_site, per_site.mean(axis=0)


def contrast_envelope(signal_values, center=0.5):
    """Oscillation envelope of a uniformly sampled signal (analytic-signal magnitude).

    The signal is mirrored at both ends before the Hilbert transform, which
    suits signals that start at a turning point such as Rabi flopping.
    """
    x = np.asarray(signal_values, dtype=float) - center
    n = len(x)
    ext = np.concatenate([x[:0:-1], x, x[-2::-1]])
    return np.abs(signal.hilbert(ext))[n - 1: 2 * n - 1]


def revival_time(times, signal_values, center=0.5, level=0.5):
    """Time of the first contrast revival and of the first envelope minimum before it.

    The contrast has collapsed once the envelope drops below ``level`` times
    its initial value, and revived when it climbs back above it; the revival
    time is the envelope maximum of that lobe.  Raises ValueError when either
    is missing.
    """
    t = np.asarray(times, dtype=float)
    env = contrast_envelope(signal_values, center)
    thr = level * env[: max(len(env) // 50, 3)].max()
    low = np.flatnonzero(env < thr)
    if len(low) == 0:
        raise ValueError("no contrast collapse found")
    i0 = int(low[0])
    high = np.flatnonzero(env[i0:] >= thr)
    if len(high) == 0:
        raise ValueError("no contrast revival found")
    i1 = i0 + int(high[0])
    back = np.flatnonzero(env[i1:] < thr)
    i2 = i1 + int(back[0]) if len(back) else len(env)
    k = i1 + int(np.argmax(env[i1:i2]))
    rising = np.flatnonzero(np.diff(env[i0:i1]) > 0)
    collapse = i0 + (int(rising[0]) if len(rising) else int(np.argmin(env[i0:i1])))
    if 0 < k < len(env) - 1:
        a, b, c = env[k - 1: k + 2]
        den = a - 2 * b + c
        shift = 0.5 * (a - c) / den if den != 0 else 0.0
    else:
        shift = 0.0
    return float(t[k] + shift * (t[1] - t[0])), float(t[collapse])


@dataclass(frozen=True)
class DetectionModel:
    """Product-efficiency model linking P52 to the measured recapture probability.

    With ``condition_on_loading`` the loading fill is excluded from the
    efficiency, since recapture is evaluated on loaded sites only.
    """

    loading: float = 0.62
    preparation: float = 0.70
    purity: float = 0.9
    optical_recapture: float = 0.35 / (0.70 * 0.9)
    background: float = 3e-4
    condition_on_loading: bool = True

    def __post_init__(self):
        for name in ("loading", "preparation", "purity", "optical_recapture", "background"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")

    @property
    def efficiency(self):
        eta = self.preparation * self.purity * self.optical_recapture
        return eta if self.condition_on_loading else eta * self.loading


def detection_pipeline(p52, model):
    p = np.asarray(p52, dtype=float)
    if np.any(p < 0) or np.any(p > 1):
        raise ValueError("P52 must lie in [0, 1]")
    out = model.efficiency * p + model.background
    if np.any(out > 1):
        raise ValueError("detection model predicts a recapture probability above 1")
    return out


def invert_detection(p_recap, model):
    """P52 implied by a recapture probability (inverse of ``detection_pipeline``)."""
    return (np.asarray(p_recap, dtype=float) - model.background) / model.efficiency


def normalize_to_start(p_recap):
    """Normalize a recapture curve by its first point."""
    p = np.asarray(p_recap, dtype=float)
    if p[0] <= 0:
        raise ValueError("first point must be positive to normalize")
    return p / p[0]


def normalized_trapping(p_recap, p_lifetime):
    """Recapture divided by the lifetime-only expectation: survival in the trap."""
    return np.asarray(p_recap, dtype=float) / np.asarray(p_lifetime, dtype=float)
