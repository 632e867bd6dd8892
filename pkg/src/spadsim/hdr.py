"""Single/dual exposure response, linearity correction, noise and dynamic range.

An image accumulates ``n_sat`` binary frames. With ``x`` incident photons per
image (at the mean exposure), a frame of relative exposure ``c`` fires with
probability ``1 - exp(-c x / n_sat)``. Single mode has one frame class with
``c = 1``; dual mode splits the frames evenly between

    c_L = 2 tau_L / (tau_L + tau_S),   c_S = 2 tau_S / (tau_L + tau_S)

so the mean exposure matches a single-mode image at ``tau_M = (tau_S + tau_L)/2``.
The expected output is ``n_sat * sum_k w_k (1 - exp(-c_k x / n_sat))``.
"""

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import least_squares

from . import sensor
from .errors import ConfigError, SaturationError

# --------------------------------------------------------------------------
# Response model


@dataclass(frozen=True)
class ResponseParams:
    n_sat: int = 4080
    mode: str = "single"
    tau_m: float | None = 1.0
    tau_s: float | None = None
    tau_l: float | None = None

    def __post_init__(self):
        if int(self.n_sat) < 1:
            raise ConfigError("must be >= 1", "n_sat")
        if self.mode not in ("single", "dual"):
            raise ConfigError(f"mode must be 'single' or 'dual', got {self.mode!r}", "mode")
        taus = (self.tau_m,) if self.mode == "single" else (self.tau_s, self.tau_l)
        if any(t is None or not t > 0 for t in taus):
            raise ConfigError("exposure times must be > 0", "tau")

    @classmethod
    def single(cls, n_sat=4080, tau_m=1.0):
        return cls(int(n_sat), "single", tau_m=float(tau_m))

    @classmethod
    def dual(cls, n_sat=4080, tau_s=1.0, tau_l=8.0):
        return cls(int(n_sat), "dual", tau_m=None, tau_s=float(tau_s), tau_l=float(tau_l))

    @classmethod
    def from_schedule(cls, schedule, n_sat=None):
        n = schedule.frames if n_sat is None else n_sat
        if schedule.mode == "single":
            return cls.single(n, schedule.tau_m)
        return cls.dual(n, schedule.tau_s, schedule.tau_l)

    @property
    def exposures(self):
        """Exposure of each frame class, in interleave order (short first)."""
        return (self.tau_m,) if self.mode == "single" else (self.tau_s, self.tau_l)

    @property
    def coefficients(self):
        """Relative exposure ``c_k`` of each frame class."""
        if self.mode == "single":
            return np.array([1.0])
        total = self.tau_s + self.tau_l
        return np.array([2.0 * self.tau_s / total, 2.0 * self.tau_l / total])

    @property
    def weights(self):
        return np.full(len(self.exposures), 1.0 / len(self.exposures))

    @property
    def mean_exposure(self):
        return float(np.mean(self.exposures))

    def matches(self, other, rtol=1e-9):
        """True when ``2 tau_M = tau_S + tau_L`` holds between the two modes."""
        a, b = self.mean_exposure, other.mean_exposure
        return abs(a - b) <= rtol * max(a, b)

    def require_match(self, other):
        if not self.matches(other):
            raise ConfigError("modes are not exposure-matched (2*tau_M != tau_S + tau_L)", "tau")


def _nonneg(x, name):
    a = np.asarray(x, dtype=float)
    if np.any(a < 0) or np.any(np.isnan(a)):
        raise ConfigError(f"must be >= 0", name)
    return a


def _scalar(a):
    return float(a) if np.ndim(a) == 0 else a


def _response(x, n_sat, coef, weights):
    # sum_k w_k (1 - exp(-c_k x / n)) with expm1 for accuracy at small x
    out = np.zeros(np.shape(x))
    for c, w in zip(coef, weights):
        out = out - w * np.expm1(-c * x / n_sat)
    return n_sat * out


def forward_single(n_in, params):
    """Expected single-mode output count for ``n_in`` incident photons."""
    x = _nonneg(n_in, "n_in")
    return _scalar(_response(x, params.n_sat, [1.0], [1.0]))


def forward_dual(n_in, params):
    """Expected dual-mode output count for ``n_in`` incident photons."""
    x = _nonneg(n_in, "n_in")
    if params.tau_s is None or params.tau_l is None:
        raise ConfigError("dual response needs tau_s and tau_l", "tau")
    total = params.tau_l + params.tau_s
    n = params.n_sat
    # written term for term as the two-exposure sum
    out = n / 2.0 * (-np.expm1(-(2.0 * params.tau_l / total) * x / n) - np.expm1(-(2.0 * params.tau_s / total) * x / n))
    return _scalar(out)


def forward(n_in, params):
    return forward_single(n_in, params) if params.mode == "single" else forward_dual(n_in, params)


def response_slope(n_in, params):
    """dN_out/dN_in."""
    x = _nonneg(n_in, "n_in")
    out = np.zeros(x.shape)
    for c, w in zip(params.coefficients, params.weights):
        out = out + w * c * np.exp(-c * x / params.n_sat)
    return _scalar(out)


def correct_linearity(n_out, params, tol=1e-6):
    """Invert the response: incident photon estimate for an output count.

    Single mode uses the closed form; dual mode bisects the monotone response
    to an absolute tolerance of ``tol`` counts.

    Raises
    ------
    SaturationError
        If any ``n_out >= n_sat``.
    """
    y = _nonneg(n_out, "n_out")
    n = params.n_sat
    if np.any(y >= n):
        raise SaturationError(f"output count at or above saturation n_sat={n}")
    if params.mode == "single":
        return _scalar(-n * np.log1p(-y / n))

    flat = y.ravel()
    lo = np.zeros_like(flat)
    # the low-coefficient class bounds the answer from above
    c_min = float(np.min(params.coefficients))
    hi = np.maximum(flat * 1.0, -n / c_min * np.log1p(-flat / n) * 1.0) + 1.0
    while True:
        short = forward_dual(hi, params) < flat
        if not np.any(short):
            break
        hi = np.where(short, hi * 2.0, hi)
    for _ in range(200):
        if np.all(hi - lo <= tol):
            break
        mid = 0.5 * (lo + hi)
        below = forward_dual(mid, params) < flat
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
    return _scalar((0.5 * (lo + hi)).reshape(y.shape))


# --------------------------------------------------------------------------
# Noise


def noise_std_analytic(n_in, params):
    """Binomial output std and its delta-method input-referred value.

    Returns
    -------
    (std_raw, std_corrected)
    """
    x = _nonneg(n_in, "n_in")
    n = params.n_sat
    var = np.zeros(x.shape)
    for c, w in zip(params.coefficients, params.weights):
        p = -np.expm1(-c * x / n)
        var = var + w * n * p * (1.0 - p)
    raw = np.sqrt(var)
    slope = np.asarray(response_slope(x, params))
    with np.errstate(divide="ignore", invalid="ignore"):
        corr = np.where(raw > 0, raw / slope, 0.0)
    return _scalar(raw), _scalar(corr)


@dataclass
class NoiseCurve:
    n_in: np.ndarray
    mean_out: np.ndarray
    std_raw: np.ndarray
    std_corrected: np.ndarray
    mode: str
    provenance: str  # "analytic" or "monte-carlo"
    trials: int = 0

    def __post_init__(self):
        for name in ("n_in", "mean_out", "std_raw", "std_corrected"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=float))
        if self.n_in.size and np.any(np.diff(self.n_in) <= 0):
            raise ConfigError("noise curve grid must be ascending", "n_in")
        if np.any(self.std_raw < 0) or np.any(self.std_corrected < 0):
            raise ConfigError("standard deviations must be >= 0", "std")

    @property
    def snr_db(self):
        with np.errstate(divide="ignore", invalid="ignore"):
            return 20.0 * np.log10(self.n_in / self.std_corrected)

    def __len__(self):
        return self.n_in.size


def default_grid(low=1e-1, high=1e7, per_decade=60):
    """Log-spaced N_in grid, ``per_decade`` points per decade, both ends included."""
    if not 0 < low < high:
        raise ConfigError("grid bounds must satisfy 0 < low < high", "grid")
    n = int(round(math.log10(high / low) * per_decade)) + 1
    return np.logspace(math.log10(low), math.log10(high), n)


def _saturation_guard(grid, params, guard):
    head = 1.0 - np.asarray(forward(grid, params)) / params.n_sat
    return grid[head >= guard]


def analytic_noise_curve(params, grid=None, saturation_guard=1e-6):
    """Noise curve from the binomial model.

    Grid points where ``1 - N_out/n_sat < saturation_guard`` are dropped:
    the delta method is meaningless in hard saturation.
    """
    grid = default_grid() if grid is None else np.asarray(grid, dtype=float)
    grid = _saturation_guard(grid, params, saturation_guard)
    if grid.size == 0:
        raise ConfigError("grid is empty after the saturation guard", "grid")
    raw, corr = noise_std_analytic(grid, params)
    return NoiseCurve(grid, np.asarray(forward(grid, params)), raw, corr, params.mode, "analytic")


def simulate_counts(params, grid, trials, seed, dark_cps=None, frame_exposure_ns=sensor.FRAME_EXPOSURE_NS):
    """Accumulated counts of ``trials`` uniform pixels per grid point.

    Frames interleave the exposure classes, short first. ``dark_cps`` is an
    optional per-pixel dark count rate (length ``trials``); its per-frame mean
    scales with each class's exposure around ``frame_exposure_ns``.

    Returns
    -------
    uint32 array (len(grid), trials)
    """
    grid = np.asarray(grid, dtype=float)
    if grid.size == 0:
        raise ConfigError("grid must not be empty", "grid")
    coef = params.coefficients
    mu = grid[:, None, None] * coef[None, :, None] / params.n_sat
    mu = np.broadcast_to(mu, (grid.size, coef.size, int(trials))).copy()
    if dark_cps is not None:
        dark = np.broadcast_to(np.asarray(dark_cps, dtype=float), (int(trials),))
        mu += coef[None, :, None] * dark[None, None, :] * frame_exposure_ns * 1e-9
    counts, _, _ = sensor.simulate_mu(mu, params.n_sat, seed, width=int(trials), height=1)
    return counts


def monte_carlo_noise_curve(params, grid, trials, seed, dark_cps=None, frame_exposure_ns=sensor.FRAME_EXPOSURE_NS):
    """Sample mean/std of accumulated counts, raw and linearity-corrected.

    Points whose samples reach ``n_sat`` cannot be corrected and report
    ``nan`` corrected std.
    """
    if int(trials) < 100:
        raise ConfigError("need at least 100 trials", "trials")
    grid = np.asarray(grid, dtype=float)
    if grid.size == 0:
        raise ConfigError("grid must not be empty", "grid")
    counts = simulate_counts(params, grid, trials, seed, dark_cps, frame_exposure_ns).astype(float)
    mean = counts.mean(axis=1)
    raw = counts.std(axis=1, ddof=1)
    corr = np.full(grid.size, np.nan)
    for i, row in enumerate(counts):
        if row.max() < params.n_sat:
            corr[i] = np.std(correct_linearity(row, params), ddof=1)
    return NoiseCurve(grid, mean, raw, corr, params.mode, "monte-carlo", int(trials))


# --------------------------------------------------------------------------
# SNR and dynamic range


@dataclass(frozen=True)
class DRDefinition:
    """Dynamic range = span between the lowest and highest grid points with SNR >= threshold."""

    threshold_db: float = 0.0

    def describe(self):
        return (
            f"SNR(N_in) = 20*log10(N_in / std_corrected); DR = 20*log10(N_high / N_low) over grid "
            f"points with SNR >= {self.threshold_db:g} dB"
        )


@dataclass(frozen=True)
class DRResult:
    max_snr_db: float
    dr_db: float
    n_low: float
    n_high: float
    definition: DRDefinition = field(default_factory=DRDefinition)


def snr_and_dynamic_range(curve, definition=None):
    """Maximum SNR and dynamic range (dB) of a noise curve."""
    definition = definition or DRDefinition()
    n = curve.n_in
    s = curve.std_corrected
    usable = (n > 0) & np.isfinite(s) & (s > 0)
    if not np.any(usable):
        raise ConfigError("curve has no point with finite, non-zero noise; SNR undefined", "curve")
    snr = 20.0 * np.log10(n[usable] / s[usable])
    ok = snr >= definition.threshold_db
    if not np.any(ok):
        raise ConfigError(f"no grid point reaches {definition.threshold_db} dB", "curve")
    pts = n[usable][ok]
    return DRResult(float(snr.max()), float(20.0 * np.log10(pts.max() / pts.min())),
                    float(pts.min()), float(pts.max()), definition)


# --------------------------------------------------------------------------
# Fitting


@dataclass(frozen=True)
class SaturationFit:
    n_sat: float
    ratio: float  # tau_L / tau_S; 1 for single mode
    residual_rms: float
    low_confidence: bool


def fit_saturation_model(points, mode="single"):
    """Least-squares fit of the response to measured (N_in, N_out) pairs.

    Single mode fits ``n_sat``; dual mode fits ``n_sat`` and ``tau_L/tau_S``.
    Data that never leaves the linear regime cannot pin ``n_sat`` down and is
    flagged ``low_confidence``.
    """
    data = np.asarray(points, dtype=float)
    if data.ndim != 2 or data.shape[1] != 2:
        raise ConfigError("points must be (N_in, N_out) pairs", "points")
    if data.shape[0] < 4:
        raise ConfigError("need at least 4 points", "points")
    if mode not in ("single", "dual"):
        raise ConfigError(f"mode must be 'single' or 'dual', got {mode!r}", "mode")
    x, y = data[:, 0], data[:, 1]
    if np.any(x < 0) or np.any(y < 0):
        raise ConfigError("counts must be >= 0", "points")
    scale = max(float(y.max()), 1.0)

    def model(theta):
        n = math.exp(theta[0])
        if mode == "single":
            return _response(x, n, [1.0], [1.0])
        r = theta[1]
        return _response(x, n, [2.0 / (1 + r), 2.0 * r / (1 + r)], [0.5, 0.5])

    def resid(theta):
        return (model(theta) - y) / scale

    n0 = math.log(max(1.5 * float(y.max()), 1.0))
    if mode == "single":
        sol = least_squares(resid, [n0], method="trf", x_scale=[1.0], xtol=1e-14, ftol=1e-14, gtol=1e-14)
    else:
        best = None
        for r0 in (2.0, 8.0, 32.0):
            s = least_squares(resid, [n0, r0], bounds=([-np.inf, 1.0], [np.inf, np.inf]),
                              xtol=1e-14, ftol=1e-14, gtol=1e-14)
            if best is None or s.cost < best.cost:
                best = s
        sol = best
    n_fit = math.exp(sol.x[0])
    ratio = float(sol.x[1]) if mode == "dual" else 1.0
    rms = float(np.sqrt(np.mean((model(sol.x) - y) ** 2)))
    with np.errstate(divide="ignore", invalid="ignore"):
        compression = np.where(x > 0, 1.0 - y / x, 0.0)
    low = bool(np.nanmax(compression) < 0.01)
    return SaturationFit(n_fit, ratio, rms, low)
