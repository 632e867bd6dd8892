"""Gate-window transmission, skew maps, and the convolution intensity model.

The gate window is a trapezoid of unit height. ``position`` is the time the
transmission starts rising, ``length`` is the full width at half maximum, and
``rise``/``fall`` are the 0-to-1 ramp durations. The half-height points sit at
``position + rise/2`` and ``position + rise/2 + length``.

The expected intensity profile over gate positions is the superposition

    h(pos) = sum_i a_i * f(pos - dt_i)

with no area normalisation of ``f``: a return sitting on the plateau
contributes its full amplitude ``a_i``.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DimensionError

#: Default gate-scan step in ns; also the default histogram bin for skew stats.
SCAN_STEP_NS = 0.036


@dataclass(frozen=True)
class GateProfile:
    position: float = 0.0
    length: float = 3.8
    rise: float = 0.55
    fall: float = 0.55

    def __post_init__(self):
        if not self.length > 0:
            raise ConfigError(f"gate length must be > 0, got {self.length}", "length")
        if self.rise < 0 or self.fall < 0:
            raise ConfigError("rise and fall times must be >= 0", "rise/fall")
        if self.rise + self.fall > 2 * self.length + 1e-12:
            raise ConfigError("rise + fall must not exceed twice the gate length", "rise/fall")

    @classmethod
    def anchored(cls, length=3.8, rise=0.55, fall=0.55):
        """Profile whose half-rise point is at t = 0.

        This is the kernel used for reconstruction: a return at delay ``dt``
        produces a rising edge whose half-amplitude crossing sits at ``dt``.
        """
        return cls(position=-rise / 2.0, length=length, rise=rise, fall=fall)

    @property
    def opening(self):
        """Time of the half-height rising crossing."""
        return self.position + self.rise / 2.0

    @property
    def closing(self):
        """Time of the half-height falling crossing."""
        return self.opening + self.length

    @property
    def area(self):
        # trapezoid with FWHM anchoring: area equals the FWHM
        return self.length

    def __call__(self, t):
        return eval_gate_profile(self, t)


def gate_transmission(t, length, rise, fall, opening=0.0):
    """Trapezoid transmission with the half-rise crossing at ``opening``.

    ``t``, ``length`` and ``opening`` broadcast against each other, which lets
    callers evaluate per-pixel gates in one call. ``rise``/``fall`` are scalars.
    """
    t = np.asarray(t, dtype=float) - opening
    with np.errstate(over="ignore"):
        return _trapezoid(t, length, rise, fall)


def _trapezoid(t, length, rise, fall):
    if rise > 0:
        up = np.clip(t / rise + 0.5, 0.0, 1.0)
    else:
        up = (t >= 0).astype(float)
    t_end = length + fall / 2.0
    if fall > 0:
        down = np.clip((t_end - t) / fall, 0.0, 1.0)
    else:
        down = (t < t_end).astype(float)
    return np.minimum(up, down)


def eval_gate_profile(profile, t):
    """Transmission of ``profile`` at time(s) ``t`` (ns), in [0, 1]."""
    out = gate_transmission(t, profile.length, profile.rise, profile.fall, profile.opening)
    return out if out.ndim else float(out)


@dataclass
class IntensityProfile:
    """Counts sampled on a uniform grid of gate positions (ns)."""

    positions: np.ndarray
    counts: np.ndarray

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=float)
        self.counts = np.asarray(self.counts)
        if self.positions.ndim != 1 or self.positions.size == 0:
            raise ConfigError("positions must be a non-empty 1-D sequence", "positions")
        if self.counts.shape != self.positions.shape:
            raise DimensionError(
                f"counts shape {self.counts.shape} does not match positions {self.positions.shape}"
            )
        if self.positions.size > 1:
            d = np.diff(self.positions)
            if np.any(d <= 0):
                raise ConfigError("positions must be strictly increasing", "positions")
            if not np.allclose(d, d[0], rtol=1e-6, atol=1e-9):
                raise ConfigError("positions must have a uniform step", "positions")
        if np.any(self.counts < 0):
            raise ConfigError("counts must be non-negative", "counts")

    @property
    def step(self):
        if self.positions.size < 2:
            return float("nan")
        return float(self.positions[1] - self.positions[0])

    def __len__(self):
        return self.positions.size

    def with_counts(self, counts):
        return IntensityProfile(self.positions, counts)


def uniform_positions(start, step, count):
    """Gate positions ``start + k*step`` for k in range(count)."""
    return start + step * np.arange(int(count))


def expected_intensity_profile(returns, profile, positions):
    """Superpose one scaled, shifted gate window per reflective return.

    Parameters
    ----------
    returns : sequence of (amplitude, delay_ns)
        Expected counts on the plateau and round-trip delay of each return.
    profile : GateProfile
        Window shape ``f``; evaluated as ``f(pos - delay)``.
    positions : sequence of float
        Uniform gate positions (ns).

    Returns
    -------
    IntensityProfile
    """
    positions = np.asarray(positions, dtype=float)
    if positions.size == 0:
        raise ConfigError("positions must not be empty", "positions")
    h = np.zeros(positions.shape)
    for amplitude, delay in returns:
        if amplitude < 0:
            raise ConfigError(f"return amplitude must be >= 0, got {amplitude}", "amplitude")
        h += amplitude * eval_gate_profile(profile, positions - delay)
    return IntensityProfile(positions, h)


# --------------------------------------------------------------------------
# Array-wide skew and length maps


@dataclass
class PixelMaps:
    """Per-pixel gate position and gate length (ns), shape (height, width)."""

    position: np.ndarray
    length: np.ndarray

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=float)
        self.length = np.asarray(self.length, dtype=float)
        if self.position.ndim != 2 or self.position.size == 0:
            raise ConfigError("maps must be non-empty 2-D arrays", "maps")
        if self.position.shape != self.length.shape:
            raise DimensionError("position and length maps differ in shape")
        if np.any(~(self.length > 0)):
            raise ConfigError("all gate lengths must be > 0", "maps.length")

    @property
    def height(self):
        return self.position.shape[0]

    @property
    def width(self):
        return self.position.shape[1]

    @property
    def shape(self):
        return self.position.shape

    @property
    def skew(self):
        """Gate position relative to the array median (ns)."""
        return self.position - np.median(self.position)

    @classmethod
    def constant(cls, width, height, position=0.0, length=3.8):
        return cls(np.full((height, width), float(position)), np.full((height, width), float(length)))


@dataclass(frozen=True)
class SkewParams:
    """Targets and morphology for synthetic gate maps.

    The position map is ``base + s * shape`` where ``shape`` mixes a vertical
    ramp (later toward row 0, the top of the array), a horizontal ramp that is
    active only in the top half, and white jitter. The scale ``s`` is solved
    so the population FWHM equals ``position_fwhm``. The length map is the
    nominal length plus Gaussian jitter scaled to ``length_fwhm``.
    """

    position_fwhm: float = 0.41
    length_fwhm: float = 0.12
    base_position: float = 0.0
    nominal_length: float = 3.8
    vertical_weight: float = 1.0
    horizontal_weight: float = 0.35
    jitter_weight: float = 0.08
    bin_width: float = SCAN_STEP_NS

    def __post_init__(self):
        if self.position_fwhm < 0 or self.length_fwhm < 0:
            raise ConfigError("FWHM targets must be >= 0", "skew")
        if not self.nominal_length > 0:
            raise ConfigError("nominal length must be > 0", "skew.nominal_length")
        if not self.bin_width > 0:
            raise ConfigError("bin width must be > 0", "skew.bin_width")


def _skew_shape(width, height, params, rng):
    rows = np.arange(height, dtype=float)[:, None]
    cols = np.arange(width, dtype=float)[None, :]
    vertical = (height - 1 - rows) / max(height - 1, 1)
    half = height / 2.0
    top_weight = np.clip((half - rows) / half, 0.0, None)
    horizontal = top_weight * cols / max(width - 1, 1)
    shape = params.vertical_weight * vertical + params.horizontal_weight * horizontal
    shape = np.broadcast_to(shape, (height, width)).copy()
    if params.jitter_weight:
        shape += params.jitter_weight * rng.standard_normal((height, width))
    return shape


def _scale_to_fwhm(shape, target, bin_width, offset=0.0):
    """Find s with histogram_fwhm(offset + s*shape) == target (bisection on s).

    The offset matters: bins sit on a fixed grid, so the measured FWHM depends
    on where the population lands relative to the bin edges.
    """
    if target == 0:
        return 0.0
    ptp = float(np.ptp(shape))
    if ptp == 0:
        # no gradient and no jitter: the map stays constant whatever the target
        return 0.0
    # fine-binned estimate of the unit-scale FWHM gives the starting bracket
    spread = histogram_fwhm(shape, bin_width=ptp / 400.0)[0]

    def err(s):
        return histogram_fwhm(offset + s * shape, bin_width=bin_width)[0] - target

    lo, hi = 0.0, 2.0 * target / spread
    while err(hi) < 0:
        hi *= 2.0
    # FWHM of a binned population is monotone in s up to bin quantisation
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if err(mid) < 0:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-9 * hi:
            break
    return 0.5 * (lo + hi)


def generate_pixel_maps(width, height, skew_params=None, seed=0):
    """Synthesize gate position and length maps hitting target population FWHMs.

    Deterministic for a fixed ``(seed, width, height, skew_params)``.
    """
    if int(width) <= 0 or int(height) <= 0:
        raise ConfigError(f"map dimensions must be positive, got {width}x{height}", "width/height")
    width, height = int(width), int(height)
    params = skew_params if skew_params is not None else SkewParams()
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), width, height]))
    shape = _skew_shape(width, height, params, rng)
    length_noise = rng.standard_normal((height, width))

    shape = shape - np.median(shape)
    s = _scale_to_fwhm(shape, params.position_fwhm, params.bin_width, params.base_position)
    position = params.base_position + s * shape
    s_len = _scale_to_fwhm(length_noise, params.length_fwhm, params.bin_width, params.nominal_length)
    length = params.nominal_length + s_len * length_noise
    return PixelMaps(position, length)


# --------------------------------------------------------------------------
# Population statistics


@dataclass
class Histogram:
    edges: np.ndarray
    counts: np.ndarray

    @property
    def centers(self):
        return 0.5 * (self.edges[:-1] + self.edges[1:])


def _histogram(values, bin_width):
    v = np.asarray(values, dtype=float).ravel()
    if v.size == 0:
        raise ConfigError("cannot build a histogram of an empty population", "values")
    lo = np.floor(v.min() / bin_width) - 1
    hi = np.floor(v.max() / bin_width) + 2
    edges = np.arange(lo, hi + 1) * bin_width
    counts, edges = np.histogram(v, bins=edges)
    return Histogram(edges, counts)


def histogram_fwhm(values, bin_width=SCAN_STEP_NS):
    """FWHM of a population from its histogram.

    The half-peak threshold crossings are located by linear interpolation
    between bin centres on the outermost bins above half maximum.

    Returns
    -------
    (fwhm, histogram, degenerate)
        ``degenerate`` is True when every value falls into one bin; the FWHM
        then equals one bin width.
    """
    hist = _histogram(values, bin_width)
    c = hist.counts.astype(float)
    x = hist.centers
    half = c.max() / 2.0
    above = np.nonzero(c >= half)[0]
    i, j = above[0], above[-1]
    # padding guarantees i > 0 and j < len - 1
    left = x[i - 1] + (half - c[i - 1]) / (c[i] - c[i - 1]) * bin_width
    right = x[j] + (c[j] - half) / (c[j] - c[j + 1]) * bin_width
    degenerate = np.count_nonzero(c) == 1
    return float(right - left), hist, bool(degenerate)


@dataclass
class GateStats:
    position_fwhm: float
    length_fwhm: float
    position_histogram: Histogram
    length_histogram: Histogram
    degenerate: bool = False
    bin_width: float = field(default=SCAN_STEP_NS)


def measure_gate_stats(maps, bin_width=SCAN_STEP_NS):
    """Population FWHM of gate position and gate length over the array."""
    pos_fwhm, pos_hist, pos_deg = histogram_fwhm(maps.position, bin_width)
    len_fwhm, len_hist, len_deg = histogram_fwhm(maps.length, bin_width)
    return GateStats(pos_fwhm, len_fwhm, pos_hist, len_hist, pos_deg or len_deg, bin_width)


# --------------------------------------------------------------------------
# Deconvolution


def forward_convolve(g, f_samples):
    """Causal discrete convolution truncated to ``len(g)``: h[n] = sum_k g[k] f[n-k]."""
    return np.convolve(g, f_samples)[: len(g)]


def _correlate_back(r, f_samples):
    # adjoint of forward_convolve: out[k] = sum_n r[n] f[n-k]
    n = len(r)
    full = np.correlate(r, f_samples, mode="full")
    return full[len(f_samples) - 1 : len(f_samples) - 1 + n]


def deconvolve_profile(h, f_samples, iterations=200, epsilon=1e-9, return_residuals=False):
    """Estimate the return density ``g`` from ``h = f * g`` with multiplicative updates.

    Richardson-Lucy iteration with column-sum normalisation (the kernel is not
    unit-area and is truncated at the grid end). Estimates stay non-negative.

    Parameters
    ----------
    h : IntensityProfile
        Measured or expected profile; counts must be non-negative.
    f_samples : array_like
        Gate kernel sampled on the profile step, index 0 at zero delay.
    iterations : int
    epsilon : float
        Floor on the denominator.
    return_residuals : bool
        Also return the L2 residual ``||f*g - h||`` after each iteration.
    """
    f = np.asarray(f_samples, dtype=float)
    if f.ndim != 1 or f.size == 0 or np.any(f < 0):
        raise ConfigError("kernel samples must be a non-empty non-negative 1-D array", "f_samples")
    if not np.any(f > 0):
        raise ConfigError("kernel must not be all zero", "f_samples")
    data = np.asarray(h.counts, dtype=float)
    n = data.size
    residuals = []
    if not np.any(data > 0):
        g = np.zeros(n)
        out = h.with_counts(g)
        return (out, np.zeros(iterations)) if return_residuals else out

    norm = _correlate_back(np.ones(n), f)
    norm = np.where(norm > epsilon, norm, epsilon)
    g = np.full(n, data.sum() / (f.sum() * n))
    for _ in range(int(iterations)):
        model = forward_convolve(g, f)
        ratio = data / np.maximum(model, epsilon)
        g = g * _correlate_back(ratio, f) / norm
        if return_residuals:
            residuals.append(float(np.linalg.norm(forward_convolve(g, f) - data)))
    out = h.with_counts(g)
    if return_residuals:
        return out, np.asarray(residuals)
    return out


def sample_kernel(profile, step, count=None):
    """Sample ``profile`` at ``k*step`` for k = 0.. until the window has closed."""
    if count is None:
        t_end = profile.closing + profile.fall / 2.0
        count = int(np.ceil(t_end / step)) + 1
    return eval_gate_profile(profile, step * np.arange(count))
