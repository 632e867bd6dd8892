"""Gate-scan acquisition and depth reconstruction.

A scan sweeps the commanded gate position over a uniform grid and accumulates
binary frames at every step, giving each pixel an intensity profile. A
reflective return at round-trip delay ``dt`` shows up as a rising edge whose
half-amplitude crossing sits at ``dt + skew`` (the pixel's gate skew).

Reconstruction per pixel: optional linearisation of the counts, moving-average
smoothing, half-amplitude edge location, skew subtraction and conversion to
distance with ``L = c * dt / 2``.
"""

import re
from dataclasses import dataclass

import numpy as np

from . import sensor
from .errors import CapacityError, ConfigError, DimensionError
from .gate import IntensityProfile, PixelMaps, histogram_fwhm
from .scene import SPEED_OF_LIGHT

#: Largest frame index addressable by the detection stream counter.
MAX_FRAME_INDEX = 1 << 34


def delay_to_distance(delay_ns):
    """One-way distance (m) for a round-trip delay (ns); NaN passes through."""
    d = np.asarray(delay_ns, dtype=float)
    if np.any(d < 0):
        raise ConfigError("delay must be >= 0", "delay")
    out = SPEED_OF_LIGHT * d * 1e-9 / 2.0
    return out if out.ndim else float(out)


def distance_lsb(step_ns):
    """Depth quantisation step (m) of a scan with the given gate step."""
    return SPEED_OF_LIGHT * step_ns * 1e-9 / 2.0


# --------------------------------------------------------------------------
# Data types


@dataclass(frozen=True)
class ScanPlan:
    start: float
    step: float
    count: int
    frames: int = 255
    schedule: sensor.ExposureSchedule | None = None

    def __post_init__(self):
        if not self.step > 0:
            raise ConfigError("step must be > 0", "plan.step")
        if int(self.count) < 2:
            raise ConfigError("count must be >= 2", "plan.count")
        if int(self.frames) < 1:
            raise ConfigError("frames must be >= 1", "plan.frames")
        if self.schedule is not None and self.schedule.frames != self.frames:
            raise ConfigError("schedule frame count differs from plan frames", "plan.schedule")

    @classmethod
    def parse(cls, text, frames=255, schedule=None):
        """Parse ``start:step:count`` (ns, ns, positions)."""
        m = re.fullmatch(r"\s*([^:]+):([^:]+):([^:]+)\s*", str(text))
        if not m:
            raise ConfigError(f"expected start:step:count, got {text!r}", "plan")
        try:
            start, step, count = float(m[1]), float(m[2]), int(m[3])
        except ValueError as exc:
            raise ConfigError(f"bad number in {text!r}", "plan") from exc
        return cls(start, step, count, frames, schedule)

    @classmethod
    def spanning(cls, start, stop, step, frames=255, schedule=None):
        """Plan from ``start`` to ``stop`` inclusive."""
        count = int(round((stop - start) / step)) + 1
        return cls(start, step, count, frames, schedule)

    @property
    def positions(self):
        return self.start + self.step * np.arange(self.count)

    @property
    def lsb_m(self):
        return distance_lsb(self.step)

    def exposure_schedule(self, config):
        if self.schedule is not None:
            return self.schedule
        return sensor.ExposureSchedule.single(config.frame_exposure_ns, self.frames)

    def check_capacity(self, config):
        sensor.check_capacity(self.frames, config)
        if self.count * self.frames >= MAX_FRAME_INDEX:
            raise CapacityError(f"scan needs {self.count * self.frames} frames, above the counter range")


@dataclass
class ProfileStack:
    """Counts per gate position per pixel, shape (count, height, width)."""

    positions: np.ndarray
    counts: np.ndarray
    frames: int
    expected: str | None = None  # set for noiseless expectation stacks

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=float)
        self.counts = np.asarray(self.counts)
        if self.counts.ndim != 3 or self.counts.shape[0] != self.positions.size:
            raise DimensionError("counts must be (positions, height, width)")
        if np.any(self.counts < 0):
            raise ConfigError("counts must be >= 0", "counts")
        if self.expected != "incident" and np.any(self.counts > self.frames + 1e-9):
            raise ConfigError("counts exceed frames per position", "counts")

    @property
    def shape(self):
        return self.counts.shape[1:]

    @property
    def step(self):
        return float(self.positions[1] - self.positions[0])

    def profile(self, row, col):
        return IntensityProfile(self.positions, self.counts[:, row, col])

    def pixel_profiles(self):
        """Profiles as a (npix, count) float array, row-major pixel order."""
        return self.counts.reshape(self.counts.shape[0], -1).T.astype(float)


@dataclass
class DepthMap:
    """Distances in m; NaN marks pixels without a detection."""

    distance: np.ndarray
    lsb: float
    range_m: tuple | None = None

    def __post_init__(self):
        self.distance = np.asarray(self.distance, dtype=float)
        if np.any(self.distance[~np.isnan(self.distance)] < 0):
            raise ConfigError("distances must be >= 0", "distance")

    @property
    def detected(self):
        return ~np.isnan(self.distance)

    @property
    def shape(self):
        return self.distance.shape


# --------------------------------------------------------------------------
# Acquisition


def scan_gate(scene, config, plan, seed, expected=None, batch=32):
    """Accumulate frames at every gate position of ``plan``.

    Position ``j`` uses global frame indices ``j*frames ... (j+1)*frames - 1``
    of the counter-based streams, so the result does not depend on ``batch``.

    Parameters
    ----------
    expected : {None, "detected", "incident"}
        ``None`` runs the Monte Carlo. ``"detected"`` returns the expected
        binary counts, ``"incident"`` the expected photon counts before
        saturation (frames times the per-frame mean), i.e. the plain
        superposition of shifted gate windows.
    """
    if scene.shape != config.shape:
        raise DimensionError(f"scene is {scene.shape}, sensor is {config.shape}")
    plan.check_capacity(config)
    schedule = plan.exposure_schedule(config)
    positions = plan.positions
    if expected not in (None, "detected", "incident"):
        raise ConfigError(f"unknown expectation mode {expected!r}", "expected")

    if expected is not None:
        out = np.empty((plan.count,) + config.shape)
        for j, pos in enumerate(positions):
            if expected == "detected":
                out[j] = sensor.expected_counts(scene, config, pos, schedule)
            else:
                mu = np.stack([sensor.mu_map(scene, config, pos, t) for t in schedule.exposures])
                phases = len(schedule.exposures)
                out[j] = sum(len(range(k, plan.frames, phases)) * mu[k] for k in range(phases))
        return ProfileStack(positions, out, plan.frames, expected)

    out = np.empty((plan.count,) + config.shape, np.uint32)
    for j0 in range(0, plan.count, batch):
        chunk = positions[j0 : j0 + batch]
        mu = np.stack([
            np.stack([sensor.mu_map(scene, config, pos, t) for t in schedule.exposures])
            for pos in chunk
        ])
        counts, _, _ = sensor.simulate_mu(mu, plan.frames, seed, j0 * plan.frames,
                                          crosstalk_p=config.crosstalk_p)
        out[j0 : j0 + len(chunk)] = counts.reshape((len(chunk),) + config.shape)
    return ProfileStack(positions, out, plan.frames)


# --------------------------------------------------------------------------
# Profile processing


def _values(profile):
    if isinstance(profile, IntensityProfile):
        return profile.positions, np.asarray(profile.counts, dtype=float)
    return None, np.asarray(profile, dtype=float)


def linearize_counts(counts, frames):
    """Per-frame detection counts to photon-count estimates, ``-M ln(1 - n/M)``.

    Counts at full scale are clipped to half a count below it.
    """
    n = np.minimum(np.asarray(counts, dtype=float), frames - 0.5)
    return -frames * np.log1p(-n / frames)


def smooth_profile(profile, window=15):
    """Centred moving average along the last axis.

    Near the ends the window shrinks symmetrically, so sample ``i`` averages
    ``2*min(window//2, i, n-1-i) + 1`` samples. Accepts an IntensityProfile
    (returns one) or an array of profiles.
    """
    positions, y = _values(profile)
    window = int(window)
    n = y.shape[-1]
    if window < 1 or window % 2 == 0:
        raise ConfigError(f"window must be an odd count >= 1, got {window}", "window")
    if window > n:
        raise ConfigError(f"window {window} exceeds profile length {n}", "window")
    idx = np.arange(n)
    half = np.minimum(window // 2, np.minimum(idx, n - 1 - idx))
    cs = np.concatenate([np.zeros(y.shape[:-1] + (1,)), np.cumsum(y, axis=-1)], axis=-1)
    out = (cs[..., idx + half + 1] - cs[..., idx - half]) / (2 * half + 1)
    if positions is not None:
        return IntensityProfile(positions, out)
    return out


def _plateau(y):
    # median of the top quartile of samples
    n = y.shape[-1]
    q = max(1, int(np.ceil(n / 4)))
    top = np.sort(y, axis=-1)[..., n - q :]
    return np.median(top, axis=-1)


def _rising_edge_batch(y, positions, amplitude_floor=0.0, baseline=None, plateau=None, start=None, stop=None):
    """Vectorised half-amplitude crossing for profiles along the last axis.

    ``start``/``stop`` limit the sample range searched per profile. Returns
    NaN where no edge is found.
    """
    y = np.atleast_2d(y)
    npro, n = y.shape
    base = np.zeros(npro) if baseline is None else np.broadcast_to(np.asarray(baseline, float), (npro,))
    top = _plateau(y) if plateau is None else np.broadcast_to(np.asarray(plateau, float), (npro,))
    ok = (top >= amplitude_floor) & (top > base)
    half = base + 0.5 * (top - base)
    idx = np.arange(n)
    lo = np.zeros(npro, int) if start is None else np.broadcast_to(start, (npro,))
    hi = np.full(npro, n) if stop is None else np.broadcast_to(stop, (npro,))
    inside = (idx[None, :] >= lo[:, None]) & (idx[None, :] < hi[:, None])
    above = (y >= half[:, None]) & inside
    any_above = above.any(axis=1)
    first = np.argmax(above, axis=1)
    # an edge needs a sample below the threshold right before it
    ok &= any_above & (first > lo)
    i = np.where(ok, first, 1)
    y0 = y[np.arange(npro), i - 1]
    y1 = y[np.arange(npro), i]
    frac = np.where(y1 > y0, (half - y0) / np.where(y1 > y0, y1 - y0, 1.0), 0.0)
    step = positions[1] - positions[0]
    t = positions[i - 1] + frac * step
    return np.where(ok, t, np.nan)


def detect_rising_edge(profile, amplitude_floor=0.0, baseline=0.0, plateau=None):
    """Delay (ns) at which ``profile`` first reaches half its plateau.

    The plateau is the median of the top quartile of samples unless given.
    Returns None when the plateau is below ``amplitude_floor``, the profile is
    empty of signal, or it starts above the threshold (no rising edge seen).
    ``baseline`` shifts the threshold to halfway between baseline and plateau.
    """
    if not isinstance(profile, IntensityProfile):
        raise ConfigError("profile must be an IntensityProfile", "profile")
    if amplitude_floor < 0:
        raise ConfigError("amplitude_floor must be >= 0", "amplitude_floor")
    if len(profile) < 2:
        return None
    t = _rising_edge_batch(np.asarray(profile.counts, float), profile.positions,
                           amplitude_floor, baseline, plateau)[0]
    return None if np.isnan(t) else float(t)


def compensate_skew(delays, maps):
    """Subtract each pixel's gate skew (relative to the array median).

    ``delays`` is an (height, width) array with NaN for missing detections, or
    a list of such arrays. NaN entries stay NaN.
    """
    if isinstance(delays, (list, tuple)):
        return [compensate_skew(d, maps) for d in delays]
    d = np.asarray(delays, dtype=float)
    if d.shape != maps.shape:
        raise DimensionError(f"delays are {d.shape}, maps are {maps.shape}")
    return d - maps.skew


def _box(y, width):
    if width <= 1:
        return y
    k = np.ones(width) / width
    return np.convolve(y, k, mode="same")


def detect_multi_edges(profile, vwindow=60, k=3.0, edge_halfwidth=None, min_noise=1.0, amplitude_floor=0.0,
                       offsets=(0.0, 0.5)):
    """Rising edges found by scanning non-overlapping virtual windows.

    Each window of ``vwindow`` samples is tested: an edge is declared when the
    mean of its last quarter exceeds the mean of its first quarter by more
    than ``k`` noise units, the noise being the first-quarter std floored at
    the Poisson value ``sqrt(mean)`` and at ``min_noise``. A trailing partial
    window of at least 8 samples is tested too. A single tiling misses edges
    that fall inside a window's first quarter, so by default a second tiling
    shifted by half a window is scanned as well (``offsets``, in windows);
    ``offsets=(0,)`` scans the single tiling only.

    A declared window is located by the strongest gradient peaks near it (the
    search extends a quarter window past each side, since a smoothed edge can
    straddle a window boundary). Each candidate is measured as a half-level
    crossing between the local levels ``edge_halfwidth`` samples before and
    after it, and kept when that step also exceeds ``k`` noise units and the
    crossing lies within half an edge half-width of the gradient peak.
    Candidates closer than ``edge_halfwidth`` merge.

    Returns
    -------
    list of float
        Edge delays (ns), ascending.
    """
    if not isinstance(profile, IntensityProfile):
        raise ConfigError("profile must be an IntensityProfile", "profile")
    vwindow = int(vwindow)
    if vwindow < 8:
        raise ConfigError("vwindow must be >= 8", "vwindow")
    y = np.asarray(profile.counts, dtype=float)
    n = y.size
    if vwindow > n:
        raise ConfigError(f"vwindow {vwindow} exceeds profile length {n}", "vwindow")
    r = max(2, vwindow // 4 if edge_halfwidth is None else int(edge_halfwidth))
    q = vwindow // 4
    guard = vwindow // 4
    m = max(4, r // 2)  # width of the level regions beside an edge

    def noise_of(seg):
        return max(float(np.std(seg)), float(np.sqrt(max(np.mean(seg), 0.0))), min_noise)

    grad = _box(np.gradient(y), max(1, r // 2) | 1)
    is_peak = np.zeros(n, bool)
    is_peak[1:-1] = (grad[1:-1] >= grad[:-2]) & (grad[1:-1] > grad[2:]) & (grad[1:-1] > 0)
    # keep only the dominant peak within +-r
    padded = np.pad(grad, r, constant_values=-np.inf)
    local_max = np.lib.stride_tricks.sliding_window_view(padded, 2 * r + 1).max(axis=1)
    is_peak &= grad >= local_max

    edges = []
    spans = []
    for off in sorted({int(round(o * vwindow)) % vwindow for o in offsets}):
        starts = list(range(off, n - vwindow + 1, vwindow))
        end = starts[-1] + vwindow if starts else off
        spans += [(s, s + vwindow) for s in starts]
        if n - end >= 8:
            spans.append((end, n))
    for s, e in spans:
        qq = max(2, (e - s) // 4) if e - s < vwindow else q
        first, last = y[s : s + qq], y[e - qq : e]
        noise = noise_of(first)
        if last.mean() - first.mean() <= k * noise:
            continue
        lo, hi = max(0, s - guard), min(n, e + guard)
        cand = [i for i in range(lo, hi) if is_peak[i]]
        for i in sorted(cand, key=lambda j: -grad[j]):
            a0, a1 = max(0, i - r - m), max(0, i - r)
            b0, b1 = min(n, i + r + 1), min(n, i + r + m + 1)
            if a1 - a0 < 2 or b1 - b0 < 2:
                continue
            low = float(np.mean(y[a0:a1]))
            high = float(np.mean(y[b0:b1]))
            if high - low <= k * noise_of(y[a0:a1]):
                continue
            if high < amplitude_floor:
                continue
            # most of the step must happen around the peak itself, not in the
            # level regions (which may catch the tail of a neighbouring edge)
            h2 = max(1, r // 2)
            if y[min(n - 1, i + h2)] - y[max(0, i - h2)] < 0.3 * (high - low):
                continue
            t = _rising_edge_batch(y, profile.positions, 0.0, low, high, a1 - 1, b0)[0]
            # the crossing must belong to this gradient peak
            if np.isfinite(t) and abs(t - profile.positions[i]) <= 0.5 * r * profile.step:
                edges.append(float(t))
    edges.sort()
    merged = []
    tol = r * profile.step
    for t in edges:
        if merged and t - merged[-1][-1] <= tol:
            merged[-1].append(t)
        else:
            merged.append([t])
    return [float(np.mean(m)) for m in merged]


# --------------------------------------------------------------------------
# Depth maps


def _prepare(stack, window, linearize):
    y = stack.pixel_profiles()
    if linearize:
        y = linearize_counts(y, stack.frames)
    if window > 1:
        y = smooth_profile(y, window)
    return y


def reconstruct_depth(stack, maps, window=15, amplitude_floor=0.0, linearize=True, compensate=True):
    """Single-edge depth map: one rising edge per pixel.

    Parameters
    ----------
    stack : ProfileStack
    maps : PixelMaps or None
        Skew maps to compensate; None skips compensation.
    amplitude_floor : float
        Minimum plateau (in processed units) for a detection.
    """
    h, w = stack.shape
    y = _prepare(stack, window, linearize)
    delays = _rising_edge_batch(y, stack.positions, amplitude_floor).reshape(h, w)
    if compensate and maps is not None:
        delays = compensate_skew(delays, maps)
    delays = np.where(delays < 0, np.nan, delays)
    return DepthMap(delay_to_distance(delays), distance_lsb(stack.step))


def _check_ranges(ranges):
    ranges = [(float(a), float(b)) for a, b in ranges]
    if not ranges:
        raise ConfigError("at least one range window is required", "ranges")
    for a, b in ranges:
        if not 0 <= a < b:
            raise ConfigError(f"bad range ({a}, {b})", "ranges")
    for (a0, b0), (a1, b1) in zip(ranges, ranges[1:]):
        if a1 < b0:
            raise ConfigError("ranges must be ascending and non-overlapping", "ranges")
    return ranges


def parse_ranges(text):
    """Parse ``a:b,c:d`` (metres) into a list of pairs."""
    try:
        out = [tuple(float(v) for v in part.split(":")) for part in str(text).split(",") if part.strip()]
    except ValueError as exc:
        raise ConfigError(f"bad range list {text!r}", "ranges") from exc
    if any(len(p) != 2 for p in out):
        raise ConfigError(f"expected a:b,c:d, got {text!r}", "ranges")
    return _check_ranges(out)


def multi_edge_delays(stack, window=15, vwindow=60, k=3.0, linearize=True, amplitude_floor=0.0):
    """Per-pixel edge lists (uncompensated delays, ns), row-major."""
    y = _prepare(stack, window, linearize)
    out = []
    for row in y:
        out.append(detect_multi_edges(IntensityProfile(stack.positions, np.maximum(row, 0.0)),
                                      vwindow, k, amplitude_floor=amplitude_floor))
    return out


def build_depth_maps(stack, maps, plan, ranges, window=15, vwindow=60, k=3.0, linearize=True, amplitude_floor=0.0):
    """One depth map per range window from multi-edge detection.

    Each map holds, per pixel, the nearest detected distance inside its range
    or NaN.
    """
    ranges = _check_ranges(ranges)
    h, w = stack.shape
    skew = maps.skew.ravel() if maps is not None else np.zeros(h * w)
    if maps is not None and maps.shape != (h, w):
        raise DimensionError(f"maps are {maps.shape}, stack is {(h, w)}")
    lists = multi_edge_delays(stack, window, vwindow, k, linearize, amplitude_floor)
    out = np.full((len(ranges), h * w), np.nan)
    for p, edges in enumerate(lists):
        for t in edges:
            t = t - skew[p]
            if t < 0:
                continue
            dist = delay_to_distance(t)
            for j, (a, b) in enumerate(ranges):
                if a <= dist < b and np.isnan(out[j, p]):
                    out[j, p] = dist
    lsb = distance_lsb(plan.step if plan is not None else stack.step)
    return [DepthMap(out[j].reshape(h, w), lsb, ranges[j]) for j in range(len(ranges))]


def _roi_values(depth, roi):
    d = depth.distance if isinstance(depth, DepthMap) else np.asarray(depth, float)
    r0, c0, r1, c1 = (int(v) for v in roi)
    if not (0 <= r0 < r1 <= d.shape[0] and 0 <= c0 < c1 <= d.shape[1]):
        raise DimensionError(f"roi {roi} outside map {d.shape}")
    return d[r0:r1, c0:c1], (slice(r0, r1), slice(c0, c1))


def evaluate_accuracy_precision(depth, truth, roi):
    """Mean error and rms spread (m) over a pixel rectangle.

    ``roi`` is (row0, col0, row1, col1), half-open. ``truth`` is a distance or
    a full-size map of distances. Every ROI pixel must have a detection.
    """
    vals, sl = _roi_values(depth, roi)
    if np.any(np.isnan(vals)):
        raise ConfigError(f"{int(np.isnan(vals).sum())} ROI pixels have no detection", "roi")
    t = np.asarray(truth, dtype=float)
    if t.ndim:
        t = t[sl]
    err = vals - t
    return float(np.mean(err)), float(np.std(err))


def delay_spread_fwhm(delays, bin_width=0.001):
    """FWHM (ns) of a population of per-pixel delays, ignoring NaN."""
    d = np.asarray(delays, dtype=float)
    d = d[~np.isnan(d)]
    if d.size == 0:
        raise ConfigError("no finite delays", "delays")
    return histogram_fwhm(d, bin_width)[0]
