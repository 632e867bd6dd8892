"""Gated SPAD detection model and binary-frame Monte Carlo.

A pixel fires in a frame with probability ``1 - exp(-mu)`` where ``mu`` is
the expected number of primary avalanches:

    mu = pdp * sum_i a_i * f_pix(c - dt_i - skew_pix)
         + ambient * L_pix + dcr * exposure

``c`` is the commanded gate position, ``skew_pix`` the pixel's gate position
relative to the array median and ``f_pix`` an anchored trapezoid (half-rise
at zero) with the pixel's own gate length. Signal and ambient terms are
given at the configured frame exposure and scale linearly with the actual
exposure of the frame.

All randomness is counter-based (see :mod:`spadsim.rng`), so every result is
a pure function of its inputs and the seed.
"""

import math
from dataclasses import dataclass

import numpy as np

from . import _engine
from .errors import CapacityError, ConfigError, DimensionError
from .gate import GateProfile, PixelMaps, gate_transmission
from .rng import split_seed

BOLTZMANN_EV = 8.617333262e-5  # eV/K
FRAME_EXPOSURE_NS = 1e9 / 24_000  # one frame at 24 kfps
ROOM_TEMPERATURE_K = 293.15


# --------------------------------------------------------------------------
# Dark count temperature model


@dataclass(frozen=True)
class DcrParams:
    """DCR(T) = tunneling_floor + diffusion_prefactor * exp(-E_a / (k_B T))."""

    tunneling_floor: float = 0.0
    diffusion_prefactor: float = 0.0
    activation_energy: float = 1.1

    def __post_init__(self):
        if self.tunneling_floor < 0 or self.diffusion_prefactor < 0:
            raise ConfigError("DCR components must be >= 0", "dcr")

    @classmethod
    def calibrated(cls, dcr_ref=2.0, t_ref=ROOM_TEMPERATURE_K, crossover_k=298.15, activation_energy=1.1):
        """Parameters giving ``dcr_ref`` at ``t_ref``.

        ``crossover_k`` is the temperature at which the diffusion term equals
        the tunneling floor.
        """
        ratio = math.exp(-activation_energy / BOLTZMANN_EV * (1.0 / t_ref - 1.0 / crossover_k))
        floor = dcr_ref / (1.0 + ratio)
        prefactor = floor * math.exp(activation_energy / (BOLTZMANN_EV * crossover_k))
        return cls(floor, prefactor, activation_energy)


def dcr_at_temperature(params, temperature_k):
    """Dark count rate (cps) at ``temperature_k`` kelvin."""
    t = np.asarray(temperature_k, dtype=float)
    if np.any(t <= 0):
        raise ConfigError("temperature must be > 0 K", "temperature_k")
    out = params.tunneling_floor + params.diffusion_prefactor * np.exp(-params.activation_energy / (BOLTZMANN_EV * t))
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class ArrheniusFit:
    activation_energy: float
    prefactor: float
    r_squared: float


def fit_arrhenius(samples, tunneling_floor=0.0):
    """Least-squares line through ln(dcr - floor) versus 1/T."""
    data = np.asarray(samples, dtype=float)
    if data.ndim != 2 or data.shape[1] != 2:
        raise ConfigError("samples must be (temperature_k, dcr_cps) pairs", "samples")
    if data.shape[0] < 3:
        raise ConfigError("need at least 3 samples to fit an activation energy", "samples")
    t, dcr = data[:, 0], data[:, 1]
    if np.any(t <= 0):
        raise ConfigError("temperatures must be > 0 K", "samples")
    excess = dcr - tunneling_floor
    if np.any(excess <= 0):
        raise ConfigError("every DCR sample must exceed the tunneling floor", "samples")
    x = 1.0 / t
    y = np.log(excess)
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    ss_tot = np.sum((y - y.mean()) ** 2)
    r2 = 1.0 - np.sum(resid**2) / ss_tot if ss_tot > 0 else 1.0
    return ArrheniusFit(float(-slope * BOLTZMANN_EV), float(np.exp(intercept)), float(r2))


def fit_activation_energy(samples, tunneling_floor=0.0):
    """Activation energy (eV) from (temperature_k, dcr_cps) samples."""
    return fit_arrhenius(samples, tunneling_floor).activation_energy


@dataclass(frozen=True)
class DcrPopulation:
    """Two-population per-pixel DCR model.

    Most pixels sit around the median with a log-normal spread and a diffusion
    activation energy of 1.1 eV. A ``hot_fraction`` of pixels is brighter by
    ``hot_factor`` and has activation energies spread uniformly between
    0.55 eV and 1.1 eV (mixed diffusion and generation-recombination).
    The sampled map is rescaled so the array median at ``reference_k`` equals
    ``median_cps``.
    """

    median_cps: float = 2.0
    spread: float = 0.35
    hot_fraction: float = 0.2
    hot_factor: float = 8.0
    reference_k: float = ROOM_TEMPERATURE_K
    crossover_k: float = 298.15

    def __post_init__(self):
        if self.median_cps < 0:
            raise ConfigError("DCR must be >= 0", "dcr.median_cps")
        if self.spread < 0 or not 0 <= self.hot_fraction <= 1 or self.hot_factor < 1:
            raise ConfigError("invalid DCR population parameters", "dcr")

    def sample(self, width, height, seed):
        """Per-pixel (tunneling floor, diffusion prefactor, activation energy) maps."""
        rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0xDC]))
        hot = rng.random((height, width)) < self.hot_fraction
        ref = np.exp(self.spread * rng.standard_normal((height, width)))
        ref = np.where(hot, ref * self.hot_factor, ref)
        ea = np.where(hot, rng.uniform(0.55, 1.1, (height, width)), 1.1)
        med = np.median(ref)
        ref = ref * (self.median_cps / med) if med > 0 else ref * 0.0
        # split the reference rate into floor and thermal parts per pixel
        kt = ea / BOLTZMANN_EV
        ratio = np.exp(-kt * (1.0 / self.reference_k - 1.0 / self.crossover_k))
        floor = ref / (1.0 + ratio)
        prefactor = floor * np.exp(kt / self.crossover_k)
        return floor, prefactor, ea

    def rate_map(self, width, height, seed, temperature_k=None):
        t = self.reference_k if temperature_k is None else temperature_k
        if t <= 0:
            raise ConfigError("temperature must be > 0 K", "temperature_k")
        floor, prefactor, ea = self.sample(width, height, seed)
        return floor + prefactor * np.exp(-ea / (BOLTZMANN_EV * t))


# --------------------------------------------------------------------------
# Configuration and schedules


@dataclass(eq=False)
class SensorConfig:
    """Sensor description.

    ``pdp_efficiency`` and ``dcr`` are per-pixel maps (scalars broadcast).
    ``dcr`` is in counts per second at the operating temperature; the optional
    ``dcr_params`` record the temperature model it was derived from. Only the
    rise/fall times of ``gate`` are used by the simulation, per-pixel gate
    positions and lengths come from ``maps``.
    """

    width: int
    height: int
    maps: PixelMaps
    gate: GateProfile
    pdp_efficiency: np.ndarray | float = 1.0
    dcr: np.ndarray | float = 2.0
    crosstalk_p: float = 0.0039
    n_sat: int = 4080
    laser_period_ns: float = 25.0
    frame_exposure_ns: float = FRAME_EXPOSURE_NS
    dcr_params: DcrParams | None = None
    temperature_k: float = ROOM_TEMPERATURE_K

    def __post_init__(self):
        self.width, self.height = int(self.width), int(self.height)
        if self.width <= 0 or self.height <= 0:
            raise ConfigError("sensor dimensions must be positive", "width/height")
        if self.maps.shape != (self.height, self.width):
            raise DimensionError(f"maps are {self.maps.shape}, sensor is {(self.height, self.width)}")
        shape = (self.height, self.width)
        self.pdp_efficiency = np.broadcast_to(np.asarray(self.pdp_efficiency, dtype=float), shape).copy()
        self.dcr = np.broadcast_to(np.asarray(self.dcr, dtype=float), shape).copy()
        if np.any(self.pdp_efficiency < 0) or np.any(self.pdp_efficiency > 1):
            raise ConfigError("must be within [0, 1]", "pdp_efficiency")
        if np.any(self.dcr < 0):
            raise ConfigError("must be >= 0", "dcr")
        if not 0 <= self.crosstalk_p < 0.25:
            raise ConfigError("must be within [0, 0.25)", "crosstalk_p")
        if int(self.n_sat) < 1:
            raise ConfigError("must be >= 1", "n_sat")
        self.n_sat = int(self.n_sat)
        if not self.frame_exposure_ns > 0:
            raise ConfigError("must be > 0", "frame_exposure_ns")
        if not self.laser_period_ns > 0:
            raise ConfigError("must be > 0", "laser_period_ns")
        if not self.temperature_k > 0:
            raise ConfigError("must be > 0", "temperature_k")

    @property
    def shape(self):
        return (self.height, self.width)

    @property
    def npix(self):
        return self.width * self.height

    @classmethod
    def ideal(cls, width, height, **kw):
        """Uniform sensor: no skew, unit PDP, no DCR, no crosstalk unless given."""
        gate = kw.pop("gate", GateProfile.anchored())
        kw.setdefault("dcr", 0.0)
        kw.setdefault("crosstalk_p", 0.0)
        maps = kw.pop("maps", None) or PixelMaps.constant(width, height, 0.0, gate.length)
        return cls(width, height, maps, gate, **kw)


@dataclass(frozen=True)
class ExposureSchedule:
    """Exposure times (ns) for the frames of one accumulated image.

    Dual mode interleaves short and long exposures, short first.
    """

    mode: str
    frames: int
    tau_m: float | None = None
    tau_s: float | None = None
    tau_l: float | None = None

    def __post_init__(self):
        if self.mode not in ("single", "dual"):
            raise ConfigError(f"mode must be 'single' or 'dual', got {self.mode!r}", "mode")
        if int(self.frames) < 1:
            raise ConfigError("must be >= 1", "frames")
        taus = (self.tau_m,) if self.mode == "single" else (self.tau_s, self.tau_l)
        if any(t is None or not t > 0 for t in taus):
            raise ConfigError("exposure times must be > 0", "tau")

    @classmethod
    def single(cls, tau_m, frames):
        return cls("single", int(frames), tau_m=float(tau_m))

    @classmethod
    def dual(cls, tau_s, tau_l, frames):
        return cls("dual", int(frames), tau_s=float(tau_s), tau_l=float(tau_l))

    @classmethod
    def matched_dual(cls, tau_m, ratio, frames):
        """Dual schedule with the same total exposure as single mode at ``tau_m``."""
        tau_s = 2.0 * tau_m / (1.0 + ratio)
        return cls.dual(tau_s, ratio * tau_s, frames)

    @property
    def exposures(self):
        return (self.tau_m,) if self.mode == "single" else (self.tau_s, self.tau_l)

    def total_exposure_matches(self, other, rtol=1e-9):
        """True when both schedules expose for the same mean time per frame."""
        a = sum(self.exposures) / len(self.exposures)
        b = sum(other.exposures) / len(other.exposures)
        return abs(a - b) <= rtol * max(a, b)


@dataclass
class BinaryFrame:
    bits: np.ndarray  # bool, (height, width)

    @property
    def width(self):
        return self.bits.shape[1]

    @property
    def height(self):
        return self.bits.shape[0]


# --------------------------------------------------------------------------
# Expected counts


def detection_probability(mu):
    """Probability of at least one avalanche for Poisson mean ``mu``."""
    m = np.asarray(mu, dtype=float)
    if np.any(m < 0):
        raise ConfigError("mu must be >= 0", "mu")
    p = -np.expm1(-m)
    return p if p.ndim else float(p)


def _check_dims(scene, config):
    if scene.shape != config.shape:
        raise DimensionError(f"scene is {scene.shape}, sensor is {config.shape}")


def mu_map(scene, config, gate_position, exposure_ns=None):
    """Expected primary avalanches per frame for every pixel, shape (H, W)."""
    _check_dims(scene, config)
    tau = config.frame_exposure_ns if exposure_ns is None else float(exposure_ns)
    gate = config.gate
    skew = config.maps.skew
    length = config.maps.length
    sig = np.zeros(config.shape)
    for k in range(scene.max_returns):
        a = scene.amplitudes[k]
        if not np.any(a > 0):
            continue
        t = gate_position - scene.delays[k] - skew
        sig += a * gate_transmission(t, length, gate.rise, gate.fall)
    light = config.pdp_efficiency * sig + scene.ambient * length
    return light * (tau / config.frame_exposure_ns) + config.dcr * tau * 1e-9


def frame_mu(pixel, scene, config, gate_position, exposure_ns=None):
    """Expected primary avalanches per frame at one ``(row, col)`` pixel."""
    row, col = pixel
    if not (0 <= row < config.height and 0 <= col < config.width):
        raise DimensionError(f"pixel {pixel} outside {config.shape}")
    return float(mu_map(scene, config, gate_position, exposure_ns)[row, col])


# --------------------------------------------------------------------------
# Monte Carlo


def simulate_mu(mu, frames, master_seed, frame_offset=0, width=None, height=None,
                crosstalk_p=0.0, record_bits=False, pixel_a=False):
    """Accumulate binary frames for explicit per-frame means.

    Parameters
    ----------
    mu : ndarray, shape (groups, phases, height, width) or (groups, phases, npix)
        Expected avalanches per frame; frame ``k`` of a group uses phase
        ``k % phases``.
    frames : int
        Frames per group. Group ``g`` covers global frame indices
        ``frame_offset + g*frames ...``.

    Returns
    -------
    counts : uint32 array (groups, npix)
    avalanches : float array (groups, npix), empty unless ``pixel_a``
    bits : uint8 array (groups, frames, npix), empty unless ``record_bits``
    """
    mu = np.asarray(mu, dtype=float)
    groups, phases = mu.shape[:2]
    if mu.ndim == 4:
        height, width = mu.shape[2:]
    elif width is None or height is None:
        width, height = mu.shape[2], 1
    mu = mu.reshape(groups, phases, -1)
    if mu.shape[2] != width * height:
        raise DimensionError("mu does not match the given width/height")
    if np.any(mu < 0):
        raise ConfigError("mu must be >= 0", "mu")
    k0, k1 = split_seed(master_seed)
    return _engine.run(mu, frames, frame_offset, width, height, k0, k1,
                       crosstalk_p=crosstalk_p, want_bits=record_bits, pixel_a=pixel_a)


def _phase_mu(scene, config, gate_position, schedule):
    return np.stack([mu_map(scene, config, gate_position, tau) for tau in schedule.exposures])


def simulate_binary_frame(scene, config, gate_position, frame_index, master_seed, exposure_ns=None):
    """One binary frame. Identical to frame ``frame_index`` of any stack."""
    mu = mu_map(scene, config, gate_position, exposure_ns)[None, None]
    _, _, bits = simulate_mu(mu, 1, master_seed, frame_index, crosstalk_p=config.crosstalk_p, record_bits=True)
    return BinaryFrame(bits[0, 0].reshape(config.shape).astype(bool))


def simulate_frame_stack(scene, config, gate_position, schedule, master_seed, frame_offset=0):
    """All binary frames of one image, bool array (frames, height, width)."""
    mu = _phase_mu(scene, config, gate_position, schedule)[None]
    _, _, bits = simulate_mu(mu, schedule.frames, master_seed, frame_offset,
                             crosstalk_p=config.crosstalk_p, record_bits=True)
    return bits[0].reshape((schedule.frames,) + config.shape).astype(bool)


def check_capacity(frames, config):
    if frames > config.n_sat:
        raise CapacityError(f"{frames} frames exceed the counter capacity n_sat={config.n_sat}")


def accumulate_frames(scene, config, gate_position, schedule, master_seed, frame_offset=0):
    """Per-pixel detection counts summed over the schedule's frames (uint32, (H, W))."""
    check_capacity(schedule.frames, config)
    mu = _phase_mu(scene, config, gate_position, schedule)[None]
    counts, _, _ = simulate_mu(mu, schedule.frames, master_seed, frame_offset, crosstalk_p=config.crosstalk_p)
    return counts[0].reshape(config.shape)


def expected_counts(scene, config, gate_position, schedule):
    """Expectation of :func:`accumulate_frames` without crosstalk."""
    p = detection_probability(_phase_mu(scene, config, gate_position, schedule))
    phases = len(schedule.exposures)
    n_per_phase = [len(range(k, schedule.frames, phases)) for k in range(phases)]
    return sum(n * p[k] for k, n in enumerate(n_per_phase))


@dataclass
class AvalancheStats:
    mean: np.ndarray  # avalanches per frame, (H, W)
    detections: np.ndarray  # binary detection counts, (H, W)
    frames: int


def avalanche_event_counts(scene, config, gate_position, pixel_model, frames, master_seed, exposure_ns=None):
    """Mean avalanches per frame for pixel model ``"A"`` or ``"B"``.

    Pixel A recharges after every avalanche, so every photon arrival in the
    frame avalanches (Poisson count). Pixel B closes its recharge path after
    the first detection, so at most one avalanche occurs per frame. The
    binary detections are the same draws for both models.
    """
    model = str(pixel_model).upper()
    if model not in ("A", "B"):
        raise ConfigError(f"pixel model must be 'A' or 'B', got {pixel_model!r}", "pixel_model")
    mu = mu_map(scene, config, gate_position, exposure_ns)[None, None]
    counts, aval, _ = simulate_mu(mu, frames, master_seed, 0, crosstalk_p=config.crosstalk_p,
                                  pixel_a=model == "A")
    det = counts[0].reshape(config.shape)
    total = aval[0].reshape(config.shape) if model == "A" else det.astype(float)
    return AvalancheStats(total / frames, det, int(frames))
