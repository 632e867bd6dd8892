"""Scenes: per-pixel lists of reflective returns plus ambient flux.

Returns are stored densely as ``amplitudes`` and ``delays`` of shape
(K, height, width); slots with zero amplitude are unused. Amplitudes are
expected detected counts per frame with the gate fully open; delays are
round-trip times in ns.

Declarative primitives (flat target, transparent plate, sphere, amplitude
image) rasterise onto the pixel grid with :func:`rasterize`.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DimensionError

SPEED_OF_LIGHT = 299_792_458.0  # m/s


def distance_to_delay(distance_m):
    """Round-trip delay (ns) for a one-way distance (m)."""
    return 2.0 * np.asarray(distance_m, dtype=float) / SPEED_OF_LIGHT * 1e9


@dataclass
class Scene:
    amplitudes: np.ndarray
    delays: np.ndarray
    ambient: float = 0.0
    true_depth: np.ndarray | None = None

    def __post_init__(self):
        self.amplitudes = np.asarray(self.amplitudes, dtype=float)
        self.delays = np.asarray(self.delays, dtype=float)
        if self.amplitudes.ndim == 2:
            self.amplitudes = self.amplitudes[None]
            self.delays = self.delays[None]
        if self.amplitudes.ndim != 3:
            raise ConfigError("returns must have shape (K, height, width)", "returns")
        if self.amplitudes.shape != self.delays.shape:
            raise DimensionError("amplitude and delay arrays differ in shape")
        if np.any(self.amplitudes < 0):
            raise ConfigError("return amplitudes must be >= 0", "amplitude")
        if np.any(self.delays < 0):
            raise ConfigError("return delays must be >= 0", "delay")
        amb = np.asarray(self.ambient, dtype=float)
        if np.any(amb < 0):
            raise ConfigError("ambient flux must be >= 0", "ambient")
        if amb.ndim and amb.shape != self.shape:
            raise DimensionError("ambient map does not match scene dimensions")
        self.ambient = amb if amb.ndim else float(amb)

    @property
    def shape(self):
        return self.amplitudes.shape[1:]

    @property
    def height(self):
        return self.amplitudes.shape[1]

    @property
    def width(self):
        return self.amplitudes.shape[2]

    @property
    def max_returns(self):
        return self.amplitudes.shape[0]

    def returns_at(self, row, col):
        """Non-zero (amplitude, delay) pairs at one pixel, nearest first."""
        a = self.amplitudes[:, row, col]
        d = self.delays[:, row, col]
        keep = a > 0
        order = np.argsort(d[keep], kind="stable")
        return [(float(x), float(y)) for x, y in zip(a[keep][order], d[keep][order])]

    @classmethod
    def empty(cls, width, height, ambient=0.0):
        return cls(np.zeros((1, height, width)), np.zeros((1, height, width)), ambient)

    @classmethod
    def uniform(cls, width, height, returns, ambient=0.0):
        """Every pixel carries the same list of (amplitude, delay_ns) returns."""
        returns = list(returns) or [(0.0, 0.0)]
        a = np.stack([np.full((height, width), float(r[0])) for r in returns])
        d = np.stack([np.full((height, width), float(r[1])) for r in returns])
        return cls(a, d, ambient)

    @classmethod
    def from_pixel_returns(cls, rows, ambient=0.0):
        """Build from a nested list ``rows[r][c] = [(amplitude, delay), ...]``."""
        height = len(rows)
        width = len(rows[0]) if height else 0
        k = max((len(px) for row in rows for px in row), default=0) or 1
        a = np.zeros((k, height, width))
        d = np.zeros((k, height, width))
        for r, row in enumerate(rows):
            if len(row) != width:
                raise DimensionError("ragged pixel rows")
            for c, px in enumerate(row):
                for i, (amp, delay) in enumerate(px):
                    a[i, r, c] = amp
                    d[i, r, c] = delay
        return cls(a, d, ambient)


# --------------------------------------------------------------------------
# Declarative primitives


@dataclass
class Primitive:
    kind: str
    distance_m: float
    amplitude: float
    transmittance: float = 0.0
    radius_m: float = 0.0
    center_px: tuple | None = None
    region: tuple | None = None  # (row0, col0, row1, col1), half-open
    image: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.kind not in ("flat", "plate", "sphere", "image"):
            raise ConfigError(f"unknown primitive type {self.kind!r}", "type")
        if not self.distance_m > 0:
            raise ConfigError("distance must be > 0", f"{self.kind}.distance_m")
        if self.amplitude < 0:
            raise ConfigError("amplitude must be >= 0", f"{self.kind}.amplitude")
        if not 0 <= self.transmittance <= 1:
            raise ConfigError("transmittance must be in [0, 1]", f"{self.kind}.transmittance")
        if self.kind == "sphere" and not self.radius_m > 0:
            raise ConfigError("sphere radius must be > 0", "sphere.radius_m")
        if self.kind == "image" and self.image is None:
            raise ConfigError("image primitive needs an amplitude map", "image")
        if self.region is not None and len(self.region) != 4:
            raise ConfigError("region must be [row0, col0, row1, col1]", f"{self.kind}.region")


def _coverage(prim, width, height, focal_px):
    """Per-pixel (covered mask, one-way distance m, amplitude) for a primitive."""
    mask = np.ones((height, width), bool)
    if prim.region is not None:
        r0, c0, r1, c1 = (int(v) for v in prim.region)
        region = np.zeros_like(mask)
        region[max(r0, 0) : min(r1, height), max(c0, 0) : min(c1, width)] = True
        mask &= region
    amp = np.full((height, width), float(prim.amplitude))
    dist = np.full((height, width), float(prim.distance_m))
    if prim.kind == "image":
        img = np.asarray(prim.image, dtype=float)
        if img.shape != (height, width):
            raise DimensionError(f"image primitive shape {img.shape} != {(height, width)}")
        amp = amp * img
    elif prim.kind == "sphere":
        cy, cx = prim.center_px if prim.center_px is not None else ((height - 1) / 2, (width - 1) / 2)
        rows, cols = np.mgrid[0:height, 0:width].astype(float)
        dx = (cols - cx) / focal_px
        dy = (rows - cy) / focal_px
        norm = np.sqrt(dx * dx + dy * dy + 1.0)
        # sphere centre on the ray through center_px, nearest surface at distance_m
        zc = prim.distance_m + prim.radius_m
        b = zc / norm
        disc = b * b - (zc * zc - prim.radius_m**2)
        hit = disc >= 0
        mask &= hit
        dist = np.where(hit, b - np.sqrt(np.clip(disc, 0, None)), np.inf)
    return mask, dist, amp


def rasterize(primitives, width, height, focal_px=100.0, ambient=0.0):
    """Rasterise primitives into a :class:`Scene`.

    Flat targets, plates and image primitives are fronto-parallel at a single
    ToF distance for every covered pixel. Spheres use a pinhole projection with
    focal length ``focal_px`` (pixels). A return is attenuated by the square
    (two passes) of the one-way transmittance of every primitive in front of
    it; opaque primitives have transmittance 0 and hide what lies behind.
    Ties in distance go to declaration order, the later primitive in front.
    """
    if width <= 0 or height <= 0:
        raise ConfigError("scene dimensions must be positive", "width/height")
    layers = []
    for order, prim in enumerate(primitives):
        mask, dist, amp = _coverage(prim, width, height, focal_px)
        layers.append((order, prim, mask, dist, amp))

    k = max(len(layers), 1)
    amps = np.zeros((k, height, width))
    dists = np.full((k, height, width), np.inf)
    trans = np.ones((k, height, width))
    order_key = np.zeros((k, height, width))
    for i, (order, prim, mask, dist, amp) in enumerate(layers):
        amps[i] = np.where(mask, amp, 0.0)
        dists[i] = np.where(mask, dist, np.inf)
        trans[i] = np.where(mask, prim.transmittance, 1.0)
        order_key[i] = order

    # sort layers per pixel: nearest first, later declaration first on ties
    idx = np.lexsort((-order_key, dists), axis=0)
    amps = np.take_along_axis(amps, idx, 0)
    dists = np.take_along_axis(dists, idx, 0)
    trans = np.take_along_axis(trans, idx, 0)
    in_front = np.cumprod(np.concatenate([np.ones((1, height, width)), trans[:-1] ** 2]), axis=0)
    amps = amps * in_front
    valid = np.isfinite(dists) & (amps > 0)
    amps = np.where(valid, amps, 0.0)
    delays = np.where(valid, distance_to_delay(np.where(valid, dists, 0.0)), 0.0)
    depth = np.where(valid, dists, np.nan)
    return Scene(amps, delays, ambient, true_depth=depth)
