"""File formats for maps, frame stacks, images, profiles and noise curves.

All binary formats are little-endian except PGM, which is big-endian by its
own definition.

SPDF frame stack::

    offset  size  field
    0       4     magic b"SPDF"
    4       2     version (u16) = 1
    6       4     width (u32)
    10      4     height (u32)
    14      4     frames (u32)
    18      1     bits per pixel (u8): 1, 16 or 32
    19      ...   frames, row-major

With 1 bit per pixel each frame is packed 8 pixels per byte, MSB first, and
padded to a whole byte. With 16 or 32 bits each pixel is an unsigned
little-endian integer; profile stacks use this form with one "frame" per gate
position.

Raw float map: width (u32), height (u32), then width*height float32 values,
row-major.
"""

import json
import math
import struct
from pathlib import Path

import numpy as np

from .errors import ConfigError, DimensionError

SPDF_MAGIC = b"SPDF"
SPDF_VERSION = 1
_SPDF_HEADER = struct.Struct("<4sHIIIB")


def _text(path, text):
    Path(path).write_text(text, encoding="utf-8", newline="\n")


def _fmt(v):
    return repr(float(v))


# --------------------------------------------------------------------------
# Maps


def write_map_csv(path, values, decimals=None):
    """Row-major grid CSV: one line per row, one value per cell."""
    a = np.asarray(values, dtype=float)
    if a.ndim != 2:
        raise DimensionError("map must be 2-D")
    fmt = _fmt if decimals is None else (lambda v: f"{v:.{decimals}f}")
    _text(path, "".join(",".join(fmt(v) for v in row) + "\n" for row in a))


def read_map_csv(path):
    rows = [line for line in Path(path).read_text().splitlines() if line.strip()]
    try:
        a = np.array([[float(v) for v in line.split(",")] for line in rows])
    except ValueError as exc:
        raise ConfigError(f"bad number in {path}: {exc}", "map") from exc
    if a.ndim != 2:
        raise DimensionError(f"ragged rows in {path}")
    return a


def write_map_raw(path, values):
    a = np.asarray(values, dtype="<f4")
    if a.ndim != 2:
        raise DimensionError("map must be 2-D")
    h, w = a.shape
    with open(path, "wb") as fh:
        fh.write(struct.pack("<II", w, h))
        fh.write(np.ascontiguousarray(a).tobytes())


def read_map_raw(path):
    data = Path(path).read_bytes()
    if len(data) < 8:
        raise ConfigError(f"{path}: truncated header", "map")
    w, h = struct.unpack_from("<II", data)
    if len(data) != 8 + 4 * w * h:
        raise ConfigError(f"{path}: expected {w}x{h} floats", "map")
    return np.frombuffer(data, dtype="<f4", offset=8).reshape(h, w).astype(float)


# --------------------------------------------------------------------------
# SPDF stacks


def write_spdf(path, frames, bpp=1):
    """Write a (frames, height, width) stack."""
    a = np.asarray(frames)
    if a.ndim != 3:
        raise DimensionError("stack must be (frames, height, width)")
    n, h, w = a.shape
    if bpp == 1:
        body = np.packbits(a.astype(bool).reshape(n, h * w), axis=1, bitorder="big").tobytes()
    elif bpp in (16, 32):
        top = (1 << bpp) - 1
        if a.size and (a.min() < 0 or a.max() > top):
            raise ConfigError(f"values do not fit in {bpp} bits", "bpp")
        body = np.ascontiguousarray(a, dtype=f"<u{bpp // 8}").tobytes()
    else:
        raise ConfigError("bits per pixel must be 1, 16 or 32", "bpp")
    with open(path, "wb") as fh:
        fh.write(_SPDF_HEADER.pack(SPDF_MAGIC, SPDF_VERSION, w, h, n, bpp))
        fh.write(body)


def read_spdf(path):
    """Read a stack; returns (array, bpp). 1-bit stacks come back as bool."""
    data = Path(path).read_bytes()
    if len(data) < _SPDF_HEADER.size:
        raise ConfigError(f"{path}: truncated header", "spdf")
    magic, version, w, h, n, bpp = _SPDF_HEADER.unpack_from(data)
    if magic != SPDF_MAGIC:
        raise ConfigError(f"{path}: bad magic {magic!r}", "spdf")
    if version != SPDF_VERSION:
        raise ConfigError(f"{path}: unsupported version {version}", "spdf")
    body = data[_SPDF_HEADER.size :]
    if bpp == 1:
        per = math.ceil(w * h / 8)
        if len(body) != per * n:
            raise ConfigError(f"{path}: size does not match header", "spdf")
        packed = np.frombuffer(body, np.uint8).reshape(n, per)
        bits = np.unpackbits(packed, axis=1, count=w * h, bitorder="big")
        return bits.reshape(n, h, w).astype(bool), 1
    if bpp in (16, 32):
        if len(body) != n * w * h * bpp // 8:
            raise ConfigError(f"{path}: size does not match header", "spdf")
        return np.frombuffer(body, f"<u{bpp // 8}").reshape(n, h, w).copy(), bpp
    raise ConfigError(f"{path}: unsupported bits per pixel {bpp}", "spdf")


def write_profile_stack(prefix, stack):
    """``prefix.spdf`` (counts) plus ``prefix_positions.csv``; returns both paths."""
    counts = np.asarray(stack.counts)
    if not np.issubdtype(counts.dtype, np.integer):
        if np.any(counts != np.round(counts)):
            raise ConfigError("only integer count stacks can be stored", "stack")
        counts = counts.astype(np.uint32)
    bpp = 16 if counts.size == 0 or counts.max() <= 0xFFFF else 32
    spdf = Path(f"{prefix}.spdf")
    pos = Path(f"{prefix}_positions.csv")
    write_spdf(spdf, counts, bpp)
    _text(pos, "index,position_ns\n" + "".join(f"{i},{_fmt(p)}\n" for i, p in enumerate(stack.positions)))
    return spdf, pos


def read_profile_stack(prefix, frames):
    from .tof import ProfileStack

    counts, _ = read_spdf(f"{prefix}.spdf")
    lines = Path(f"{prefix}_positions.csv").read_text().splitlines()[1:]
    positions = np.array([float(line.split(",")[1]) for line in lines if line.strip()])
    return ProfileStack(positions, counts.astype(np.uint32), frames)


# --------------------------------------------------------------------------
# Images


def write_pgm16(path, image):
    """Binary 16-bit PGM (P5, maxval 65535). Values are clipped to [0, 65535]."""
    a = np.asarray(image)
    if a.ndim != 2:
        raise DimensionError("image must be 2-D")
    h, w = a.shape
    px = np.clip(np.round(a), 0, 65535).astype(">u2")
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n65535\n".encode("ascii"))
        fh.write(px.tobytes())


def read_pgm16(path):
    data = Path(path).read_bytes()
    tokens = []
    i = 0
    while len(tokens) < 4:
        while i < len(data) and data[i : i + 1].isspace():
            i += 1
        if data[i : i + 1] == b"#":
            while data[i : i + 1] not in (b"\n", b""):
                i += 1
            continue
        j = i
        while j < len(data) and not data[j : j + 1].isspace():
            j += 1
        tokens.append(data[i:j])
        i = j
    i += 1  # single whitespace after maxval
    if tokens[0] != b"P5":
        raise ConfigError(f"{path}: not a binary PGM", "pgm")
    w, h, maxval = (int(t) for t in tokens[1:])
    dtype = ">u2" if maxval > 255 else "u1"
    return np.frombuffer(data, dtype=dtype, count=w * h, offset=i).reshape(h, w).astype(np.uint32)


def write_image_csv(path, image):
    a = np.asarray(image)
    if np.issubdtype(a.dtype, np.integer):
        _text(path, "".join(",".join(str(int(v)) for v in row) + "\n" for row in a))
    else:
        write_map_csv(path, a)


# --------------------------------------------------------------------------
# Depth maps


def write_depth_csv(path, distance):
    """Metres with 6 decimals; an empty cell marks no detection."""
    d = np.asarray(distance, dtype=float)
    _text(path, "".join(",".join("" if np.isnan(v) else f"{v:.6f}" for v in row) + "\n" for row in d))


def read_depth_csv(path):
    rows = [line.split(",") for line in Path(path).read_text().splitlines() if line != ""]
    return np.array([[float(v) if v else np.nan for v in row] for row in rows])


def write_depth_pgm(path, distance, lo=None, hi=None):
    """16-bit PGM of a depth map plus a sidecar JSON ``<path>.json``.

    Pixel value 0 marks no detection. A distance ``d`` maps to
    ``1 + round((d - lo) / (hi - lo) * 65534)``, so ``d = lo + (v - 1) *
    (hi - lo) / 65534``. ``lo``/``hi`` default to the finite min/max.
    """
    d = np.asarray(distance, dtype=float)
    ok = ~np.isnan(d)
    if lo is None:
        lo = float(d[ok].min()) if ok.any() else 0.0
    if hi is None:
        hi = float(d[ok].max()) if ok.any() else 0.0
    span = hi - lo
    scaled = np.where(ok, (np.clip(d, lo, hi) - lo) / span * 65534 if span > 0 else 0.0, 0.0)
    px = np.where(ok, 1 + np.round(scaled), 0)
    write_pgm16(path, px)
    side = {
        "min_m": lo,
        "max_m": hi,
        "no_detection_value": 0,
        "decode": "d = min_m + (v - 1) * (max_m - min_m) / 65534 for v >= 1",
    }
    _text(f"{path}.json", json.dumps(side, indent=2, sort_keys=True) + "\n")
    return side


def read_depth_pgm(path):
    px = read_pgm16(path).astype(float)
    side = json.loads(Path(f"{path}.json").read_text())
    lo, hi = side["min_m"], side["max_m"]
    return np.where(px > 0, lo + (px - 1) * (hi - lo) / 65534, np.nan)


# --------------------------------------------------------------------------
# Profiles and curves


def write_profile_csv(path, profile):
    _text(path, "position_ns,counts\n" + "".join(
        f"{_fmt(p)},{_fmt(c)}\n" for p, c in zip(profile.positions, profile.counts)))


def read_profile_csv(path):
    from .gate import IntensityProfile

    lines = Path(path).read_text().splitlines()[1:]
    a = np.array([[float(v) for v in line.split(",")] for line in lines if line.strip()])
    return IntensityProfile(a[:, 0], a[:, 1])


def write_histogram_csv(path, hist):
    _text(path, "bin_start_ns,bin_end_ns,count\n" + "".join(
        f"{_fmt(e0)},{_fmt(e1)},{int(c)}\n" for e0, e1, c in zip(hist.edges[:-1], hist.edges[1:], hist.counts)))


NOISE_COLUMNS = ("N_in", "mean_out", "std_raw", "std_corrected", "snr_db", "mode", "provenance")


def write_noise_csv(path, curve):
    lines = [",".join(NOISE_COLUMNS)]
    for n, m, r, c, s in zip(curve.n_in, curve.mean_out, curve.std_raw, curve.std_corrected, curve.snr_db):
        lines.append(",".join([_fmt(n), _fmt(m), _fmt(r), _fmt(c), _fmt(s), curve.mode, curve.provenance]))
    _text(path, "\n".join(lines) + "\n")


def read_noise_csv(path):
    from .hdr import NoiseCurve

    lines = Path(path).read_text().splitlines()
    if tuple(lines[0].split(",")) != NOISE_COLUMNS:
        raise ConfigError(f"{path}: unexpected header", "noise")
    rows = [line.split(",") for line in lines[1:] if line]
    cols = list(zip(*rows))
    return NoiseCurve(
        np.array(cols[0], float), np.array(cols[1], float), np.array(cols[2], float),
        np.array(cols[3], float), rows[0][5], rows[0][6],
    )


def write_json(path, obj):
    _text(path, json.dumps(obj, indent=2, sort_keys=True, allow_nan=True) + "\n")
