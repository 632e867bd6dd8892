"""Numba kernels for binary-frame Monte Carlo.

Per-frame detection is Bernoulli(1 - exp(-mu)). Each decision compares one
32-bit Philox word with ``p * 2**32``; the word for (pixel, frame) comes from
counter ``(pixel, frame >> 2, STREAM_DETECT, 0)``, lane ``frame & 3``.
Crosstalk draws come from ``(source_pixel, frame, STREAM_CROSSTALK, 0)``, one
lane per direction, and avalanche multiplicities for the pixel-A model from
``(pixel, frame, STREAM_AVALANCHE, 0)``.
"""

import math

import numpy as np
from numba import njit, prange

from .rng import STREAM_AVALANCHE, STREAM_CROSSTALK, STREAM_DETECT, TWO32, philox4x32

_ZERO = np.uint64(0)
_S_DET = np.uint64(STREAM_DETECT)
_S_XT = np.uint64(STREAM_CROSSTALK)
_S_AV = np.uint64(STREAM_AVALANCHE)

# direction of travel source -> target
_UP, _DOWN, _LEFT, _RIGHT = 0, 1, 2, 3


@njit(cache=True)
def _ztp_sample(mu, pix, frame, k0, k1):
    """Zero-truncated Poisson draw: avalanches in a frame known to have fired."""
    w0, w1, _, _ = philox4x32(np.uint64(pix), np.uint64(frame), _S_AV, _ZERO, k0, k1)
    if mu <= 0.0:
        return 1.0
    if mu < 30.0:
        u = (float(w0) + float(w1) / TWO32) / TWO32
        p0 = math.exp(-mu)
        target = p0 + u * (1.0 - p0)
        pmf = p0
        cdf = p0
        n = 0
        limit = int(mu + 40.0 * math.sqrt(mu) + 50.0)
        while n < limit:
            n += 1
            pmf *= mu / n
            cdf += pmf
            if cdf >= target:
                break
        return float(n)
    # normal approximation; P(N = 0) is below 1e-13 here
    u1 = (float(w0) + 0.5) / TWO32
    u2 = (float(w1) + 0.5) / TWO32
    z = math.sqrt(-2.0 * math.log(u1)) * math.cos(2.0 * math.pi * u2)
    n = math.floor(mu + math.sqrt(mu) * z + 0.5)
    return max(1.0, n)


@njit(cache=True, parallel=True)
def _run_independent(th, mu, frames, frame_offset, k0, k1, want_bits, pixel_a):
    groups, phases, npix = th.shape
    counts = np.zeros((groups, npix), np.uint32)
    aval = np.zeros((groups if pixel_a else 0, npix), np.float64)
    bits = np.zeros((groups if want_bits else 0, frames, npix), np.uint8)
    for pix in prange(npix):
        upix = np.uint64(pix)
        for g in range(groups):
            base = frame_offset + g * frames
            c = 0
            av = 0.0
            f = 0
            while f < frames:
                gf = base + f
                lane = gf & 3
                n = min(4 - lane, frames - f)
                w = philox4x32(upix, np.uint64(gf >> 2), _S_DET, _ZERO, k0, k1)
                for j in range(n):
                    ph = (f + j) % phases
                    if float(w[lane + j]) < th[g, ph, pix]:
                        c += 1
                        if want_bits:
                            bits[g, f + j, pix] = 1
                        if pixel_a:
                            av += _ztp_sample(mu[g, ph, pix], pix, gf + j, k0, k1)
                f += n
            counts[g, pix] = c
            if pixel_a:
                aval[g, pix] = av
    return counts, aval, bits


_CHUNK = 64


@njit(cache=True, inline="always")
def _popcount(x):
    x = x - ((x >> np.uint64(1)) & np.uint64(0x5555555555555555))
    x = (x & np.uint64(0x3333333333333333)) + ((x >> np.uint64(2)) & np.uint64(0x3333333333333333))
    x = (x + (x >> np.uint64(4))) & np.uint64(0x0F0F0F0F0F0F0F0F)
    return int((x * np.uint64(0x0101010101010101)) >> np.uint64(56))


@njit(cache=True, inline="always")
def _bit_index(low):
    # index of the single set bit in ``low``
    return _popcount(low - np.uint64(1))


@njit(cache=True, parallel=True)
def _run_crosstalk(th, mu, frames, frame_offset, width, height, k0, k1, xt_th, want_bits, pixel_a):
    # Frames go in chunks of up to 64: bit j of a mask is frame f + j.
    # Pass 1: primary detections. Pass 2: each fired source decides, once per
    # frame, which of its four neighbours it triggers. Pass 3: combine.
    groups, phases, npix = th.shape
    counts = np.zeros((groups, npix), np.uint32)
    aval = np.zeros((groups if pixel_a else 0, npix), np.float64)
    bits = np.zeros((groups if want_bits else 0, frames, npix), np.uint8)
    fired = np.zeros(npix, np.uint64)
    out = np.zeros((4, npix), np.uint64)
    one = np.uint64(1)
    for g in range(groups):
        base = frame_offset + g * frames
        f = 0
        while f < frames:
            n = min(_CHUNK, frames - f)
            for pix in prange(npix):
                upix = np.uint64(pix)
                m = _ZERO
                j = 0
                while j < n:
                    gf = base + f + j
                    lane = gf & 3
                    w = philox4x32(upix, np.uint64(gf >> 2), _S_DET, _ZERO, k0, k1)
                    while lane < 4 and j < n:
                        if float(w[lane]) < th[g, (f + j) % phases, pix]:
                            m |= one << np.uint64(j)
                        lane += 1
                        j += 1
                fired[pix] = m
            for pix in prange(npix):
                m = fired[pix]
                o0 = _ZERO
                o1 = _ZERO
                o2 = _ZERO
                o3 = _ZERO
                while m != _ZERO:
                    low = m & (~m + one)
                    m ^= low
                    j = _bit_index(low)
                    w = philox4x32(np.uint64(pix), np.uint64(base + f + j), _S_XT, _ZERO, k0, k1)
                    if float(w[0]) < xt_th:
                        o0 |= low
                    if float(w[1]) < xt_th:
                        o1 |= low
                    if float(w[2]) < xt_th:
                        o2 |= low
                    if float(w[3]) < xt_th:
                        o3 |= low
                out[_UP, pix] = o0
                out[_DOWN, pix] = o1
                out[_LEFT, pix] = o2
                out[_RIGHT, pix] = o3
            for pix in prange(npix):
                r = pix // width
                col = pix - r * width
                own = fired[pix]
                hit = own
                if r > 0:
                    hit |= out[_DOWN, pix - width]
                if r < height - 1:
                    hit |= out[_UP, pix + width]
                if col > 0:
                    hit |= out[_RIGHT, pix - 1]
                if col < width - 1:
                    hit |= out[_LEFT, pix + 1]
                if hit == _ZERO:
                    continue
                counts[g, pix] += _popcount(hit)
                if want_bits or pixel_a:
                    av = 0.0
                    rest = hit
                    while rest != _ZERO:
                        low = rest & (~rest + one)
                        rest ^= low
                        j = _bit_index(low)
                        if want_bits:
                            bits[g, f + j, pix] = 1
                        if pixel_a:
                            if own & low:
                                av += _ztp_sample(mu[g, (f + j) % phases, pix], pix, base + f + j, k0, k1)
                            else:
                                av += 1.0
                    if pixel_a:
                        aval[g, pix] += av
            f += n
    return counts, aval, bits


def run(mu, frames, frame_offset, width, height, k0, k1, crosstalk_p=0.0, want_bits=False, pixel_a=False):
    """Dispatch to the right kernel.

    ``mu`` has shape (groups, phases, npix); frame ``k`` of group ``g`` has the
    global index ``frame_offset + g*frames + k`` and phase ``k % phases``.
    """
    mu = np.ascontiguousarray(mu, dtype=np.float64)
    th = -np.expm1(-mu) * TWO32
    if crosstalk_p > 0:
        return _run_crosstalk(
            th, mu, int(frames), int(frame_offset), int(width), int(height),
            k0, k1, float(crosstalk_p) * TWO32, bool(want_bits), bool(pixel_a),
        )
    return _run_independent(th, mu, int(frames), int(frame_offset), k0, k1, bool(want_bits), bool(pixel_a))
