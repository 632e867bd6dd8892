"""Counter-based random numbers (Philox4x32-10).

Every random decision in the simulator is a pure function of
``(master_seed, pixel_index, frame_index, stream)``. There is no generator
state to share between threads, so results do not depend on how pixels or
frames are scheduled.

Counter layout used throughout the package::

    counter = (pixel_index, block, stream, 0)
    key     = (seed & 0xffffffff, seed >> 32)

``stream`` separates independent uses (primary detection, crosstalk,
avalanche multiplicity). ``block`` is ``frame_index >> 2`` for the primary
detection stream, which yields four 32-bit words per call, one per frame.
Other streams use ``block = frame_index``.
"""

import numpy as np
from numba import njit

STREAM_DETECT = 0
STREAM_CROSSTALK = 1
STREAM_AVALANCHE = 2

_M0 = np.uint64(0xD2511F53)
_M1 = np.uint64(0xCD9E8D57)
_W0 = np.uint64(0x9E3779B9)
_W1 = np.uint64(0xBB67AE85)
_MASK = np.uint64(0xFFFFFFFF)
_SHIFT = np.uint64(32)

#: 2**32 as a float, the scale for turning a 32-bit word into [0, 1).
TWO32 = 4294967296.0


@njit(cache=True, inline="always")
def philox4x32(c0, c1, c2, c3, k0, k1):
    """Ten-round Philox4x32 block. All arguments are uint64 holding 32 bits."""
    for _ in range(10):
        p0 = _M0 * c0
        p1 = _M1 * c2
        hi0 = p0 >> _SHIFT
        lo0 = p0 & _MASK
        hi1 = p1 >> _SHIFT
        lo1 = p1 & _MASK
        c0 = hi1 ^ c1 ^ k0
        c1 = lo1
        c2 = hi0 ^ c3 ^ k1
        c3 = lo0
        k0 = (k0 + _W0) & _MASK
        k1 = (k1 + _W1) & _MASK
    return c0, c1, c2, c3


def split_seed(seed):
    """Return the two 32-bit key words for a non-negative integer seed."""
    seed = int(seed)
    if seed < 0 or seed >= 1 << 64:
        raise ValueError(f"seed must be in [0, 2**64), got {seed}")
    return np.uint64(seed & 0xFFFFFFFF), np.uint64(seed >> 32)


def philox4x32_numpy(counter, key):
    """Vectorised numpy reference implementation.

    Parameters
    ----------
    counter : array_like of shape (..., 4)
        32-bit counter words.
    key : array_like of shape (2,) or (..., 2)
        32-bit key words.

    Returns
    -------
    numpy.ndarray of uint32, shape (..., 4)
    """
    ctr = np.asarray(counter, dtype=np.uint64)
    k = np.broadcast_to(np.asarray(key, dtype=np.uint64), ctr.shape[:-1] + (2,))
    c0, c1, c2, c3 = (ctr[..., i].copy() for i in range(4))
    k0, k1 = k[..., 0].copy(), k[..., 1].copy()
    for _ in range(10):
        p0 = _M0 * c0
        p1 = _M1 * c2
        c0, c1, c2, c3 = (p1 >> _SHIFT) ^ c1 ^ k0, p1 & _MASK, (p0 >> _SHIFT) ^ c3 ^ k1, p0 & _MASK
        k0 = (k0 + _W0) & _MASK
        k1 = (k1 + _W1) & _MASK
    return np.stack([c0, c1, c2, c3], axis=-1).astype(np.uint32)


def uniforms(seed, pixel, frame, stream=STREAM_DETECT):
    """Uniform [0, 1) draws for given pixel/frame indices (numpy path).

    For the detection stream this reproduces exactly the word the simulation
    kernel compares against its threshold; useful for tests and debugging.
    """
    pixel = np.asarray(pixel, dtype=np.uint64)
    frame = np.asarray(frame, dtype=np.uint64)
    pixel, frame = np.broadcast_arrays(pixel, frame)
    k0, k1 = split_seed(seed)
    if stream == STREAM_DETECT:
        block, lane = frame >> np.uint64(2), (frame & np.uint64(3)).astype(np.intp)
    else:
        block, lane = frame, np.zeros(frame.shape, dtype=np.intp)
    ctr = np.stack(
        [pixel, block, np.full(pixel.shape, stream, np.uint64), np.zeros(pixel.shape, np.uint64)],
        axis=-1,
    )
    words = philox4x32_numpy(ctr, [k0, k1])
    picked = np.take_along_axis(words, lane[..., None], axis=-1)[..., 0]
    return picked.astype(np.float64) / TWO32
