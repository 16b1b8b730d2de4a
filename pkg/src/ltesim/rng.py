"""Counter-based random streams (Philox4x64-10) usable from numba kernels.

Every draw is a pure function of ``(seed, stream_id, counter)``, so a sample
can be regenerated anywhere, in any order, on any number of threads.

The generator state is a small ``uint64`` array so that the same stream can be
advanced from Python and from inside ``@njit`` code:

    [k0, k1, c0, c1, c2, c3, pos, b0, b1, b2, b3]

``(k0, k1)`` is the key, ``(c0..c3)`` the 256-bit counter of the *next* block,
``pos`` the read position in the 4-word output buffer ``b``.  Substreams keep
the key and fix ``(c1, c2, c3) = (n, m, sample_id)``; ``c0`` then counts
blocks.  The root stream of a key sets the top bit of ``c3`` so it never
collides with a substream.
"""

import numpy as np
from llvmlite import ir
from numba import njit, types
from numba.extending import intrinsic

_M0 = np.uint64(0xD2E7470EE14C6C93)
_M1 = np.uint64(0xCA5A826395121157)
_W0 = np.uint64(0x9E3779B97F4A7C15)
_W1 = np.uint64(0xBB67AE8584CAA73B)
_MASK32 = np.uint64(0xFFFFFFFF)
_S32 = np.uint64(32)
_S11 = np.uint64(11)
_ONE = np.uint64(1)
_ZERO = np.uint64(0)
_FOUR = np.uint64(4)
_SEVEN = np.uint64(7)
_ROOT_FLAG = np.uint64(1 << 63)
_TWO_M53 = 2.0 ** -53

STATE_SIZE = 11
_MASK64 = (1 << 64) - 1


@intrinsic
def _mulhi(typingctx, a, b):
    """High 64 bits of the 128-bit product (one native multiply)."""
    if a != types.uint64 or b != types.uint64:
        return None

    def codegen(context, builder, sig, args):
        wide = ir.IntType(128)
        prod = builder.mul(builder.zext(args[0], wide), builder.zext(args[1], wide))
        return builder.trunc(builder.lshr(prod, ir.Constant(wide, 64)), ir.IntType(64))

    return types.uint64(types.uint64, types.uint64), codegen


@njit(cache=True, inline="always")
def philox4x64(c0, c1, c2, c3, k0, k1):
    """Ten-round Philox4x64 bijection of one 256-bit counter block."""
    for _ in range(10):
        hi0 = _mulhi(_M0, c0)
        lo0 = _M0 * c0
        hi1 = _mulhi(_M1, c2)
        lo1 = _M1 * c2
        c0, c1, c2, c3 = hi1 ^ c1 ^ k0, lo1, hi0 ^ c3 ^ k1, lo0
        k0 = k0 + _W0
        k1 = k1 + _W1
    return c0, c1, c2, c3


@njit(cache=True, inline="always")
def next_u64(st):
    pos = st[6]
    if pos >= _FOUR:
        b0, b1, b2, b3 = philox4x64(st[2], st[3], st[4], st[5], st[0], st[1])
        st[7] = b0
        st[8] = b1
        st[9] = b2
        st[10] = b3
        st[2] += _ONE
        pos = _ZERO
    v = st[_SEVEN + pos]
    st[6] = pos + _ONE
    return v


@njit(cache=True, inline="always")
def next_uniform(st):
    """Uniform on the open interval (0, 1) with 53 random bits."""
    return ((next_u64(st) >> _S11) + 0.5) * _TWO_M53


@njit(cache=True, inline="always")
def next_normal(st):
    """Standard normal by the Box-Muller cosine branch."""
    u1 = next_uniform(st)
    u2 = next_uniform(st)
    return np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)


@njit(cache=True)
def next_poisson(st, lam):
    """Poisson count by sequential CDF inversion, split for large means."""
    total = 0
    remaining = lam
    while remaining > 0.0:
        chunk = min(remaining, 500.0)
        remaining -= chunk
        u = next_uniform(st)
        p = np.exp(-chunk)
        cdf = p
        k = 0
        while u > cdf:
            k += 1
            p *= chunk / k
            cdf += p
            if p == 0.0 and cdf < u:
                # unreachable in exact arithmetic; guards the float tail
                break
        total += k
    return total


@njit(cache=True, inline="always")
def reset_substream(st, k0, k1, sample_id, m, n):
    st[0] = k0
    st[1] = k1
    st[2] = _ZERO
    st[3] = n
    st[4] = m
    st[5] = sample_id
    st[6] = _FOUR


@njit(cache=True)
def fill_uniform(st, out):
    for i in range(out.size):
        out[i] = next_uniform(st)


@njit(cache=True)
def fill_normal(st, out):
    for i in range(out.size):
        out[i] = next_normal(st)


@njit(cache=True)
def fill_poisson(st, lam, out):
    for i in range(out.size):
        out[i] = next_poisson(st, lam)


@njit(cache=True, nogil=True)
def normals_grid(k0, k1, sample_ids, m, out):
    """``out[b, n-1]`` = first normal of substream ``(sample_ids[b], m, n)``."""
    st = np.zeros(STATE_SIZE, dtype=np.uint64)
    for b in range(out.shape[0]):
        sid = np.uint64(sample_ids[b])
        for j in range(out.shape[1]):
            reset_substream(st, k0, k1, sid, np.uint64(m), np.uint64(j + 1))
            out[b, j] = next_normal(st)


def _as_u64(value):
    return np.uint64(int(value) & _MASK64)


def make_key(seed, stream_id):
    return _as_u64(seed), _as_u64(stream_id)


class RngStream:
    """A seedable Philox stream.

    ``RngStream(seed, stream_id)`` is the root stream of the key
    ``(seed, stream_id)``; :meth:`substream` derives the per-(sample, m, n)
    streams the simulation kernels use.
    """

    def __init__(self, seed, stream_id=0):
        self.seed = int(seed)
        self.stream_id = int(stream_id)
        self.key = make_key(seed, stream_id)
        self.state = np.zeros(STATE_SIZE, dtype=np.uint64)
        self.state[0], self.state[1] = self.key
        self.state[5] = _ROOT_FLAG
        self.state[6] = 4

    @classmethod
    def _from_state(cls, seed, stream_id, state):
        obj = cls.__new__(cls)
        obj.seed = int(seed)
        obj.stream_id = int(stream_id)
        obj.key = (state[0], state[1])
        obj.state = state
        return obj

    def substream(self, sample_id, m=0, n=0):
        if sample_id < 0 or sample_id >= 1 << 63:
            raise ValueError(f"sample_id out of range: {sample_id}")
        st = np.zeros(STATE_SIZE, dtype=np.uint64)
        reset_substream(st, self.key[0], self.key[1], np.uint64(sample_id),
                        np.uint64(m), np.uint64(n))
        return RngStream._from_state(self.seed, self.stream_id, st)

    def uniform(self, size=None):
        if size is None:
            return float(next_uniform(self.state))
        out = np.empty(size)
        fill_uniform(self.state, out.reshape(-1))
        return out

    def standard_normal(self, size=None):
        if size is None:
            return float(next_normal(self.state))
        out = np.empty(size)
        fill_normal(self.state, out.reshape(-1))
        return out

    def poisson(self, lam, size=None):
        if lam < 0 or not np.isfinite(lam):
            raise ValueError(f"invalid Poisson mean {lam}")
        if size is None:
            return int(next_poisson(self.state, float(lam)))
        out = np.empty(size, dtype=np.int64)
        fill_poisson(self.state, float(lam), out.reshape(-1))
        return out

    def __repr__(self):
        return f"RngStream(seed={self.seed}, stream_id={self.stream_id})"


def derive_stream(seed, stream_id):
    """Independent stream for ``(seed, stream_id)``; O(1), no shared state."""
    return RngStream(seed, stream_id)
