"""Counter-based random streams for per-trial reproducibility.

Every trial owns an independent stream keyed by ``(seed, trial_index)``.
Uniform bits are SplitMix64 outputs of ``key + position * golden``, so the
k-th normal of a trial is a pure function of ``(seed, trial_index, k)``.
That is what makes Monte Carlo results independent of how trials are spread
over workers.

Normals come from the Marsaglia-Tsang ziggurat (256 layers). Blocks are
filled in two passes: a branch-light fast pass over all positions, then a
patch pass for the ~1% of positions that fall in a wedge or the tail. The
patch pass draws from a second SplitMix64 stream derived from the same key,
so determinism is preserved.
"""
import math

import numba as nb
import numpy as np

GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_SEED_SALT = np.uint64(0xD1B54A32D192ED03)
_PATCH_SALT = np.uint64(0x8CB92BA72F3D8DD7)
_INV53 = 1.0 / 9007199254740992.0

BLOCK = 256

# Marsaglia & Tsang (2000), 256 layers.
_ZIG_R = 3.6541528853610088
_ZIG_V = 0.00492867323399


def _build_ziggurat_tables():
    n = 256
    x = np.empty(n + 1)
    f = np.empty(n + 1)
    x[0] = _ZIG_V / math.exp(-0.5 * _ZIG_R * _ZIG_R)
    x[1] = _ZIG_R
    for i in range(1, n - 1):
        x[i + 1] = math.sqrt(-2.0 * math.log(_ZIG_V / x[i] + math.exp(-0.5 * x[i] ** 2)))
    x[n] = 0.0
    for i in range(n + 1):
        f[i] = math.exp(-0.5 * x[i] * x[i])
    return x, f


ZIG_X, ZIG_F = _build_ziggurat_tables()


@nb.njit(inline="always")
def mix64(z):
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


@nb.njit(inline="always")
def stream_key(seed, trial):
    return mix64(mix64(np.uint64(seed) ^ _SEED_SALT) + np.uint64(trial) * GOLDEN + GOLDEN)


@nb.njit(inline="always")
def _u53(key, pos):
    return np.float64(np.int64(mix64(key + pos * GOLDEN) >> np.uint64(11))) * _INV53


@nb.njit
def _finish_rejected(key2, aux, idx, z, zx, zf):
    # Completes a ziggurat draw whose fast test failed; aux[0] is the patch-stream position.
    while True:
        if idx == 0:
            while True:
                aux[0] += np.uint64(1)
                a = -math.log(_u53(key2, aux[0]) + _INV53) / zx[1]
                aux[0] += np.uint64(1)
                b = -math.log(_u53(key2, aux[0]) + _INV53)
                if b + b > a * a:
                    return zx[1] + a
        aux[0] += np.uint64(1)
        w = zf[idx + 1] + _u53(key2, aux[0]) * (zf[idx] - zf[idx + 1])
        if w < math.exp(-0.5 * z * z):
            return z
        aux[0] += np.uint64(1)
        bits = mix64(key2 + aux[0] * GOLDEN)
        idx = np.int64(bits & np.uint64(0xFF))
        z = np.float64(np.int64(bits >> np.uint64(11))) * _INV53 * zx[idx]
        if z < zx[idx + 1]:
            return z


@nb.njit
def fill_normals(key, start, buf, zx, zf, aux, rej):
    """Write normals for stream positions ``start+1 .. start+len(buf)`` into ``buf``.

    ``aux`` (uint64, length 1) carries the patch-stream position between calls
    and must start at zero for each trial. ``rej`` is scratch of length >= len(buf).
    """
    n = buf.shape[0]
    nrej = 0
    for i in range(n):
        bits = mix64(key + (start + np.uint64(i + 1)) * GOLDEN)
        idx = np.int64(bits & np.uint64(0xFF))
        sgn = 1.0 - 2.0 * np.float64(np.int64((bits >> np.uint64(8)) & np.uint64(1)))
        z = np.float64(np.int64(bits >> np.uint64(11))) * _INV53 * zx[idx]
        buf[i] = sgn * z
        rej[nrej] = i
        nrej += z >= zx[idx + 1]
    if nrej:
        key2 = mix64(key ^ _PATCH_SALT)
        for r in range(nrej):
            i = rej[r]
            bits = mix64(key + (start + np.uint64(i + 1)) * GOLDEN)
            idx = np.int64(bits & np.uint64(0xFF))
            sgn = 1.0 - 2.0 * np.float64(np.int64((bits >> np.uint64(8)) & np.uint64(1)))
            z = np.float64(np.int64(bits >> np.uint64(11))) * _INV53 * zx[idx]
            buf[i] = sgn * _finish_rejected(key2, aux, idx, z, zx, zf)


@nb.njit(nogil=True)
def _normals_for_trials(seed, trials, count, zx, zf):
    nblocks = (count + BLOCK - 1) // BLOCK
    out = np.empty((trials.shape[0], nblocks * BLOCK))
    buf = np.empty(BLOCK)
    rej = np.empty(BLOCK, dtype=np.int64)
    aux = np.zeros(1, dtype=np.uint64)
    for t in range(trials.shape[0]):
        key = stream_key(seed, trials[t])
        aux[0] = 0
        for b in range(nblocks):
            fill_normals(key, np.uint64(b * BLOCK), buf, zx, zf, aux, rej)
            out[t, b * BLOCK:(b + 1) * BLOCK] = buf
    return out[:, :count]


@nb.njit(nogil=True)
def _uniforms_for_trials(seed, trials, count):
    out = np.empty((trials.shape[0], count))
    for t in range(trials.shape[0]):
        key = stream_key(seed, trials[t])
        for k in range(count):
            out[t, k] = _u53(key, np.uint64(k + 1)) + _INV53
    return out


@nb.njit(nogil=True)
def _draw_streams(keys, bufs, pos, blk, aux, rej, count, zx, zf):
    m = keys.shape[0]
    out = np.empty((m, count))
    a1 = np.zeros(1, dtype=np.uint64)
    for t in range(m):
        a1[0] = aux[t]
        for k in range(count):
            if pos[t] == BLOCK:
                fill_normals(keys[t], np.uint64(blk[t] * BLOCK), bufs[t], zx, zf, a1, rej)
                blk[t] += 1
                pos[t] = 0
            out[t, k] = bufs[t, pos[t]]
            pos[t] += 1
        aux[t] = a1[0]
    return out


class TrialStreams:
    """Sequential normal draws for a batch of trials, identical to what the kernels consume."""

    def __init__(self, seed, trials):
        trials = np.asarray(trials, dtype=np.uint64).ravel()
        self.keys = np.array([_key(np.uint64(seed), t) for t in trials], dtype=np.uint64)
        m = len(trials)
        self.bufs = np.empty((m, BLOCK))
        self.pos = np.full(m, BLOCK, dtype=np.int64)
        self.blk = np.zeros(m, dtype=np.int64)
        self.aux = np.zeros(m, dtype=np.uint64)
        self.rej = np.empty(BLOCK, dtype=np.int64)

    def draw(self, count):
        return _draw_streams(self.keys, self.bufs, self.pos, self.blk, self.aux, self.rej,
                             int(count), ZIG_X, ZIG_F)


@nb.njit
def _key(seed, trial):
    return stream_key(seed, trial)


def trial_normals(seed, trials, count):
    """First ``count`` normals of each trial stream, shape (len(trials), count).

    These are exactly the normals the simulation kernels consume, in order.
    """
    trials = np.asarray(trials, dtype=np.uint64).ravel()
    return _normals_for_trials(np.uint64(seed), trials, int(count), ZIG_X, ZIG_F)


def trial_uniforms(seed, trials, count):
    """Uniforms on (0, 1] from the same keyed streams (used by tests)."""
    trials = np.asarray(trials, dtype=np.uint64).ravel()
    return _uniforms_for_trials(np.uint64(seed), trials, int(count))
