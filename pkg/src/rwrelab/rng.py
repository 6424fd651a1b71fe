"""Counter-based random streams.

Every random draw in the package is addressed by a key derived from
``(master seed, stream name, task index, ...)`` with :class:`numpy.random.SeedSequence`,
so results do not depend on how tasks are scheduled across threads.  Inside
numba kernels each task runs its own SplitMix64 sequence seeded by such a key.
"""
from __future__ import annotations

import math
import zlib

import numpy as np
from numba import njit, uint64

_GAMMA = uint64(0x9E3779B97F4A7C15)
_M1 = uint64(0xBF58476D1CE4E5B9)
_M2 = uint64(0x94D049BB133111EB)
_INV53 = 1.0 / 9007199254740992.0


def _tag(name) -> int:
    if isinstance(name, (int, np.integer)):
        return int(name)
    return zlib.crc32(str(name).encode())


def seed_sequence(seed: int, *path) -> np.random.SeedSequence:
    """SeedSequence for the node ``path`` below ``seed`` in the stream tree."""
    return np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(_tag(p) for p in path))


def generator(seed: int, *path) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed_sequence(seed, *path)))


def kernel_key(seed: int, *path) -> np.uint64:
    """64-bit key for a numba kernel stream family."""
    return seed_sequence(seed, *path).generate_state(1, dtype=np.uint64)[0]


@njit(cache=True, inline="always")
def mix64(z):
    z = (z ^ (z >> uint64(30))) * _M1
    z = (z ^ (z >> uint64(27))) * _M2
    return z ^ (z >> uint64(31))


@njit(cache=True, inline="always")
def task_state(key, task):
    """Initial SplitMix64 counter for task ``task`` of stream ``key``."""
    return mix64(key ^ mix64(uint64(task) * _GAMMA + uint64(1)))


def state_array(key, task) -> np.ndarray:
    """Kernel state (1-element uint64 array) for ``task`` of stream ``key``."""
    return np.array([task_state(np.uint64(key), task)], dtype=np.uint64)


@njit(cache=True, inline="always")
def next_uniform(state):
    """Advance ``state`` (1-element uint64 array); return a double in [0, 1)."""
    state[0] += _GAMMA
    return float(mix64(state[0]) >> uint64(11)) * _INV53


@njit(cache=True, inline="always")
def next_exponential(state):
    return -np.log(1.0 - next_uniform(state))


@njit(cache=True, inline="always")
def next_normal(state):
    # Box-Muller, one output per call
    u1 = 1.0 - next_uniform(state)
    u2 = next_uniform(state)
    return np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)


@njit(cache=True, inline="always")
def hash_uniform(key, a, b):
    """Uniform in [0, 1) addressed by the pair ``(a, b)``; no state needed."""
    z = mix64(key ^ mix64(uint64(a + 4611686018427387904) * _GAMMA) ^ mix64(uint64(b) + _M2))
    return float(z >> uint64(11)) * _INV53


@njit(cache=True)
def next_gamma(state, shape):
    """Gamma(shape, 1) by Marsaglia-Tsang (boosted for shape < 1)."""
    if shape < 1.0:
        u = 1.0 - next_uniform(state)
        return next_gamma(state, shape + 1.0) * u ** (1.0 / shape)
    d = shape - 1.0 / 3.0
    c = 1.0 / np.sqrt(9.0 * d)
    while True:
        x = next_normal(state)
        v = 1.0 + c * x
        if v <= 0.0:
            continue
        v = v * v * v
        u = 1.0 - next_uniform(state)
        if u < 1.0 - 0.0331 * x ** 4:
            return d * v
        if np.log(u) < 0.5 * x * x + d * (1.0 - v + np.log(v)):
            return d * v


@njit(cache=True)
def next_poisson(state, mu):
    """Poisson(mu): multiplication method below 10, PTRS rejection above."""
    if mu <= 0.0:
        return 0
    if mu < 10.0:
        lim = np.exp(-mu)
        k = 0
        p = next_uniform(state)
        while p > lim:
            k += 1
            p *= next_uniform(state)
        return k
    slam = np.sqrt(mu)
    loglam = np.log(mu)
    b = 0.931 + 2.53 * slam
    a = -0.059 + 0.02483 * b
    invalpha = 1.1239 + 1.1328 / (b - 3.4)
    vr = 0.9277 - 3.6224 / (b - 2.0)
    while True:
        U = next_uniform(state) - 0.5
        V = next_uniform(state)
        us = 0.5 - abs(U)
        k = np.floor((2.0 * a / us + b) * U + mu + 0.43)
        if us >= 0.07 and V <= vr:
            return np.int64(k)
        if k < 0.0 or (us < 0.013 and V > us):
            continue
        if np.log(V) + np.log(invalpha) - np.log(a / (us * us) + b) <= -mu + k * loglam - math.lgamma(k + 1.0):
            return np.int64(k)


@njit(cache=True)
def next_negbin(state, m, p):
    """Failures before the ``m``-th success in Bernoulli(p) trials."""
    if m <= 0:
        return 0
    if m <= 16:
        lq = np.log1p(-p)
        tot = 0
        for _ in range(m):
            tot += np.int64(np.floor(np.log(1.0 - next_uniform(state)) / lq))
        return tot
    return next_poisson(state, next_gamma(state, float(m)) * (1.0 - p) / p)
