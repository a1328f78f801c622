"""Seeded Gaussian noise and dense vector helpers.

Parameter vectors are plain 1-D ``float64`` numpy arrays. Noise is
regenerated from a 64-bit seed rather than shipped over the wire, so the
generator below is part of the protocol: numpy's ``PCG64`` bit generator,
seeded through ``SeedSequence(seed)``, with ``Generator.standard_normal``
(numpy's 256-layer ziggurat). Changing either piece breaks learner/worker
agreement and needs a protocol version bump.
"""

from __future__ import annotations

import functools

import numpy as np

SEED_MAX = 2**64 - 1
NOISE_GENERATOR = "numpy.PCG64+SeedSequence/ziggurat"


class DimensionError(ValueError):
    pass


def as_param_vector(values) -> np.ndarray:
    """Copy ``values`` into a finite 1-D float64 array."""
    v = np.array(values, dtype=np.float64, copy=True)
    if v.ndim != 1 or v.size == 0:
        raise DimensionError(f"expected non-empty 1-D vector, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise ValueError("parameter vector contains NaN or Inf")
    return v


def check_seed(seed: int) -> int:
    seed = int(seed)
    if not 0 <= seed <= SEED_MAX:
        raise ValueError(f"noise seed {seed} is not a 64-bit unsigned integer")
    return seed


def sample_noise(seed: int, dim: int) -> np.ndarray:
    """Standard normal vector of length ``dim`` determined by ``seed``.

    The result is read-only; it may be shared with other callers asking for
    the same ``(seed, dim)``.
    """
    if dim < 1:
        raise DimensionError(f"noise dimension must be >= 1, got {dim}")
    return _cached_noise(check_seed(seed), int(dim))


@functools.lru_cache(maxsize=512)
def _cached_noise(seed: int, dim: int) -> np.ndarray:
    eps = np.random.Generator(np.random.PCG64(seed)).standard_normal(dim)
    eps.flags.writeable = False
    return eps


# SeedSequence mixing constants (numpy.random.bit_generator)
_INIT_A, _MULT_A = 0x43B0D7E5, 0x931E8875
_INIT_B, _MULT_B = 0x8B51F9DD, 0x58F38DED
_MIX_L, _MIX_R = 0xCA01F9DD, 0x4973F715
_M32 = 0xFFFFFFFF
_POOL = 4
_PCG_MULT = 0x2360ED051FC65DA44385DF649FCCF645
_M128 = (1 << 128) - 1


def _seed_pools(seeds: np.ndarray) -> np.ndarray:
    """``SeedSequence(seed).pool`` for many integer seeds at once, shape (M, 4).

    A seed below 2**64 has at most two 32-bit entropy words, and numpy pads
    the pool with zero words, so every seed takes the same path.
    """
    words = [(seeds & _M32).astype(np.uint32), (seeds >> np.uint64(32)).astype(np.uint32)]
    words += [np.zeros_like(words[0])] * (_POOL - 2)
    h = _INIT_A

    def hashmix(v):
        nonlocal h
        v = v ^ np.uint32(h)
        h = (h * _MULT_A) & _M32
        v = v * np.uint32(h)
        return v ^ (v >> np.uint32(16))

    def mix(x, y):
        r = np.uint32(_MIX_L) * x - np.uint32(_MIX_R) * y
        return r ^ (r >> np.uint32(16))

    pool = [hashmix(w) for w in words]
    for src in range(_POOL):
        for dst in range(_POOL):
            if src != dst:
                pool[dst] = mix(pool[dst], hashmix(pool[src]))
    return np.stack(pool, axis=1)


def _pcg64_states(seeds: np.ndarray) -> list[tuple[int, int]]:
    """(state, inc) that ``PCG64(seed)`` starts from, for each seed."""
    pool = _seed_pools(seeds)
    h = _INIT_B
    out = np.empty((len(seeds), 2 * _POOL), dtype=np.uint32)
    for i in range(2 * _POOL):
        v = pool[:, i % _POOL] ^ np.uint32(h)
        h = (h * _MULT_B) & _M32
        v = v * np.uint32(h)
        out[:, i] = v ^ (v >> np.uint32(16))
    w = out.astype(np.uint64)
    u64 = w[:, 0::2] | (w[:, 1::2] << np.uint64(32))
    states = []
    for a, b, c, d in u64.tolist():
        init_state, init_seq = (a << 64) | b, (c << 64) | d
        inc = ((init_seq << 1) | 1) & _M128
        st = (inc + init_state) & _M128
        states.append(((st * _PCG_MULT + inc) & _M128, inc))
    return states


def sample_noise_batch(seeds, dim: int) -> np.ndarray:
    """Row ``i`` equals ``sample_noise(seeds[i], dim)`` bit for bit.

    Derives the generator states for all seeds in one vectorized pass
    instead of building a ``SeedSequence`` per seed.
    """
    if dim < 1:
        raise DimensionError(f"noise dimension must be >= 1, got {dim}")
    seeds = [check_seed(s) for s in seeds]
    out = np.empty((len(seeds), int(dim)))
    if not seeds:
        return out
    bg = np.random.PCG64(0)
    gen = np.random.Generator(bg)
    state = {"bit_generator": "PCG64", "state": {"state": 0, "inc": 0},
             "has_uint32": 0, "uinteger": 0}
    for row, (st, inc) in zip(out, _pcg64_states(np.array(seeds, dtype=np.uint64))):
        state["state"]["state"], state["state"]["inc"] = st, inc
        bg.state = state
        gen.standard_normal(out=row)
    return out


def _check_pair(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"dimension mismatch: {a.shape} vs {b.shape}")


def norm_squared(v: np.ndarray) -> float:
    v = np.asarray(v, dtype=np.float64)
    return float(np.dot(v, v))


def dot(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    _check_pair(a, b)
    return float(np.dot(a, b))


EPISODE_STREAM = 1


def episode_rng(seed: int) -> np.random.Generator:
    """Environment/action randomness for the episode evaluating ``seed``.

    A sibling stream of the noise generator (same entropy, spawn key 1), so
    it never overlaps the perturbation draws.
    """
    ss = np.random.SeedSequence(check_seed(seed), spawn_key=(EPISODE_STREAM,))
    return np.random.Generator(np.random.PCG64(ss))
