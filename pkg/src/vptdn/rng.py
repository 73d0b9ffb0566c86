"""Counter-based deterministic random streams.

Every consumer of randomness in the renderer derives an independent stream
from a (seed, pixel, sample, purpose) key, so results do not depend on
evaluation order or worker count. The generator is the splitmix64 sequence:
a 64-bit state advanced by a fixed odd gamma, finalized with an avalanche
mix. Scalar njit versions of these functions live in _kernels.py.
"""
from __future__ import annotations

import numpy as np

_MASK = np.uint64(0xFFFFFFFFFFFFFFFF)
GAMMA = np.uint64(0x9E3779B97F4A7C15)
_MUL1 = np.uint64(0xBF58476D1CE4E5B9)
_MUL2 = np.uint64(0x94D049BB133111EB)
_INV_2_53 = 1.0 / 9007199254740992.0  # 2**-53

# Stream purposes. Path/NEE streams are additionally offset by bounce depth.
PURPOSE_CAMERA = 0
PURPOSE_PATH = 16
PURPOSE_NEE = 64
PURPOSE_RESAMPLE = 128


def mix64(x) -> np.uint64:
    """Avalanche finalizer (splitmix64). Accepts scalars or uint64 arrays."""
    with np.errstate(over="ignore"):
        x = np.asarray(x, dtype=np.uint64)
        x = x ^ (x >> np.uint64(30))
        x = (x * _MUL1) & _MASK
        x = x ^ (x >> np.uint64(27))
        x = (x * _MUL2) & _MASK
        x = x ^ (x >> np.uint64(31))
    return x if x.ndim else np.uint64(x)


def derive_seed(*words) -> np.uint64:
    """Fold integer words into one 64-bit seed (order-sensitive)."""
    with np.errstate(over="ignore"):
        s = np.uint64(0)
        for w in words:
            s = mix64((s + GAMMA) ^ np.uint64(np.int64(w) & 0x7FFFFFFFFFFFFFFF))
    return np.uint64(s)


def stream_init(seed, pixel, sample, purpose) -> np.uint64:
    """Initial state for the (seed, pixel, sample, purpose) stream."""
    with np.errstate(over="ignore"):
        s = np.uint64(seed)
        s = mix64(s ^ (np.uint64(pixel) * np.uint64(0x9E3779B97F4A7C15)))
        s = mix64(s ^ (np.uint64(sample) * np.uint64(0xD1B54A32D192ED03)))
        s = mix64(s ^ (np.uint64(purpose) * np.uint64(0x8CB92BA72F3D8DD7)))
    return np.uint64(s)


def next_uniform(state):
    """Advance a stream state; return (new_state, uniform in [0, 1))."""
    with np.errstate(over="ignore"):
        state = np.asarray(state, dtype=np.uint64)
        state = (state + GAMMA) & _MASK
        u = (mix64(state) >> np.uint64(11)).astype(np.float64) * _INV_2_53
    if state.ndim:
        return state, u
    return np.uint64(state), float(u)


def uniforms(seed, pixel, sample, purpose, count: int) -> np.ndarray:
    """First `count` uniforms of one stream, as a float64 array."""
    st = stream_init(seed, pixel, sample, purpose)
    out = np.empty(count, dtype=np.float64)
    for i in range(count):
        st, out[i] = next_uniform(st)
    return out
