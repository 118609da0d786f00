"""Counter-based random streams keyed by (seed, purpose, node id, ...).

Every draw is a pure function of its key, so results never depend on the
order in which nodes are processed or on how work is split across workers.
The mixing function is the SplitMix64 finalizer applied to a running state
into which each counter is folded.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError

PURPOSES = frozenset(
    {
        "split",
        "aps-u",
        "y-random",
        "cfgnn-init",
        "cfgnn-batch",
        "synth-graph",
        "synth-probs",
    }
)

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_MASK64 = (1 << 64) - 1


def _mix64(x: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore"):
        x = x ^ (x >> np.uint64(30))
        x = x * _M1
        x = x ^ (x >> np.uint64(27))
        x = x * _M2
        x = x ^ (x >> np.uint64(31))
    return x


def _purpose_code(purpose: str) -> int:
    digest = hashlib.blake2b(purpose.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def _as_u64(values) -> np.ndarray:
    arr = np.asarray(values)
    if arr.dtype.kind == "u":
        return arr.astype(np.uint64)
    if arr.dtype.kind in "ib":
        # two's complement wrap for negative ints
        return arr.astype(np.int64).view(np.uint64)
    raise TypeError(f"random stream counters must be integers, got {arr.dtype}")


@dataclass(frozen=True)
class RandomPolicy:
    """Master seed plus the purpose-tagged streams derived from it."""

    master_seed: int = 0

    def _base(self, purpose: str) -> np.uint64:
        if purpose not in PURPOSES:
            raise ConfigError(f"unknown random stream purpose {purpose!r}")
        seed = np.array(self.master_seed & _MASK64, dtype=np.uint64)
        code = np.array(_purpose_code(purpose), dtype=np.uint64)
        with np.errstate(over="ignore"):
            return _mix64(_mix64(seed + _GOLDEN) ^ code)

    def bits(self, purpose: str, *counters) -> np.ndarray:
        """Raw 64-bit words, one per broadcast element of ``counters``."""
        parts = np.broadcast_arrays(*[_as_u64(c) for c in counters]) if counters else []
        shape = parts[0].shape if parts else ()
        state = np.full(shape, self._base(purpose), dtype=np.uint64)
        with np.errstate(over="ignore"):
            for c in parts:
                state = _mix64(state ^ _mix64(c + _GOLDEN))
        return state

    def uniform(self, purpose: str, *counters) -> np.ndarray:
        """Uniform draws in [0, 1) with 53 bits of resolution."""
        b = self.bits(purpose, *counters)
        return (b >> np.uint64(11)).astype(np.float64) * (1.0 / (1 << 53))

    def generator(self, purpose: str, *keys: int) -> np.random.Generator:
        """A numpy Generator for bulk draws that are not keyed per node."""
        word = int(self.bits(purpose, *[np.uint64(k & _MASK64) for k in keys]))
        return np.random.Generator(np.random.Philox(key=word))


def uniform_unit(policy: RandomPolicy, purpose: str, node) -> np.ndarray | float:
    """Deterministic U[0,1) draw for ``node`` (scalar or array of ids)."""
    out = policy.uniform(purpose, node)
    return float(out) if np.ndim(out) == 0 else out


def permutation_keys(policy: RandomPolicy, purpose: str, items, *counters) -> np.ndarray:
    """Sort keys whose argsort is a uniformly random permutation of ``items``."""
    return policy.bits(purpose, np.asarray(items), *counters)
