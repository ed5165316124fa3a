"""Modulation-bit sources for the leaf units.

Each leaf applies a phase of ``pi * bit`` to every pulse slot.  Sources
produce the same stream regardless of how it is chunked into packets, so
the receiver-side sifting step can regenerate any packet's bits on demand
instead of storing the whole stream.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.random import Philox, SeedSequence

from . import kernels

# Standard maximal-length feedback taps for x^k + x^j + 1.
PRBS_TAPS = {7: 6, 15: 14, 23: 18, 31: 28}

# Orders whose full period is small enough to materialize and tile.
_TILE_MAX_ORDER = 23

# Spawn-key tag separating modulation-bit streams from detection streams.
BIT_STREAM_TAG = 1


def prbs_sequence(order: int, seed: int, length: int) -> np.ndarray:
    """Maximal-length LFSR bit sequence of the given length.

    ``seed`` is the initial register state; its low ``order`` bits must not
    all be zero.  The sequence has period ``2**order - 1`` and repeats over
    ``length``.
    """
    state = _checked_state(order, seed)
    if length < 0:
        raise ValueError("length must be nonnegative")
    tap = PRBS_TAPS[order]
    if order <= _TILE_MAX_ORDER:
        period = 2 ** order - 1
        if length >= period:
            one_period, _ = kernels.lfsr_bits(order, tap, state, period)
            reps = -(-length // period)
            return np.tile(one_period, reps)[:length].copy()
    bits, _ = kernels.lfsr_bits(order, tap, state, length)
    return bits


def _checked_state(order: int, seed: int) -> int:
    if order not in PRBS_TAPS:
        raise ValueError(f"order must be one of {sorted(PRBS_TAPS)}")
    state = int(seed) & ((1 << order) - 1)
    if state == 0:
        raise ValueError("seed must be nonzero in the register's low bits "
                         "(the all-zero state is degenerate)")
    return state


class PrbsSource:
    """Repeating pseudo-random pattern, as produced by a hardware pattern
    generator.  The stream is continuous across packet boundaries."""

    def __init__(self, order: int, seed: int = 1):
        self.order = order
        self.seed = seed
        self._state0 = _checked_state(order, seed)
        self._tap = PRBS_TAPS[order]
        self._period_bits = None
        # sequential cache for orders too long to tile
        self._pos = 0
        self._state = self._state0

    def bind(self, master_seed: int, user_index: int) -> "PrbsSource":
        return self

    def _stream(self, start: int, count: int) -> np.ndarray:
        if self.order <= _TILE_MAX_ORDER:
            if self._period_bits is None:
                period = 2 ** self.order - 1
                self._period_bits, _ = kernels.lfsr_bits(
                    self.order, self._tap, self._state0, period)
            idx = (start + np.arange(count, dtype=np.int64)) % self._period_bits.shape[0]
            return self._period_bits[idx]
        if start != self._pos:
            if start < self._pos:
                self._pos, self._state = 0, self._state0
            skipped, self._state = kernels.lfsr_bits(
                self.order, self._tap, self._state, start - self._pos)
            del skipped
            self._pos = start
        bits, self._state = kernels.lfsr_bits(
            self.order, self._tap, self._state, count)
        self._pos = start + count
        return bits

    def modulation_bits(self, first_packet: int, num_packets: int,
                        slot_count: int) -> np.ndarray:
        bits = self._stream(first_packet * slot_count,
                            num_packets * slot_count)
        return bits.reshape(num_packets, slot_count)


class RandomSource:
    """Fresh random modulation bits from a counter-based generator.

    Without an explicit seed the stream is derived from the run's master
    seed and the user's index, so adding or removing other users never
    perturbs it.  Random access is cheap, which lets sifting regenerate
    bits for any packet directly.
    """

    def __init__(self, seed: int | None = None):
        self.seed = seed
        self._seq = None
        if seed is not None:
            self._seq = SeedSequence(entropy=int(seed))

    def bind(self, master_seed: int, user_index: int) -> "RandomSource":
        if self.seed is not None:
            return self
        bound = RandomSource()
        bound._seq = SeedSequence(entropy=int(master_seed),
                                  spawn_key=(BIT_STREAM_TAG, int(user_index)))
        return bound

    def _bits(self, start: int, count: int) -> np.ndarray:
        if self._seq is None:
            raise RuntimeError("RandomSource must be bound to a run seed "
                               "before use (call bind)")
        w0, w1 = start // 64, -(-(start + count) // 64)
        wbase = 4 * (w0 // 4)
        gen = Philox(seed=self._seq)
        if wbase:
            gen.advance(wbase // 4)
        words = np.asarray(gen.random_raw(w1 - wbase), dtype=np.uint64)
        bits = np.unpackbits(words.view(np.uint8), bitorder="little")
        lo = start - wbase * 64
        return (bits[lo:lo + count] & 1).astype(np.uint8)

    def modulation_bits(self, first_packet: int, num_packets: int,
                        slot_count: int) -> np.ndarray:
        bits = self._bits(first_packet * slot_count, num_packets * slot_count)
        return bits.reshape(num_packets, slot_count)


#: Modulation-bit patterns named after the detector sequence they produce:
#: the detected bit of slot i is bits[i-1] XOR bits[i].
FIXED_PATTERNS = {
    "all-zero": np.array([0], dtype=np.uint8),
    "all-one": np.array([0, 1], dtype=np.uint8),
    "alternating": np.array([0, 0, 1, 1], dtype=np.uint8),
}


class FixedPatternSource:
    """Deterministic repeating test pattern (no randomness at all)."""

    def __init__(self, pattern: str):
        if pattern not in FIXED_PATTERNS:
            raise ValueError(f"unknown pattern {pattern!r}; "
                             f"choose from {sorted(FIXED_PATTERNS)}")
        self.pattern = pattern
        self._base = FIXED_PATTERNS[pattern]

    def bind(self, master_seed: int, user_index: int) -> "FixedPatternSource":
        return self

    def modulation_bits(self, first_packet: int, num_packets: int,
                        slot_count: int) -> np.ndarray:
        start = first_packet * slot_count
        idx = (start + np.arange(num_packets * slot_count, dtype=np.int64)) \
            % self._base.shape[0]
        return self._base[idx].reshape(num_packets, slot_count)
