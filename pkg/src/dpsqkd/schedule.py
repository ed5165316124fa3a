"""Packet timing: repetition period, storage requirements, multi-user
interleaving and silence-window validation against a stray profile.

A user's packet leaves the central station at t = 0, reaches the leaf
after the fiber time, circulates through the leaf's storage loop, and
arrives back at the receiver at 2 * fiber_time + storage_time.  Until the
leaf-entrance echo at 2 * fiber_time (plus one packet length) has passed,
the receiver sees stray photons; the return window must sit in the quiet
region after that and before the next emission.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, ScheduleOverlapError
from .network import StrayProfile
from .units import SPEED_OF_LIGHT


@dataclass(frozen=True)
class TimingParams:
    """One user's timing budget, all in seconds."""

    packet_time: float     # emission gate length
    fiber_time: float      # one-way network transit
    storage_time: float    # loop delay inside the leaf unit
    guard_time: float = 0.0

    def __post_init__(self):
        for name in ("packet_time", "fiber_time", "storage_time", "guard_time"):
            value = getattr(self, name)
            if not math.isfinite(value) or value < 0:
                raise ValueError(f"{name} must be finite and nonnegative")


def packet_period(timing: TimingParams) -> float:
    """Minimum emission period: the next packet may only start after the
    previous one has fully returned, 2*fiber + storage + packet."""
    return 2.0 * timing.fiber_time + timing.storage_time + timing.packet_time


@dataclass(frozen=True)
class StorageRequirement:
    storage_time: float      # s
    fiber_length_m: float    # equivalent delay fiber at the given index


def required_storage(packet_time: float, guard_time: float = 0.0,
                     group_index: float = 1.468) -> StorageRequirement:
    """Smallest loop delay that holds one whole packet (plus guard), and
    the delay-fiber length realizing it."""
    if packet_time < 0 or guard_time < 0:
        raise ValueError("times must be nonnegative")
    storage = packet_time + guard_time
    return StorageRequirement(
        storage_time=storage,
        fiber_length_m=storage * SPEED_OF_LIGHT / group_index,
    )


@dataclass(frozen=True)
class UserWindows:
    """One user's windows within a period, all in seconds from emission."""

    user_id: int
    fiber_time: float
    storage_time: float
    emission: tuple          # (0, packet_time)
    stray_windows: tuple     # ((start, end), ...) intervals with stray flux
    signal: tuple            # (start, end) return window

    @property
    def return_offset(self) -> float:
        return 2.0 * self.fiber_time + self.storage_time


@dataclass(frozen=True)
class PacketSchedule:
    """Global period plus per-user window table.

    Detections are attributed to users purely by arrival time inside
    their signal window; there is no addressing.
    """

    period: float
    slot_period: float
    guard_time: float
    users: tuple             # UserWindows, sorted by return offset
    min_period: float
    forced: bool = False

    @property
    def packet_time(self) -> float:
        return self.users[0].emission[1]

    def user_for_time(self, t: float):
        """User id owning the signal window containing t (mod period),
        or None for an unattributable arrival.

        Window edges carry a sub-slot tolerance so that times that went
        through a nanosecond round trip still land in their window;
        windows are at least one guard apart, so this is unambiguous.
        """
        tau = t % self.period
        tol = self.slot_period * 1e-3
        for w in self.users:
            if w.signal[0] - tol <= tau < w.signal[1] - tol:
                return w.user_id
        return None

    def csv_rows(self):
        """(user id, window start ns, window end ns, period ns) rows."""
        return [(w.user_id, w.signal[0] * 1e9, w.signal[1] * 1e9,
                 self.period * 1e9) for w in self.users]


def interleave(users, packet_time: float, guard_time: float,
               slot_period: float, period: float | None = None) -> PacketSchedule:
    """Window table for several users sharing one emission time.

    ``users`` is a sequence of ``(user_id, fiber_time, storage_time)``.
    The chosen period is the smallest value for which every return window
    (guard-padded) clears every user's stray region and every other return
    window; a larger ``period`` may be forced explicitly but never a
    smaller one.  Raises :class:`ScheduleOverlapError` naming the first
    colliding pair, with the storage-fiber increase that would separate
    them.
    """
    if not users:
        raise ValueError("at least one user is required")
    if packet_time <= 0 or guard_time < 0 or slot_period <= 0:
        raise ValueError("packet_time must be positive, guard nonnegative")

    windows = []
    for user_id, fiber_time, storage_time in users:
        if fiber_time < 0 or storage_time < 0:
            raise ValueError(f"user {user_id}: negative timing")
        offset = 2.0 * fiber_time + storage_time
        windows.append(UserWindows(
            user_id=user_id,
            fiber_time=fiber_time,
            storage_time=storage_time,
            emission=(0.0, packet_time),
            stray_windows=((0.0, 2.0 * fiber_time + packet_time),),
            signal=(offset, offset + packet_time),
        ))
    windows.sort(key=lambda w: (w.return_offset, w.user_id))

    for a, b in zip(windows, windows[1:]):
        gap = b.return_offset - a.return_offset
        if gap < packet_time + guard_time:
            shortfall = packet_time + guard_time - gap
            delta_m = shortfall * SPEED_OF_LIGHT / 1.468
            raise ScheduleOverlapError(
                f"return windows of users {a.user_id} and {b.user_id} "
                f"overlap: offsets differ by {gap * 1e9:.3f} ns, need "
                f">= {(packet_time + guard_time) * 1e9:.3f} ns; adding "
                f"about {delta_m:.1f} m of storage fiber to user "
                f"{b.user_id} would separate them",
                pair=(a.user_id, b.user_id),
                suggested_storage_delta_m=delta_m)

    stray_clear = max(w.stray_windows[-1][1] for w in windows)
    for w in windows:
        if w.signal[0] < stray_clear + guard_time - 1e-15:
            blocker = max(windows, key=lambda v: v.stray_windows[-1][1])
            raise ScheduleOverlapError(
                f"signal window of user {w.user_id} (starts "
                f"{w.signal[0] * 1e9:.3f} ns) overlaps the stray region, "
                f"which lasts until {stray_clear * 1e9:.3f} ns (leaf-entrance "
                f"echo of user {blocker.user_id}); the leaf cannot hold the "
                f"whole packet",
                pair=(w.user_id, blocker.user_id))

    min_period = max(w.signal[1] for w in windows)
    if period is None:
        period = min_period
        forced = False
    else:
        if period < min_period - 1e-15:
            raise ScheduleOverlapError(
                f"forced period {period * 1e9:.3f} ns is shorter than the "
                f"minimum {min_period * 1e9:.3f} ns")
        forced = True
    return PacketSchedule(period=period, slot_period=slot_period,
                          guard_time=guard_time, users=tuple(windows),
                          min_period=min_period, forced=forced)


@dataclass(frozen=True)
class SilenceViolation:
    bin: int
    time: float
    flux: float
    label: str
    user_id: int


@dataclass(frozen=True)
class SilenceReport:
    passed: bool
    threshold: float
    violations: tuple

    def __bool__(self):
        return self.passed


def validate_silence(sched: PacketSchedule, profile: StrayProfile,
                     threshold: float) -> SilenceReport:
    """Check that stray flux inside every guard-padded signal window stays
    below ``threshold`` photons per slot.

    The profile describes one emission; because emissions repeat every
    period, it is folded onto the period grid before checking so that a
    forced short period correctly sees the tail of the previous packet.
    """
    if not math.isclose(profile.slot_period, sched.slot_period, rel_tol=1e-9):
        raise ConfigurationError(
            f"profile bin width {profile.slot_period} s does not match "
            f"schedule slot period {sched.slot_period} s")

    nper = max(1, int(round(sched.period / sched.slot_period)))
    folded = np.zeros(nper)
    labels = {}
    for label, arr in profile.contributions.items():
        f = np.zeros(nper)
        idx = np.arange(arr.shape[0]) % nper
        np.add.at(f, idx, arr)
        labels[label] = f
        folded += f

    violations = []
    for w in sched.users:
        start = w.signal[0] - sched.guard_time
        end = w.signal[1] + sched.guard_time
        b0 = int(math.floor(start / sched.slot_period + 1e-9))
        b1 = int(math.ceil(end / sched.slot_period - 1e-9))
        for b in range(b0, b1):
            bb = b % nper
            if folded[bb] > threshold:
                label = max(labels, key=lambda name: labels[name][bb])
                violations.append(SilenceViolation(
                    bin=bb, time=bb * sched.slot_period,
                    flux=float(folded[bb]), label=label, user_id=w.user_id))
    return SilenceReport(passed=not violations, threshold=threshold,
                         violations=tuple(violations))
