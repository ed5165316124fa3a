import math

import numpy as np
import pytest

from dpsqkd.errors import ConfigurationError, ScheduleOverlapError
from dpsqkd.network import (CirculatorModel, FiberSpan, build_tree,
                            stray_profile)
from dpsqkd.schedule import (PacketSchedule, TimingParams, UserWindows,
                             interleave, packet_period, required_storage,
                             validate_silence)

NS = 1e-9
C = 299792458.0
T100M = 100.0 * 1.468 / C      # one-way time of 100 m
T200M = 200.0 * 1.468 / C
T300M = 300.0 * 1.468 / C


class TestPacketPeriod:
    def test_demo_geometry(self):
        t = TimingParams(packet_time=128e-9, fiber_time=489.6e-9,
                         storage_time=979.2e-9)
        assert packet_period(t) == pytest.approx(2086.4e-9, rel=1e-12)

    def test_all_zero(self):
        assert packet_period(TimingParams(0, 0, 0)) == 0.0

    def test_minimal_storage_limit(self):
        # with storage barely holding the packet, the period approaches
        # 2 (fiber + packet)
        tp, tf = 128e-9, 500e-9
        t = TimingParams(packet_time=tp, fiber_time=tf, storage_time=tp)
        assert packet_period(t) == pytest.approx(2 * (tf + tp), rel=1e-12)

    def test_linear_in_each_argument(self):
        base = TimingParams(1e-9, 2e-9, 3e-9)
        assert packet_period(TimingParams(2e-9, 2e-9, 3e-9)) - \
            packet_period(base) == pytest.approx(1e-9)
        assert packet_period(TimingParams(1e-9, 4e-9, 3e-9)) - \
            packet_period(base) == pytest.approx(4e-9)
        assert packet_period(TimingParams(1e-9, 2e-9, 6e-9)) - \
            packet_period(base) == pytest.approx(3e-9)

    def test_rejects_negative(self):
        with pytest.raises(ValueError):
            TimingParams(-1e-9, 0, 0)


class TestRequiredStorage:
    def test_with_guard(self):
        req = required_storage(128e-9, 10e-9)
        assert req.storage_time == pytest.approx(138e-9)
        assert req.fiber_length_m == pytest.approx(28.18, abs=0.01)

    def test_zero(self):
        req = required_storage(0.0, 0.0)
        assert req.storage_time == 0.0
        assert req.fiber_length_m == 0.0

    def test_demo_storage_holds_packet(self):
        # 200 m of storage fiber comfortably exceeds a 128 ns packet
        req = required_storage(128e-9, 2e-9)
        assert T200M > req.storage_time


class TestInterleave:
    def test_two_leaves_different_storage(self):
        sched = interleave([(0, T100M, T200M), (1, T100M, T300M)],
                           packet_time=16e-9, guard_time=2e-9,
                           slot_period=NS)
        w0, w1 = sched.users
        # offsets differ by the 100 m storage difference, about 489.7 ns
        assert w1.signal[0] - w0.signal[0] == pytest.approx(489.672e-9,
                                                            rel=1e-3)
        assert w1.signal[0] - w0.signal[1] > sched.guard_time - 1e-15

    def test_single_user_matches_packet_period(self):
        sched = interleave([(0, T100M, T200M)], packet_time=128e-9,
                           guard_time=2e-9, slot_period=NS)
        expected = packet_period(TimingParams(
            packet_time=128e-9, fiber_time=T100M, storage_time=T200M))
        assert sched.period == pytest.approx(expected, rel=1e-12)

    def test_identical_users_collide(self):
        with pytest.raises(ScheduleOverlapError) as err:
            interleave([(0, T100M, T200M), (1, T100M, T200M)],
                       packet_time=16e-9, guard_time=2e-9, slot_period=NS)
        assert err.value.pair == (0, 1)
        assert err.value.suggested_storage_delta_m > 0

    def test_close_users_get_storage_suggestion(self):
        delta = 1.0 * 1.468 / C   # 1 m short of separation
        with pytest.raises(ScheduleOverlapError) as err:
            interleave([(0, T100M, T200M), (1, T100M, T200M + delta)],
                       packet_time=16e-9, guard_time=2e-9, slot_period=NS)
        need = err.value.suggested_storage_delta_m
        assert need == pytest.approx((18e-9 - delta) * C / 1.468, rel=1e-6)

    def test_storage_shorter_than_packet_hits_stray(self):
        with pytest.raises(ScheduleOverlapError):
            interleave([(0, T100M, 50e-9)], packet_time=128e-9,
                       guard_time=2e-9, slot_period=NS)

    def test_permutation_invariance(self):
        users = [(0, T100M, T200M), (1, T100M, T300M),
                 (2, T100M, 400.0 * 1.468 / C)]
        a = interleave(users, 16e-9, 2e-9, NS)
        b = interleave(list(reversed(users)), 16e-9, 2e-9, NS)
        assert a.period == b.period
        assert [(w.user_id, w.signal) for w in a.users] == \
            [(w.user_id, w.signal) for w in b.users]

    def test_return_offset_formula(self):
        sched = interleave([(0, T100M, T200M)], 128e-9, 2e-9, NS)
        w = sched.users[0]
        assert w.signal[0] == pytest.approx(2 * T100M + T200M, rel=1e-15)

    def test_forced_period(self):
        sched = interleave([(0, T100M, T200M)], 128e-9, 2e-9, NS,
                           period=8192e-9)
        assert sched.forced and sched.period == 8192e-9
        assert sched.min_period < 8192e-9
        with pytest.raises(ScheduleOverlapError):
            interleave([(0, T100M, T200M)], 128e-9, 2e-9, NS, period=1e-6)

    def test_empty(self):
        with pytest.raises(ValueError):
            interleave([], 128e-9, 2e-9, NS)

    def test_csv_rows(self):
        sched = interleave([(0, T100M, T200M)], 128e-9, 2e-9, NS)
        ((user, start, end, period),) = sched.csv_rows()
        assert user == 0
        assert end - start == pytest.approx(128.0)
        assert period == pytest.approx(sched.period * 1e9)


def demo_profile(slot_count=128, connector_return_db=55.0):
    topo = build_tree(2, feeder=FiberSpan(
        length=100.0, connector_return_loss_db=connector_return_db),
        splitter_excess_db=0.3,
        circulator=CirculatorModel(insertion_loss_db=0.6,
                                   directivity_db=70.0))
    return stray_profile(topo, [0], np.full(slot_count, 1.8e6), NS)


class TestValidateSilence:
    def test_demo_geometry_passes(self):
        sched = interleave([(0, T100M, T200M)], 128e-9, 2e-9, NS,
                           period=8192e-9)
        report = validate_silence(sched, demo_profile(), threshold=1e-3)
        assert report.passed
        assert not report.violations

    def test_storage_shorter_than_packet_fails_on_leaf_echo(self):
        # construct the invalid window table directly: with 50 ns storage
        # the return window sits inside the leaf-entrance echo (connectors
        # disabled so that echo is the only thing there)
        offset = 2 * T100M + 50e-9
        w = UserWindows(user_id=0, fiber_time=T100M, storage_time=50e-9,
                        emission=(0.0, 128e-9),
                        stray_windows=((0.0, 2 * T100M + 128e-9),),
                        signal=(offset, offset + 128e-9))
        sched = PacketSchedule(period=8192e-9, slot_period=NS,
                               guard_time=2e-9, users=(w,),
                               min_period=offset + 128e-9)
        profile = demo_profile(connector_return_db=math.inf)
        report = validate_silence(sched, profile, threshold=1e-3)
        assert not report.passed
        labels = {v.label for v in report.violations}
        assert "bob_entrance" in labels

    def test_zero_threshold_fails_at_minimal_period(self):
        # at the minimal period the guard-padded window reaches into the
        # next emission's circulator echo, so any leakage at all violates
        # a zero threshold
        sched = interleave([(0, T100M, T200M)], 128e-9, 2e-9, NS)
        report = validate_silence(sched, demo_profile(), threshold=0.0)
        assert not report.passed
        # the violating bins sit at the start of the next period
        assert all(v.bin < 3 for v in report.violations)

    def test_grid_mismatch(self):
        sched = interleave([(0, T100M, T200M)], 128e-9, 2e-9,
                           slot_period=2 * NS, period=8192e-9)
        with pytest.raises(ConfigurationError):
            validate_silence(sched, demo_profile(), threshold=1e-3)

    def test_guard_growth_monotone(self):
        # growing the guard keeps a passing schedule passing while windows
        # stay inside the period
        profile = demo_profile()
        for guard_slots in (0, 2, 8, 32):
            sched = interleave([(0, T100M, T200M)], 128e-9,
                               guard_slots * NS, NS, period=8192e-9)
            assert validate_silence(sched, profile, threshold=1e-3).passed
