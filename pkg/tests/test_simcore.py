import math

import numpy as np
import pytest

from conftest import tiny_scenario
from dpsqkd import simcore
from dpsqkd.errors import ConfigurationError
from dpsqkd.network import path_loss
from dpsqkd.optics import MziParams, demodulate_packet, uniform_packet
from dpsqkd.simcore import (BobUnit, DetectorModel, build_run_timing,
                            expected_raw_rate, histogram, run_scenario)
from dpsqkd.units import db_to_fraction


class TestDeterminism:
    def test_same_seed_bit_identical(self, tiny):
        a = run_scenario(tiny, packets=3000)
        b = run_scenario(tiny, packets=3000)
        assert np.array_equal(a.records, b.records)
        assert np.array_equal(a.histogram, b.histogram)

    def test_different_seed_differs(self, tiny):
        a = run_scenario(tiny, packets=3000)
        b = run_scenario(tiny, seed=tiny.seed + 1, packets=3000)
        assert not np.array_equal(a.records, b.records)

    def test_chunk_boundary_continuity(self, tiny):
        # crossing the chunk boundary must not disturb the record stream
        big = run_scenario(tiny, packets=simcore.CHUNK_PERIODS + 100)
        small = run_scenario(tiny, packets=simcore.CHUNK_PERIODS + 100)
        assert np.array_equal(big.records, small.records)


class TestRecordStructure:
    def test_slots_within_gate(self, tiny):
        rep = run_scenario(tiny, packets=5000)
        assert rep.records["slot"].min() >= 0
        assert rep.records["slot"].max() < tiny.slot_count

    def test_times_within_horizon(self, tiny):
        packets = 5000
        rep = run_scenario(tiny, packets=packets)
        assert rep.records["time_ns"].max() < packets * rep.schedule.period * 1e9

    def test_records_time_ordered(self, tiny):
        rep = run_scenario(tiny, packets=5000)
        assert np.all(np.diff(rep.records["time_ns"]) >= 0)

    def test_histogram_marginal_equals_record_count(self, tiny):
        rep = run_scenario(tiny, packets=5000)
        assert rep.histogram.sum() == rep.records.shape[0]

    def test_empty_run_possible(self):
        sc = tiny_scenario(**{"bobs.0.mu_target": 1e-30})
        rep = run_scenario(sc, packets=200)
        # no signal and darks disabled: nothing clicks
        assert rep.records.shape[0] == 0
        assert rep.histogram.sum() == 0

    def test_dark_only_run(self):
        sc = tiny_scenario(**{"bobs.0.mu_target": 1e-30,
                              "detectors.dark_prob_per_gate": 1e-3})
        rep = run_scenario(sc, packets=20000)
        total_gates = 2 * 20000 * sc.slot_count
        expect = total_gates * 1e-3
        assert rep.records.shape[0] == pytest.approx(expect,
                                                     abs=4 * math.sqrt(expect))
        # dark clicks land on both detectors evenly
        frac_a = np.mean(rep.records["detector"] == 0)
        assert frac_a == pytest.approx(0.5, abs=0.03)


class TestDeadTime:
    def test_min_separation_per_detector(self):
        sc = tiny_scenario(**{"detectors.dead_time_us": 0.5,
                              "bobs.0.mu_target": 5.0})
        rep = run_scenario(sc, packets=20000)
        for det in (0, 1):
            t = rep.records["time_ns"][rep.records["detector"] == det]
            assert t.shape[0] > 100
            assert np.all(np.diff(t) >= 0.5e3 - 1e-6)

    def test_dead_time_spanning_periods(self):
        # dead time longer than the period suppresses consecutive-period
        # clicks entirely
        sc = tiny_scenario(**{"detectors.dead_time_us": 10.0,
                              "bobs.0.mu_target": 5.0})
        rep = run_scenario(sc, packets=5000)
        for det in (0, 1):
            t = rep.records["time_ns"][rep.records["detector"] == det]
            assert np.all(np.diff(t) >= 10e3 - 1e-6)


class TestCoincidences:
    def test_flagged_symmetrically(self):
        sc = tiny_scenario(**{"bobs.0.mu_target": 50.0,
                              "mzi.visibility": 0.5})
        rep = run_scenario(sc, packets=3000)
        recs = rep.records
        coin = recs[recs["coincidence"]]
        assert coin.shape[0] > 0
        keys_a = {(r["packet"], r["slot"]) for r in coin
                  if r["detector"] == 0}
        keys_b = {(r["packet"], r["slot"]) for r in coin
                  if r["detector"] == 1}
        assert keys_a == keys_b
        # a coincidence-flagged slot really has both detector records
        assert coin.shape[0] % 2 == 0


class TestScheduleRefusal:
    def test_refuses_invalid_silence(self):
        sc = tiny_scenario(**{"bobs.0.storage_m": 1.0})
        with pytest.raises(Exception):
            run_scenario(sc, packets=100)

    def test_forced_run_overrides(self):
        # storage long enough for interleave but with stray in the window:
        # shorten the forced period so the echo wraps into the window
        sc = tiny_scenario(**{"schedule.forced_period_ns": None})
        rep = run_scenario(sc, packets=100, force=True)
        assert rep.records is not None


class TestAnalyticRate:
    def test_expected_rate_formula(self):
        sc = tiny_scenario()
        topo = sc.topology()
        sched, _ = build_run_timing(sc, topo)
        n = sc.slot_count
        duty = n * sc.source.slot_period / sched.period
        trans = db_to_fraction(path_loss(topo, 0) + sc.receiver_extra_db)
        by_hand = (1e9 * duty * (0.1 * trans * 0.1) * (n - 1) / n)
        assert expected_raw_rate(sc) == pytest.approx(by_hand, rel=1e-12)

    def test_paper_operating_point(self):
        # mu 0.1, T 0.2, eta 0.1, 128/8192 duty -> about 31,000 counts/s
        from conftest import scenario_with
        sc = scenario_with("paper-rates")
        assert expected_raw_rate(sc) == pytest.approx(31000, rel=0.02)

    def test_signal_term_linear_in_mu(self):
        base = tiny_scenario()
        double = tiny_scenario(**{"bobs.0.mu_target": 0.2})
        assert expected_raw_rate(double) == \
            pytest.approx(2 * expected_raw_rate(base), rel=1e-12)

    def test_sampled_rate_matches_within_4_sigma(self):
        sc = tiny_scenario()
        packets = 40000
        rep = run_scenario(sc, packets=packets)
        lam = expected_raw_rate(sc) * rep.duration
        got = rep.raw_rate * rep.duration
        assert abs(got - lam) < 4 * math.sqrt(lam)


class TestEngineMatchesOptics:
    def test_port_means_match_demodulate(self, tiny):
        """The engine's per-slot click probabilities follow the packet
        demodulation op applied to the attenuated packet."""
        topo = tiny.topology()
        sched, profile = build_run_timing(tiny, topo)
        tables = simcore._user_tables(tiny, topo, sched, profile)
        g_a, g_b = tables[0]["g"]

        bits = np.array([0, 1, 1, 0, 1, 0, 0, 1] * 2, dtype=np.uint8)
        trans = db_to_fraction(path_loss(topo, 0))
        packet = uniform_packet(16, tiny.bobs[0].mu_target * trans,
                                tiny.source.slot_period)
        from dpsqkd.optics import apply_phase_pattern
        packet = apply_phase_pattern(packet, bits)
        demod = demodulate_packet(packet, tiny.mzi)

        eta = tiny.detectors.efficiency
        code = np.empty(16, dtype=np.uint8)
        code[0] = 2
        code[1:] = bits[:-1] ^ bits[1:]
        # engine survival factors vs optics port means (stray is zero in
        # the tiny geometry's window)
        assert np.allclose(tables[0]["f"], 1.0)
        for i in range(16):
            p_engine_a = 1.0 - g_a[code[i]]
            p_optics_a = 1.0 - np.exp(-eta * demod.port_a[i])
            assert p_engine_a == pytest.approx(p_optics_a, rel=1e-9)
            p_engine_b = 1.0 - g_b[code[i]]
            p_optics_b = 1.0 - np.exp(-eta * demod.port_b[i])
            assert p_engine_b == pytest.approx(p_optics_b, rel=1e-9)


class TestHistogramAttribution:
    def test_matches_generation(self, tiny):
        rep = run_scenario(tiny, packets=5000)
        hist, unattributed = histogram(rep.records, rep.schedule,
                                       tiny.slot_count, 1)
        assert unattributed == 0
        assert np.array_equal(hist, rep.histogram)

    def test_empty_records(self, tiny):
        rep = run_scenario(tiny, packets=100)
        empty = rep.records[:0]
        hist, unattributed = histogram(empty, rep.schedule, tiny.slot_count, 1)
        assert hist.sum() == 0 and unattributed == 0


class TestUnitInvariants:
    def test_bob_unit_validation(self):
        src = object()
        with pytest.raises(ValueError):
            BobUnit(leaf=0, storage_time=1e-6, mu_target=0.0, bit_source=src)
        with pytest.raises(ValueError):
            BobUnit(leaf=0, storage_time=1e-6, mu_target=0.1, bit_source=src,
                    clock_tap_fraction=1.0)
        unit = BobUnit(leaf=0, storage_time=1e-6, mu_target=0.1,
                       bit_source=src)
        assert unit.clock_tap_loss_db == pytest.approx(20.0)

    def test_detector_validation(self):
        with pytest.raises(ValueError):
            DetectorModel(efficiency=1.5)
        with pytest.raises(ValueError):
            DetectorModel(dark_prob=-0.1)

    def test_coherence_guard(self):
        sc = tiny_scenario(**{"source.linewidth_mhz": 2000.0})
        with pytest.raises(ConfigurationError):
            run_scenario(sc, packets=10)

    def test_mzi_delay_guard(self):
        sc = tiny_scenario(**{"mzi.delay_ns": 2.0})
        with pytest.raises(ConfigurationError):
            run_scenario(sc, packets=10)
