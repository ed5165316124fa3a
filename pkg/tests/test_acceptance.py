"""Acceptance suite: every release criterion at its stated tolerance.

Each test prints one pass/fail line (visible with ``pytest -s`` or in the
captured output).  The heavier criteria run seeded simulations of a few
hundred thousand packet periods; the whole module stays within a few
minutes on a desktop machine.
"""

import itertools
import math

import numpy as np
import pytest

from conftest import scenario_with
from dpsqkd import postproc, simcore
from dpsqkd.bitsources import FIXED_PATTERNS
from dpsqkd.config import load_scenario
from dpsqkd.errors import ScheduleOverlapError
from dpsqkd.network import SPLITTER_SPLIT_DB
from dpsqkd.optics import mzi_port_probabilities, photons_per_pulse
from dpsqkd.postproc import (LocalParityOracle, SecurityParams,
                             binary_entropy, cascade_params,
                             cascade_reconcile, secure_fraction, secure_rate,
                             sift)
from dpsqkd.schedule import TimingParams, interleave, packet_period
from dpsqkd.simcore import build_run_timing, run_scenario


def report(line: str):
    print(f"\n[PASS] {line}")


def test_criterion_1_secure_fraction_anchors():
    nominal = secure_fraction(SecurityParams(0.1, 0.2, 0.027, 1.05))
    assert 0.33 <= nominal <= 0.345
    deep = secure_fraction(SecurityParams(0.1, 1e-7, 0.027, 1.05))
    assert 0.305 <= deep <= 0.32
    report(f"criterion 1: secure fraction {nominal:.4f} in [0.33, 0.345] "
           f"at T=0.2 and {deep:.4f} in [0.305, 0.32] at T=1e-7")


def test_criterion_2_rate_chain():
    fraction = secure_fraction(SecurityParams(0.1, 0.2, 0.027, 1.05))
    final = secure_rate(10000.0, fraction)
    assert 3300.0 <= final <= 3450.0
    report(f"criterion 2: 10,000 counts/s raw -> {final:.0f} bits/s final "
           f"in [3300, 3450]")


def test_criterion_3_photon_budget():
    photons = photons_per_pulse(0.23e-12, 1550.12e-9)
    assert photons == pytest.approx(1.80e6, rel=0.01)
    report(f"criterion 3: 0.23 pJ at 1550.12 nm -> {photons:.4g} photons "
           f"(1.80e6 +- 1%)")


class TestCriterion4Patterns:
    """Seeded pattern runs with V = 0.946 and dark counts off."""

    PACKETS = 1_000_000

    def run_pattern(self, preset):
        scenario = load_scenario(preset)
        assert scenario.mzi.visibility == 0.946
        assert scenario.detectors.dark_prob == 0.0
        rep = run_scenario(scenario, packets=self.PACKETS)
        sifted = sift(rep.records, scenario.bound_sources(),
                      scenario.slot_count)[0]
        assert sifted.n >= 100_000
        return rep, sifted

    def test_all_zero_concentrates_on_a(self):
        rep, sifted = self.run_pattern("pattern-all-zero")
        frac_a = float(np.mean(rep.records["detector"] == 0))
        assert frac_a >= 0.97
        report(f"criterion 4a: all-zero pattern, {sifted.n} sifted bits, "
               f"{frac_a:.2%} of clicks on detector A (>= 97%)")

    def test_all_one_concentrates_on_b(self):
        rep, sifted = self.run_pattern("pattern-all-one")
        frac_b = float(np.mean(rep.records["detector"] == 1))
        assert frac_b >= 0.97
        report(f"criterion 4b: all-one pattern, {sifted.n} sifted bits, "
               f"{frac_b:.2%} of clicks on detector B (>= 97%)")

    def test_prbs_qber_at_operating_point(self):
        _, sifted = self.run_pattern("pattern-prbs")
        qber = float(np.mean(sifted.alice_bits != sifted.bob_bits))
        assert qber == pytest.approx(0.027, abs=0.005)
        report(f"criterion 4c: PRBS pattern, {sifted.n} sifted bits, "
               f"QBER {qber:.4f} = 2.7% +- 0.5%")


def test_criterion_5_noiseless_oracle():
    scenario = scenario_with("pattern-prbs", **{"mzi.visibility": 1.0})
    rep = run_scenario(scenario, packets=350_000)
    assert rep.silence.passed
    sifted = sift(rep.records, scenario.bound_sources(),
                  scenario.slot_count)[0]
    assert sifted.n >= 100_000
    mismatches = int(np.count_nonzero(sifted.alice_bits != sifted.bob_bits))
    assert mismatches == 0
    report(f"criterion 5: noiseless chain, {sifted.n} sifted bits, "
           f"exactly 0 mismatches")


def test_criterion_6_cascade_leakage_and_residuals():
    n, e, trials = 10_000, 0.027, 100
    shannon = n * binary_entropy(e)
    leaks, residual_failures = [], 0
    for trial in range(trials):
        rng = np.random.default_rng(424200 + trial)
        bob = rng.integers(0, 2, n, dtype=np.uint8)
        alice = bob ^ (rng.random(n) < e)
        result = cascade_reconcile(alice, LocalParityOracle(bob), e,
                                   params=cascade_params("optimized", e, n),
                                   seed=trial)
        leaks.append(result.leaked_bits)
        if not np.array_equal(result.key, bob):
            residual_failures += 1
    mean_leak = float(np.mean(leaks))
    assert residual_failures <= 1
    assert mean_leak <= 1.10 * shannon
    assert mean_leak <= 1.05 * shannon   # the optimized preset's target
    report(f"criterion 6: {trials} trials at n={n}, e={e}: "
           f"{trials - residual_failures} residual-free, mean leakage "
           f"{mean_leak:.0f} bits = {mean_leak / shannon:.4f}x Shannon "
           f"(<= 1.10x required, 1.05x targeted)")


def test_criterion_7_scheduling_properties():
    rng = np.random.default_rng(20260809)
    guard = 2e-9
    schedules = overlaps = 0
    for _ in range(1000):
        n_users = int(rng.integers(1, 7))
        packet_time = float(rng.choice([16e-9, 128e-9]))
        users = [(u, float(rng.uniform(0, 2e-6)), float(rng.uniform(0, 3e-6)))
                 for u in range(n_users)]
        try:
            sched = interleave(users, packet_time, guard, 1e-9)
        except ScheduleOverlapError:
            overlaps += 1
            continue
        schedules += 1
        windows = [w.signal for w in sched.users]
        # brute-force pairwise interval checks, guard-padded
        for (a0, a1), (b0, b1) in itertools.combinations(windows, 2):
            assert min(a1, b1) - max(a0, b0) <= -guard + 1e-12
        stray_end = max(w.stray_windows[-1][1] for w in sched.users)
        for w0, w1 in windows:
            assert w0 >= stray_end + guard - 1e-12
            assert 0.0 <= w0 and w1 <= sched.period + 1e-15

    for _ in range(200):
        t = TimingParams(packet_time=float(rng.uniform(0, 1e-6)),
                         fiber_time=float(rng.uniform(0, 1e-5)),
                         storage_time=float(rng.uniform(0, 1e-5)),
                         guard_time=0.0)
        assert packet_period(t) == \
            2.0 * t.fiber_time + t.storage_time + t.packet_time
    report(f"criterion 7: 1000 random configurations -> {schedules} "
           f"disjoint schedules + {overlaps} named overlap errors; period "
           f"formula exact on 200 samples")


def test_criterion_8_stray_profile_structure():
    scenario = load_scenario("paper-demo")
    topology = scenario.topology()
    sched, profile = build_run_timing(scenario, topology)
    n = scenario.slot_count
    slot = scenario.source.slot_period

    alice = profile.contributions["alice_circulator"]
    ray = profile.contributions["rayleigh"]
    bob = profile.contributions["bob_entrance"]

    alice_support = np.nonzero(alice)[0]
    ray_support = np.nonzero(ray)[0]
    bob_support = np.nonzero(bob)[0]
    assert alice_support[0] == 0 and alice_support[-1] == n - 1
    assert ray_support.size > 0
    assert ray_support[0] <= alice_support[-1] + 1
    assert bob_support[0] > alice_support[-1]      # echo ordering
    assert bob_support[0] >= ray_support[-1] - n   # pedestal reaches the echo

    window_start_bin = int(sched.users[0].signal[0] / slot)
    gap = profile.total[bob_support[-1] + 1:window_start_bin]
    assert gap.size > 100                          # a real silence gap
    assert np.all(gap < 1e-3)
    assert rep_silence_ok(sched, profile, scenario)
    report(f"criterion 8: echo order ok (circulator 0..{alice_support[-1]}, "
           f"pedestal ..{ray_support[-1]}, leaf echo {bob_support[0]}.."
           f"{bob_support[-1]}), {gap.size}-bin silence gap < 1e-3, window "
           f"at bin {window_start_bin}")


def rep_silence_ok(sched, profile, scenario):
    from dpsqkd.schedule import validate_silence
    return validate_silence(sched, profile, scenario.stray_threshold).passed


def test_criterion_9_detection_statistics_and_port_probabilities():
    # empirical per-slot click frequencies against an independently
    # recomputed per-slot model, 2.56e6 slots
    packets = 20_000
    scenario = load_scenario("pattern-alternating")
    rep = run_scenario(scenario, packets=packets)
    n = scenario.slot_count

    # model recomputed from first principles (alternating preset: two
    # ideal splits plus 100 m of fiber, lossless receiver, no darks)
    path_db = 2 * SPLITTER_SPLIT_DB + 0.2 * 100.0 / 1000.0
    mu_at_receiver = 0.1 * 10.0 ** (-path_db / 10.0)
    eta, v = 0.1, 0.946
    bits = FIXED_PATTERNS["alternating"]
    mod = bits[np.arange(n) % bits.shape[0]]
    diff = mod[:-1] ^ mod[1:]
    cos = 1.0 - 2.0 * diff.astype(float)
    p_slots = np.empty((n, 2))
    p_slots[0, :] = 1.0 - math.exp(-eta * mu_at_receiver / 4.0)
    p_slots[1:, 0] = 1.0 - np.exp(-eta * mu_at_receiver * (1 + v * cos) / 2.0)
    p_slots[1:, 1] = 1.0 - np.exp(-eta * mu_at_receiver * (1 - v * cos) / 2.0)

    empirical = rep.histogram[0] / packets
    stderr = np.sqrt(p_slots * (1.0 - p_slots) / packets)
    deviation = np.abs(empirical - p_slots) / stderr
    assert rep.slots_simulated >= 1_000_000
    assert float(deviation.max()) < 4.0

    # interferometer output probabilities against a brute-force two-path
    # amplitude computation on a 10 x 10 grid
    import cmath
    worst = 0.0
    for dphi in np.linspace(0.0, 2.0 * math.pi, 10):
        for vis in np.linspace(0.0, 1.0, 10):
            p_a, p_b = mzi_port_probabilities(dphi, vis)
            amp_a = abs((1.0 + cmath.exp(1j * dphi)) / 2.0) ** 2
            amp_b = abs((1.0 - cmath.exp(1j * dphi)) / 2.0) ** 2
            ref_a = vis * amp_a + (1.0 - vis) * 0.5
            ref_b = vis * amp_b + (1.0 - vis) * 0.5
            worst = max(worst, abs(p_a - ref_a), abs(p_b - ref_b))
    assert worst < 1e-12
    report(f"criterion 9: {rep.slots_simulated} slots, worst per-slot "
           f"deviation {float(deviation.max()):.2f} sigma (< 4); port "
           f"probabilities within {worst:.2e} of the amplitude computation "
           f"on 100 grid points (< 1e-12)")


def test_extra_full_chain_reproduces_secure_fraction():
    """Supplementary end-to-end check at the demonstration operating
    point: mu 0.1, T 0.2, measured QBER -> secure fraction 0.337 +- 0.01
    out of the full simulate-sift-estimate-reconcile-amplify chain."""
    scenario = load_scenario("paper-rates")
    rep = run_scenario(scenario)   # preset default: 2e6 periods
    sifted = sift(rep.records, scenario.bound_sources(),
                  scenario.slot_count)
    key_report = postproc.build_key_report(
        rep, sifted, scenario.security_map(),
        sample_fraction=scenario.sample_fraction,
        cascade_preset=scenario.cascade_preset,
        frame_bits=scenario.frame_bits,
        ec_efficiency=scenario.ec_efficiency,
        seed=scenario.seed)
    (user,) = key_report["users"]
    assert user["reconciliation_verified"]
    assert user["secure_fraction"] == pytest.approx(0.337, abs=0.01)
    mu, transmissivity = scenario.security_map()[0]
    assert transmissivity == pytest.approx(0.200, abs=5e-4)
    report(f"extra: full chain at T={transmissivity:.4f} gives QBER "
           f"{user['qber_corrected']:.4f} and secure fraction "
           f"{user['secure_fraction']:.4f} (0.337 +- 0.01), final rate "
           f"{user['final_rate_bits_per_s']:.0f} bits/s")
