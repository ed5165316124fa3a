"""Weak-coherent pulse packets, phase coding and delay-line demodulation.

Pulses are modeled by a mean photon number and a phase per slot, which is
sufficient for Poissonian weak-coherent statistics interfering at a fixed
one-slot delay.  Coherence across the delay is enforced as a precondition
on the source, not simulated.  All functions here are pure and operate on
immutable values.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError
from .units import PLANCK_TIMES_C


@dataclass(frozen=True)
class SourceParams:
    """Pulsed laser source at the central station.

    ``lineshape_factor`` converts the linewidth to a coherence time via
    ``coherence_time = lineshape_factor / (2 pi linewidth)``.  The default
    of 2*pi reproduces the common rule of thumb tau_c = 1/linewidth
    (a 2 MHz line gives 500 ns); a Lorentzian line would use 2 instead.
    """

    wavelength: float            # m
    pulse_rate: float            # Hz
    pulse_width: float           # s
    pulse_energy: float          # J
    linewidth: float             # Hz
    lineshape_factor: float = 2.0 * math.pi
    extinction_static_db: float = 30.0
    gate_suppression_db: float = 30.0

    def __post_init__(self):
        if self.wavelength <= 0:
            raise ValueError("wavelength must be positive")
        if self.pulse_rate <= 0:
            raise ValueError("pulse rate must be positive")
        if self.pulse_width >= 1.0 / self.pulse_rate:
            raise ValueError("pulse width must fit inside one slot")
        if self.pulse_energy < 0:
            raise ValueError("pulse energy must be nonnegative")
        if self.linewidth <= 0:
            raise ValueError("linewidth must be positive")
        if self.extinction_static_db < 0 or self.gate_suppression_db < 0:
            raise ValueError("extinction ratios are nonnegative dB")

    @property
    def slot_period(self) -> float:
        return 1.0 / self.pulse_rate

    @property
    def coherence_time(self) -> float:
        return self.lineshape_factor / (2.0 * math.pi * self.linewidth)

    @property
    def photons_per_pulse(self) -> float:
        return photons_per_pulse(self.pulse_energy, self.wavelength)


@dataclass(frozen=True)
class OpticalPulsePacket:
    """Ordered pulse slots carrying a mean photon number and a phase each."""

    mean_photons: np.ndarray     # (n,), photons per slot
    phase: np.ndarray            # (n,), radians
    slot_period: float           # s
    origin_time: float = 0.0     # s

    def __post_init__(self):
        mu = np.asarray(self.mean_photons, dtype=float)
        ph = np.asarray(self.phase, dtype=float)
        if mu.ndim != 1 or ph.shape != mu.shape:
            raise ValueError("mean_photons and phase must be equal-length 1-d arrays")
        if mu.size == 0:
            raise ValueError("a packet needs at least one slot")
        if np.any(mu < 0):
            raise ValueError("mean photon numbers must be nonnegative")
        if not np.all(np.isfinite(ph)):
            raise ValueError("phases must be finite")
        if self.slot_period <= 0:
            raise ValueError("slot period must be positive")
        mu = mu.copy()
        ph = ph.copy()
        mu.setflags(write=False)
        ph.setflags(write=False)
        object.__setattr__(self, "mean_photons", mu)
        object.__setattr__(self, "phase", ph)

    @property
    def slot_count(self) -> int:
        return self.mean_photons.shape[0]

    @property
    def total_photons(self) -> float:
        return float(self.mean_photons.sum())


def uniform_packet(slot_count: int, mean_photons: float, slot_period: float,
                   origin_time: float = 0.0) -> OpticalPulsePacket:
    """Packet with identical unmodulated slots."""
    return OpticalPulsePacket(
        mean_photons=np.full(slot_count, mean_photons, dtype=float),
        phase=np.zeros(slot_count, dtype=float),
        slot_period=slot_period,
        origin_time=origin_time,
    )


@dataclass(frozen=True)
class MziParams:
    """Unbalanced Mach-Zehnder demodulator.

    ``visibility`` is a single scalar absorbing every interference
    imperfection (polarization drift, thermal detuning, modulator voltage
    error); the wrong-port probability at a 0/pi phase difference is
    exactly (1 - visibility) / 2.
    """

    delay: float                 # s, must equal the packet slot period
    visibility: float = 1.0
    insertion_loss_db: float = 2.0

    def __post_init__(self):
        if not 0.0 <= self.visibility <= 1.0:
            raise ValueError("visibility must be in [0, 1]")
        if self.delay <= 0:
            raise ValueError("delay must be positive")
        if self.insertion_loss_db < 0:
            raise ValueError("insertion loss must be nonnegative dB")


@dataclass(frozen=True)
class DemodulatedPacket:
    """Per-slot mean photon numbers at the two interferometer outputs.

    A packet of n slots produces n+1 output bins: bin i superposes the
    delayed half of pulse i-1 with the direct half of pulse i.  Bin 0 and
    bin n carry an un-partnered half pulse each and are flagged non-key.
    """

    port_a: np.ndarray           # (n+1,)
    port_b: np.ndarray           # (n+1,)
    key_capable: np.ndarray      # (n+1,) bool
    slot_period: float


def photons_per_pulse(energy: float, wavelength: float) -> float:
    """Mean photon number of a pulse of the given energy and wavelength."""
    if wavelength <= 0:
        raise ValueError("wavelength must be positive")
    if energy < 0:
        raise ValueError("energy must be nonnegative")
    return energy * wavelength / PLANCK_TIMES_C


def apply_phase_pattern(packet: OpticalPulsePacket, bits) -> OpticalPulsePacket:
    """Add pi * bits[i] to slot i's phase; photon numbers are untouched.

    The modulator is additive, so applying the same pattern twice restores
    the original phases modulo 2 pi.  On a fresh (zero-phase) packet the
    result is simply phase[i] = pi * bits[i].
    """
    bits = np.asarray(bits)
    if bits.shape != (packet.slot_count,):
        raise ValueError(
            f"bit pattern length {bits.shape} does not match "
            f"slot count {packet.slot_count}")
    return OpticalPulsePacket(
        mean_photons=packet.mean_photons,
        phase=packet.phase + math.pi * bits.astype(float),
        slot_period=packet.slot_period,
        origin_time=packet.origin_time,
    )


def attenuate(packet: OpticalPulsePacket, loss_db: float) -> OpticalPulsePacket:
    """Scale every slot's mean photon number down by ``loss_db``."""
    if loss_db < 0:
        raise ValueError("no gain elements in this model: loss must be >= 0 dB")
    factor = 10.0 ** (-loss_db / 10.0)
    return OpticalPulsePacket(
        mean_photons=packet.mean_photons * factor,
        phase=packet.phase,
        slot_period=packet.slot_period,
        origin_time=packet.origin_time,
    )


def voa_setting(mu_in: float, mu_target: float) -> float:
    """Attenuator setting in dB that brings ``mu_in`` down to ``mu_target``."""
    if mu_target <= 0:
        raise ValueError("target mean photon number must be positive")
    if mu_target > mu_in:
        raise ValueError(
            f"infeasible attenuation: target {mu_target} exceeds input {mu_in}")
    return 10.0 * math.log10(mu_in / mu_target)


def mzi_port_probabilities(delta_phi, visibility):
    """Fraction of light exiting ports A and B for a given phase difference.

    Returns ``(p_a, p_b)`` with p_a = (1 + V cos dphi) / 2 and
    p_a + p_b = 1 exactly.  Accepts scalars or arrays.
    """
    v = np.asarray(visibility, dtype=float)
    if np.any(v < 0) or np.any(v > 1):
        raise ValueError("visibility must be in [0, 1]")
    c = v * np.cos(delta_phi)
    p_a = (1.0 + c) / 2.0
    p_b = (1.0 - c) / 2.0
    if p_a.ndim == 0:
        return float(p_a), float(p_b)
    return p_a, p_b


def demodulate_packet(packet: OpticalPulsePacket, mzi: MziParams) -> DemodulatedPacket:
    """Superpose adjacent slots in a one-slot-delay interferometer.

    Each pulse is split in two; one half is delayed by exactly one slot,
    so the output bin i mixes halves of pulses i-1 and i, carrying
    (mu[i-1] + mu[i]) / 2 photons in total, distributed over the ports by
    the interference probabilities for dphi = phase[i] - phase[i-1].
    The first and last bins hold a lone half pulse split 50:50.
    """
    if not math.isclose(mzi.delay, packet.slot_period, rel_tol=1e-12):
        raise ConfigurationError(
            f"interferometer delay {mzi.delay} s does not match "
            f"packet slot period {packet.slot_period} s")
    mu = packet.mean_photons
    n = packet.slot_count
    factor = 10.0 ** (-mzi.insertion_loss_db / 10.0)
    port_a = np.empty(n + 1)
    port_b = np.empty(n + 1)
    if n > 1:
        dphi = packet.phase[1:] - packet.phase[:-1]
        p_a, p_b = mzi_port_probabilities(dphi, mzi.visibility)
        pair = (mu[:-1] + mu[1:]) / 2.0
        port_a[1:n] = factor * pair * p_a
        port_b[1:n] = factor * pair * p_b
    port_a[0] = port_b[0] = factor * mu[0] / 4.0
    port_a[n] = port_b[n] = factor * mu[n - 1] / 4.0
    key = np.zeros(n + 1, dtype=bool)
    key[1:n] = True
    return DemodulatedPacket(port_a=port_a, port_b=port_b,
                             key_capable=key, slot_period=packet.slot_period)
