"""Classical key distillation.

Sifting pairs the receiver's time tags with the leaf's stored modulation
sequence; the announced message contains only (packet, slot) positions,
never detector identities (the detector identity IS the secret bit).
Error rates are estimated from a disclosed sample, mismatches removed by
an interactive CASCADE exchange, and the surviving fraction of the raw
rate follows the individual-attack bound for weak-coherent differential
phase coding.
"""

from __future__ import annotations

import heapq
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from numpy.random import PCG64, Generator, SeedSequence
from scipy.signal import fftconvolve
from scipy.stats import beta

from .errors import EstimationError, ProtocolDesyncError, SaturationWarning

_SIFT_CHUNK_PACKETS = 8192


# ---------------------------------------------------------------------------
# sifting

@dataclass(frozen=True)
class SiftedKey:
    """Per-user key positions with both parties' bits.

    ``alice_bits`` derive solely from the detector identity (A -> 0,
    B -> 1); ``bob_bits`` are the stored differential modulation bits.
    Holding both sides in one object is an in-process convenience; the
    protocol only ever announces :meth:`announcement`.
    """

    user_id: int
    packet: np.ndarray      # int64, strictly increasing (packet, slot)
    slot: np.ndarray        # int32
    alice_bits: np.ndarray  # uint8
    bob_bits: np.ndarray    # uint8

    @property
    def n(self) -> int:
        return self.packet.shape[0]

    def announcement(self) -> np.ndarray:
        """The classical message: (packet, slot) pairs and nothing else."""
        return np.column_stack([self.packet, self.slot.astype(np.int64)])

    def take(self, mask_or_idx) -> "SiftedKey":
        return SiftedKey(self.user_id, self.packet[mask_or_idx],
                         self.slot[mask_or_idx],
                         self.alice_bits[mask_or_idx],
                         self.bob_bits[mask_or_idx])


def sift(records: np.ndarray, sources: dict, slot_count: int) -> dict:
    """Sifted keys per user from detection records.

    ``sources`` maps user id to that user's bound bit source, which is
    replayed to regenerate the modulation bits of the recorded packets.
    Slot 0 of each packet has no differential partner and coincidence
    records are discarded; detector A maps to bit 0 and B to bit 1, and
    Bob's bit for slot s is ``bits[s-1] XOR bits[s]``.
    """
    if np.any(records["slot"] >= slot_count) or np.any(records["slot"] < 0):
        bad = records[(records["slot"] >= slot_count) | (records["slot"] < 0)]
        raise ProtocolDesyncError(
            f"record refers to slot {bad['slot'][0]} outside the modulated "
            f"range [0, {slot_count})")
    usable = records[(records["slot"] >= 1) & ~records["coincidence"]]
    out = {}
    for user_id, source in sources.items():
        recs = usable[usable["user"] == user_id]
        packets = recs["packet"].astype(np.int64)
        slots = recs["slot"].astype(np.int32)
        bob = np.empty(recs.shape[0], dtype=np.uint8)
        pos = 0
        while pos < recs.shape[0]:
            first = int(packets[pos])
            stop_packet = first + _SIFT_CHUNK_PACKETS
            hi = int(np.searchsorted(packets, stop_packet, side="left"))
            bits = source.modulation_bits(first, stop_packet - first,
                                          slot_count)
            rel = packets[pos:hi] - first
            bob[pos:hi] = bits[rel, slots[pos:hi] - 1] ^ bits[rel, slots[pos:hi]]
            pos = hi
        out[user_id] = SiftedKey(
            user_id=user_id, packet=packets, slot=slots,
            alice_bits=recs["detector"].astype(np.uint8), bob_bits=bob)
    return out


# ---------------------------------------------------------------------------
# error-rate estimation

@dataclass(frozen=True)
class QberEstimate:
    point: float
    lower95: float
    upper95: float
    disclosed: int
    mismatches: int


def estimate_qber(key: SiftedKey, sample_fraction: float = 0.1,
                  seed: int = 0):
    """Disclose a uniform sample of the key and compare.

    Returns the point estimate with a Clopper-Pearson 95% interval plus
    the key with the disclosed positions removed.
    """
    if not 0.0 < sample_fraction <= 1.0:
        raise ValueError("sample_fraction must be in (0, 1]")
    n = key.n
    k = int(round(sample_fraction * n))
    if n == 0 or k == 0:
        raise EstimationError("no positions available for estimation")
    rng = Generator(PCG64(SeedSequence(entropy=seed)))
    idx = rng.choice(n, size=k, replace=False)
    mismatches = int(np.count_nonzero(
        key.alice_bits[idx] != key.bob_bits[idx]))
    lower = 0.0 if mismatches == 0 else float(
        beta.ppf(0.025, mismatches, k - mismatches + 1))
    upper = 1.0 if mismatches == k else float(
        beta.ppf(0.975, mismatches + 1, k - mismatches))
    keep = np.ones(n, dtype=bool)
    keep[idx] = False
    estimate = QberEstimate(point=mismatches / k, lower95=lower,
                            upper95=upper, disclosed=k,
                            mismatches=mismatches)
    return estimate, key.take(keep)


# ---------------------------------------------------------------------------
# rate formulas

def binary_entropy(e):
    """Shannon entropy of a binary variable, in bits; h(0) = h(1) = 0."""
    arr = np.asarray(e, dtype=float)
    if np.any(arr < 0) or np.any(arr > 1):
        raise ValueError("binary_entropy is defined on [0, 1]")
    inner = (arr > 0) & (arr < 1)
    out = np.zeros_like(arr)
    a = arr[inner]
    out[inner] = -a * np.log2(a) - (1 - a) * np.log2(1 - a)
    return float(out) if out.ndim == 0 else out


def collision_probability(e: float) -> float:
    """Eavesdropper collision probability per bit for the individual-attack
    analysis of differential phase coding: 1 - e^2 - (1 - 6e)^2 / 2.

    Valid for e <= 1/6; larger error rates return the saturation value at
    e = 1/6 and raise a :class:`SaturationWarning`.
    """
    if e < 0:
        raise ValueError("error rate must be nonnegative")
    if e > 1.0 / 6.0:
        warnings.warn(
            f"collision probability evaluated at e={e:.4f} beyond its "
            f"validity region e <= 1/6; returning the saturation value",
            SaturationWarning, stacklevel=2)
        e = 1.0 / 6.0
    return 1.0 - e * e - (1.0 - 6.0 * e) ** 2 / 2.0


@dataclass(frozen=True)
class SecurityParams:
    """Operating point of the rate estimate."""

    mu: float           # mean photons per slot at the leaf output
    transmissivity: float
    qber: float
    ec_efficiency: float = 1.05

    def __post_init__(self):
        if self.mu <= 0:
            raise ValueError("mu must be positive")
        if not 0.0 < self.transmissivity <= 1.0:
            raise ValueError("transmissivity must be in (0, 1]")
        if not 0.0 <= self.qber <= 0.5:
            raise ValueError("qber must be in [0, 0.5]")
        if self.ec_efficiency < 1.0:
            raise ValueError("error-correction efficiency is >= 1")


def secure_fraction(params: SecurityParams) -> float:
    """Fraction of the raw key surviving post-processing under individual
    attacks, clamped to [0, 1].

    r = (1 - 2 mu (1 - T)) * (-log2 p_c(e)) - f h(e): the first factor
    removes photon-number-splitting opportunities, the middle term is the
    privacy-amplification compression from the collision probability, and
    the last term pays for error-correction disclosure.
    """
    e = params.qber
    if e > 1.0 / 6.0:
        return 0.0
    p_c = collision_probability(e)
    r = ((1.0 - 2.0 * params.mu * (1.0 - params.transmissivity))
         * (-math.log2(p_c))
         - params.ec_efficiency * binary_entropy(e))
    return min(1.0, max(0.0, r))


def secure_rate(raw_rate: float, fraction: float) -> float:
    """Final key rate in bits/s."""
    if raw_rate < 0:
        raise ValueError("raw rate must be nonnegative")
    if not 0.0 <= fraction <= 1.0:
        raise ValueError("fraction must be in [0, 1]")
    return raw_rate * fraction


# ---------------------------------------------------------------------------
# CASCADE reconciliation

class LocalParityOracle:
    """In-process stand-in for the leaf's side of the parity exchange.

    Every call discloses one parity bit; the query counter is the
    protocol-level leakage.
    """

    def __init__(self, key):
        self._key = np.asarray(key, dtype=np.uint8)
        self.queries = 0

    def __len__(self):
        return self._key.shape[0]

    def parity(self, idx) -> int:
        self.queries += 1
        return int(self._key[idx].sum() & 1)


@dataclass(frozen=True)
class CascadeParams:
    """Pass structure: block size per pass.

    ``classic`` is the original parameterization (first block size
    0.73 / e, doubling, four passes).  ``optimized`` trades more passes
    for fewer disclosed parities per error and targets a leakage within a
    few percent of the Shannon limit at moderate error rates.
    """

    block_sizes: tuple
    label: str = "classic"

    @classmethod
    def classic(cls, e_est: float, n: int) -> "CascadeParams":
        k1 = max(2, math.ceil(0.73 / e_est))
        sizes = []
        for p in range(4):
            sizes.append(int(min(max(2, n // 2), k1 * 2 ** p)))
        return cls(block_sizes=tuple(sizes), label="classic")

    @classmethod
    def optimized(cls, e_est: float, n: int) -> "CascadeParams":
        k1 = 2 ** math.floor(math.log2(1.0 / e_est))
        k1 = int(min(max(2, n // 2), k1))
        k2 = int(min(max(2, n // 2), 4 * k1))
        sizes = [k1, k2] + [max(2, n // 2)] * 12
        return cls(block_sizes=tuple(sizes), label="optimized")


def cascade_params(label: str, e_est: float, n: int) -> CascadeParams:
    if label == "classic":
        return CascadeParams.classic(e_est, n)
    if label == "optimized":
        return CascadeParams.optimized(e_est, n)
    raise ValueError(f"unknown cascade parameterization {label!r}")


@dataclass(frozen=True)
class CascadeResult:
    key: np.ndarray
    leaked_bits: int
    corrections: int
    params: CascadeParams
    transcript: tuple


def cascade_reconcile(alice_key, oracle, e_est: float,
                      params: CascadeParams | None = None,
                      seed: int = 0) -> CascadeResult:
    """Interactive parity-exchange correction of ``alice_key`` towards the
    key behind ``oracle``.

    Multi-pass: each pass partitions a fresh seeded shuffle of the key
    into blocks and compares block parities; an odd block is binary
    searched for one error, and every flip re-awakens, in every pass, the
    disclosed ranges that contain the flipped position (their mismatch
    state follows without further disclosure).  Smallest odd ranges are
    searched first.

    ``leaked_bits`` counts every parity the other side actually
    disclosed.  Three standard reuse rules keep it down: the last block
    of every pass after the first is derived from the whole-key parity;
    a binary-search step derives its sibling half from the parent; and
    every parity ever learned is cached, so cascading back into an
    already-searched block only pays for ranges never seen before.
    """
    key = np.ascontiguousarray(alice_key, dtype=np.uint8).copy()
    n = key.shape[0]
    if len(oracle) != n:
        raise ValueError(f"key length {n} does not match oracle length "
                         f"{len(oracle)}")
    if n < 64:
        raise ValueError("reconciliation needs at least 64 bits")
    if e_est == 0.0:
        return CascadeResult(key=key, leaked_bits=0, corrections=0,
                             params=params or CascadeParams((), "skip"),
                             transcript=())
    if not 0.0 < e_est <= 0.25:
        raise ValueError("e_est must be in (0, 0.25]")
    if params is None:
        params = CascadeParams.classic(e_est, n)

    rng = Generator(PCG64(SeedSequence(entropy=seed)))
    leak = 0
    corrections = 0
    transcript = []

    perms, positions, sizes = [], [], []
    known = []        # per pass: dict (lo, hi) -> disclosed/derived parity
    total_bob = None
    heap = []         # (size, pass, lo, hi), lazily revalidated at pop

    def alice_parity(p: int, lo: int, hi: int) -> int:
        return int(key[perms[p][lo:hi]].sum() & 1)

    def ask(p: int, lo: int, hi: int) -> int:
        nonlocal leak
        value = oracle.parity(perms[p][lo:hi])
        leak += 1
        transcript.append(("leaf->hub", p, lo, hi, value))
        known[p][(lo, hi)] = value
        return value

    def flip(x: int):
        nonlocal corrections
        key[x] ^= 1
        corrections += 1
        for q in range(len(perms)):
            pos = int(positions[q][x])
            k = sizes[q]
            lo, hi = pos - pos % k, min(n, pos - pos % k + k)
            while True:
                heapq.heappush(heap, (hi - lo, q, lo, hi))
                if hi - lo <= 1:
                    break
                mid = lo + (hi - lo + 1) // 2
                child = (lo, mid) if pos < mid else (mid, hi)
                if child not in known[q]:
                    break
                lo, hi = child

    def binary_search(p: int, lo: int, hi: int):
        while hi - lo > 1:
            mid = lo + (hi - lo + 1) // 2
            parent = known[p][(lo, hi)]
            left = known[p].get((lo, mid))
            if left is None:
                left = ask(p, lo, mid)
            known[p].setdefault((mid, hi), parent ^ left)
            if alice_parity(p, lo, mid) != left:
                hi = mid
            else:
                lo = mid
        flip(int(perms[p][lo]))

    def drain():
        while heap:
            _, p, lo, hi = heapq.heappop(heap)
            if alice_parity(p, lo, hi) != known[p][(lo, hi)]:
                binary_search(p, lo, hi)

    for p, k in enumerate(params.block_sizes):
        k = int(min(k, n))
        perm = np.arange(n, dtype=np.int64) if p == 0 else \
            rng.permutation(n).astype(np.int64)
        pos = np.empty(n, dtype=np.int64)
        pos[perm] = np.arange(n, dtype=np.int64)
        perms.append(perm)
        positions.append(pos)
        sizes.append(k)
        known.append({})

        nb = -(-n // k)
        parities_seen = 0
        for b in range(nb):
            lo, hi = b * k, min(n, b * k + k)
            if p > 0 and b == nb - 1:
                known[p][(lo, hi)] = total_bob ^ (parities_seen & 1)
            else:
                parities_seen ^= ask(p, lo, hi)
            if alice_parity(p, lo, hi) != known[p][(lo, hi)]:
                heapq.heappush(heap, (hi - lo, p, lo, hi))
        if p == 0:
            total_bob = parities_seen & 1
        drain()

    return CascadeResult(key=key, leaked_bits=leak, corrections=corrections,
                         params=params, transcript=tuple(transcript))


def write_transcript(path, result: CascadeResult):
    """Line-delimited protocol audit: direction, pass, permuted block
    range, disclosed parity."""
    with open(path, "w") as fh:
        for direction, p, lo, hi, parity in result.transcript:
            fh.write(f"{direction} pass={p} range=[{lo},{hi}) "
                     f"parity={parity}\n")


def reconcile_frames(alice_bits, bob_bits, e_est: float,
                     preset: str = "classic", frame_bits: int = 16384,
                     seed: int = 0):
    """Frame-wise reconciliation of a long key (in-process convenience).

    Splits the key into frames of about ``frame_bits`` (the tail is merged
    into the previous frame so no frame drops below the minimum length)
    and runs :func:`cascade_reconcile` per frame with a frame-specific
    shuffle seed.  Returns (corrected key, total leaked bits, total
    corrections).
    """
    alice_bits = np.asarray(alice_bits, dtype=np.uint8)
    bob_bits = np.asarray(bob_bits, dtype=np.uint8)
    n = alice_bits.shape[0]
    if bob_bits.shape[0] != n:
        raise ValueError("key length mismatch")
    if n == 0:
        return alice_bits.copy(), 0, 0
    if e_est == 0.0:
        return alice_bits.copy(), 0, 0
    edges = list(range(0, n, frame_bits))
    if len(edges) > 1 and n - edges[-1] < 64:
        edges.pop()
    corrected = np.empty(n, dtype=np.uint8)
    leaked = 0
    corrections = 0
    for i, lo in enumerate(edges):
        hi = edges[i + 1] if i + 1 < len(edges) else n
        frame = alice_bits[lo:hi]
        if hi - lo < 64:
            # degenerate short key: disclose it outright
            corrected[lo:hi] = bob_bits[lo:hi]
            leaked += hi - lo
            corrections += int(np.count_nonzero(frame != bob_bits[lo:hi]))
            continue
        params = cascade_params(preset, e_est, hi - lo)
        oracle = LocalParityOracle(bob_bits[lo:hi])
        result = cascade_reconcile(frame, oracle, e_est, params=params,
                                   seed=seed + i)
        corrected[lo:hi] = result.key
        leaked += result.leaked_bits
        corrections += result.corrections
    return corrected, leaked, corrections


# ---------------------------------------------------------------------------
# privacy amplification

@dataclass(frozen=True)
class AmplifiedKey:
    bits: np.ndarray
    input_length: int
    output_length: int


def privacy_amplification(key, fraction: float, seed: int = 0) -> AmplifiedKey:
    """Compress an error-free key by a seeded Toeplitz-structured binary
    matrix to ``floor(n * fraction)`` bits.

    The hash family is 2-universal; the matrix is never materialized, the
    product is evaluated as a sliding correlation.  Deterministic per seed.
    """
    key = np.asarray(key, dtype=np.uint8)
    n = key.shape[0]
    if not 0.0 <= fraction <= 1.0:
        raise ValueError("fraction must be in [0, 1]")
    m = int(math.floor(n * fraction))
    if m == 0:
        return AmplifiedKey(bits=np.zeros(0, dtype=np.uint8),
                            input_length=n, output_length=0)
    rng = Generator(PCG64(SeedSequence(entropy=seed)))
    diag = rng.integers(0, 2, size=m + n - 1, dtype=np.uint8)
    conv = fftconvolve(diag.astype(float), key[::-1].astype(float))
    window = conv[n - 1:n - 1 + m]
    counts = np.rint(window)
    if np.max(np.abs(window - counts)) > 0.25:
        raise ArithmeticError("hash evaluation lost integer precision")
    return AmplifiedKey(bits=(counts.astype(np.int64) & 1).astype(np.uint8),
                        input_length=n, output_length=m)


# ---------------------------------------------------------------------------
# end-to-end key accounting

@dataclass(frozen=True)
class UserKeyReport:
    user_id: int
    raw_rate: float
    sifted_length: int
    qber_estimate: QberEstimate
    qber_corrected: float
    leaked_bits: int
    corrections: int
    reconciliation_verified: bool
    secure_frac: float
    final_length: int
    final_rate: float
    timeline: tuple              # (window, raw counts/s, qber) rows

    def to_dict(self) -> dict:
        est = self.qber_estimate
        return {
            "user": self.user_id,
            "raw_rate_counts_per_s": self.raw_rate,
            "sifted_length": self.sifted_length,
            "qber_estimate": {
                "point": est.point, "lower95": est.lower95,
                "upper95": est.upper95, "disclosed_bits": est.disclosed,
                "mismatches": est.mismatches,
            },
            "qber_corrected": self.qber_corrected,
            "ec_leaked_bits": self.leaked_bits,
            "ec_corrections": self.corrections,
            "reconciliation_verified": self.reconciliation_verified,
            "secure_fraction": self.secure_frac,
            "final_key_length": self.final_length,
            "final_rate_bits_per_s": self.final_rate,
            "timeline": [
                {"window": w, "raw_rate_counts_per_s": r, "qber": q}
                for (w, r, q) in self.timeline
            ],
        }


def build_key_report(sim_report, sifted: dict, security: dict,
                     sample_fraction: float = 0.1,
                     cascade_preset: str = "classic",
                     frame_bits: int = 16384, ec_efficiency: float = 1.05,
                     seed: int = 0, timeline_windows: int = 20) -> dict:
    """Full distillation chain for every user of a simulation report.

    ``security`` maps user id to (mu, transmissivity) for the rate
    formula.  The secure fraction is evaluated at the exact error rate
    revealed by reconciliation (the sampled estimate, disclosed before
    reconciliation, is itemized separately and its bits are discarded
    from the key).
    """
    duration = sim_report.duration
    packets = sim_report.meta.get("packets", 0)
    users = []
    for user_id, key in sorted(sifted.items()):
        keyable = ((sim_report.records["user"] == user_id)
                   & (sim_report.records["slot"] >= 1)
                   & ~sim_report.records["coincidence"])
        raw_rate = float(np.count_nonzero(keyable)) / duration

        estimate, remaining = estimate_qber(key, sample_fraction,
                                            seed=seed + 17 * user_id)
        e_for_blocks = max(estimate.point, 1e-3)
        corrected, leaked, corrections = reconcile_frames(
            remaining.alice_bits, remaining.bob_bits, e_for_blocks,
            preset=cascade_preset, frame_bits=frame_bits,
            seed=seed + 31 * user_id)
        verified = bool(np.array_equal(corrected, remaining.bob_bits))
        e_corrected = corrections / remaining.n if remaining.n else 0.0

        mu, transmissivity = security[user_id]
        frac = secure_fraction(SecurityParams(
            mu=mu, transmissivity=transmissivity, qber=e_corrected,
            ec_efficiency=ec_efficiency))
        amplified = privacy_amplification(corrected, frac,
                                          seed=seed + 53 * user_id)

        window = max(1, -(-packets // timeline_windows))
        rows = []
        for w0 in range(0, packets, window):
            w1 = min(packets, w0 + window)
            span = (sim_report.records["packet"] >= w0) \
                & (sim_report.records["packet"] < w1)
            clicks = int(np.count_nonzero(keyable & span))
            kmask = (key.packet >= w0) & (key.packet < w1)
            kn = int(np.count_nonzero(kmask))
            errs = int(np.count_nonzero(
                key.alice_bits[kmask] != key.bob_bits[kmask]))
            rows.append((w0, clicks / ((w1 - w0) * sim_report.schedule.period),
                         errs / kn if kn else math.nan))

        users.append(UserKeyReport(
            user_id=user_id, raw_rate=raw_rate, sifted_length=key.n,
            qber_estimate=estimate, qber_corrected=e_corrected,
            leaked_bits=leaked, corrections=corrections,
            reconciliation_verified=verified, secure_frac=frac,
            final_length=amplified.output_length,
            final_rate=secure_rate(raw_rate, frac),
            timeline=tuple(rows)))

    return {
        "duration_s": duration,
        "users": [u.to_dict() for u in users],
        "total_final_rate_bits_per_s": sum(u.final_rate for u in users),
    }
