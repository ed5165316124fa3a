"""Passive optical tree network: topology, loss and delay budgets, and the
time-resolved stray-photon profile seen at the central receiver.

The network is a balanced binary splitter tree fed by a single span from
the central station.  Every query is pure; topologies are immutable after
construction.  The stray profile is computed analytically as a mean photon
flux per slot bin; stochastic sampling happens once, at the detectors.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .units import SPEED_OF_LIGHT, db_to_fraction

SPLITTER_SPLIT_DB = 10.0 * math.log10(2.0)   # ideal 50:50 split, 3.0103 dB
MAX_TREE_LEVELS = 20


@dataclass(frozen=True)
class FiberSpan:
    """One fiber segment with its connectors.

    ``rayleigh_return_per_m`` is the captured round-trip backscatter
    fraction per meter of fiber.  ``connector_return_loss_db`` applies to
    the connector at each end of the span; use ``math.inf`` for a span
    with no discrete reflections.
    """

    length: float                          # m
    attenuation_db_per_km: float = 0.2
    group_index: float = 1.468
    rayleigh_return_per_m: float = 1e-7
    connector_return_loss_db: float = 55.0

    def __post_init__(self):
        if self.length < 0:
            raise ValueError("span length must be nonnegative")
        if self.attenuation_db_per_km < 0:
            raise ValueError("attenuation must be nonnegative")
        if self.group_index < 1.0:
            raise ValueError("group index must be >= 1")
        if not 0.0 <= self.rayleigh_return_per_m <= 1e-4:
            raise ValueError("rayleigh return must be in [0, 1e-4] per meter")

    @property
    def loss_db(self) -> float:
        return self.attenuation_db_per_km * self.length / 1000.0

    @property
    def delay(self) -> float:
        return self.length * self.group_index / SPEED_OF_LIGHT


@dataclass(frozen=True)
class CirculatorModel:
    """Three-port circulator: per-hop insertion loss and the suppression of
    light leaking straight from the input port to the receive port."""

    insertion_loss_db: float = 0.6
    directivity_db: float = 70.0

    def __post_init__(self):
        if self.insertion_loss_db < 0 or self.directivity_db < 0:
            raise ValueError("circulator losses must be nonnegative dB")


@dataclass(frozen=True)
class TreeTopology:
    """Balanced binary tree with ``levels`` splitting stages.

    ``levels`` stages give ``2**levels`` leaves and ``2**levels - 1``
    splitters.  Leaf ``L``'s path consists of the feeder span plus, at each
    stage ``k`` (1-based), the branch span indexed by the top ``k`` bits of
    ``L``.  ``branch_overrides`` replaces individual branch spans, keyed by
    ``(level, index)``; every other branch uses ``default_branch``.
    """

    levels: int
    feeder: FiberSpan
    default_branch: FiberSpan
    splitter_excess_db: float = 0.3
    circulator: CirculatorModel | None = None
    branch_overrides: dict = field(default_factory=dict)

    @property
    def leaf_count(self) -> int:
        return 2 ** self.levels

    @property
    def splitter_count(self) -> int:
        return 2 ** self.levels - 1

    def branch_span(self, level: int, index: int) -> FiberSpan:
        return self.branch_overrides.get((level, index), self.default_branch)

    def check_leaf(self, leaf: int) -> None:
        if not 0 <= leaf < self.leaf_count:
            raise LookupError(f"leaf {leaf} not in tree with "
                              f"{self.leaf_count} leaves")

    def path_spans(self, leaf: int) -> list[FiberSpan]:
        """Feeder plus one branch span per splitting stage, root to leaf."""
        self.check_leaf(leaf)
        spans = [self.feeder]
        for level in range(1, self.levels + 1):
            index = leaf >> (self.levels - level)
            spans.append(self.branch_span(level, index))
        return spans

    def edges(self) -> list[tuple[int, int, FiberSpan]]:
        """Every distinct edge of the tree as (level, index, span); the
        feeder is level 0, index 0."""
        out = [(0, 0, self.feeder)]
        for level in range(1, self.levels + 1):
            for index in range(2 ** level):
                out.append((level, index, self.branch_span(level, index)))
        return out


@dataclass(frozen=True)
class StrayProfile:
    """Mean stray photons per slot bin at the central receiver input,
    broken down by physical origin.  ``total`` always equals the sum of
    the labeled contributions."""

    slot_period: float
    total: np.ndarray
    contributions: dict   # label -> ndarray, same length as total

    LABELS = ("alice_circulator", "connector_reflections", "rayleigh",
              "bob_entrance")

    @property
    def duration(self) -> float:
        return self.total.shape[0] * self.slot_period

    def bin_of(self, t: float) -> int:
        return int(math.floor(t / self.slot_period + 1e-9))

    def flux_at(self, t: float) -> float:
        b = self.bin_of(t)
        if 0 <= b < self.total.shape[0]:
            return float(self.total[b])
        return 0.0

    def dominant_label(self, b: int) -> str:
        best, best_val = "none", 0.0
        for label, arr in self.contributions.items():
            if 0 <= b < arr.shape[0] and arr[b] > best_val:
                best, best_val = label, float(arr[b])
        return best


def build_tree(levels: int, feeder: FiberSpan, branch: FiberSpan | None = None,
               splitter_excess_db: float = 0.3,
               circulator: CirculatorModel | None = None,
               branch_overrides: dict | None = None) -> TreeTopology:
    """Balanced tree with ``2**levels`` leaves.

    Branch spans default to zero length with the feeder's per-km figures,
    i.e. all the fiber sits in the feeder unless branches are given.
    """
    if levels < 0:
        raise ValueError("levels must be nonnegative")
    if levels > MAX_TREE_LEVELS:
        raise ValueError(f"levels > {MAX_TREE_LEVELS} exceeds the size limit "
                         f"({2 ** levels} leaves)")
    if splitter_excess_db < 0:
        raise ValueError("splitter excess loss must be nonnegative")
    if branch is None:
        branch = FiberSpan(
            length=0.0,
            attenuation_db_per_km=feeder.attenuation_db_per_km,
            group_index=feeder.group_index,
            rayleigh_return_per_m=feeder.rayleigh_return_per_m,
            connector_return_loss_db=feeder.connector_return_loss_db,
        )
    return TreeTopology(levels=levels, feeder=feeder, default_branch=branch,
                        splitter_excess_db=splitter_excess_db,
                        circulator=circulator,
                        branch_overrides=dict(branch_overrides or {}))


def path_loss(topology: TreeTopology, leaf: int) -> float:
    """One-way loss in dB from the central station to the leaf entrance,
    including both circulator hops (central station exit, leaf entrance)
    when circulators are modeled."""
    loss = sum(span.loss_db for span in topology.path_spans(leaf))
    loss += topology.levels * (SPLITTER_SPLIT_DB + topology.splitter_excess_db)
    if topology.circulator is not None:
        loss += 2.0 * topology.circulator.insertion_loss_db
    return loss


def propagation_delay(topology: TreeTopology, leaf: int) -> float:
    """One-way fiber transit time to the leaf, in seconds."""
    return sum(span.delay for span in topology.path_spans(leaf))


def round_trip_transmissivity(topology: TreeTopology, leaf: int,
                              extra_db: float = 0.0) -> float:
    """Photon survival fraction for the return path from the leaf's
    attenuator output to the central detectors.

    The passive network is reciprocal, so the up-stream loss equals the
    down-stream ``path_loss``; ``extra_db`` adds receiver-side losses
    (demodulator insertion, trim) on top.
    """
    if extra_db < 0:
        raise ValueError("extra loss must be nonnegative")
    return db_to_fraction(path_loss(topology, leaf) + extra_db)


def _edge_entry_budget(topology: TreeTopology):
    """(level, index, span, delay to span entry, one-way dB to span entry)
    for every edge, measured from the central station output."""
    circ = topology.circulator
    base_db = circ.insertion_loss_db if circ is not None else 0.0
    out = [(0, 0, topology.feeder, 0.0, base_db)]
    stage_db = SPLITTER_SPLIT_DB + topology.splitter_excess_db
    for level in range(1, topology.levels + 1):
        for index in range(2 ** level):
            delay = topology.feeder.delay
            loss = base_db + topology.feeder.loss_db + stage_db
            for k in range(1, level):
                span = topology.branch_span(k, index >> (level - k))
                delay += span.delay
                loss += span.loss_db + stage_db
            out.append((level, index, topology.branch_span(level, index),
                        delay, loss))
    return out


def stray_profile(topology: TreeTopology, leaves, packet_mu,
                  slot_period: float, duration: float | None = None) -> StrayProfile:
    """Mean stray flux per slot bin after one packet emission at t = 0.

    Superposes, for the given packet (mean photons per slot at the central
    station output):

    * the immediate leak through the central station's circulator,
    * a localized echo from each connector (both ends of every span),
    * the distributed Rayleigh backscatter pedestal of every span,
    * the leak through each listed leaf's entrance circulator.

    Reflections beyond the leaf entrance are blocked by that circulator
    and do not appear.  The profile is linear in the packet intensity.
    """
    packet_mu = np.asarray(packet_mu, dtype=float)
    if packet_mu.ndim != 1 or packet_mu.size == 0:
        raise ValueError("packet_mu must be a nonempty 1-d array")
    if slot_period <= 0:
        raise ValueError("slot period must be positive")
    leaves = list(leaves)
    for leaf in leaves:
        topology.check_leaf(leaf)

    n = packet_mu.shape[0]
    edges = _edge_entry_budget(topology)
    max_delay = max((propagation_delay(topology, leaf) for leaf in leaves),
                    default=0.0)
    max_edge_end = max(d + span.delay for _, _, span, d, _ in edges)
    # always cover every echo; `duration` can only extend the grid
    # (e.g. out to a full emission period), never truncate it
    full = 2.0 * max(max_delay, max_edge_end) + (n + 2) * slot_period
    duration = full if duration is None else max(duration, full)
    bins = max(n + 1, int(math.ceil(duration / slot_period)))

    contributions = {label: np.zeros(bins) for label in StrayProfile.LABELS}

    def add_packet_echo(arr, t, factor):
        b0 = int(round(t / slot_period))
        if factor <= 0.0 or b0 >= bins:
            return
        stop = min(bins, b0 + n)
        arr[b0:stop] += factor * packet_mu[:stop - b0]

    circ = topology.circulator
    if circ is not None:
        add_packet_echo(contributions["alice_circulator"], 0.0,
                        db_to_fraction(circ.directivity_db))

    for _, _, span, entry_delay, entry_db in edges:
        rl = span.connector_return_loss_db
        if math.isfinite(rl):
            for t_c, db_c in ((entry_delay, entry_db),
                              (entry_delay + span.delay,
                               entry_db + span.loss_db)):
                add_packet_echo(contributions["connector_reflections"],
                                2.0 * t_c, db_to_fraction(2.0 * db_c + rl))

        if span.rayleigh_return_per_m > 0.0 and span.length > 0.0:
            dz = slot_period * SPEED_OF_LIGHT / (2.0 * span.group_index)
            nz = int(math.ceil(span.length / dz))
            z = (np.arange(nz) + 0.5) * dz
            widths = np.full(nz, dz)
            if nz * dz > span.length:
                widths[-1] = span.length - (nz - 1) * dz
                z[-1] = (nz - 1) * dz + widths[-1] / 2.0
            cell_db = 2.0 * (entry_db + span.attenuation_db_per_km * z / 1000.0)
            response = (span.rayleigh_return_per_m * widths
                        * 10.0 ** (-cell_db / 10.0))
            pedestal = np.convolve(packet_mu, response)
            b0 = int(round(2.0 * entry_delay / slot_period))
            stop = min(bins, b0 + pedestal.shape[0])
            if b0 < bins:
                contributions["rayleigh"][b0:stop] += pedestal[:stop - b0]

    if circ is not None:
        for leaf in leaves:
            one_way_db = path_loss(topology, leaf) - circ.insertion_loss_db
            add_packet_echo(contributions["bob_entrance"],
                            2.0 * propagation_delay(topology, leaf),
                            db_to_fraction(2.0 * one_way_db
                                           + circ.directivity_db))

    total = np.zeros(bins)
    for arr in contributions.values():
        total += arr
    return StrayProfile(slot_period=slot_period, total=total,
                        contributions=contributions)
