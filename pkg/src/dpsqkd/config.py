"""Scenario files: schema, parsing and derived objects.

A scenario is one JSON document with explicit unit suffixes on every
physical quantity (``_nm``, ``_ns``, ``_m``, ``_db`` and so on), so the
file doubles as experiment documentation.  Unknown keys are rejected.
Bundled presets live in ``dpsqkd/presets`` and can be addressed by name
wherever a config path is accepted.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from importlib import resources

import jsonschema

from .bitsources import FixedPatternSource, PrbsSource, RandomSource
from .errors import ConfigurationError
from .network import (CirculatorModel, FiberSpan, build_tree,
                      round_trip_transmissivity)
from .optics import MziParams, SourceParams
from .simcore import BobUnit, DetectorModel
from .units import SPEED_OF_LIGHT

_number = {"type": "number"}
_positive = {"type": "number", "exclusiveMinimum": 0}
_nonneg = {"type": "number", "minimum": 0}

SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["name", "source", "network", "mzi", "detectors", "bobs",
                 "schedule", "run"],
    "properties": {
        "name": {"type": "string"},
        "source": {
            "type": "object",
            "additionalProperties": False,
            "required": ["wavelength_nm", "pulse_rate_ghz", "pulse_width_ps",
                         "pulse_energy_pj", "linewidth_mhz"],
            "properties": {
                "wavelength_nm": _positive,
                "pulse_rate_ghz": _positive,
                "pulse_width_ps": _positive,
                "pulse_energy_pj": _nonneg,
                "linewidth_mhz": _positive,
                "lineshape_factor": _positive,
                "extinction_static_db": _nonneg,
                "gate_suppression_db": _nonneg,
            },
        },
        "network": {
            "type": "object",
            "additionalProperties": False,
            "required": ["levels", "feeder_length_m"],
            "properties": {
                "levels": {"type": "integer", "minimum": 0, "maximum": 20},
                "feeder_length_m": _nonneg,
                "branch_length_m": _nonneg,
                "attenuation_db_per_km": _nonneg,
                "group_index": {"type": "number", "minimum": 1},
                "rayleigh_return_per_m": {"type": "number", "minimum": 0,
                                          "maximum": 1e-4},
                "connector_return_loss_db": _nonneg,
                "splitter_excess_db": _nonneg,
                "upstream_trim_db": _nonneg,
                "circulator": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {
                        "insertion_loss_db": _nonneg,
                        "directivity_db": _nonneg,
                    },
                },
                "branch_overrides": {
                    "type": "array",
                    "items": {
                        "type": "object",
                        "additionalProperties": False,
                        "required": ["level", "index", "length_m"],
                        "properties": {
                            "level": {"type": "integer", "minimum": 1},
                            "index": {"type": "integer", "minimum": 0},
                            "length_m": _nonneg,
                        },
                    },
                },
            },
        },
        "mzi": {
            "type": "object",
            "additionalProperties": False,
            "required": ["delay_ns", "visibility"],
            "properties": {
                "delay_ns": _positive,
                "visibility": {"type": "number", "minimum": 0, "maximum": 1},
                "insertion_loss_db": _nonneg,
            },
        },
        "detectors": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "efficiency": {"type": "number", "minimum": 0, "maximum": 1},
                "dark_prob_per_gate": {"type": "number", "minimum": 0,
                                       "maximum": 1},
                "gate_width_ns": _positive,
                "dead_time_us": _nonneg,
            },
        },
        "bobs": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "additionalProperties": False,
                "required": ["leaf", "storage_m", "mu_target", "bit_source"],
                "properties": {
                    "leaf": {"type": "integer", "minimum": 0},
                    "storage_m": _nonneg,
                    "mu_target": _positive,
                    "clock_tap_fraction": {"type": "number",
                                           "exclusiveMinimum": 0,
                                           "exclusiveMaximum": 1},
                    "bit_source": {
                        "type": "object",
                        "additionalProperties": False,
                        "required": ["kind"],
                        "properties": {
                            "kind": {"enum": ["prbs", "random", "pattern"]},
                            "order": {"enum": [7, 15, 23, 31]},
                            "seed": {"type": "integer"},
                            "pattern": {"enum": ["all-zero", "all-one",
                                                 "alternating"]},
                        },
                    },
                },
            },
        },
        "schedule": {
            "type": "object",
            "additionalProperties": False,
            "required": ["slot_count"],
            "properties": {
                "slot_count": {"type": "integer", "minimum": 2},
                "guard_slots": _nonneg,
                "forced_period_ns": _positive,
                "stray_threshold_photons_per_slot": _positive,
            },
        },
        "run": {
            "type": "object",
            "additionalProperties": False,
            "required": ["packets", "seed"],
            "properties": {
                "packets": {"type": "integer", "minimum": 1},
                "seed": {"type": "integer", "minimum": 0},
            },
        },
        "postproc": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "sample_fraction": {"type": "number", "exclusiveMinimum": 0,
                                    "maximum": 1},
                "ec_efficiency": {"type": "number", "minimum": 1},
                "cascade": {"enum": ["classic", "optimized"]},
                "frame_bits": {"type": "integer", "minimum": 64},
                "timeline_windows": {"type": "integer", "minimum": 1},
            },
        },
    },
}


def _bit_source(spec: dict):
    kind = spec["kind"]
    if kind == "prbs":
        if "order" not in spec:
            raise ConfigurationError("prbs bit source needs an 'order'")
        return PrbsSource(order=spec["order"], seed=spec.get("seed", 1))
    if kind == "random":
        return RandomSource(seed=spec.get("seed"))
    if "pattern" not in spec:
        raise ConfigurationError("pattern bit source needs a 'pattern'")
    return FixedPatternSource(spec["pattern"])


@dataclass
class Scenario:
    """Parsed scenario.  User ids are the positions in ``bobs``."""

    name: str
    source: SourceParams
    mzi: MziParams
    detectors: DetectorModel
    bobs: list
    levels: int
    feeder: FiberSpan
    branch: FiberSpan
    splitter_excess_db: float
    circulator: CirculatorModel | None
    branch_overrides: dict
    upstream_trim_db: float
    slot_count: int
    guard_slots: float
    forced_period: float | None
    stray_threshold: float
    packets: int
    seed: int
    sample_fraction: float = 0.1
    ec_efficiency: float = 1.05
    cascade_preset: str = "classic"
    frame_bits: int = 16384
    timeline_windows: int = 20
    digest: str = ""
    raw: dict = field(default_factory=dict, repr=False)

    def topology(self):
        return build_tree(self.levels, feeder=self.feeder, branch=self.branch,
                          splitter_excess_db=self.splitter_excess_db,
                          circulator=self.circulator,
                          branch_overrides=self.branch_overrides)

    @property
    def receiver_extra_db(self) -> float:
        return self.mzi.insertion_loss_db + self.upstream_trim_db

    def bound_sources(self, seed=None) -> dict:
        seed = self.seed if seed is None else seed
        return {i: bob.bit_source.bind(seed, i)
                for i, bob in enumerate(self.bobs)}

    def security_map(self, topology=None) -> dict:
        if topology is None:
            topology = self.topology()
        return {i: (bob.mu_target,
                    round_trip_transmissivity(topology, bob.leaf,
                                              extra_db=self.receiver_extra_db))
                for i, bob in enumerate(self.bobs)}


def scenario_digest(raw: dict) -> str:
    canonical = json.dumps(raw, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode()).hexdigest()


def scenario_from_dict(raw: dict) -> Scenario:
    jsonschema.validate(raw, SCHEMA)

    src = raw["source"]
    source = SourceParams(
        wavelength=src["wavelength_nm"] * 1e-9,
        pulse_rate=src["pulse_rate_ghz"] * 1e9,
        pulse_width=src["pulse_width_ps"] * 1e-12,
        pulse_energy=src["pulse_energy_pj"] * 1e-12,
        linewidth=src["linewidth_mhz"] * 1e6,
        **({"lineshape_factor": src["lineshape_factor"]}
           if "lineshape_factor" in src else {}),
        extinction_static_db=src.get("extinction_static_db", 30.0),
        gate_suppression_db=src.get("gate_suppression_db", 30.0),
    )

    net = raw["network"]
    span_kwargs = dict(
        attenuation_db_per_km=net.get("attenuation_db_per_km", 0.2),
        group_index=net.get("group_index", 1.468),
        rayleigh_return_per_m=net.get("rayleigh_return_per_m", 1e-7),
        connector_return_loss_db=net.get("connector_return_loss_db", 55.0),
    )
    feeder = FiberSpan(length=net["feeder_length_m"], **span_kwargs)
    branch = FiberSpan(length=net.get("branch_length_m", 0.0), **span_kwargs)
    circulator = None
    if "circulator" in net:
        circulator = CirculatorModel(
            insertion_loss_db=net["circulator"].get("insertion_loss_db", 0.6),
            directivity_db=net["circulator"].get("directivity_db", 70.0))
    overrides = {}
    for item in net.get("branch_overrides", []):
        if item["level"] > net["levels"]:
            raise ConfigurationError(
                f"branch override at level {item['level']} exceeds the "
                f"{net['levels']}-level tree")
        overrides[(item["level"], item["index"])] = FiberSpan(
            length=item["length_m"], **span_kwargs)

    mzi_raw = raw["mzi"]
    mzi = MziParams(delay=mzi_raw["delay_ns"] * 1e-9,
                    visibility=mzi_raw["visibility"],
                    insertion_loss_db=mzi_raw.get("insertion_loss_db", 2.0))

    det_raw = raw.get("detectors", {})
    detectors = DetectorModel(
        efficiency=det_raw.get("efficiency", 0.10),
        dark_prob=det_raw.get("dark_prob_per_gate", 1e-5),
        gate_width=det_raw.get("gate_width_ns", 1.0) * 1e-9,
        dead_time=det_raw.get("dead_time_us", 10.0) * 1e-6,
    )

    group_index = net.get("group_index", 1.468)
    leaf_count = 2 ** net["levels"]
    bobs = []
    for spec in raw["bobs"]:
        if spec["leaf"] >= leaf_count:
            raise ConfigurationError(
                f"leaf {spec['leaf']} does not exist in a "
                f"{net['levels']}-level tree ({leaf_count} leaves)")
        bobs.append(BobUnit(
            leaf=spec["leaf"],
            storage_time=spec["storage_m"] * group_index / SPEED_OF_LIGHT,
            mu_target=spec["mu_target"],
            bit_source=_bit_source(spec["bit_source"]),
            clock_tap_fraction=spec.get("clock_tap_fraction", 0.99),
        ))

    sched = raw["schedule"]
    run = raw["run"]
    post = raw.get("postproc", {})
    forced = sched.get("forced_period_ns")
    return Scenario(
        name=raw["name"],
        source=source,
        mzi=mzi,
        detectors=detectors,
        bobs=bobs,
        levels=net["levels"],
        feeder=feeder,
        branch=branch,
        splitter_excess_db=net.get("splitter_excess_db", 0.3),
        circulator=circulator,
        branch_overrides=overrides,
        upstream_trim_db=net.get("upstream_trim_db", 0.0),
        slot_count=sched["slot_count"],
        guard_slots=sched.get("guard_slots", 2.0),
        forced_period=forced * 1e-9 if forced is not None else None,
        stray_threshold=sched.get("stray_threshold_photons_per_slot", 1e-3),
        packets=run["packets"],
        seed=run["seed"],
        sample_fraction=post.get("sample_fraction", 0.1),
        ec_efficiency=post.get("ec_efficiency", 1.05),
        cascade_preset=post.get("cascade", "classic"),
        frame_bits=post.get("frame_bits", 16384),
        timeline_windows=post.get("timeline_windows", 20),
        digest=scenario_digest(raw),
        raw=raw,
    )


def preset_names() -> list:
    files = resources.files("dpsqkd").joinpath("presets")
    return sorted(p.name[:-5] for p in files.iterdir()
                  if p.name.endswith(".json"))


def load_scenario(path_or_preset) -> Scenario:
    """Load a scenario from a JSON file path or a bundled preset name."""
    path = str(path_or_preset)
    if path.endswith(".json"):
        with open(path) as fh:
            raw = json.load(fh)
    else:
        ref = resources.files("dpsqkd").joinpath(f"presets/{path}.json")
        if not ref.is_file():
            raise FileNotFoundError(
                f"{path!r} is neither a .json file nor a bundled preset "
                f"(available: {', '.join(preset_names())})")
        raw = json.loads(ref.read_text())
    return scenario_from_dict(raw)
