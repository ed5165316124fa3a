import copy
import json
from importlib import resources

import pytest

from dpsqkd.config import Scenario, scenario_from_dict


def preset_dict(name: str) -> dict:
    ref = resources.files("dpsqkd").joinpath(f"presets/{name}.json")
    return json.loads(ref.read_text())


def scenario_with(name: str, **dotted) -> Scenario:
    """Load a preset and apply dotted-path overrides, e.g.
    ``scenario_with("paper-demo", **{"mzi.visibility": 1.0})``."""
    raw = copy.deepcopy(preset_dict(name))
    for path, value in dotted.items():
        node = raw
        parts = path.split(".")
        for part in parts[:-1]:
            node = node[int(part)] if part.isdigit() else node[part]
        last = parts[-1]
        if value is None:
            node.pop(last, None)
        else:
            node[int(last) if last.isdigit() else last] = value
    return scenario_from_dict(raw)


def tiny_scenario(**dotted) -> Scenario:
    """Small, fast scenario for unit tests: one leaf behind one splitter
    level, 16-slot packets."""
    raw = {
        "name": "tiny",
        "source": {"wavelength_nm": 1550.12, "pulse_rate_ghz": 1.0,
                   "pulse_width_ps": 120.0, "pulse_energy_pj": 0.23,
                   "linewidth_mhz": 2.0},
        "network": {"levels": 1, "feeder_length_m": 40.0,
                    "splitter_excess_db": 0.0,
                    "circulator": {"insertion_loss_db": 0.0,
                                   "directivity_db": 70.0}},
        "mzi": {"delay_ns": 1.0, "visibility": 0.946,
                "insertion_loss_db": 0.0},
        "detectors": {"efficiency": 0.1, "dark_prob_per_gate": 0.0,
                      "gate_width_ns": 1.0, "dead_time_us": 0.0},
        "bobs": [{"leaf": 0, "storage_m": 60.0, "mu_target": 0.1,
                  "bit_source": {"kind": "prbs", "order": 7, "seed": 42}}],
        "schedule": {"slot_count": 16, "guard_slots": 2,
                     "forced_period_ns": 800.0},
        "run": {"packets": 2000, "seed": 5},
    }
    for path, value in dotted.items():
        node = raw
        parts = path.split(".")
        for part in parts[:-1]:
            node = node[int(part)] if part.isdigit() else node[part]
        last = parts[-1]
        if value is None:
            node.pop(last, None)
        else:
            node[int(last) if last.isdigit() else last] = value
    return scenario_from_dict(raw)


@pytest.fixture
def tiny():
    return tiny_scenario()
