"""Run output bundle: frozen CSV/JSON formats and their readers.

Column orders are fixed.  Integers are written losslessly.  Record
timestamps use shortest-round-trip formatting so a parsed bundle
reproduces the in-memory report exactly; derived reals (profiles,
window tables) carry 12 significant digits.  Every file is tagged with
the scenario digest: CSVs in a leading ``# config_digest=...`` comment
line, JSON documents in a ``config_digest`` field.
"""

from __future__ import annotations

import json
import os

import numpy as np

from .network import StrayProfile
from .schedule import PacketSchedule
from .simcore import DETECTOR_NAMES, RECORD_DTYPE, SimReport

RECORDS_CSV = "records.csv"
HISTOGRAM_CSV = "histogram.csv"
STRAY_CSV = "stray_profile.csv"
SCHEDULE_CSV = "schedule.csv"
META_JSON = "meta.json"
KEY_REPORT_JSON = "key_report.json"


def _real(x: float) -> str:
    return f"{x:.12g}"


def write_records_csv(path, records: np.ndarray, digest: str):
    with open(path, "w") as fh:
        fh.write(f"# config_digest={digest}\n")
        fh.write("packet,slot,detector,time_ns,user,coincidence\n")
        for rec in records:
            fh.write(f"{rec['packet']},{rec['slot']},"
                     f"{DETECTOR_NAMES[rec['detector']]},"
                     f"{float(rec['time_ns'])!r},{rec['user']},"
                     f"{int(rec['coincidence'])}\n")


def read_records_csv(path) -> np.ndarray:
    rows = []
    with open(path) as fh:
        for line in fh:
            if line.startswith("#") or line.startswith("packet,"):
                continue
            packet, slot, det, t, user, coin = line.rstrip("\n").split(",")
            rows.append((int(packet), int(slot),
                         DETECTOR_NAMES.index(det), float(t), int(user),
                         bool(int(coin))))
    out = np.empty(len(rows), dtype=RECORD_DTYPE)
    for i, row in enumerate(rows):
        out[i] = row
    return out


def write_histogram_csv(path, histogram: np.ndarray, digest: str):
    users, slots, _ = histogram.shape
    with open(path, "w") as fh:
        fh.write(f"# config_digest={digest}\n")
        fh.write("user,slot,detector,count\n")
        for u in range(users):
            for s in range(slots):
                for d in (0, 1):
                    fh.write(f"{u},{s},{DETECTOR_NAMES[d]},"
                             f"{histogram[u, s, d]}\n")


def read_histogram_csv(path) -> np.ndarray:
    rows = []
    with open(path) as fh:
        for line in fh:
            if line.startswith("#") or line.startswith("user,"):
                continue
            u, s, d, c = line.rstrip("\n").split(",")
            rows.append((int(u), int(s), DETECTOR_NAMES.index(d), int(c)))
    users = 1 + max(r[0] for r in rows)
    slots = 1 + max(r[1] for r in rows)
    hist = np.zeros((users, slots, 2), dtype=np.int64)
    for u, s, d, c in rows:
        hist[u, s, d] = c
    return hist


def write_stray_csv(path, profile: StrayProfile, digest: str):
    labels = list(StrayProfile.LABELS)
    with open(path, "w") as fh:
        fh.write(f"# config_digest={digest}\n")
        fh.write("bin,time_ns,total," + ",".join(labels) + "\n")
        t_ns = profile.slot_period * 1e9
        for b in range(profile.total.shape[0]):
            parts = [str(b), _real(b * t_ns), _real(profile.total[b])]
            parts += [_real(profile.contributions[lab][b]) for lab in labels]
            fh.write(",".join(parts) + "\n")


def write_schedule_csv(path, sched: PacketSchedule, digest: str):
    with open(path, "w") as fh:
        fh.write(f"# config_digest={digest}\n")
        fh.write("user,window_start_ns,window_end_ns,period_ns\n")
        for user, start, end, period in sched.csv_rows():
            fh.write(f"{user},{_real(start)},{_real(end)},{_real(period)}\n")


def write_run_bundle(outdir, report: SimReport, profile: StrayProfile,
                     key_report: dict | None, overwrite: bool = False):
    """Write the full bundle into ``outdir`` (created if missing)."""
    os.makedirs(outdir, exist_ok=True)
    digest = report.meta.get("config_digest", "")
    target = os.path.join(outdir, RECORDS_CSV)
    if os.path.exists(target) and not overwrite:
        raise FileExistsError(
            f"{target} already exists; pass overwrite to replace it")

    write_records_csv(target, report.records, digest)
    write_histogram_csv(os.path.join(outdir, HISTOGRAM_CSV),
                        report.histogram, digest)
    write_stray_csv(os.path.join(outdir, STRAY_CSV), profile, digest)
    write_schedule_csv(os.path.join(outdir, SCHEDULE_CSV),
                       report.schedule, digest)

    meta = {
        "config_digest": digest,
        "raw_rate_counts_per_s": report.raw_rate,
        "total_rate_counts_per_s": report.total_rate,
        "records": int(report.records.shape[0]),
        "slots_simulated": report.slots_simulated,
        "duration_s": report.duration,
        "silence_passed": bool(report.silence.passed),
        **report.meta,
    }
    with open(os.path.join(outdir, META_JSON), "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")

    if key_report is not None:
        key_report = {"config_digest": digest, **key_report}
        with open(os.path.join(outdir, KEY_REPORT_JSON), "w") as fh:
            json.dump(key_report, fh, indent=2, sort_keys=True)
            fh.write("\n")


def file_digest(path) -> str:
    """Config digest recorded in a bundle file (CSV comment or JSON field)."""
    if path.endswith(".json"):
        with open(path) as fh:
            return json.load(fh).get("config_digest", "")
    with open(path) as fh:
        first = fh.readline().strip()
    prefix = "# config_digest="
    return first[len(prefix):] if first.startswith(prefix) else ""
