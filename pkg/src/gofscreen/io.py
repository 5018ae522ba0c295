"""CSV import/export of simulated datasets.

A dataset directory holds::

    events.csv    event_id, label (empty if unknown), scenario, true_L, true_M, m
    sensors.csv   event_id, sensor_id, detected, x        (x empty if not detected)
    network.csv   sensor_id, location, noise_offset
    manifest.json seed, parameters, sizes, sha256 of each CSV, created_at

Floats are written with ``repr`` so that a round trip is exact.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .simgen import LabeledDataset, SensorNetwork, SimulationParams

EVENTS_FILE = "events.csv"
SENSORS_FILE = "sensors.csv"
NETWORK_FILE = "network.csv"
MANIFEST_FILE = "manifest.json"

EVENT_COLUMNS = ("event_id", "label", "scenario", "true_L", "true_M", "m")
SENSOR_COLUMNS = ("event_id", "sensor_id", "detected", "x")
NETWORK_COLUMNS = ("sensor_id", "location", "noise_offset")


class DatasetFormatError(ValueError):
    """Malformed dataset file; the message carries the path and line number."""


def _f(v: float) -> str:
    return "" if math.isnan(v) else repr(float(v))


def sha256(path) -> str:
    h = hashlib.sha256()
    with Path(path).open("rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_dataset(out_dir, data: LabeledDataset, network: SensorNetwork, params: SimulationParams,
                  seed: int | None = None, extra: dict | None = None) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with (out / EVENTS_FILE).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(EVENT_COLUMNS)
        m = data.m
        for i in range(len(data)):
            lab = int(data.labels[i])
            w.writerow([i, "" if lab < 0 else lab, data.scenarios[i], _f(data.latent[i, 0]), _f(data.latent[i, 1]), int(m[i])])
    with (out / SENSORS_FILE).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SENSOR_COLUMNS)
        for i in range(len(data)):
            for s in range(data.S):
                d = bool(data.detections[i, s])
                w.writerow([i, s, int(d), _f(data.values[i, s]) if d else ""])
    with (out / NETWORK_FILE).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(NETWORK_COLUMNS)
        for s in range(network.S):
            w.writerow([s, repr(float(network.locations[s])), repr(float(network.noise_offsets[s]))])
    manifest = {
        "format": "gofscreen-dataset",
        "version": __version__,
        "seed": seed,
        "n_events": len(data),
        "S": data.S,
        "params": params.to_dict(),
        "checksums": {name: sha256(out / name) for name in (EVENTS_FILE, SENSORS_FILE, NETWORK_FILE)},
        "created_at": datetime.now(timezone.utc).isoformat(timespec="seconds"),
    }
    if extra:
        manifest.update(extra)
    (out / MANIFEST_FILE).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return out


def _rows(path: Path, expected: tuple[str, ...]):
    if not path.exists():
        raise FileNotFoundError(f"{path}: missing")
    with path.open(newline="") as fh:
        r = csv.reader(fh)
        header = next(r, None)
        if header is None or tuple(header) != expected:
            raise DatasetFormatError(f"{path}:1: expected header {','.join(expected)}, got {header}")
        for lineno, row in enumerate(r, start=2):
            if len(row) != len(expected):
                raise DatasetFormatError(f"{path}:{lineno}: expected {len(expected)} fields, got {len(row)}")
            yield lineno, row


def _num(path, lineno, text, kind=float, allow_empty=False):
    if text == "" and allow_empty:
        return math.nan
    try:
        return kind(text)
    except ValueError:
        raise DatasetFormatError(f"{path}:{lineno}: cannot parse {text!r} as {kind.__name__}") from None


def read_network(path) -> SensorNetwork:
    path = Path(path)
    loc, off = [], []
    for lineno, (sid, r, a) in _rows(path, NETWORK_COLUMNS):
        if _num(path, lineno, sid, int) != len(loc):
            raise DatasetFormatError(f"{path}:{lineno}: sensor ids must be 0..S-1 in order")
        loc.append(_num(path, lineno, r))
        off.append(_num(path, lineno, a))
    return SensorNetwork(np.array(loc), np.array(off))


def read_dataset(in_dir, verify: bool = True) -> tuple[LabeledDataset, SensorNetwork, dict]:
    """Load a directory written by :func:`write_dataset`."""
    d = Path(in_dir)
    manifest = json.loads((d / MANIFEST_FILE).read_text()) if (d / MANIFEST_FILE).exists() else {}
    if verify and manifest.get("checksums"):
        for name, digest in manifest["checksums"].items():
            if sha256(d / name) != digest:
                raise DatasetFormatError(f"{d / name}: checksum does not match the manifest")
    network = read_network(d / NETWORK_FILE)
    S = network.S

    ev_path = d / EVENTS_FILE
    labels, scen, latent, m_decl = [], [], [], []
    for lineno, (eid, lab, sc, tl, tm, m) in _rows(ev_path, EVENT_COLUMNS):
        if _num(ev_path, lineno, eid, int) != len(labels):
            raise DatasetFormatError(f"{ev_path}:{lineno}: event ids must be 0..n-1 in order")
        y = -1 if lab == "" else _num(ev_path, lineno, lab, int)
        if y not in (0, 1, -1):
            raise DatasetFormatError(f"{ev_path}:{lineno}: label must be 0, 1 or empty")
        labels.append(y)
        scen.append(sc)
        latent.append((_num(ev_path, lineno, tl, allow_empty=True), _num(ev_path, lineno, tm, allow_empty=True)))
        m_decl.append(_num(ev_path, lineno, m, int))
    n = len(labels)
    det = np.zeros((n, S), dtype=bool)
    vals = np.full((n, S), np.nan)
    seen = np.zeros((n, S), dtype=bool)
    s_path = d / SENSORS_FILE
    for lineno, (eid, sid, dd, x) in _rows(s_path, SENSOR_COLUMNS):
        i = _num(s_path, lineno, eid, int)
        s = _num(s_path, lineno, sid, int)
        if not (0 <= i < n and 0 <= s < S):
            raise DatasetFormatError(f"{s_path}:{lineno}: event or sensor id out of range")
        if seen[i, s]:
            raise DatasetFormatError(f"{s_path}:{lineno}: duplicate row for event {i}, sensor {s}")
        seen[i, s] = True
        if dd not in ("0", "1"):
            raise DatasetFormatError(f"{s_path}:{lineno}: detected must be 0 or 1")
        if dd == "1":
            if x == "":
                raise DatasetFormatError(f"{s_path}:{lineno}: detected sensor without a value")
            det[i, s] = True
            vals[i, s] = _num(s_path, lineno, x)
        elif x != "":
            raise DatasetFormatError(f"{s_path}:{lineno}: value given for a non-detecting sensor")
    if not seen.all():
        i, s = map(int, np.argwhere(~seen)[0])
        raise DatasetFormatError(f"{s_path}: no row for event {i}, sensor {s}")
    if np.any(det.sum(axis=1) != np.array(m_decl, dtype=int)):
        i = int(np.flatnonzero(det.sum(axis=1) != np.array(m_decl))[0])
        raise DatasetFormatError(f"{ev_path}:{i + 2}: m column disagrees with sensors.csv")
    data = LabeledDataset(det, vals, np.array(labels), np.array(latent, dtype=float).reshape(n, 2),
                          np.array(scen, dtype=object))
    return data, network, manifest


def params_from_manifest(manifest: dict) -> SimulationParams:
    return SimulationParams.from_dict(manifest["params"])
