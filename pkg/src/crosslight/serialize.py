"""Serialization of traces (CSV), reports (JSON) and fitted parameters (TOML).

Floats are written with ``repr``, which is the shortest string that parses
back to the same double, so a CSV round-trip is exact. Nothing time- or
host-dependent is written, so the same inputs always give the same bytes.
"""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np
import tomli
import tomli_w

from .harness import STEP_COLUMNS, MetricsReport, SweepItem, TraceLog

SCHEMA_VERSION = 1


def _fmt(x: float) -> str:
    return repr(float(x))


def emit_trace(trace: TraceLog, path) -> Path:
    path = Path(path)
    cols = [trace[name] for name in STEP_COLUMNS]
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(STEP_COLUMNS)
        for row in zip(*cols):
            w.writerow([_fmt(v) for v in row])
    return path


def read_trace(path) -> TraceLog:
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if tuple(header) != STEP_COLUMNS:
            raise ValueError(f"{path}: unexpected trace columns")
        rows = [[float(v) for v in r] for r in reader]
    data = np.array(rows, dtype=float).reshape(-1, len(header))
    return TraceLog({name: data[:, j].copy() for j, name in enumerate(header)})


def _clean(value):
    """JSON-safe copy: numpy scalars to Python, non-finite floats to None."""
    if isinstance(value, dict):
        return {str(k): _clean(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_clean(v) for v in value]
    if isinstance(value, np.generic):
        value = value.item()
    if isinstance(value, float) and not math.isfinite(value):
        return None
    return value


def run_report(result, cfg) -> dict:
    return {
        "kind": "run",
        "name": cfg.name,
        "seed": cfg.seed,
        "metrics": result.metrics.to_dict(),
        "tolerance": result.tolerance,
        "thresholds": None if result.thresholds is None else list(result.thresholds),
    }


def _aggregate(items: list[SweepItem]) -> list[dict]:
    groups: dict[str, list[SweepItem]] = {}
    params_of: dict[str, dict] = {}
    for it in items:
        key = json.dumps(it.params, sort_keys=True)
        groups.setdefault(key, []).append(it)
        params_of[key] = it.params
    out = []
    for key, group in groups.items():
        ok = [it.metrics for it in group if it.status == "ok"]
        lat = [m.detection_latency_s for m in ok if m.detected]
        benign = sum(m.benign_cycles for m in ok)
        out.append(
            {
                "params": params_of[key],
                "runs": len(group),
                "failed": len(group) - len(ok),
                "detection_rate": len(lat) / len(ok) if ok else None,
                "mean_detection_latency_s": sum(lat) / len(lat) if lat else None,
                "false_positive_rate": (
                    sum(m.false_alarm_cycles for m in ok) / benign if benign else 0.0
                ),
            }
        )
    return out


def sweep_report(items: list[SweepItem]) -> dict:
    return {
        "kind": "sweep",
        "items": [
            {
                "index": it.index,
                "name": it.name,
                "seed": it.seed,
                "params": it.params,
                "status": it.status,
                "error": it.error,
                "metrics": None if it.metrics is None else it.metrics.to_dict(),
            }
            for it in items
        ],
        "aggregates": _aggregate(items),
    }


def dumps_report(report: dict) -> str:
    doc = {"schema_version": SCHEMA_VERSION, **report}
    return json.dumps(_clean(doc), indent=2, sort_keys=True, allow_nan=False) + "\n"


def emit_report(report: dict, path) -> Path:
    path = Path(path)
    path.write_text(dumps_report(report), newline="\n")
    return path


def read_report(path) -> dict:
    doc = json.loads(Path(path).read_text())
    if doc.get("schema_version") != SCHEMA_VERSION:
        raise ValueError(f"{path}: unsupported schema_version {doc.get('schema_version')!r}")
    return doc


def metrics_from_report(doc: dict) -> MetricsReport:
    return MetricsReport.from_dict(doc["metrics"])


def emit_toml(data: dict, path) -> Path:
    path = Path(path)
    path.write_text(tomli_w.dumps(data), newline="\n")
    return path


def read_toml(path) -> dict:
    return tomli.loads(Path(path).read_text())
