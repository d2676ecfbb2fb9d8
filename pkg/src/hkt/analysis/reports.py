"""Flat CSV tables and line-delimited JSON records."""

from __future__ import annotations

import csv
import json
import math
import os
from typing import Iterable

import numpy as np

FORMAT_TAG = "hkt-report/1"


def _clean(v):
    if isinstance(v, (np.floating, float)):
        v = float(v)
        return v if math.isfinite(v) else str(v)
    if isinstance(v, np.integer):
        return int(v)
    if isinstance(v, np.ndarray):
        return [_clean(x) for x in v.tolist()]
    if isinstance(v, (list, tuple)):
        return [_clean(x) for x in v]
    if isinstance(v, dict):
        return {k: _clean(x) for k, x in v.items()}
    return v


def write_csv(path: str, rows: list[dict], float_fmt: str = "{:.10g}") -> None:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    if not rows:
        with open(path, "w", newline="") as fh:
            fh.write("")
        return
    cols = list(rows[0].keys())
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for r in rows:
            w.writerow([float_fmt.format(r[c]) if isinstance(r[c], (float, np.floating)) else r[c]
                        for c in cols])


def write_jsonl(path: str, records: Iterable[dict], kind: str) -> None:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(dict(_clean(rec), format=FORMAT_TAG, kind=kind), sort_keys=True))
            fh.write("\n")


def read_jsonl(path: str) -> list[dict]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            rec = json.loads(line)
            if rec.get("format") != FORMAT_TAG:
                raise ValueError(f"{path}: unsupported record format {rec.get('format')!r}")
            out.append(rec)
    return out
