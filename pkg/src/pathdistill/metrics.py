"""Append-only JSONL metrics log and CSV exports."""

from __future__ import annotations

import csv
import json
from pathlib import Path


class MetricsWriter:
    """Keeps records in memory and, with a path, appends one JSON object per line."""

    def __init__(self, path=None, records: list | None = None):
        self.path = Path(path) if path else None
        self.records: list[dict] = list(records or [])
        if self.path is not None:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            # rewrite the surviving prefix; a resumed run continues from here
            with open(self.path, "w") as fh:
                for rec in self.records:
                    fh.write(json.dumps(rec) + "\n")

    def write(self, event: dict) -> None:
        self.records.append(event)
        if self.path is not None:
            with open(self.path, "a") as fh:
                fh.write(json.dumps(event) + "\n")
                fh.flush()


def read_metrics(path) -> list[dict]:
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]


def emit_plot_data(records: list[dict], out) -> int:
    """CSV of (step, path, flops, accuracy) for every evaluated architecture; returns row count."""
    rows = [r for r in records if r.get("event") == "step" and r.get("val_acc") is not None]
    out = Path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "path", "flops", "accuracy"])
        for r in rows:
            w.writerow([r["step"], r["path"], r["flops"], r["val_acc"]])
    return len(rows)


def write_table(rows: list[dict], out) -> None:
    out = Path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]) if rows else [])
        w.writeheader()
        w.writerows(rows)
