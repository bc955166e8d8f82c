"""Metric records and their on-disk form.

A run is stored as ``<run_id>.csv`` (header ``run_id,seed,context,step,metric,value``)
next to ``<run_id>.manifest.json``. The manifest is written first with
``status: running`` and rewritten as ``complete`` or ``aborted`` at the end,
so a run that died mid-write is recognizable.
"""

from __future__ import annotations

import csv
import io
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

log = logging.getLogger(__name__)

HEADER = ("run_id", "seed", "context", "step", "metric", "value")


class Row(NamedTuple):
    run_id: str
    seed: int
    context: str
    step: int
    metric: str
    value: float


@dataclass
class MetricSeries:
    run_id: str
    seed: int
    rows: list = field(default_factory=list)
    aborted: str | None = None

    def add(self, step, metric, value, context=""):
        self.rows.append(Row(self.run_id, self.seed, context, int(step), metric, float(value)))

    def abort(self, step, reason, detail=""):
        self.aborted = f"{reason}: {detail}" if detail else reason
        self.add(step, "aborted", 1.0, reason)

    def values(self, metric, context=None):
        return [r.value for r in self.rows if r.metric == metric and (context is None or r.context == context)]

    def steps(self, metric):
        return [r.step for r in self.rows if r.metric == metric]


def format_rows(rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(HEADER)
    for r in rows:
        writer.writerow((r.run_id, r.seed, r.context, r.step, r.metric, repr(r.value)))
    return buf.getvalue()


def write_manifest(path: Path, manifest: dict) -> None:
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8", newline="\n")


def write_run(out_dir, series: MetricSeries, manifest: dict) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    mpath = out_dir / f"{series.run_id}.manifest.json"
    write_manifest(mpath, {**manifest, "run_id": series.run_id, "seed": series.seed, "status": "running"})
    csv_path = out_dir / f"{series.run_id}.csv"
    csv_path.write_text(format_rows(series.rows), encoding="utf-8", newline="\n")
    status = "aborted" if series.aborted else "complete"
    final = {**manifest, "run_id": series.run_id, "seed": series.seed, "status": status}
    if series.aborted:
        final["abort_reason"] = series.aborted
    write_manifest(mpath, final)
    return csv_path


def read_rows(path) -> list[Row]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if tuple(header or ()) != HEADER:
            raise ValueError(f"{path}: bad header {header}")
        return [Row(r[0], int(r[1]), r[2], int(r[3]), r[4], float(r[5])) for r in reader]


def load_runs(log_dir):
    """``[(manifest, MetricSeries)]`` for complete runs, ordered by run_id.

    Runs whose manifest is missing, unreadable or not ``complete`` are
    skipped with a warning.
    """
    runs = []
    for mpath in sorted(Path(log_dir).glob("*.manifest.json")):
        run_id = mpath.name[: -len(".manifest.json")]
        csv_path = mpath.with_name(f"{run_id}.csv")
        try:
            manifest = json.loads(mpath.read_text(encoding="utf-8"))
            if manifest.get("status") != "complete":
                raise ValueError(f"status {manifest.get('status')!r}")
            rows = read_rows(csv_path)
        except (OSError, ValueError, IndexError) as exc:
            log.warning("skipping run %s: %s", run_id, exc)
            continue
        runs.append((manifest, MetricSeries(run_id, manifest.get("seed", 0), rows)))
    return runs
