"""Per-iteration metric records, run summaries and their CSV/JSON exports."""
from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .errors import MetricsError

CSV_HEADER = ("iteration,sim_time_end,bst,train_loss,eval_accuracy,"
              "sgu_budget_bytes,rs_bytes,ics_bytes,dropped_stale_msgs")


@dataclass
class IterationRecord:
    iteration: int
    sim_time_end: float
    bst: float
    train_loss: float
    eval_accuracy: Optional[float] = None
    sgu_budget_bytes: int = 0
    rs_bytes: int = 0
    ics_bytes: int = 0
    dropped_stale_msgs: int = 0


RECORD_FIELDS = tuple(f.name for f in fields(IterationRecord))
_INT_FIELDS = {"iteration", "sgu_budget_bytes", "rs_bytes", "ics_bytes", "dropped_stale_msgs"}


@dataclass
class MetricsLog:
    records: List[IterationRecord] = field(default_factory=list)
    # total gradient bytes every iteration must account for (model bytes x workers), if known
    bytes_per_iteration: Optional[int] = None

    def __len__(self):
        return len(self.records)

    def column(self, name: str) -> list:
        return [getattr(r, name) for r in self.records]


def record_iteration(log: MetricsLog, rec: IterationRecord) -> None:
    expected = log.records[-1].iteration + 1 if log.records else 0
    if rec.iteration != expected:
        raise MetricsError(f"record for iteration {rec.iteration}, expected {expected}")
    if log.records and not rec.sim_time_end > log.records[-1].sim_time_end:
        raise MetricsError(f"sim_time_end {rec.sim_time_end!r} does not advance past "
                           f"{log.records[-1].sim_time_end!r} at iteration {rec.iteration}")
    if log.bytes_per_iteration is not None and rec.rs_bytes + rec.ics_bytes != log.bytes_per_iteration:
        raise MetricsError(f"iteration {rec.iteration}: rs+ics bytes {rec.rs_bytes + rec.ics_bytes} "
                           f"!= {log.bytes_per_iteration}")
    log.records.append(rec)


@dataclass
class RunSummary:
    throughput: float
    top1: Optional[float]
    iterations_to_top1: Optional[int]
    time_to_accuracy: List[Tuple[float, float]]
    mean_bst: float = 0.0
    total_samples: int = 0
    final_sim_time: float = 0.0
    iterations: int = 0


def summarize(log: MetricsLog, samples_per_iteration: int) -> RunSummary:
    """Throughput over simulated time, best accuracy, and the accuracy-vs-time curve.

    ``iterations_to_top1`` is the iteration index of the first record that
    reaches the best accuracy.
    """
    if not log.records:
        raise MetricsError("cannot summarize an empty log")
    last = log.records[-1]
    total = len(log.records) * int(samples_per_iteration)
    throughput = total / last.sim_time_end if last.sim_time_end > 0 else float("inf")
    curve = [(r.sim_time_end, r.eval_accuracy) for r in log.records if r.eval_accuracy is not None]
    top1 = None
    at = None
    for r in log.records:
        if r.eval_accuracy is not None and (top1 is None or r.eval_accuracy > top1):
            top1, at = r.eval_accuracy, r.iteration
    return RunSummary(throughput=throughput, top1=top1, iterations_to_top1=at, time_to_accuracy=curve,
                      mean_bst=float(np.mean([r.bst for r in log.records])), total_samples=total,
                      final_sim_time=last.sim_time_end, iterations=len(log.records))


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(int(v))


def log_to_csv_text(log: MetricsLog) -> str:
    lines = [CSV_HEADER]
    for r in log.records:
        lines.append(",".join(_cell(getattr(r, f)) for f in RECORD_FIELDS))
    return "\n".join(lines) + "\n"


def summary_to_dict(s: RunSummary) -> dict:
    d = asdict(s)
    d["time_to_accuracy"] = [list(p) for p in s.time_to_accuracy]
    return d


def _write(path, text: str) -> None:
    try:
        Path(path).write_text(text, encoding="utf-8")
    except OSError as e:
        raise MetricsError(f"cannot write {path}: {e}") from e


def export_csv(obj, path) -> None:
    """Write a :class:`MetricsLog` (one row per iteration) or a :class:`RunSummary` (one row)."""
    if isinstance(obj, MetricsLog):
        _write(path, log_to_csv_text(obj))
        return
    if isinstance(obj, RunSummary):
        cols = ["throughput", "top1", "iterations_to_top1", "mean_bst", "total_samples", "final_sim_time",
                "iterations"]
        row = ",".join(_cell(getattr(obj, c)) for c in cols)
        _write(path, ",".join(cols) + "\n" + row + "\n")
        return
    raise MetricsError(f"cannot export {type(obj).__name__} as CSV")


def export_json(path, log: MetricsLog = None, summary: RunSummary = None, config: dict = None) -> None:
    doc = {}
    if config is not None:
        doc["config"] = config
    if log is not None:
        doc["records"] = [asdict(r) for r in log.records]
    if summary is not None:
        doc["summary"] = summary_to_dict(summary)
    _write(path, json.dumps(doc, indent=2, sort_keys=True) + "\n")


def parse_csv_text(text: str) -> MetricsLog:
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or ",".join(rows[0]) != CSV_HEADER:
        raise MetricsError("CSV header does not match the metrics schema")
    log = MetricsLog()
    for n, row in enumerate(rows[1:], start=2):
        if len(row) != len(RECORD_FIELDS):
            raise MetricsError(f"line {n}: expected {len(RECORD_FIELDS)} fields, got {len(row)}")
        kw = {}
        for name, cell in zip(RECORD_FIELDS, row):
            if cell == "":
                kw[name] = None
            elif name in _INT_FIELDS:
                kw[name] = int(cell)
            else:
                kw[name] = float(cell)
        log.records.append(IterationRecord(**kw))
    return log


def import_csv(path) -> MetricsLog:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise MetricsError(f"cannot read {path}: {e}") from e
    return parse_csv_text(text)


def import_json(path) -> dict:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as e:
        raise MetricsError(f"cannot read {path}: {e}") from e
    out = dict(doc)
    if "records" in doc:
        log = MetricsLog()
        log.records = [IterationRecord(**r) for r in doc["records"]]
        out["records"] = log
    if "summary" in doc:
        s = dict(doc["summary"])
        s["time_to_accuracy"] = [tuple(p) for p in s["time_to_accuracy"]]
        out["summary"] = RunSummary(**s)
    return out


def converged(accuracies: Sequence[float], window: int = 10, min_gain: float = 0.001) -> bool:
    """True once the best accuracy of the last ``window`` epochs beats the earlier best by < ``min_gain``.

    Accuracies are fractions, so 0.001 is a tenth of an accuracy point.
    """
    if len(accuracies) <= window:
        return False
    before = max(accuracies[:-window])
    recent = max(accuracies[-window:])
    return recent - before < min_gain
