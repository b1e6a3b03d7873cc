"""Single runs and protocol-comparison sweeps built from an :class:`ExperimentConfig`."""
from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from .cluster import Cluster
from .config import SYNC_MODELS, ExperimentConfig, config_json
from .errors import ConfigError, NumericOverflowError, OspLabError
from .learner import MlpSpec, MlpTask, QuadraticTask, load_csv, synth_dataset
from .metrics import MetricsLog, RunSummary, converged, export_csv, summarize, summary_to_dict
from .netsim import ComputeProfile, ServerDelayProfile
from .tuning import NetworkParams

log = logging.getLogger(__name__)


def build_task(cfg: ExperimentConfig):
    if cfg.model_kind == "quadratic":
        return QuadraticTask(cfg.quadratic_layers, cfg.n_samples, cfg.seed_for("data"), cfg.bytes_per_element)
    spec = MlpSpec(tuple(cfg.model_widths), cfg.activation, cfg.loss)
    if cfg.dataset == "csv":
        ds = load_csv(cfg.dataset_path)
        if ds.d != spec.layer_widths[0]:
            raise ConfigError("model_widths", f"input width {spec.layer_widths[0]} != dataset features {ds.d}")
    else:
        ds = synth_dataset(cfg.seed_for("data"), cfg.n_samples, spec.layer_widths[0], spec.layer_widths[-1],
                           cfg.separation, cfg.noise)
    n_test = max(1, int(round(ds.n * cfg.test_fraction)))
    if ds.n - n_test < cfg.workers:
        raise ConfigError("test_fraction", "leaves fewer training samples than workers")
    perm = np.random.default_rng(cfg.seed_for("split")).permutation(ds.n)
    return MlpTask(spec, ds.subset(np.sort(perm[n_test:])), ds.subset(np.sort(perm[:n_test])),
                   cfg.bytes_per_element)


def build_cluster(cfg: ExperimentConfig, **extra) -> Cluster:
    task = build_task(cfg)
    net = NetworkParams(cfg.bandwidth_bytes, cfg.latency_us * 1e-6, cfg.loss_rate)
    compute = ComputeProfile(cfg.tc_ms * 1e-3, tuple(cfg.stragglers), cfg.jitter, cfg.seed_for("jitter"))
    delays = ServerDelayProfile(cfg.agg_delay_ms * 1e-3, cfg.gib_calc_delay_ms * 1e-3, cfg.gib_push_negligible)
    stop = None
    if cfg.early_stop:
        window, gain = cfg.convergence_window, cfg.convergence_min_gain
        stop = lambda accs: converged(accs, window, gain)  # noqa: E731
    return Cluster(task, cfg.sync, cfg.workers, batch_size=cfg.batch, learning_rate=cfg.learning_rate,
                   epochs=cfg.epochs, net=net, compute=compute, delays=delays, init_seed=cfg.seed_for("init"),
                   shuffle_seed=cfg.seed_for("shuffle"), split_seed=cfg.seed_for("split"),
                   max_iterations=cfg.max_iterations, ssp_staleness=cfg.ssp_staleness,
                   chunk_period=None if cfg.chunk_period_ms is None else cfg.chunk_period_ms * 1e-3,
                   eq5_literal=cfg.eq5_literal, osp_budget_bytes=cfg.osp_budget_bytes, tc_mode=cfg.tc_mode,
                   record_trace=cfg.trace, stop_rule=stop, **extra)


@dataclass
class RunResult:
    config: ExperimentConfig
    log: MetricsLog
    summary: RunSummary
    cluster: Cluster


def write_outputs(out_dir, cfg: ExperimentConfig, mlog: MetricsLog, summary: Optional[RunSummary],
                  trace: Optional[List[str]] = None, status: str = "ok", error: str = None) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(config_json(cfg), encoding="utf-8")
    export_csv(mlog, out / "metrics.csv")
    doc = {"config": cfg.to_dict(), "status": status, "records": [asdict(r) for r in mlog.records],
           "summary": None if summary is None else summary_to_dict(summary)}
    if error is not None:
        doc["error"] = error
    (out / "run.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    if trace is not None:
        (out / "trace.tsv").write_text("".join(line + "\n" for line in trace), encoding="utf-8")


def run_experiment(cfg: ExperimentConfig, out_dir=None, **extra) -> RunResult:
    """Run one configuration to its epoch cap or convergence; write outputs if a directory is given."""
    out_dir = out_dir if out_dir is not None else cfg.out
    cluster = build_cluster(cfg, **extra)
    try:
        mlog = cluster.run()
    except NumericOverflowError as e:
        if out_dir is not None:
            write_outputs(out_dir, cfg, cluster.log, None, cluster.trace if cfg.trace else None, "failed", str(e))
        raise
    summary = summarize(mlog, cluster.samples_per_iteration)
    if out_dir is not None:
        write_outputs(out_dir, cfg, mlog, summary, cluster.trace if cfg.trace else None)
    return RunResult(cfg, mlog, summary, cluster)


@dataclass
class ComparisonRow:
    model: str
    status: str = "ok"
    throughput: Optional[float] = None
    top1: Optional[float] = None
    iterations_to_top1: Optional[int] = None
    mean_bst: Optional[float] = None
    relative_throughput: Optional[float] = None
    error: str = ""


@dataclass
class ComparisonTable:
    rows: List[ComparisonRow] = field(default_factory=list)

    def row(self, model: str) -> ComparisonRow:
        for r in self.rows:
            if r.model == model:
                return r
        raise KeyError(model)


def run_comparison(cfg: ExperimentConfig, models: Sequence[str] = SYNC_MODELS, out_dir=None) -> ComparisonTable:
    """One run per sync model with everything else (seed included) shared."""
    out_dir = out_dir if out_dir is not None else cfg.out
    table = ComparisonTable()
    for m in models:
        if m not in SYNC_MODELS:
            raise ConfigError("sync", f"unknown model {m!r}")
        run_cfg = ExperimentConfig(**{**cfg.to_dict(with_provenance=False), "sync": m})
        run_cfg.provenance = dict(cfg.provenance, sync="comparison sweep")
        sub = None if out_dir is None else Path(out_dir) / m
        try:
            res = run_experiment(run_cfg, out_dir=sub)
        except OspLabError as e:
            log.warning("%s run failed: %s", m, e)
            table.rows.append(ComparisonRow(m, "failed", error=str(e)))
            continue
        s = res.summary
        table.rows.append(ComparisonRow(m, "ok", s.throughput, s.top1, s.iterations_to_top1, s.mean_bst))
    base = next((r for r in table.rows if r.model == "bsp" and r.status == "ok"), None)
    if base is not None:
        for r in table.rows:
            if r.status == "ok":
                r.relative_throughput = r.throughput / base.throughput
    if out_dir is not None:
        emit_report(table, out_dir)
    return table


REPORT_COLUMNS = ("model", "status", "throughput", "top1", "iterations_to_top1", "mean_bst",
                  "relative_throughput")


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def report_csv_text(table: ComparisonTable) -> str:
    lines = [",".join(REPORT_COLUMNS)]
    for r in table.rows:
        lines.append(",".join(_fmt(getattr(r, c)) for c in REPORT_COLUMNS))
    return "\n".join(lines) + "\n"


def report_text(table: ComparisonTable) -> str:
    def show(c, v):
        if v is None:
            return "-"
        if c in ("throughput",):
            return f"{v:.1f}"
        if c in ("top1", "relative_throughput"):
            return f"{v:.4f}"
        if c == "mean_bst":
            return f"{v:.6f}"
        return str(v)

    cells = [list(REPORT_COLUMNS)] + [[show(c, getattr(r, c)) for c in REPORT_COLUMNS] for r in table.rows]
    widths = [max(len(row[i]) for row in cells) for i in range(len(REPORT_COLUMNS))]
    lines = ["  ".join(s.ljust(w) for s, w in zip(row, widths)).rstrip() for row in cells]
    for r in table.rows:
        if r.error:
            lines.append(f"{r.model}: {r.error}")
    return "\n".join(lines) + "\n"


def emit_report(table: ComparisonTable, out_dir) -> None:
    if not table.rows:
        raise ValueError("empty comparison table")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "comparison.csv").write_text(report_csv_text(table), encoding="utf-8")
    (out / "comparison.txt").write_text(report_text(table), encoding="utf-8")
