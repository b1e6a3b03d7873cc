"""Experiment configuration: defaults, JSON config files, flag overrides, validation.

Config files are JSON objects whose keys are the names in :data:`DEFAULTS`
(the CLI flags with ``-`` replaced by ``_``).  Unknown keys are rejected.
Flags override file values, and every field's origin is kept in
``provenance`` so the echoed config shows what was overridden.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import ConfigError

SYNC_MODELS = ("bsp", "asp", "ssp", "r2sp", "osp")

# purpose ids for seed splitting; changing one purpose's stream leaves the others alone
SEED_PURPOSES = {"data": 0, "init": 1, "shuffle": 2, "jitter": 3, "split": 4}


@dataclass
class ExperimentConfig:
    sync: str = "osp"
    workers: int = 8
    # model
    model_kind: str = "mlp"
    model_widths: list = field(default_factory=lambda: [16, 64, 64, 4])
    activation: str = "relu"
    loss: str = "softmax-cross-entropy"
    quadratic_layers: list = field(default_factory=lambda: [1000] * 5)
    bytes_per_element: int = 4
    # data
    dataset: str = "synthetic"
    dataset_path: Optional[str] = None
    n_samples: int = 2560
    test_fraction: float = 0.2
    separation: float = 3.0
    noise: float = 1.0
    # network
    bandwidth_gbps: float = 1.0
    latency_us: float = 100.0
    loss_rate: float = 0.0
    # compute and server
    tc_ms: float = 10.0
    stragglers: list = field(default_factory=list)
    jitter: float = 0.0
    agg_delay_ms: float = 0.0
    gib_calc_delay_ms: float = 0.0
    gib_push_negligible: bool = True
    # protocol options
    ssp_staleness: int = 3
    chunk_period_ms: Optional[float] = None
    eq5_literal: bool = False
    osp_budget_bytes: Optional[int] = None
    tc_mode: str = "simulated"
    # training
    learning_rate: float = 0.05
    batch: int = 16
    epochs: int = 20
    max_iterations: Optional[int] = None
    early_stop: bool = True
    convergence_window: int = 10
    convergence_min_gain: float = 0.001
    seed: int = 0
    # output
    out: Optional[str] = None
    trace: bool = True
    provenance: dict = field(default_factory=dict, compare=False)

    def to_dict(self, with_provenance: bool = True) -> dict:
        d = asdict(self)
        if not with_provenance:
            d.pop("provenance")
        return d

    @property
    def bandwidth_bytes(self) -> float:
        return self.bandwidth_gbps * 1e9 / 8.0

    def seed_for(self, purpose: str) -> int:
        return derive_seed(self.seed, purpose)


DEFAULTS = {f.name: f for f in fields(ExperimentConfig) if f.name != "provenance"}

_INT = {"workers", "bytes_per_element", "n_samples", "ssp_staleness", "osp_budget_bytes", "batch", "epochs",
        "max_iterations", "convergence_window", "seed"}
_FLOAT = {"test_fraction", "separation", "noise", "bandwidth_gbps", "latency_us", "loss_rate", "tc_ms", "jitter",
          "agg_delay_ms", "gib_calc_delay_ms", "chunk_period_ms", "learning_rate", "convergence_min_gain"}
_BOOL = {"gib_push_negligible", "eq5_literal", "early_stop", "trace"}
_STR = {"sync", "model_kind", "activation", "loss", "dataset", "dataset_path", "tc_mode", "out"}
_INT_LIST = {"model_widths", "quadratic_layers"}
_FLOAT_LIST = {"stragglers"}
_NULLABLE = {"dataset_path", "chunk_period_ms", "osp_budget_bytes", "max_iterations", "out"}


def derive_seed(root: int, purpose: str) -> int:
    """Per-purpose seed: first word of ``SeedSequence([root, purpose_id])``."""
    if purpose not in SEED_PURPOSES:
        raise ValueError(f"unknown seed purpose {purpose!r}")
    return int(np.random.SeedSequence([int(root), SEED_PURPOSES[purpose]]).generate_state(1)[0])


def _coerce(key: str, value):
    if value is None:
        if key in _NULLABLE:
            return None
        raise ConfigError(key, "must not be null")
    if key in _BOOL:
        if not isinstance(value, bool):
            raise ConfigError(key, f"expected a boolean, got {value!r}")
        return value
    if key in _INT:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(key, f"expected an integer, got {value!r}")
        return value
    if key in _FLOAT:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(key, f"expected a number, got {value!r}")
        return float(value)
    if key in _STR:
        if not isinstance(value, str):
            raise ConfigError(key, f"expected a string, got {value!r}")
        return value
    if key in _INT_LIST or key in _FLOAT_LIST:
        if not isinstance(value, (list, tuple)):
            raise ConfigError(key, f"expected a list, got {value!r}")
        out = []
        for v in value:
            if isinstance(v, bool) or not isinstance(v, (int, float)) or (key in _INT_LIST and not isinstance(v, int)):
                raise ConfigError(key, f"bad list element {v!r}")
            out.append(v if key in _INT_LIST else float(v))
        return out
    raise ConfigError(key, "unknown key")


def validate(cfg: ExperimentConfig) -> ExperimentConfig:
    def need(ok, key, msg):
        if not ok:
            raise ConfigError(key, msg)

    need(cfg.sync in SYNC_MODELS, "sync", f"must be one of {', '.join(SYNC_MODELS)}")
    need(cfg.workers >= 1, "workers", "must be >= 1")
    need(cfg.model_kind in ("mlp", "quadratic"), "model_kind", "must be mlp or quadratic")
    need(len(cfg.model_widths) >= 2 and all(w >= 1 for w in cfg.model_widths), "model_widths",
         "need at least two positive widths")
    need(cfg.activation in ("relu", "tanh"), "activation", "must be relu or tanh")
    need(cfg.loss in ("softmax-cross-entropy", "mse"), "loss", "must be softmax-cross-entropy or mse")
    need(len(cfg.quadratic_layers) >= 1 and all(c >= 1 for c in cfg.quadratic_layers), "quadratic_layers",
         "need positive layer sizes")
    need(cfg.bytes_per_element >= 1, "bytes_per_element", "must be >= 1")
    need(cfg.dataset in ("synthetic", "csv"), "dataset", "must be synthetic or csv")
    need(cfg.dataset != "csv" or cfg.dataset_path, "dataset_path", "required when dataset is csv")
    need(cfg.n_samples >= cfg.workers, "n_samples", "must be at least the worker count")
    need(0.0 < cfg.test_fraction < 1.0, "test_fraction", "must lie in (0, 1)")
    need(cfg.separation > 0, "separation", "must be positive")
    need(cfg.noise >= 0, "noise", "must be non-negative")
    need(cfg.bandwidth_gbps > 0, "bandwidth_gbps", "must be positive")
    need(cfg.latency_us >= 0, "latency_us", "must be non-negative")
    need(0.0 <= cfg.loss_rate < 1.0, "loss_rate", "must lie in [0, 1)")
    need(cfg.tc_ms >= 0, "tc_ms", "must be non-negative")
    need(all(np.isfinite(m) and m >= 1.0 for m in cfg.stragglers), "stragglers", "multipliers must be finite and >= 1")
    need(len(cfg.stragglers) <= cfg.workers, "stragglers", "more multipliers than workers")
    need(cfg.jitter >= 0, "jitter", "must be non-negative")
    need(cfg.agg_delay_ms >= 0, "agg_delay_ms", "must be non-negative")
    need(cfg.gib_calc_delay_ms >= 0, "gib_calc_delay_ms", "must be non-negative")
    need(cfg.ssp_staleness >= 0, "ssp_staleness", "must be >= 0")
    need(cfg.chunk_period_ms is None or cfg.chunk_period_ms > 0, "chunk_period_ms", "must be positive")
    need(cfg.osp_budget_bytes is None or cfg.osp_budget_bytes >= 0, "osp_budget_bytes", "must be >= 0")
    need(cfg.tc_mode in ("simulated", "measured"), "tc_mode", "must be simulated or measured")
    need(cfg.learning_rate > 0, "learning_rate", "must be positive")
    need(cfg.batch >= 1, "batch", "must be >= 1")
    need(cfg.epochs >= 1, "epochs", "must be >= 1")
    need(cfg.max_iterations is None or cfg.max_iterations >= 1, "max_iterations", "must be >= 1")
    need(cfg.convergence_window >= 1, "convergence_window", "must be >= 1")
    need(cfg.convergence_min_gain >= 0, "convergence_min_gain", "must be non-negative")
    need(cfg.seed >= 0, "seed", "must be non-negative")
    return cfg


def load_config_file(path) -> dict:
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as e:
        raise ConfigError("config", f"cannot read {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise ConfigError("config", f"{path} is not valid JSON: {e}") from e
    if not isinstance(raw, dict):
        raise ConfigError("config", f"{path} must hold a JSON object")
    raw.pop("provenance", None)
    return raw


def parse_config(path=None, flags: dict = None) -> ExperimentConfig:
    """Defaults, then the file at ``path``, then ``flags`` (``None`` values mean "not given")."""
    values = {}
    prov = {k: "default" for k in DEFAULTS}
    if path is not None:
        for k, v in load_config_file(path).items():
            if k not in DEFAULTS:
                raise ConfigError(k, "unknown key")
            values[k] = _coerce(k, v)
            prov[k] = "file"
    for k, v in (flags or {}).items():
        if v is None:
            continue
        if k not in DEFAULTS:
            raise ConfigError(k, "unknown key")
        values[k] = _coerce(k, v)
        prov[k] = "flag (overrides file)" if prov[k] == "file" else "flag"
    cfg = ExperimentConfig(**values)
    cfg.provenance = prov
    return validate(cfg)


def config_json(cfg: ExperimentConfig) -> str:
    return json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n"
