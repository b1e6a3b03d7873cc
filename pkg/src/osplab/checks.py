"""Acceptance checks: each returns a :class:`CheckResult` with the measured value.

These back both ``osplab check`` and the acceptance test module, so the two
can never disagree about what a criterion means.
"""
from __future__ import annotations

import filecmp
import tempfile
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Dict, List, Optional

import numpy as np

from .config import ExperimentConfig, parse_config
from .importance import Gib, gib_decode, gib_encode
from .learner import MlpSpec, finite_diff_grad, forward_backward, init_params, relative_error, synth_dataset
from .netsim import closed_form_bsp_bst, closed_form_osp_bst
from .protocol.core import aggregate
from .runner import build_cluster, run_experiment
from .tuning import NetworkParams, compute_umax

# desk-scale timing setup: 25 MB model as five 5 MB layers, 10 Gbps PS links
TIMING_LAYERS = [1000] * 5
TIMING_BPE = 5000
TIMING_MODEL_BYTES = 25_000_000
TIMING_BANDWIDTH_GBPS = 10.0
TIMING_RS_FRACTION = 0.2


@dataclass
class CheckResult:
    number: int
    name: str
    passed: bool
    detail: str
    seconds: float = 0.0
    limit_seconds: Optional[float] = None

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"[{status}] criterion {self.number}: {self.name} ({self.seconds:.2f}s) {self.detail}"


def _timed(number: int, name: str, limit: float, fn: Callable[[], tuple]) -> CheckResult:
    t0 = time.perf_counter()
    ok, detail = fn()
    dt = time.perf_counter() - t0
    within = dt < limit
    if not within:
        detail += f"; runtime {dt:.1f}s exceeds {limit:.0f}s"
    return CheckResult(number, name, bool(ok and within), detail, dt, limit)


def _cfg(**kw) -> ExperimentConfig:
    kw.setdefault("trace", False)
    kw.setdefault("early_stop", False)
    return parse_config(flags=kw)


def timing_config(sync: str, **kw) -> ExperimentConfig:
    base = dict(sync=sync, workers=8, model_kind="quadratic", quadratic_layers=TIMING_LAYERS,
                bytes_per_element=TIMING_BPE, n_samples=1024, batch=8, bandwidth_gbps=TIMING_BANDWIDTH_GBPS,
                latency_us=0.0, tc_ms=250.0, learning_rate=0.1, epochs=100,
                osp_budget_bytes=int(round((1 - TIMING_RS_FRACTION) * TIMING_MODEL_BYTES)))
    base.update(kw)
    return _cfg(**base)


# --- 1 --------------------------------------------------------------------

def degeneration(iterations: int = 50, seed: int = 0):
    runs = {}
    for sync in ("bsp", "osp"):
        cfg = _cfg(sync=sync, workers=8, max_iterations=iterations, seed=seed, osp_budget_bytes=0, jitter=0.2)
        c = build_cluster(cfg, track_checksums=True)
        c.run()
        runs[sync] = c
    b, o = runs["bsp"], runs["osp"]
    its = sorted(b.global_checksums)
    mismatches = [i for i in its if b.global_checksums[i] != o.global_checksums.get(i)
                  or b.worker_checksums[i] != o.worker_checksums.get(i)]
    ok = len(its) == iterations and not mismatches and set(b.worker_checksums[its[-1]]) == set(range(8))
    return ok, f"{len(its)} iterations compared, {len(mismatches)} checksum mismatches"


# --- 2 --------------------------------------------------------------------

def conservation(iterations: int = 100, seed: int = 0):
    probe = build_cluster(_cfg(sync="osp", max_iterations=1))
    budget = int(0.5 * probe.partition.model_bytes)
    cfg = _cfg(sync="osp", workers=8, max_iterations=iterations, seed=seed, osp_budget_bytes=budget, jitter=0.3,
               stragglers=[1.0, 1.5])
    c = build_cluster(cfg, check_conservation=True)
    c.run()
    ics = sum(r.ics_bytes for r in c.log.records)
    expected = iterations * 8
    ok = not c.conservation_failures and c.conservation_checks == expected and ics > 0
    return ok, (f"{c.conservation_checks}/{expected} worker settle points exact, "
                f"{len(c.conservation_failures)} failures, {ics} ICS bytes")


# --- 3 --------------------------------------------------------------------

def gradient_oracle(instances: int = 10, seed: int = 0):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for k in range(instances):
        depth = int(rng.integers(1, 4))
        widths = tuple(int(w) for w in rng.integers(2, 7, size=depth + 1))
        act = ("relu", "tanh")[k % 2]
        loss = ("softmax-cross-entropy", "mse")[(k // 2) % 2]
        classes = widths[-1] if loss == "softmax-cross-entropy" else max(2, widths[-1])
        spec = MlpSpec(widths, act, loss)
        ds = synth_dataset(int(rng.integers(1 << 30)), 12, widths[0], classes, 2.0)
        # random biases as well as weights: zero biases behind a dead ReLU layer put pre-activations
        # exactly on the kink, where central differences measure a one-sided slope
        p = init_params(spec, int(rng.integers(1 << 30)))
        p.values[:] = rng.standard_normal(p.values.shape[0])
        batch = np.arange(ds.n)
        _, g = forward_backward(spec, p, ds, batch)
        fd = finite_diff_grad(spec, p, ds, batch, eps=1e-4)
        worst = max(worst, relative_error(g.values, fd.values))
    return worst < 1e-4, f"max relative error {worst:.3e} over {instances} instances (< 1e-4)"


# --- 4 --------------------------------------------------------------------

def aggregation_oracle(trials: int = 50, seed: int = 0):
    rng = np.random.default_rng(seed)
    bad = 0
    for _ in range(trials):
        n = int(rng.integers(1, 9))
        layers = sorted(rng.choice(10, size=int(rng.integers(1, 5)), replace=False).tolist())
        sizes = {l: int(rng.integers(1, 6)) for l in layers}
        payloads = {w: {l: rng.standard_normal(sizes[l]) * 10 ** rng.uniform(-3, 3) for l in layers}
                    for w in range(n)}
        weights = {w: float(rng.uniform(0.01, 5.0)) for w in range(n)}
        got = aggregate(payloads, weights)
        total = 0.0
        for w in range(n):
            total += weights[w]
        for l in layers:
            for e in range(sizes[l]):
                acc = weights[0] * float(payloads[0][l][e])
                for w in range(1, n):
                    acc += weights[w] * float(payloads[w][l][e])
                if got[l][e] != acc / total:
                    bad += 1
    return bad == 0, f"{trials} random cases, {bad} elements differ from the brute-force sum"


# --- 5 --------------------------------------------------------------------

def timing_closed_form(iterations: int = 12, latency_us: float = 100.0, agg_ms: float = 1.0):
    b = TIMING_BANDWIDTH_GBPS * 1e9 / 8
    lat, agg = latency_us * 1e-6, agg_ms * 1e-3
    want_bsp = closed_form_bsp_bst(8, TIMING_MODEL_BYTES, b, lat, agg)
    want_osp = closed_form_osp_bst(8, TIMING_MODEL_BYTES, TIMING_RS_FRACTION, b, lat, agg)
    out = {}
    for sync in ("bsp", "osp"):
        cfg = timing_config(sync, max_iterations=iterations, latency_us=latency_us, agg_delay_ms=agg_ms)
        out[sync] = [r.bst for r in run_experiment(cfg).log.records]
    # OSP's first iteration runs without a GIB and is BSP-shaped
    err_b = max(abs(x / want_bsp - 1) for x in out["bsp"])
    err_o = max(abs(x / want_osp - 1) for x in out["osp"][1:])
    err_o0 = abs(out["osp"][0] / want_bsp - 1)
    ok = err_b < 0.01 and err_o < 0.01 and err_o0 < 0.01
    return ok, (f"BSP BST {np.mean(out['bsp']):.6f}s vs {want_bsp:.6f}s (max err {err_b:.2e}); "
                f"OSP BST {np.mean(out['osp'][1:]):.6f}s vs {want_osp:.6f}s (max err {err_o:.2e})")


# --- 6 --------------------------------------------------------------------

def throughput_reproduction(iterations: int = 50):
    b = TIMING_BANDWIDTH_GBPS * 1e9 / 8
    t_c = 0.25
    it_bsp = t_c + closed_form_bsp_bst(8, TIMING_MODEL_BYTES, b, 0.0)
    it_osp = t_c + closed_form_osp_bst(8, TIMING_MODEL_BYTES, TIMING_RS_FRACTION, b, 0.0)
    want = it_bsp / it_osp
    thr = {}
    for sync in ("bsp", "osp"):
        thr[sync] = run_experiment(timing_config(sync, max_iterations=iterations)).summary.throughput
    ratio = thr["osp"] / thr["bsp"]
    ok = ratio >= 1.5 and abs(ratio / want - 1) <= 0.05
    return ok, (f"OSP/BSP throughput {ratio:.4f}, closed form {want:.4f} "
                f"({it_bsp:.3f}s vs {it_osp:.3f}s per iteration), deviation {ratio / want - 1:+.2%}")


# --- 7 --------------------------------------------------------------------

def accuracy_preservation(seeds=(0, 1, 2, 3, 4), epochs: int = 20):
    top = {"bsp": [], "osp": [], "asp": []}
    for s in seeds:
        for sync in top:
            cfg = _cfg(sync=sync, workers=8, model_widths=[16, 64, 64, 4], seed=s, epochs=epochs, jitter=0.2)
            top[sync].append(run_experiment(cfg).summary.top1)
    bsp, osp, asp = (float(np.mean(top[k])) for k in ("bsp", "osp", "asp"))
    gap = abs(osp - bsp) * 100
    return gap <= 1.0, (f"mean top-1 BSP {bsp:.4f}, OSP {osp:.4f} (gap {gap:.2f} points, bound 1.0), "
                        f"ASP {asp:.4f} (unbounded)")


# --- 8 --------------------------------------------------------------------

def tuning_schedule(epochs: int = 12):
    cfg = _cfg(sync="osp", workers=8, model_kind="quadratic", quadratic_layers=[1000] * 5, n_samples=512,
               batch=8, learning_rate=100.0, epochs=epochs)
    res = run_experiment(cfg)
    c = res.cluster
    net = NetworkParams(cfg.bandwidth_bytes, cfg.latency_us * 1e-6, cfg.loss_rate)
    model = c.partition.model_bytes
    bound = min(compute_umax(net, cfg.tc_ms * 1e-3, cfg.workers, model), int(0.8 * model))
    losses = [h[1] for h in c.budget.history]
    monotone_loss = all(b < a for a, b in zip(losses, losses[1:]))
    ipe = c.iters_per_epoch
    per_epoch = [[r.sgu_budget_bytes for r in res.log.records[e * ipe:(e + 1) * ipe]]
                 for e in range(len(res.log.records) // ipe)]
    budgets = [b for ep in per_epoch for b in ep]
    nondecreasing = all(b >= a for a, b in zip(budgets, budgets[1:]))
    zero_first = all(b == 0 for b in per_epoch[0])
    capped = max(budgets) <= bound
    grows = max(budgets) > 0
    ok = monotone_loss and nondecreasing and zero_first and capped and grows
    return ok, (f"epoch losses decreasing={monotone_loss}; budgets non-decreasing={nondecreasing}, "
                f"zero in epoch 1={zero_first}, max {max(budgets)} <= bound {bound}={capped}")


# --- 9 --------------------------------------------------------------------

def gib_wire_bound(seed: int = 0):
    rng = np.random.default_rng(seed)
    size_1000 = len(gib_encode(Gib(frozenset(range(0, 1000, 3)), 7), 1000))
    bad = 0
    for n in range(1, 1001):
        ics = frozenset(np.flatnonzero(rng.random(n) < 0.5).tolist())
        g = Gib(ics, int(rng.integers(0, 2 ** 32)))
        back, count = gib_decode(gib_encode(g, n))
        if back != g or count != n:
            bad += 1
    ok = size_1000 <= 1024 and bad == 0
    return ok, f"1000-layer GIB is {size_1000} bytes (<= 1024); {bad} round-trip failures over 1..1000 layers"


# --- 10 -------------------------------------------------------------------

def determinism(iterations: int = 60):
    cases = ["osp", "r2sp", "ssp"]
    diffs = []
    with tempfile.TemporaryDirectory() as tmp:
        for sync in cases:
            for rep in ("a", "b"):
                cfg = _cfg(sync=sync, workers=8, max_iterations=iterations, jitter=0.2, trace=True,
                           stragglers=[1.0, 1.0, 2.0])
                run_experiment(cfg, out_dir=Path(tmp) / sync / rep)
            for name in ("metrics.csv", "run.json", "trace.tsv", "config.json"):
                a, b = Path(tmp) / sync / "a" / name, Path(tmp) / sync / "b" / name
                if not filecmp.cmp(a, b, shallow=False):
                    diffs.append(f"{sync}/{name}")
    return not diffs, f"{len(cases)} models run twice, differing files: {diffs or 'none'}"


CRITERIA: Dict[int, tuple] = {
    1: ("degeneration equivalence", 10, degeneration),
    2: ("gradient conservation", 30, conservation),
    3: ("gradient oracle", 10, gradient_oracle),
    4: ("aggregation oracle", 1, aggregation_oracle),
    5: ("timing closed form", 5, timing_closed_form),
    6: ("throughput reproduction", 10, throughput_reproduction),
    7: ("accuracy preservation", 300, accuracy_preservation),
    8: ("tuning schedule", 30, tuning_schedule),
    9: ("GIB wire bound", 1, gib_wire_bound),
    10: ("determinism", 30, determinism),
}


def run_check(number: int) -> CheckResult:
    name, limit, fn = CRITERIA[number]
    return _timed(number, name, limit, fn)


def run_checks(numbers=None) -> List[CheckResult]:
    return [run_check(n) for n in (numbers or sorted(CRITERIA))]
