"""Small MLP learner with analytic backprop, used as the training substrate.

Parameters live in a flat ``LayeredVector``: for each dense layer the weight
matrix (fan_in x fan_out, row-major) is one partition layer and its bias is the
next one, so widths ``[2, 3, 2]`` give layer counts ``[6, 3, 6, 2]``.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import DatasetError, NumericOverflowError, ShapeError
from .params import LayeredVector, LayerPartition, make_partition

ACTIVATIONS = ("relu", "tanh")
LOSSES = ("softmax-cross-entropy", "mse")


@dataclass(frozen=True)
class MlpSpec:
    layer_widths: tuple
    activation: str = "relu"
    loss: str = "softmax-cross-entropy"

    def __post_init__(self):
        object.__setattr__(self, "layer_widths", tuple(int(w) for w in self.layer_widths))
        if len(self.layer_widths) < 2:
            raise ValueError("an MLP needs at least input and output widths")
        if any(w <= 0 for w in self.layer_widths):
            raise ValueError(f"widths must be positive: {self.layer_widths}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {ACTIVATIONS}")
        if self.loss not in LOSSES:
            raise ValueError(f"loss must be one of {LOSSES}")

    @property
    def layer_counts(self) -> list:
        counts = []
        for fan_in, fan_out in zip(self.layer_widths[:-1], self.layer_widths[1:]):
            counts += [fan_in * fan_out, fan_out]
        return counts

    def partition(self, bytes_per_element: int = 4) -> LayerPartition:
        return make_partition(self.layer_counts, bytes_per_element)


@dataclass
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    classes: int = field(default=0)

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2 or self.features.shape[0] == 0:
            raise DatasetError("dataset must be a non-empty n x d matrix")
        if self.labels.shape != (self.features.shape[0],):
            raise DatasetError("labels must have one entry per row")
        if self.labels.min() < 0:
            raise DatasetError("labels must be non-negative")
        if not self.classes:
            self.classes = int(self.labels.max()) + 1
        if self.labels.max() >= self.classes:
            raise DatasetError(f"label {self.labels.max()} outside [0, {self.classes})")

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=np.int64)
        return Dataset(self.features[idx], self.labels[idx], self.classes)


def synth_dataset(seed: int, n: int, d: int, classes: int, separation: float, noise: float = 1.0) -> Dataset:
    """Gaussian blobs, one unit-variance blob per class.

    Centres sit at pairwise distance exactly ``separation``: scaled orthonormal
    directions when ``classes <= d``, otherwise evenly spaced on a random line.
    """
    if n <= 0 or d <= 0 or classes <= 0:
        raise ValueError("n, d and classes must be positive")
    rng = np.random.default_rng(seed)
    if classes <= d:
        q, _ = np.linalg.qr(rng.standard_normal((d, d)))
        centres = q[:, :classes].T * (separation / np.sqrt(2.0))
    else:
        u = rng.standard_normal(d)
        u /= np.linalg.norm(u)
        centres = np.arange(classes)[:, None] * separation * u[None, :]
    labels = np.arange(n) % classes
    rng.shuffle(labels)
    features = centres[labels] + noise * rng.standard_normal((n, d))
    return Dataset(features, labels, classes)


def load_csv(path) -> Dataset:
    """Read ``d`` feature columns followed by an integer label column.

    A first row whose fields are all non-numeric is taken as a header.
    """
    path = Path(path)
    rows = []
    width = None
    with path.open(newline="", encoding="utf-8") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or all(not c.strip() for c in row):
                continue
            if lineno == 1 and not any(_is_number(c) for c in row):
                continue
            if len(row) < 2:
                raise DatasetError("need at least one feature and a label", lineno)
            if width is None:
                width = len(row)
            elif len(row) != width:
                raise DatasetError(f"expected {width} fields, got {len(row)}", lineno)
            try:
                feats = [float(c) for c in row[:-1]]
            except ValueError:
                raise DatasetError(f"non-numeric feature in {row[:-1]!r}", lineno) from None
            try:
                label = int(row[-1])
            except ValueError:
                raise DatasetError(f"label {row[-1]!r} is not an integer", lineno) from None
            rows.append((feats, label))
    if not rows:
        raise DatasetError(f"{path} contains no data rows")
    features = np.array([r[0] for r in rows], dtype=np.float64)
    labels = np.array([r[1] for r in rows], dtype=np.int64)
    return Dataset(features, labels)


def save_csv(ds: Dataset, path, header: bool = True) -> None:
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if header:
            w.writerow([f"x{j}" for j in range(ds.d)] + ["label"])
        for x, y in zip(ds.features, ds.labels):
            w.writerow([repr(float(v)) for v in x] + [int(y)])


def _is_number(s: str) -> bool:
    try:
        float(s)
    except ValueError:
        return False
    return True


def shuffle_epoch(n: int, seed: int, epoch: int, worker_id: int = 0) -> np.ndarray:
    if n <= 0:
        raise ValueError("n must be positive")
    rng = np.random.default_rng([int(seed), int(epoch), int(worker_id)])
    return rng.permutation(n)


def init_params(spec: MlpSpec, seed: int, bytes_per_element: int = 4) -> LayeredVector:
    part = spec.partition(bytes_per_element)
    rng = np.random.default_rng(seed)
    values = np.zeros(part.total_count)
    widths = spec.layer_widths
    for i, (fan_in, fan_out) in enumerate(zip(widths[:-1], widths[1:])):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        values[part.layer_slice(2 * i)] = rng.uniform(-bound, bound, fan_in * fan_out)
    return LayeredVector(values, part)


def _unpack(spec: MlpSpec, params: LayeredVector):
    if params.partition.counts != spec.layer_counts:
        raise ShapeError("parameters do not match the MLP spec")
    widths = spec.layer_widths
    mats = []
    for i, (fan_in, fan_out) in enumerate(zip(widths[:-1], widths[1:])):
        w = params.layer(2 * i).reshape(fan_in, fan_out)
        b = params.layer(2 * i + 1)
        mats.append((w, b))
    return mats


def _act(kind, z):
    return np.maximum(z, 0.0) if kind == "relu" else np.tanh(z)


def _act_grad(kind, z, a):
    return (z > 0.0).astype(np.float64) if kind == "relu" else 1.0 - a * a


def _targets(spec: MlpSpec, y: np.ndarray) -> np.ndarray:
    out = spec.layer_widths[-1]
    if out == 1:
        return y.astype(np.float64)[:, None]
    t = np.zeros((y.shape[0], out))
    t[np.arange(y.shape[0]), y] = 1.0
    return t


def _forward(spec, mats, x):
    acts, pres = [x], []
    a = x
    last = len(mats) - 1
    for i, (w, b) in enumerate(mats):
        z = a @ w + b
        pres.append(z)
        a = z if i == last else _act(spec.activation, z)
        acts.append(a)
    return acts, pres


def _loss_and_dout(spec, out, y):
    bsz = out.shape[0]
    if spec.loss == "softmax-cross-entropy":
        shifted = out - out.max(axis=1, keepdims=True)
        logz = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
        logp = shifted - logz
        loss = -logp[np.arange(bsz), y].mean()
        dout = np.exp(logp)
        dout[np.arange(bsz), y] -= 1.0
        return loss, dout / bsz
    diff = out - _targets(spec, y)
    return (diff * diff).sum(axis=1).mean(), 2.0 * diff / bsz


def _batch_xy(dataset: Dataset, batch):
    idx = np.asarray(batch, dtype=np.int64)
    if idx.size == 0:
        raise ValueError("empty batch")
    return dataset.features[idx], dataset.labels[idx]


def loss_value(spec: MlpSpec, params: LayeredVector, dataset: Dataset, batch) -> float:
    x, y = _batch_xy(dataset, batch)
    with np.errstate(all="ignore"):
        acts, _ = _forward(spec, _unpack(spec, params), x)
        loss, _ = _loss_and_dout(spec, acts[-1], y)
    if not np.isfinite(loss):
        raise NumericOverflowError("non-finite loss")
    return float(loss)


def forward_backward(spec: MlpSpec, params: LayeredVector, dataset: Dataset, batch):
    """Mean loss over ``batch`` and its gradient with respect to every parameter."""
    x, y = _batch_xy(dataset, batch)
    mats = _unpack(spec, params)
    grad = np.empty(params.partition.total_count)
    part = params.partition
    with np.errstate(all="ignore"):
        acts, pres = _forward(spec, mats, x)
        loss, dz = _loss_and_dout(spec, acts[-1], y)
        for i in range(len(mats) - 1, -1, -1):
            w, _ = mats[i]
            grad[part.layer_slice(2 * i)] = (acts[i].T @ dz).ravel()
            grad[part.layer_slice(2 * i + 1)] = dz.sum(axis=0)
            if i:
                dz = (dz @ w.T) * _act_grad(spec.activation, pres[i - 1], acts[i])
    if not np.isfinite(loss) or not np.all(np.isfinite(grad)):
        raise NumericOverflowError("non-finite value during forward/backward")
    return float(loss), LayeredVector(grad, part, check_finite=False)


def finite_diff_grad(spec: MlpSpec, params: LayeredVector, dataset: Dataset, batch, eps: float = 1e-4) -> LayeredVector:
    if eps <= 0:
        raise ValueError("eps must be positive")
    base = params.values
    grad = np.empty_like(base)
    probe = params.copy()
    for k in range(base.shape[0]):
        orig = base[k]
        probe.values[k] = orig + eps
        up = loss_value(spec, probe, dataset, batch)
        probe.values[k] = orig - eps
        down = loss_value(spec, probe, dataset, batch)
        probe.values[k] = orig
        grad[k] = (up - down) / (2.0 * eps)
    return LayeredVector(grad, params.partition, check_finite=False)


def lr_at_epoch(initial_lr: float, epoch: int, halve_every: int = 10) -> float:
    """Step schedule; ``epoch`` is 0-based, so epochs 10..19 run at half rate."""
    return initial_lr * 0.5 ** (int(epoch) // halve_every)


def sgd_delta(grad: LayeredVector, learning_rate: float) -> LayeredVector:
    if learning_rate <= 0:
        raise ValueError("learning rate must be positive")
    return LayeredVector(-learning_rate * grad.values, grad.partition, check_finite=False)


def predict(spec: MlpSpec, params: LayeredVector, features: np.ndarray) -> np.ndarray:
    with np.errstate(all="ignore"):
        acts, _ = _forward(spec, _unpack(spec, params), np.asarray(features, dtype=np.float64))
    # np.argmax returns the first maximum, i.e. the lowest class id on ties
    return np.argmax(acts[-1], axis=1) if acts[-1].shape[1] > 1 else (acts[-1][:, 0] > 0.5).astype(np.int64)


def evaluate(spec: MlpSpec, params: LayeredVector, dataset: Dataset) -> float:
    return float(np.mean(predict(spec, params, dataset.features) == dataset.labels))


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    """Norm-wise relative error ``|a-b| / max(|a|, |b|)``; 0 when both vanish."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = max(np.linalg.norm(a), np.linalg.norm(b))
    return 0.0 if denom == 0.0 else float(np.linalg.norm(a - b) / denom)


class MlpTask:
    """Binds an MLP spec to a training set so protocols can ask for gradients."""

    def __init__(self, spec: MlpSpec, train: Dataset, test: Optional[Dataset] = None, bytes_per_element: int = 4):
        self.spec = spec
        self.train = train
        self.test = test
        self.partition = spec.partition(bytes_per_element)

    def init_params(self, seed: int) -> LayeredVector:
        return init_params(self.spec, seed, self.partition.bytes_per_element)

    def gradient(self, params: LayeredVector, batch) -> tuple:
        return forward_backward(self.spec, params, self.train, batch)

    def evaluate(self, params: LayeredVector) -> Optional[float]:
        if self.test is None:
            return None
        return evaluate(self.spec, params, self.test)


class QuadraticTask:
    """Cheap stand-in workload for timing studies: ``0.5 * mean((p - t)^2)``.

    Only the layer sizes matter to the network model, so this lets large
    byte volumes flow through the protocols without a heavy forward pass.
    The batch selects a deterministic per-sample perturbation of the target.
    """

    def __init__(self, layer_counts: Sequence[int], n_samples: int = 1024, seed: int = 0, bytes_per_element: int = 4):
        self.partition = make_partition(layer_counts, bytes_per_element)
        rng = np.random.default_rng(seed)
        self.target = rng.standard_normal(self.partition.total_count)
        self.sample_shift = rng.standard_normal(n_samples) * 0.01
        self.n_samples = n_samples
        self.test = None

    def init_params(self, seed: int) -> LayeredVector:
        return LayeredVector(np.zeros(self.partition.total_count), self.partition, check_finite=False)

    def gradient(self, params: LayeredVector, batch) -> tuple:
        shift = float(self.sample_shift[np.asarray(batch)].mean())
        diff = params.values - self.target - shift
        loss = 0.5 * float(np.mean(diff * diff))
        return loss, LayeredVector(diff / diff.shape[0], self.partition, check_finite=False)

    def evaluate(self, params: LayeredVector) -> Optional[float]:
        return None
