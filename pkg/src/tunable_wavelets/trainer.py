"""Toy classifier, synthetic texture task, and the training/evaluation harness.

The network is a two-block residual stand-in for ResNet18. Each block has a
stride site on its main path and a downsampling site on its shortcut::

    x0 = relu(conv_stem(x))                        32x32, stride 1
    x1 = relu(block1(x0)) + pool1(x0)              16x16
    x2 = relu(block2(x1)) + down2(x1)              8x8
    logits = head(global_avg(x2))

Stride sites (``block1``, ``block2``) are ``stride2-conv`` or
``wavelet_stride_conv``; downsampling sites (``pool1``, ``down2``) are
``maxpool``, ``avgpool`` or ``wavelet``.
"""
from __future__ import annotations

import csv
import io
import json
import math
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import layers
from .errors import InvalidParameterError, ShapeError, TrainingDivergedError
from .filterbank import SUPPORTED_TAPS, pr_loss, pr_loss_grad
from .units import WaveletUnit, unit_backward_cached, unit_forward

POOL_CHOICES = ("maxpool", "avgpool", "wavelet")
STRIDE_CHOICES = ("stride2-conv", "wavelet_stride_conv")
UNIT_MODES = ("orthlatt", "pr-relax")
METRIC_COLUMNS = ("epoch", "fold", "seed", "split", "loss", "accuracy", "pr_loss_sum")
CHECKPOINT_MAGIC = b"TWU1"


POOL_SITES = ("pool1", "down2")
STRIDE_SITES = ("block1", "block2")


@dataclass(frozen=True)
class SitePolicy:
    pool1: str = "maxpool"
    down2: str = "maxpool"
    block1: str = "stride2-conv"
    block2: str = "stride2-conv"
    unit_mode: str = "orthlatt"
    taps: int = 8

    def __post_init__(self):
        for site in POOL_SITES:
            if getattr(self, site) not in POOL_CHOICES:
                raise InvalidParameterError(f"{site} must be one of {POOL_CHOICES}")
        for site in STRIDE_SITES:
            if getattr(self, site) not in STRIDE_CHOICES:
                raise InvalidParameterError(f"{site} must be one of {STRIDE_CHOICES}")
        if self.unit_mode not in UNIT_MODES:
            raise InvalidParameterError(f"unit_mode must be one of {UNIT_MODES}")
        if self.taps not in SUPPORTED_TAPS:
            raise InvalidParameterError(f"taps must be one of {SUPPORTED_TAPS}")

    @classmethod
    def preset(cls, name: str, taps: int = 8) -> "SitePolicy":
        """``maxpool``/``avgpool`` baselines or all-wavelet ``orthlatt``/``pr-relax``."""
        if name in ("maxpool", "avgpool"):
            return cls(name, name, taps=taps)
        if name in UNIT_MODES:
            return cls("wavelet", "wavelet", "wavelet_stride_conv", "wavelet_stride_conv",
                       unit_mode=name, taps=taps)
        raise InvalidParameterError(f"unknown site policy {name!r}")

    @property
    def wavelet_sites(self):
        sites = [s for s in POOL_SITES if getattr(self, s) == "wavelet"]
        sites += [s for s in STRIDE_SITES if getattr(self, s) == "wavelet_stride_conv"]
        return sorted(sites)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.001
    epochs: int = 200
    batch_size: int = 128
    alpha: float = 1.0
    seed: int = 0
    folds: int = 3
    channels: int = 8
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8

    def __post_init__(self):
        if self.learning_rate < 0 or self.epochs < 1 or self.batch_size < 1:
            raise InvalidParameterError("learning rate must be >= 0; epochs and batch size >= 1")
        if self.alpha < 0:
            raise InvalidParameterError("alpha must be non-negative")
        if self.folds < 1 or self.channels < 1:
            raise InvalidParameterError("folds and channels must be positive")


# --------------------------------------------------------------------- data


@dataclass(frozen=True, eq=False)
class SyntheticDataset:
    """Class 0: smooth blobs on noise. Class 1: the same plus a faint oriented grating."""

    images: np.ndarray
    labels: np.ndarray
    seed: int

    def __len__(self):
        return self.labels.size

    def subset(self, idx) -> "SyntheticDataset":
        return SyntheticDataset(self.images[idx], self.labels[idx], self.seed)

    @classmethod
    def generate(cls, n: int, seed: int, size: int = 32, texture_amplitude: float = 0.25,
                 noise: float = 0.3) -> "SyntheticDataset":
        if n < 2 or n % 2:
            raise InvalidParameterError("sample count must be even for a 50/50 split")
        rng = np.random.default_rng(seed)
        yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
        labels = np.repeat([0, 1], n // 2)
        rng.shuffle(labels)
        images = np.empty((n, 1, size, size))
        for i, label in enumerate(labels):
            img = np.zeros((size, size))
            for _ in range(rng.integers(2, 5)):
                cy, cx = rng.uniform(0, size, 2)
                width = rng.uniform(2.5, 6.0)
                img += rng.uniform(0.5, 1.5) * np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2)
                                                      / (2 * width ** 2))
            if label == 1:
                freq = rng.uniform(0.65, 0.9) * math.pi
                angle = rng.uniform(0, math.pi)
                phase = rng.uniform(0, 2 * math.pi)
                wave = np.cos(freq * (xx * math.cos(angle) + yy * math.sin(angle)) + phase)
                img += texture_amplitude * wave
            img += noise * rng.standard_normal((size, size))
            images[i, 0] = img
        return cls(images, labels, seed)


def make_task(seed: int, n_trainval: int = 340, n_test: int = 100, **kwargs):
    """Train/validation pool and a held-out test set drawn with distinct seeds."""
    trainval = SyntheticDataset.generate(n_trainval, seed=2 * seed + 1, **kwargs)
    test = SyntheticDataset.generate(n_test, seed=2 * seed + 2, **kwargs)
    return trainval, test


def kfold_splits(dataset, folds: int = 3, seed: int = 0, val_fraction: float = 0.2):
    """Independent stratified reshuffles, each split 80/20 with 50/50 classes.

    Returns a list of ``(train_idx, val_idx)`` index arrays.
    """
    labels = np.asarray(dataset.labels if hasattr(dataset, "labels") else dataset)
    classes, counts = np.unique(labels, return_counts=True)
    if classes.size != 2 or counts[0] != counts[1]:
        raise InvalidParameterError(f"dataset must be 50/50 over two classes, got {counts}")
    per_class_val = int(round(counts[0] * val_fraction))
    rng = np.random.default_rng(seed)
    splits = []
    for _ in range(folds):
        train, val = [], []
        for cls in classes:
            idx = rng.permutation(np.flatnonzero(labels == cls))
            val.append(idx[:per_class_val])
            train.append(idx[per_class_val:])
        splits.append((np.sort(np.concatenate(train)), np.sort(np.concatenate(val))))
    return splits


# -------------------------------------------------------------------- model


def _he(rng, shape):
    fan_in = int(np.prod(shape[1:]))
    return rng.standard_normal(shape) * math.sqrt(2.0 / fan_in)


class ToyNet:
    """Parameters live in ``self.params`` (ordered); wavelet units share those arrays."""

    def __init__(self, policy: SitePolicy, channels: int = 8, seed: int = 0):
        self.policy = policy
        self.channels = channels
        rng = np.random.default_rng(seed)
        c = channels
        p = {
            "stem.w": _he(rng, (c, 1, 3, 3)), "stem.b": np.zeros(c),
            "block1.w": _he(rng, (c, c, 3, 3)), "block1.b": np.zeros(c),
            "block2.w": _he(rng, (c, c, 3, 3)), "block2.b": np.zeros(c),
        }
        for site in policy.wavelet_sites:
            unit = WaveletUnit.create(c, c, taps=policy.taps, mode=policy.unit_mode)
            p[f"{site}.unit.bank"] = unit.bank_params
            p[f"{site}.unit.weight"] = unit.weight
            p[f"{site}.unit.bias"] = unit.bias
        p["head.w"] = rng.standard_normal((2, c)) * math.sqrt(1.0 / c)
        p["head.b"] = np.zeros(2)
        self.params = p
        self._bind_units()

    def _bind_units(self):
        self.units = {
            site: WaveletUnit(self.policy.unit_mode, self.params[f"{site}.unit.bank"],
                              self.params[f"{site}.unit.weight"],
                              self.params[f"{site}.unit.bias"])
            for site in self.policy.wavelet_sites
        }
        # the optimizer updates self.params in place; units must see those arrays
        for site, unit in self.units.items():
            if unit.bank_params is not self.params[f"{site}.unit.bank"]:
                raise RuntimeError(f"unit at {site} does not share its parameter arrays")

    @property
    def param_count(self) -> int:
        return sum(v.size for v in self.params.values())

    def prrelax_taps(self):
        """Low-pass taps of every pr-relax unit (the terms of the penalty)."""
        if self.policy.unit_mode != "pr-relax":
            return []
        return [self.units[s].bank_params for s in sorted(self.units)]

    def pr_loss_sum(self) -> float:
        return float(sum(pr_loss(u.filters.h0) for u in self.units.values()))

    def _down(self, site, x):
        kind = getattr(self.policy, site)
        if kind == "maxpool":
            out, cache = layers.maxpool_forward(x)
        elif kind == "avgpool":
            out, cache = layers.avgpool_forward(x)
        else:
            out, cache = unit_forward(self.units[site], x)
        return out, (kind, cache)

    def _down_back(self, site, grad, cache, grads):
        kind, inner = cache
        if kind == "maxpool":
            return layers.maxpool_backward(grad, inner)
        if kind == "avgpool":
            return layers.avgpool_backward(grad, inner)
        gx, (gw, gb), gbank = unit_backward_cached(self.units[site], inner, grad)
        grads[f"{site}.unit.weight"] = gw
        grads[f"{site}.unit.bias"] = gb
        grads[f"{site}.unit.bank"] = gbank
        return gx

    def _stride(self, site, x):
        w, b = self.params[f"{site}.w"], self.params[f"{site}.b"]
        if getattr(self.policy, site) == "stride2-conv":
            out, conv_cache = layers.conv2d_forward(x, w, b, stride=2)
            unit_cache = None
        else:
            out, conv_cache = layers.conv2d_forward(x, w, b, stride=1)
            out, unit_cache = self._down(site, out)
        return out, (conv_cache, unit_cache)

    def _stride_back(self, site, grad, cache, grads):
        conv_cache, unit_cache = cache
        if unit_cache is not None:
            grad = self._down_back(site, grad, unit_cache, grads)
        gx, grads[f"{site}.w"], grads[f"{site}.b"] = layers.conv2d_backward(grad, conv_cache)
        return gx

    def _block(self, stride_site, pool_site, x):
        m, c_main = self._stride(stride_site, x)
        m, mask = layers.relu_forward(m)
        short, c_short = self._down(pool_site, x)
        return m + short, (c_main, mask, c_short)

    def _block_back(self, stride_site, pool_site, grad, cache, grads):
        c_main, mask, c_short = cache
        gx = self._down_back(pool_site, grad, c_short, grads)
        return gx + self._stride_back(stride_site, layers.relu_backward(grad, mask), c_main, grads)

    def forward(self, x):
        p = self.params
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 4 or x.shape[1] != 1:
            raise ShapeError(f"ToyNet expects (B, 1, H, W) input, got {x.shape}")
        s, c_stem = layers.conv2d_forward(x, p["stem.w"], p["stem.b"])
        x0, m_stem = layers.relu_forward(s)
        x1, c_b1 = self._block("block1", "pool1", x0)
        x2, c_b2 = self._block("block2", "down2", x1)
        g, c_gap = layers.global_avg_forward(x2)
        logits, c_head = layers.linear_forward(g, p["head.w"], p["head.b"])
        return logits, (c_stem, m_stem, c_b1, c_b2, c_gap, c_head)

    def backward(self, cache, dlogits):
        c_stem, m_stem, c_b1, c_b2, c_gap, c_head = cache
        p = self.params
        grads = {}
        dg, grads["head.w"], grads["head.b"] = layers.linear_backward(dlogits, c_head, p["head.w"])
        dx2 = layers.global_avg_backward(dg, c_gap)
        dx1 = self._block_back("block2", "down2", dx2, c_b2, grads)
        dx0 = self._block_back("block1", "pool1", dx1, c_b1, grads)
        ds = layers.relu_backward(dx0, m_stem)
        _, grads["stem.w"], grads["stem.b"] = layers.conv2d_backward(ds, c_stem, False)
        return grads

    def predict(self, x, batch_size=256):
        out = [self.forward(x[i:i + batch_size])[0] for i in range(0, len(x), batch_size)]
        return np.concatenate(out, axis=0)


# --------------------------------------------------------------- optimizer


class Adam:
    """Adaptive-moment optimizer updating parameter arrays in place."""

    def __init__(self, params, lr=0.001, betas=(0.9, 0.999), eps=1e-8):
        self.params = params
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, grads):
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for name in self.params:  # fixed order keeps runs reproducible
            g = grads.get(name)
            if g is None:
                continue
            m, v = self.m[name], self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            self.params[name] -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


# ------------------------------------------------------------------- losses


def total_loss(logits, labels, h0_list=(), alpha=1.0):
    """Mean cross-entropy plus ``alpha`` times the summed half-band penalties."""
    logits = np.asarray(logits, dtype=np.float64)
    if not np.all(np.isfinite(logits)):
        raise TrainingDivergedError("non-finite logits")
    ce, _ = layers.softmax_cross_entropy(logits, labels)
    penalty = sum(pr_loss(h) for h in h0_list)
    return ce + alpha * penalty


def _loss_and_grads(model, x, y, alpha):
    logits, cache = model.forward(x)
    if not np.all(np.isfinite(logits)):
        raise TrainingDivergedError("non-finite logits")
    ce, dlogits = layers.softmax_cross_entropy(logits, y)
    grads = model.backward(cache, dlogits)
    loss = ce
    if model.policy.unit_mode == "pr-relax":
        for site in sorted(model.units):
            h0 = model.units[site].bank_params
            loss += alpha * pr_loss(h0)
            grads[f"{site}.unit.bank"] = grads[f"{site}.unit.bank"] + alpha * pr_loss_grad(h0)
    return loss, logits, grads


# --------------------------------------------------------------- evaluation


@dataclass(frozen=True)
class Evaluation:
    accuracy: float
    confusion: np.ndarray  # confusion[true, predicted]
    loss: float


def evaluate(model: ToyNet, dataset) -> Evaluation:
    if dataset.images.shape[1:] != (1,) + dataset.images.shape[2:] or dataset.images.ndim != 4:
        raise ShapeError("dataset images must be (N, 1, H, W)")
    logits = model.predict(dataset.images)
    return evaluation_from_logits(logits, dataset.labels)


def evaluation_from_logits(logits, labels) -> Evaluation:
    labels = np.asarray(labels)
    pred = np.argmax(logits, axis=1)
    confusion = np.zeros((2, 2), dtype=np.int64)
    np.add.at(confusion, (labels, pred), 1)
    loss, _ = layers.softmax_cross_entropy(logits, labels)
    return Evaluation(float(np.mean(pred == labels)), confusion, loss)


# ---------------------------------------------------------------- training


@dataclass
class FoldResult:
    fold: int
    model: ToyNet
    val_accuracy: float
    test_accuracy: float | None
    pr_loss_sum: float


@dataclass
class TrainResult:
    config: TrainConfig
    policy: SitePolicy
    folds: list = field(default_factory=list)
    rows: list = field(default_factory=list)

    def test_accuracies(self):
        return [f.test_accuracy for f in self.folds]

    def summary(self, split="test"):
        """Mean, population std and best over folds, as fractions."""
        values = np.array([f.test_accuracy if split == "test" else f.val_accuracy
                           for f in self.folds], dtype=np.float64)
        return {"mean": float(values.mean()), "std": float(values.std()),
                "best": float(values.max())}

    def metrics_csv(self) -> str:
        return format_metrics(self.rows)

    @property
    def best_model(self) -> ToyNet:
        return max(self.folds, key=lambda f: f.val_accuracy).model


def format_metrics(rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(METRIC_COLUMNS)
    for row in rows:
        writer.writerow([row["epoch"], row["fold"], row["seed"], row["split"],
                         repr(float(row["loss"])), repr(float(row["accuracy"])),
                         repr(float(row["pr_loss_sum"]))])
    return buf.getvalue()


def init_model(config: TrainConfig, policy: SitePolicy, fold: int = 0):
    """Model and data-order generator for one fold, both derived from the seed."""
    rng = np.random.default_rng([config.seed, fold])
    return ToyNet(policy, config.channels, seed=int(rng.integers(2 ** 32))), rng


def fit(config: TrainConfig, policy: SitePolicy, train_set, val_set=None, test_set=None,
        fold: int = 0, rows=None, log=None) -> FoldResult:
    """Train a single model with Adam; appends metrics rows to ``rows``."""
    rows = [] if rows is None else rows
    model, rng = init_model(config, policy, fold)
    opt = Adam(model.params, config.learning_rate, config.betas, config.eps)
    n = len(train_set)
    val_acc = float("nan")
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(n)
        loss_total, correct = 0.0, 0
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            try:
                loss, logits, grads = _loss_and_grads(
                    model, train_set.images[idx], train_set.labels[idx], config.alpha)
            except TrainingDivergedError as exc:
                raise TrainingDivergedError(f"training diverged at epoch {epoch}",
                                            epoch=epoch) from exc
            if not math.isfinite(loss):
                raise TrainingDivergedError(f"training diverged at epoch {epoch}", epoch=epoch)
            loss_total += loss * idx.size
            correct += int(np.sum(np.argmax(logits, axis=1) == train_set.labels[idx]))
            opt.step(grads)
        prs = model.pr_loss_sum()
        rows.append(dict(epoch=epoch, fold=fold, seed=config.seed, split="train",
                         loss=loss_total / n, accuracy=correct / n, pr_loss_sum=prs))
        message = f"fold {fold} epoch {epoch}: train loss {loss_total / n:.4f} acc {correct / n:.3f}"
        if val_set is not None:
            val = evaluate(model, val_set)
            val_acc = val.accuracy
            rows.append(dict(epoch=epoch, fold=fold, seed=config.seed, split="val",
                             loss=val.loss, accuracy=val.accuracy, pr_loss_sum=prs))
            message += f"  val acc {val.accuracy:.3f}"
        if log:
            log(message)
    test_acc = None
    if test_set is not None:
        test = evaluate(model, test_set)
        test_acc = test.accuracy
        rows.append(dict(epoch=config.epochs, fold=fold, seed=config.seed, split="test",
                         loss=test.loss, accuracy=test.accuracy, pr_loss_sum=model.pr_loss_sum()))
    return FoldResult(fold, model, val_acc, test_acc, model.pr_loss_sum())


def train(config: TrainConfig, dataset, site_policy: SitePolicy, test_set=None,
          log=None) -> TrainResult:
    """Train one model per stratified fold and collect the metrics trace."""
    result = TrainResult(config, site_policy)
    for fold, (tr, va) in enumerate(kfold_splits(dataset, config.folds, config.seed)):
        result.folds.append(fit(config, site_policy, dataset.subset(tr), dataset.subset(va),
                                test_set, fold, result.rows, log))
    return result


# -------------------------------------------------------------- checkpoints


def save_checkpoint(model: ToyNet, path) -> None:
    """``TWU1`` + u32 header length + JSON header + little-endian f64 blocks."""
    header = {
        "topology": "toynet-2block",
        "channels": model.channels,
        "policy": asdict(model.policy),
        "params": [{"name": k, "shape": list(v.shape)} for k, v in model.params.items()],
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for v in model.params.values():
            fh.write(np.ascontiguousarray(v, dtype="<f8").tobytes())


def load_checkpoint(path) -> ToyNet:
    data = Path(path).read_bytes()
    if data[:4] != CHECKPOINT_MAGIC:
        raise InvalidParameterError(f"{path}: bad checkpoint magic")
    (size,) = struct.unpack_from("<I", data, 4)
    header = json.loads(data[8:8 + size].decode("utf-8"))
    model = ToyNet(SitePolicy(**header["policy"]), header["channels"])
    offset = 8 + size
    names = [entry["name"] for entry in header["params"]]
    if sorted(names) != sorted(model.params):
        raise ShapeError(f"{path}: parameter set does not match the topology")
    for entry in header["params"]:
        name, shape = entry["name"], tuple(entry["shape"])
        if name not in model.params or model.params[name].shape != shape:
            raise ShapeError(f"{path}: parameter {name} {shape} does not fit the topology")
        count = int(np.prod(shape))
        if offset + 8 * count > len(data):
            raise ShapeError(f"{path}: truncated parameter block {name}")
        values = np.frombuffer(data, dtype="<f8", count=count, offset=offset)
        model.params[name][...] = values.reshape(shape)
        offset += 8 * count
    if offset != len(data):
        raise ShapeError(f"{path}: trailing bytes after parameter blocks")
    return model
