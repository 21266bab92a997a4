"""Federated averaging with over-the-air model aggregation.

Clients hold exponentially distributed amounts of data, train a
one-hidden-layer ReLU network locally with minibatch SGD and upload
their model vectors. The server forms the data-size weighted average of
the selected clients' models through one of the AirComp protocols.
"""

from __future__ import annotations

import csv
import logging
import struct
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from . import aircomp
from .aircomp import TruncationParams
from .bayesopt import BoConfig, optimize_truncation
from .channel import RadioSystem, SystemConfig, draw_channel_slots

log = logging.getLogger(__name__)

POLICIES = ("noiseless", "pure", "simple", "adaptive")
FL_HEADER = ("round", "seed", "policy", "accuracy")
IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


# --------------------------------------------------------------------------
# model

@dataclass(frozen=True)
class MlpShape:
    """Input, hidden and output widths of the network."""

    n_in: int
    n_hidden: int
    n_out: int

    @property
    def size(self) -> int:
        return self.n_in * self.n_hidden + self.n_hidden + self.n_hidden * self.n_out + self.n_out


def unpack(v, shape: MlpShape):
    """Split a flat parameter vector into ``(W1, b1, W2, b2)`` views."""
    v = np.asarray(v)
    if v.shape != (shape.size,):
        raise ValueError(f"model vector has shape {v.shape}, expected ({shape.size},)")
    i, h, o = shape.n_in, shape.n_hidden, shape.n_out
    a = i * h
    b = a + h
    c = b + h * o
    return v[:a].reshape(i, h), v[a:b], v[b:c].reshape(h, o), v[c:]


def init_model(shape: MlpShape, rng: np.random.Generator) -> np.ndarray:
    """Glorot-uniform weights, zero biases."""
    v = np.zeros(shape.size)
    w1, _, w2, _ = unpack(v, shape)
    for w in (w1, w2):
        limit = np.sqrt(6.0 / (w.shape[0] + w.shape[1]))
        w[...] = rng.uniform(-limit, limit, size=w.shape)
    return v


def _forward(v, shape, x):
    w1, b1, w2, b2 = unpack(v, shape)
    pre = x @ w1 + b1
    hidden = np.maximum(pre, 0.0)
    return pre, hidden, hidden @ w2 + b2


def _log_softmax(z):
    z = z - z.max(axis=1, keepdims=True)
    return z - np.log(np.sum(np.exp(z), axis=1, keepdims=True))


def loss_and_grad(v, shape: MlpShape, x, y):
    """Mean softmax cross-entropy and its gradient with respect to ``v``."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y)
    if x.ndim != 2 or x.shape[1] != shape.n_in or y.shape != (x.shape[0],):
        raise ValueError(f"data shapes {x.shape}, {y.shape} do not fit {shape}")
    n = x.shape[0]
    pre, hidden, logits = _forward(v, shape, x)
    logp = _log_softmax(logits)
    loss = -np.mean(logp[np.arange(n), y])
    dz = np.exp(logp)
    dz[np.arange(n), y] -= 1.0
    dz /= n
    _, _, w2, _ = unpack(v, shape)
    dh = (dz @ w2.T) * (pre > 0)
    grad = np.concatenate([(x.T @ dh).ravel(), dh.sum(0), (hidden.T @ dz).ravel(), dz.sum(0)])
    return float(loss), grad


def predict(v, shape: MlpShape, x) -> np.ndarray:
    return np.argmax(_forward(v, shape, np.asarray(x, dtype=float))[2], axis=1)


def accuracy(v, shape: MlpShape, x, y) -> float:
    if not np.all(np.isfinite(v)):
        return float(np.mean(np.asarray(y) == 0))  # argmax of NaN logits is class 0
    return float(np.mean(predict(v, shape, x) == np.asarray(y)))


def local_train(v, shape: MlpShape, x, y, lr: float, epochs: int, batch_size: int,
                rng: np.random.Generator) -> np.ndarray:
    """Minibatch SGD over ``epochs`` shuffled passes; returns a new vector."""
    v = np.array(v, dtype=float)
    n = len(y)
    with np.errstate(over="ignore", invalid="ignore"):
        for _ in range(epochs):
            order = rng.permutation(n)
            for start in range(0, n, batch_size):
                idx = order[start:start + batch_size]
                _, grad = loss_and_grad(v, shape, x[idx], y[idx])
                v -= lr * grad
    return v


# --------------------------------------------------------------------------
# data

@dataclass(frozen=True)
class Dataset:
    x: np.ndarray
    y: np.ndarray

    def __len__(self):
        return len(self.y)


def make_blobs(n: int, n_classes: int, spread: float, rng: np.random.Generator,
               radius: float = 3.0) -> Dataset:
    """Isotropic 2-D Gaussian blobs with centres evenly spaced on a circle."""
    angles = 2 * np.pi * np.arange(n_classes) / n_classes
    centres = radius * np.stack([np.cos(angles), np.sin(angles)], axis=1)
    y = rng.integers(0, n_classes, size=n)
    x = centres[y] + spread * rng.standard_normal((n, 2))
    return Dataset(x, y)


def _read_idx(path, magic, ndim):
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise OSError(f"cannot read {path}: {exc}") from exc
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise ValueError(f"{path}: truncated header")
    (found,) = struct.unpack(">I", raw[:4])
    if found != magic:
        raise ValueError(f"{path}: bad magic 0x{found:08x}, expected 0x{magic:08x}")
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    count = int(np.prod(dims))
    if len(raw) - header < count:
        raise ValueError(f"{path}: truncated data ({len(raw) - header} of {count} bytes)")
    return np.frombuffer(raw, dtype=np.uint8, count=count, offset=header).reshape(dims)


def load_idx_dataset(images_path, labels_path) -> Dataset:
    """Read an IDX image/label pair; pixels are scaled to ``[0, 1]``."""
    images = _read_idx(images_path, IDX_IMAGES_MAGIC, 3)
    labels = _read_idx(labels_path, IDX_LABELS_MAGIC, 1)
    if images.shape[0] != labels.shape[0]:
        raise ValueError(f"count mismatch: {images.shape[0]} images, {labels.shape[0]} labels")
    x = images.reshape(images.shape[0], -1).astype(float) / 255.0
    return Dataset(x, labels.astype(np.int64))


# --------------------------------------------------------------------------
# clients and aggregation

def partition_clients(total: int, k_clients: int, rng: np.random.Generator) -> np.ndarray:
    """Client data sizes ``floor(Exp(total / K))``, at least 1."""
    if k_clients < 1:
        raise ValueError("need at least one client")
    sizes = np.floor(rng.exponential(total / k_clients, size=k_clients)).astype(np.int64)
    return np.maximum(sizes, 1)


def assign_client_data(sizes, pool_size: int, rng: np.random.Generator) -> list[np.ndarray]:
    """Index sets drawn from the shared pool; different clients may overlap."""
    return [rng.choice(pool_size, size=int(n), replace=int(n) > pool_size) for n in sizes]


def aggregate_aircomp(models, sizes, policy: str, config: SystemConfig,
                      rng: np.random.Generator, theta: TruncationParams | None = None) -> np.ndarray:
    """Data-size weighted model average through the chosen protocol.

    Every element of a client's model shares the weight ``N_i``, so the
    weight slot carries a single scalar per client.
    """
    models = np.asarray(models, dtype=float)
    sizes = np.asarray(sizes, dtype=float)
    if models.ndim != 2 or sizes.shape != (models.shape[0],):
        raise ValueError(f"models {models.shape} and sizes {sizes.shape} do not match")
    if policy == "noiseless":
        return aircomp.exact_weighted_average(sizes, models, scalar_weights=True)
    if policy == "simple":
        (slot,) = draw_channel_slots(config, rng, n_slots=1)
        return aircomp.simple_average(models, slot, config, rng).estimate
    slots = draw_channel_slots(config, rng, n_slots=2)
    if policy == "pure":
        res = aircomp.pure_weighted_average(sizes, models, slots, config, rng, scalar_weights=True)
    elif policy == "adaptive":
        if theta is None:
            raise ValueError("adaptive policy needs truncation parameters")
        res = aircomp.adaptive_weighted_average(sizes, models, theta, slots, config, rng,
                                                scalar_weights=True)
    else:
        raise ValueError(f"unknown policy {policy!r}; choose from {POLICIES}")
    return res.estimate


# --------------------------------------------------------------------------
# configuration and driver

@dataclass(frozen=True)
class FlConfig:
    k_clients: int = 20
    m_selected: int = 10
    rounds: int = 30
    local_epochs: int = 1
    lr: float = 0.01
    batch_size: int = 32
    hidden: int = 10
    dataset: str = "synthetic"
    n_train: int = 6000
    n_test: int = 2000
    n_classes: int = 4
    blob_spread: float = 1.0
    train_images: str = ""
    train_labels: str = ""
    test_images: str = ""
    test_labels: str = ""
    policies: tuple = ("pure", "simple", "adaptive")
    seeds: tuple = (0,)
    system: RadioSystem = field(default_factory=RadioSystem)
    bo: BoConfig = field(default_factory=BoConfig)

    def __post_init__(self):
        object.__setattr__(self, "policies", tuple(self.policies))
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        if not 1 <= self.m_selected <= self.k_clients:
            raise ValueError("need 1 <= m_selected <= k_clients")
        if self.rounds < 0:
            raise ValueError("rounds must be >= 0")
        if self.local_epochs < 1 or self.batch_size < 1 or self.hidden < 1:
            raise ValueError("local_epochs, batch_size and hidden must be >= 1")
        if self.lr < 0:
            raise ValueError("lr must be >= 0")
        if self.dataset not in ("synthetic", "idx"):
            raise ValueError("dataset must be 'synthetic' or 'idx'")
        if self.dataset == "idx" and not all(
                (self.train_images, self.train_labels, self.test_images, self.test_labels)):
            raise ValueError("idx dataset needs train/test image and label paths")
        bad = [p for p in self.policies if p not in POLICIES]
        if bad or not self.policies:
            raise ValueError(f"policies must be a nonempty subset of {POLICIES}")
        if not self.seeds:
            raise ValueError("seeds must be nonempty")


def fl_config_from_dict(data: dict) -> FlConfig:
    """Build an :class:`FlConfig` from ``[fl]``, ``[system]`` and ``[bo]`` tables."""
    extra = sorted(set(data) - {"fl", "system", "bo"})
    if extra:
        raise ValueError(f"unknown top-level keys: {', '.join(extra)}")
    kwargs = dict(data.get("fl", {}))
    known = {f.name for f in fields(FlConfig)} - {"system", "bo"}
    extra = sorted(set(kwargs) - known)
    if extra:
        raise ValueError(f"unknown keys in [fl]: {', '.join(extra)}")
    for name, cls in (("system", RadioSystem), ("bo", BoConfig)):
        if name in data:
            table = data[name]
            extra = sorted(set(table) - {f.name for f in fields(cls)})
            if extra:
                raise ValueError(f"unknown keys in [{name}]: {', '.join(extra)}")
            kwargs[name] = cls(**table)
    return FlConfig(**kwargs)


@dataclass(frozen=True)
class FlTask:
    shape: MlpShape
    train: Dataset
    test: Dataset


def build_task(cfg: FlConfig, rng: np.random.Generator) -> FlTask:
    if cfg.dataset == "idx":
        train = load_idx_dataset(cfg.train_images, cfg.train_labels)
        test = load_idx_dataset(cfg.test_images, cfg.test_labels)
        n_out = int(max(train.y.max(), test.y.max())) + 1
    else:
        train = make_blobs(cfg.n_train, cfg.n_classes, cfg.blob_spread, rng)
        test = make_blobs(cfg.n_test, cfg.n_classes, cfg.blob_spread, rng)
        n_out = cfg.n_classes
    return FlTask(MlpShape(train.x.shape[1], cfg.hidden, n_out), train, test)


def _train_clients(cfg, task, global_v, clients, client_idx, seed_seqs):
    out = []
    for c, ss in zip(clients, seed_seqs):
        idx = client_idx[c]
        out.append(local_train(global_v, task.shape, task.train.x[idx], task.train.y[idx],
                               cfg.lr, cfg.local_epochs, cfg.batch_size, np.random.default_rng(ss)))
    return np.array(out)


def fl_truncation(cfg: FlConfig, task: FlTask, sizes, client_idx, global_v,
                  system: SystemConfig, seed_seq: np.random.SeedSequence) -> TruncationParams:
    """Tune the truncation bounds from a warm-up round.

    Weights are the realised client sizes; values are the models every
    client trains from ``global_v``, kept as whole rows paired with their
    client's size so resampled clients agree the way real ones do.
    """
    warm_ss, bo_ss = seed_seq.spawn(2)
    clients = np.arange(cfg.k_clients)
    models = _train_clients(cfg, task, global_v, clients, client_idx, warm_ss.spawn(len(clients)))
    return optimize_truncation(cfg.bo, models, np.asarray(sizes, dtype=float), system,
                               np.random.default_rng(bo_ss), scalar_weights=True).theta


def run_fl(cfg: FlConfig, policy: str, seed: int) -> np.ndarray:
    """Test accuracy after each round; entry 0 is the initial model.

    Data, client sizes, client selection, local shuffling and the
    initial model depend only on ``seed``, so policies compare on
    identical training histories up to the aggregation noise.
    """
    if policy not in POLICIES:
        raise ValueError(f"unknown policy {policy!r}")
    root = np.random.SeedSequence([seed])
    data_ss, part_ss, init_ss, select_ss, train_ss, chan_ss, bo_ss = root.spawn(7)
    task = build_task(cfg, np.random.default_rng(data_ss))
    part_rng = np.random.default_rng(part_ss)
    sizes = partition_clients(len(task.train), cfg.k_clients, part_rng)
    client_idx = assign_client_data(sizes, len(task.train), part_rng)
    system = cfg.system.build(task.shape.size, num_nodes=cfg.m_selected)
    v = init_model(task.shape, np.random.default_rng(init_ss))
    theta = None
    if policy == "adaptive":
        theta = fl_truncation(cfg, task, sizes, client_idx, v, system, bo_ss)
        log.info("seed %d: theta=(%.4g, %.4g), sizes in [%d, %d]", seed, theta.delta_min,
                 theta.delta_max, sizes.min(), sizes.max())
    select_rng = np.random.default_rng(select_ss)
    chan_rng = np.random.default_rng(chan_ss)
    acc = [accuracy(v, task.shape, task.test.x, task.test.y)]
    for round_ss in train_ss.spawn(cfg.rounds):
        chosen = np.sort(select_rng.choice(cfg.k_clients, size=cfg.m_selected, replace=False))
        if not np.all(np.isfinite(v)):
            # a non-finite global model cannot recover; keep the streams aligned
            acc.append(acc[-1])
            continue
        models = _train_clients(cfg, task, v, chosen, client_idx, round_ss.spawn(len(chosen)))
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            v = aggregate_aircomp(models, sizes[chosen], policy, system, chan_rng, theta)
        acc.append(accuracy(v, task.shape, task.test.x, task.test.y))
    return np.array(acc)


def run_fl_grid(cfg: FlConfig) -> dict:
    """Accuracy series for every ``(policy, seed)`` pair in the config."""
    return {(p, s): run_fl(cfg, p, s) for p in cfg.policies for s in cfg.seeds}


def emit_fl_csv(results: dict, path) -> Path:
    path = Path(path)
    try:
        with path.open("w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(FL_HEADER)
            for (policy, seed), series in results.items():
                for r, a in enumerate(series):
                    writer.writerow((r, seed, policy, format(float(a), ".17g")))
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc
    return path
