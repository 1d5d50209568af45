"""Pre-train / fine-tune driver covering the four regimes: pre-trained,
random-init, and either one fine-tuned on a target task.

Batch order comes from a dedicated stream keyed only by (config.seed, epoch),
so two configs that differ only in their init train on identical batch
sequences; initialization is then the sole difference between runs.
"""

from __future__ import annotations

import hashlib
import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import dataops
from .errors import DivergedRunError, DomainError
from .model import ArchDescriptor, ParamVector, backward, forward, init_random, sgd_step
from .rng import RngStream, derive_stream_id

_STREAM_BATCH = 0x42415443  # "BATC"


@dataclass(frozen=True)
class InitSpec:
    """Random(seed) or FromCheckpoint(path)."""

    kind: str  # "random" | "checkpoint"
    seed: int = 0
    path: str = ""

    def __post_init__(self):
        if self.kind not in ("random", "checkpoint"):
            raise DomainError(f"init kind must be random or checkpoint, got {self.kind!r}")


@dataclass(frozen=True)
class DataSpec:
    """Target task: one or more domains (union), sizes, optional shuffle."""

    domains: tuple[str, ...]
    n_train: int = 2000
    n_test: int = 1000
    seed: int = 0
    shuffle_block: int | str | None = None
    shuffle_seed: int = 0
    shared_permutation: bool = False

    def __post_init__(self):
        object.__setattr__(self, "domains", tuple(self.domains))
        if not self.domains:
            raise DomainError("need at least one domain")


@dataclass(frozen=True)
class TrainConfig:
    arch: ArchDescriptor
    data: DataSpec
    epochs: int
    batch_size: int = 64  # smaller batches destabilize lr 0.05 on tiny nets
    lr_schedule: tuple[tuple[int, float], ...] = ((0, 0.05), (30, 0.005))
    momentum: float = 0.9
    weight_decay: float = 1e-4
    seed: int = 0
    init: InitSpec = field(default_factory=lambda: InitSpec("random"))
    checkpoint_epochs: tuple[int, ...] = ()
    # Without normalization layers, a momentum spike can kill every ReLU at
    # lr 0.05; capping the global gradient norm only clips those spikes.
    clip_grad_norm: float | None = 2.0

    def __post_init__(self):
        object.__setattr__(self, "lr_schedule", tuple((int(e), float(lr)) for e, lr in self.lr_schedule))
        object.__setattr__(self, "checkpoint_epochs", tuple(int(e) for e in self.checkpoint_epochs))
        epochs = [e for e, _ in self.lr_schedule]
        if not epochs or epochs[0] != 0:
            raise DomainError("lr schedule must start at epoch 0")
        if any(b >= a for b, a in zip(epochs[1:], epochs)):
            raise DomainError("lr schedule epochs must be strictly increasing")

    def to_dict(self) -> dict:
        return {
            "arch": json.loads(self.arch.to_json()),
            "data": {
                "domains": list(self.data.domains),
                "n_train": self.data.n_train,
                "n_test": self.data.n_test,
                "seed": self.data.seed,
                "shuffle_block": self.data.shuffle_block,
                "shuffle_seed": self.data.shuffle_seed,
                "shared_permutation": self.data.shared_permutation,
            },
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "lr_schedule": [[e, lr] for e, lr in self.lr_schedule],
            "momentum": self.momentum,
            "weight_decay": self.weight_decay,
            "seed": self.seed,
            "init": {"kind": self.init.kind, "seed": self.init.seed, "path": self.init.path},
            "checkpoint_epochs": list(self.checkpoint_epochs),
            "clip_grad_norm": self.clip_grad_norm,
        }


def config_hash(config: TrainConfig) -> str:
    text = json.dumps(config.to_dict(), sort_keys=True)
    return hashlib.sha256(text.encode()).hexdigest()


@dataclass
class Checkpoint:
    arch: ArchDescriptor
    params: ParamVector
    epoch: int
    metrics: dict
    config_hash: str
    rng_digest: str
    provenance: dict = field(default_factory=dict)
    optimal: bool = False

    def equals(self, other: "Checkpoint") -> bool:
        return (
            self.arch == other.arch
            and self.params.equals(other.params)
            and self.epoch == other.epoch
            and self.metrics == other.metrics
            and self.config_hash == other.config_hash
            and self.rng_digest == other.rng_digest
            and self.provenance == other.provenance
            and self.optimal == other.optimal
        )


@dataclass
class EvalResult:
    loss: float
    accuracy: float
    per_class_accuracy: np.ndarray
    predictions: np.ndarray


@dataclass
class RunRecord:
    rows: list  # per-epoch dicts: epoch, train_loss, train_acc, test_loss, test_acc
    wall_time: float
    optimization_speed: float
    speed_window: int
    best_epoch: int


def lr_at(schedule, epoch: int) -> float:
    lr = schedule[0][1]
    for e, value in schedule:
        if epoch >= e:
            lr = value
    return lr


def make_datasets(data: DataSpec, cache_dir: str | None = None):
    """Build (train, test) datasets per the spec, optionally via the disk cache."""
    from . import persistence  # late import: persistence depends on this module

    def build(split, n):
        parts = []
        for i, name in enumerate(data.domains):
            seed = data.seed if len(data.domains) == 1 else derive_stream_id(data.seed, i)
            spec = dataops.domain_spec(name)
            if cache_dir is not None:
                ds = persistence.cached_generate(spec, split, n, seed, cache_dir)
            else:
                ds = dataops.generate(spec, split, n, seed)
            parts.append(ds)
        ds = parts[0] if len(parts) == 1 else dataops.concat_datasets(parts)
        if data.shuffle_block is not None:
            ds = dataops.apply_shuffle(ds, dataops.ShuffleSpec(data.shuffle_block, data.shuffle_seed, data.shared_permutation))
        return ds

    return build("train", data.n_train), build("test", data.n_test)


def evaluate(params: ParamVector, arch: ArchDescriptor, dataset: dataops.Dataset, batch_size: int = 256) -> EvalResult:
    """Mean cross-entropy, accuracy (argmax, ties to lowest class), per-class accuracy."""
    n = len(dataset)
    if n == 0:
        raise DomainError("cannot evaluate on an empty dataset")
    if int(dataset.labels.max()) >= arch.num_classes:
        raise DomainError("dataset labels exceed arch num_classes")
    preds = np.empty(n, dtype=np.int64)
    loss_sum = 0.0
    for start in range(0, n, batch_size):
        stop = min(start + batch_size, n)
        logits, _ = forward(params, arch, dataset.images[start:stop])
        labels = dataset.labels[start:stop]
        z = logits.astype(np.float64)
        m = z.max(axis=1, keepdims=True)
        lse = m[:, 0] + np.log(np.exp(z - m).sum(axis=1))
        loss_sum += float(np.sum(lse - z[np.arange(stop - start), labels]))
        preds[start:stop] = np.argmax(z, axis=1)
    correct = preds == dataset.labels
    per_class = np.zeros(arch.num_classes, dtype=np.float64)
    for k in range(arch.num_classes):
        mask = dataset.labels == k
        per_class[k] = float(correct[mask].mean()) if mask.any() else 0.0
    return EvalResult(
        loss=loss_sum / n,
        accuracy=float(correct.mean()),
        per_class_accuracy=per_class,
        predictions=preds,
    )


def _resolve_init(config: TrainConfig, init_checkpoint: Checkpoint | None) -> ParamVector:
    if config.init.kind == "random":
        return init_random(config.arch, RngStream(config.init.seed))
    ckpt = init_checkpoint
    if ckpt is None:
        from . import persistence

        ckpt = persistence.load_checkpoint(config.init.path)
    if ckpt.arch != config.arch:
        raise DomainError(
            f"init checkpoint arch {ckpt.arch.to_json()} does not match config arch {config.arch.to_json()}"
        )
    return ckpt.params.copy()


def train(
    config: TrainConfig,
    *,
    init_checkpoint: Checkpoint | None = None,
    cache_dir: str | None = None,
    datasets=None,
) -> tuple[Checkpoint, RunRecord, list[Checkpoint]]:
    """Run one training job; deterministic given the config.

    Returns (final checkpoint, run record, checkpoints saved at
    config.checkpoint_epochs plus the final epoch).
    """
    t0 = time.monotonic()
    train_ds, test_ds = datasets if datasets is not None else make_datasets(config.data, cache_dir)
    if config.batch_size > len(train_ds):
        raise DomainError("batch_size exceeds train set size")
    params = _resolve_init(config, init_checkpoint)
    chash = config_hash(config)
    provenance = {"data": config.to_dict()["data"], "seed": config.seed, "init": config.init.kind}

    buf = None
    rows: list[dict] = []
    saved: list[Checkpoint] = []
    n = len(train_ds)

    def snapshot(epoch: int, metrics: dict, batch_rng_state) -> Checkpoint:
        digest = hashlib.sha256(repr(batch_rng_state).encode()).hexdigest()
        return Checkpoint(
            arch=config.arch,
            params=params.copy(),
            epoch=epoch,
            metrics=dict(metrics),
            config_hash=chash,
            rng_digest=digest,
            provenance=dict(provenance),
        )

    def current_metrics() -> dict:
        tr = evaluate(params, config.arch, train_ds)
        te = evaluate(params, config.arch, test_ds)
        return {
            "train_loss": tr.loss,
            "train_acc": tr.accuracy,
            "test_loss": te.loss,
            "test_acc": te.accuracy,
        }

    want_epoch0 = 0 in config.checkpoint_epochs
    if want_epoch0:
        saved.append(snapshot(0, current_metrics(), ("init",)))

    for epoch in range(config.epochs):
        lr = lr_at(config.lr_schedule, epoch)
        batch_rng = RngStream(config.seed, derive_stream_id(_STREAM_BATCH, epoch))
        order = batch_rng.permutation(n)
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            loss, grad = backward(params, config.arch, train_ds.images[idx], train_ds.labels[idx])
            if not np.isfinite(loss):
                raise DivergedRunError(epoch)
            if config.clip_grad_norm is not None:
                gnorm = float(np.linalg.norm(grad.values.astype(np.float64)))
                if gnorm > config.clip_grad_norm:
                    grad = ParamVector(grad.values * (config.clip_grad_norm / gnorm), grad.index)
            params, buf = sgd_step(params, grad, lr, buf, config.momentum, config.weight_decay)
        metrics = current_metrics()
        rows.append({"epoch": epoch + 1, **metrics})
        done = epoch + 1
        if done in config.checkpoint_epochs and done != config.epochs:
            saved.append(snapshot(done, metrics, batch_rng.state()))

    final_metrics = rows[-1] if rows else {"epoch": 0, **current_metrics()}
    final = snapshot(
        config.epochs,
        {k: v for k, v in final_metrics.items() if k != "epoch"},
        ("final", config.epochs),
    )
    saved.append(final)

    # flag the best-validation checkpoint among the saved ones (ties: earliest)
    best = max(range(len(saved)), key=lambda i: (saved[i].metrics["test_acc"], -saved[i].epoch))
    saved[best].optimal = True

    if rows:
        speeds = [r["train_acc"] for r in rows]
        optimization_speed = float(np.mean(speeds))
        best_epoch = max(range(len(rows)), key=lambda i: (rows[i]["test_acc"], -i)) + 1
    else:
        optimization_speed = 0.0
        best_epoch = 0
    record = RunRecord(
        rows=rows,
        wall_time=time.monotonic() - t0,
        optimization_speed=optimization_speed,
        speed_window=config.epochs,
        best_epoch=best_epoch,
    )
    return final, record, saved


def _sweep_worker(args):
    config, ckpt, cache_dir = args
    final, record, _ = train(config, init_checkpoint=ckpt, cache_dir=cache_dir)
    return {
        "ckpt_epoch": ckpt.epoch,
        "final_test_acc": final.metrics["test_acc"],
        "optimization_speed": record.optimization_speed,
    }


def checkpoint_sweep(
    pretrain_ckpts: list[Checkpoint],
    finetune_config: TrainConfig,
    jobs: int = 1,
    cache_dir: str | None = None,
) -> list[dict]:
    """Fine-tune once per pre-training checkpoint; rows ordered by input."""
    if not pretrain_ckpts:
        raise DomainError("need at least one checkpoint")
    arch = pretrain_ckpts[0].arch
    for ckpt in pretrain_ckpts:
        if ckpt.arch != arch or ckpt.arch != finetune_config.arch:
            raise DomainError("checkpoint arch mismatch in sweep")
    config = replace(finetune_config, init=InitSpec("checkpoint", path=""))
    tasks = [(config, ckpt, cache_dir) for ckpt in pretrain_ckpts]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(_sweep_worker, tasks))
    return [_sweep_worker(t) for t in tasks]
