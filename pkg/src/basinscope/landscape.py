"""Linear interpolation and extrapolation between trained parameter vectors,
and the barrier statistics measured along those paths.

The barrier of a metric series is its worst deviation from the linear
baseline between the endpoints, clamped at zero: a curve that never rises
above the endpoint chord has no barrier.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataops import Dataset
from .errors import DomainError
from .model import ArchDescriptor, ParamVector
from .trainer import Checkpoint, evaluate

METRIC_KEYS = ("train_loss", "train_acc", "test_loss", "test_acc")


@dataclass
class BarrierCurve:
    lambdas: np.ndarray
    # metrics[dataset_name][metric_key] -> array over lambdas
    metrics: dict
    endpoint_a: str
    endpoint_b: str

    def series(self, dataset: str | None, key: str) -> np.ndarray:
        name = dataset if dataset is not None else next(iter(self.metrics))
        return np.asarray(self.metrics[name][key])


def interpolate(theta: ParamVector, theta_tilde: ParamVector, lam: float) -> ParamVector:
    """(1 - lam) * theta + lam * theta_tilde; lam outside [0, 1] extrapolates."""
    if not theta.same_index(theta_tilde):
        raise DomainError("parameter vectors have different index tables")
    a = theta.values.astype(np.float64)
    b = theta_tilde.values.astype(np.float64)
    mixed = (1.0 - lam) * a + lam * b
    return ParamVector(mixed.astype(theta.values.dtype), theta.index)


def lambda_grid(lo: float = 0.0, hi: float = 1.0, points: int = 25) -> np.ndarray:
    if points < 2:
        raise DomainError("need at least two lambda points")
    return np.linspace(lo, hi, points)


def barrier_curve_from_fn(lambdas, point_fn, eval_fns: dict) -> BarrierCurve:
    """Generic curve builder: point_fn(lam) -> point, eval_fns name -> fn(point) -> metric dict.

    This is the hook the tests drive with closed-form scalar losses.
    """
    lambdas = np.asarray(lambdas, dtype=np.float64)
    if np.any(np.diff(lambdas) <= 0):
        raise DomainError("lambda grid must be strictly increasing")
    metrics = {name: {k: [] for k in METRIC_KEYS} for name in eval_fns}
    for lam in lambdas:
        point = point_fn(float(lam))
        for name, fn in eval_fns.items():
            row = fn(point)
            for k in METRIC_KEYS:
                metrics[name][k].append(float(row[k]))
    for name in metrics:
        for k in METRIC_KEYS:
            metrics[name][k] = np.array(metrics[name][k])
    return BarrierCurve(lambdas=lambdas, metrics=metrics, endpoint_a="a", endpoint_b="b")


def _eval_pair(params: ParamVector, arch: ArchDescriptor, train_ds: Dataset, test_ds: Dataset) -> dict:
    tr = evaluate(params, arch, train_ds)
    te = evaluate(params, arch, test_ds)
    return {
        "train_loss": tr.loss,
        "train_acc": tr.accuracy,
        "test_loss": te.loss,
        "test_acc": te.accuracy,
    }


def barrier_curve(
    ckpt_a: Checkpoint,
    ckpt_b: Checkpoint,
    lambdas,
    eval_datasets: dict,
    label_a: str = "a",
    label_b: str = "b",
) -> BarrierCurve:
    """Evaluate every interpolated model on every named (train, test) dataset pair.

    eval_datasets: name -> (train Dataset, test Dataset); names may be other
    domains than the endpoints' training domain (cross-domain evaluation).
    """
    if ckpt_a.arch != ckpt_b.arch:
        raise DomainError("checkpoint architectures differ")
    if not eval_datasets:
        raise DomainError("need at least one evaluation dataset")
    arch = ckpt_a.arch

    def point_fn(lam):
        return interpolate(ckpt_a.params, ckpt_b.params, lam)

    eval_fns = {
        name: (lambda p, pair=pair: _eval_pair(p, arch, pair[0], pair[1]))
        for name, pair in eval_datasets.items()
    }
    curve = barrier_curve_from_fn(lambdas, point_fn, eval_fns)
    curve.endpoint_a = label_a
    curve.endpoint_b = label_b
    return curve


def barrier_height(curve: BarrierCurve, metric: str = "loss", dataset: str | None = None, split: str = "test") -> float:
    """Worst rise above (loss) or drop below (accuracy) the endpoint chord on [0, 1]."""
    if metric not in ("loss", "accuracy"):
        raise DomainError(f"metric must be loss or accuracy, got {metric!r}")
    key = f"{split}_{'loss' if metric == 'loss' else 'acc'}"
    lam = curve.lambdas
    inside = (lam >= 0.0) & (lam <= 1.0)
    if not inside.any() or lam[inside].min() > 0.0 or lam[inside].max() < 1.0:
        raise DomainError("curve must cover [0, 1]")
    series = curve.series(dataset, key)[inside]
    lam = lam[inside]
    baseline = (1.0 - lam) * series[0] + lam * series[-1]
    if metric == "loss":
        gap = series - baseline
    else:
        gap = baseline - series
    return max(0.0, float(gap.max()))


def curve_rows(curve: BarrierCurve) -> list[tuple]:
    """Rows for CSV emission: (lambda, dataset, 4 metric columns)."""
    rows = []
    for name in curve.metrics:
        for i, lam in enumerate(curve.lambdas):
            rows.append(
                (
                    float(lam),
                    name,
                    float(curve.metrics[name]["train_loss"][i]),
                    float(curve.metrics[name]["train_acc"][i]),
                    float(curve.metrics[name]["test_loss"][i]),
                    float(curve.metrics[name]["test_acc"][i]),
                )
            )
    return rows
