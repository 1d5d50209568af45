"""Representation and parameter-space comparison between trained models:
linear CKA per module, per-module and whole-network l2 distances, mistake
agreement tables, and the per-class accuracy vs class-size correlation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import stdtr

from .errors import DomainError
from .model import ParamVector, forward
from .rng import RngStream
from .trainer import Checkpoint

CKA_MAX_EXAMPLES = 2048
_STREAM_CKA = 0x434B41  # "CKA"


def linear_cka_flagged(x, y) -> tuple[float, bool]:
    """Linear CKA between activation matrices; flag marks a degenerate input.

    Columns are centered; the statistic is ||Y^T X||_F^2 divided by
    ||X^T X||_F * ||Y^T Y||_F. A centered all-zero input makes it 0/0,
    reported as (0.0, True).
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.ndim != 2 or y.ndim != 2:
        raise DomainError("activations must be 2-D (examples, features)")
    if x.shape[0] != y.shape[0]:
        raise DomainError(f"example counts differ: {x.shape[0]} vs {y.shape[0]}")
    if x.shape[0] < 2:
        raise DomainError("need at least 2 examples")
    xc = x - x.mean(axis=0)
    yc = y - y.mean(axis=0)
    cross = np.linalg.norm(yc.T @ xc) ** 2
    nx = np.linalg.norm(xc.T @ xc)
    ny = np.linalg.norm(yc.T @ yc)
    if nx == 0.0 or ny == 0.0:
        return 0.0, True
    return float(cross / (nx * ny)), False


def linear_cka(x, y) -> float:
    return linear_cka_flagged(x, y)[0]


def param_l2(a: ParamVector, b: ParamVector) -> tuple[dict, float]:
    """Per-module Euclidean distances and the whole-network distance."""
    if not a.same_index(b):
        raise DomainError("parameter vectors have different index tables")
    av = a.values.astype(np.float64)
    bv = b.values.astype(np.float64)
    per_module = {}
    for name in a.module_names():
        span = a.module_slice(name)
        per_module[name] = float(np.linalg.norm(av[span] - bv[span]))
    total = float(np.sqrt(sum(d * d for d in per_module.values())))
    return per_module, total


@dataclass
class MistakeRow:
    group: str  # class label as text, or "overall"
    acc1: float
    acc2: float
    g1: int  # only model 1 correct
    g2: int  # only model 2 correct
    common: int  # both wrong
    r1: float  # model 1's uncommon-mistake ratio: g2 / (g2 + common)
    r2: float  # model 2's uncommon-mistake ratio: g1 / (g1 + common)
    r1_swapped: float  # alternate orientation: g1 / (g1 + common)
    r2_swapped: float
    zero_denominator: bool


@dataclass
class MistakeTable:
    rows: list

    def row(self, group: str) -> MistakeRow:
        for r in self.rows:
            if r.group == group:
                return r
        raise DomainError(f"no row for group {group!r}")


def mistake_ratios(g1: int, g2: int, common: int) -> tuple[float, float, bool]:
    """(r1, r2, zero_denominator): a model's mistakes are its g + common."""
    if g1 < 0 or g2 < 0 or common < 0:
        raise DomainError("counts must be non-negative")
    flagged = False
    if g2 + common > 0:
        r1 = g2 / (g2 + common)
    else:
        r1, flagged = 0.0, True
    if g1 + common > 0:
        r2 = g1 / (g1 + common)
    else:
        r2, flagged = 0.0, True
    return r1, r2, flagged


def _mistake_row(group, p1, p2, labels) -> MistakeRow:
    c1 = p1 == labels
    c2 = p2 == labels
    g1 = int(np.sum(c1 & ~c2))
    g2 = int(np.sum(~c1 & c2))
    common = int(np.sum(~c1 & ~c2))
    r1, r2, flagged = mistake_ratios(g1, g2, common)
    r1s, r2s, _ = mistake_ratios(g2, g1, common)
    return MistakeRow(
        group=group,
        acc1=float(c1.mean()),
        acc2=float(c2.mean()),
        g1=g1,
        g2=g2,
        common=common,
        r1=r1,
        r2=r2,
        r1_swapped=r1s,
        r2_swapped=r2s,
        zero_denominator=flagged,
    )


def mistake_table(preds1, preds2, labels, group_by: str = "overall") -> MistakeTable:
    """Common/uncommon mistake counts and ratios, overall or per class."""
    p1 = np.asarray(preds1)
    p2 = np.asarray(preds2)
    labels = np.asarray(labels)
    if not (len(p1) == len(p2) == len(labels)):
        raise DomainError("prediction and label lengths differ")
    if group_by not in ("overall", "class"):
        raise DomainError(f"group_by must be overall or class, got {group_by!r}")
    if group_by == "overall":
        return MistakeTable([_mistake_row("overall", p1, p2, labels)])
    rows = []
    for k in np.unique(labels):
        mask = labels == k
        rows.append(_mistake_row(str(int(k)), p1[mask], p2[mask], labels[mask]))
    return MistakeTable(rows)


def class_size_correlation(per_class_acc, class_sizes) -> tuple[float, float]:
    """Pearson r between per-class accuracy and class size, with the
    two-sided p-value from the t distribution on n-2 dof."""
    x = np.asarray(per_class_acc, dtype=np.float64)
    y = np.asarray(class_sizes, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise DomainError("inputs must be 1-D and equally long")
    n = x.size
    if n < 3:
        raise DomainError("need at least 3 points")
    xd = x - x.mean()
    yd = y - y.mean()
    sx = float(xd @ xd)
    sy = float(yd @ yd)
    if sx == 0.0 or sy == 0.0:
        raise DomainError("zero variance input: correlation undefined")
    r = float((xd @ yd) / np.sqrt(sx * sy))
    r = max(-1.0, min(1.0, r))
    if abs(r) == 1.0:
        return r, 0.0
    t = r * np.sqrt((n - 2) / (1.0 - r * r))
    p = 2.0 * stdtr(n - 2, -abs(t))
    return r, float(p)


@dataclass
class SimilarityReport:
    per_module_cka: dict  # module -> (value, degenerate flag)
    per_module_l2: dict
    total_l2: float
    distance_to_init_a: dict | None
    distance_to_init_b: dict | None


def _module_activations(ckpt: Checkpoint, images, batch_size: int = 256) -> dict:
    acts: dict[str, list] = {}
    for start in range(0, len(images), batch_size):
        _, batch_acts = forward(ckpt.params, ckpt.arch, images[start : start + batch_size])
        for name, a in batch_acts:
            acts.setdefault(name, []).append(a.reshape(a.shape[0], -1))
    return {name: np.concatenate(parts) for name, parts in acts.items()}


def similarity_report(
    ckpt_a: Checkpoint,
    ckpt_b: Checkpoint,
    dataset,
    seed: int = 0,
    init_a: Checkpoint | None = None,
    init_b: Checkpoint | None = None,
) -> SimilarityReport:
    """Per-module CKA on dataset activations plus parameter-space distances.

    Activations are subsampled to at most CKA_MAX_EXAMPLES rows with a fixed
    stream so reports are reproducible.
    """
    if ckpt_a.arch != ckpt_b.arch:
        raise DomainError("checkpoint architectures differ")
    images = dataset.images
    if len(images) > CKA_MAX_EXAMPLES:
        rng = RngStream(seed, _STREAM_CKA)
        idx = np.sort(rng.permutation(len(images))[:CKA_MAX_EXAMPLES])
        images = images[idx]
    acts_a = _module_activations(ckpt_a, images)
    acts_b = _module_activations(ckpt_b, images)
    per_module_cka = {name: linear_cka_flagged(acts_a[name], acts_b[name]) for name in acts_a}
    per_module_l2, total = param_l2(ckpt_a.params, ckpt_b.params)
    dist_a = param_l2(ckpt_a.params, init_a.params)[0] if init_a is not None else None
    dist_b = param_l2(ckpt_b.params, init_b.params)[0] if init_b is not None else None
    return SimilarityReport(
        per_module_cka=per_module_cka,
        per_module_l2=per_module_l2,
        total_l2=total,
        distance_to_init_a=dist_a,
        distance_to_init_b=dist_b,
    )
