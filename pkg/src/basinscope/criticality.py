"""Module criticality: how cheaply a module's weights can be moved back
toward initialization under Gaussian noise while the network keeps its
training performance.

A criticality map sweeps (alpha, sigma): alpha positions the module on a
path from its initial to its trained value (straight line, or the polyline
through training checkpoints), sigma scales the added noise. Every other
module stays at its trained value. The criticality score is the smallest
alpha^2 * dist^2 / sigma^2 over cells whose mean train metric stays within
epsilon.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError
from .model import ParamVector
from .rng import RngStream, gaussian
from .trainer import Checkpoint, evaluate

NOISE_MODES = ("current_norm", "path_norm", "raw")


def default_alpha_grid() -> np.ndarray:
    return np.linspace(0.0, 1.0, 21)


def default_sigma_grid() -> np.ndarray:
    return np.logspace(-3, 0, 16)


@dataclass
class CriticalityConfig:
    module_name: str
    epsilon: float
    path: str = "direct"  # "direct" | "optimization"
    endpoint: str = "final"  # "final" | "optimal"
    alpha_grid: np.ndarray = field(default_factory=default_alpha_grid)
    sigma_grid: np.ndarray = field(default_factory=default_sigma_grid)
    noise_samples: int = 20
    noise_mode: str = "current_norm"
    metric: str = "error"  # "error" | "xent"

    def __post_init__(self):
        self.alpha_grid = np.asarray(self.alpha_grid, dtype=np.float64)
        self.sigma_grid = np.asarray(self.sigma_grid, dtype=np.float64)
        if self.alpha_grid.size == 0 or self.sigma_grid.size == 0:
            raise DomainError("grids must be non-empty")
        if np.any(np.diff(self.alpha_grid) <= 0) or np.any(np.diff(self.sigma_grid) <= 0):
            raise DomainError("grids must be sorted strictly ascending")
        if self.epsilon <= 0:
            raise DomainError("epsilon must be positive")
        if self.path not in ("direct", "optimization"):
            raise DomainError(f"unknown path {self.path!r}")
        if self.endpoint not in ("final", "optimal"):
            raise DomainError(f"unknown endpoint {self.endpoint!r}")
        if self.noise_mode not in NOISE_MODES:
            raise DomainError(f"unknown noise mode {self.noise_mode!r}")
        if self.metric not in ("error", "xent"):
            raise DomainError(f"unknown metric {self.metric!r}")


@dataclass
class CriticalityMap:
    module_name: str
    alpha_grid: np.ndarray
    sigma_grid: np.ndarray
    train: np.ndarray  # (alpha, sigma) mean train metric over noise samples
    test: np.ndarray
    feasible: np.ndarray  # train <= epsilon
    epsilon: float
    path_distance: float  # ||theta_E - theta_0||
    mu: float  # +inf when no feasible cell
    argmin: tuple[float, float] | None

    @property
    def gap(self) -> np.ndarray:
        return self.test - self.train

    @property
    def distance_axis(self) -> np.ndarray:
        return self.alpha_grid * self.path_distance

    def mu_at(self, epsilon: float) -> tuple[float, tuple | None]:
        """Re-minimize over cells feasible at a different epsilon (no re-sampling)."""
        return _minimize(self.alpha_grid, self.sigma_grid, self.train, epsilon, self.path_distance)


def _minimize(alphas, sigmas, train_grid, epsilon, path_distance):
    best = math.inf
    arg = None
    for i, a in enumerate(alphas):
        for j, s in enumerate(sigmas):
            if train_grid[i, j] <= epsilon:
                value = (a * a) * (path_distance * path_distance) / (s * s)
                if value < best:
                    best = value
                    arg = (float(a), float(s))
    return best, arg


def _module_stream_key(name: str) -> int:
    return int.from_bytes(hashlib.sha256(name.encode()).digest()[:8], "little")


def _polyline_point(points: list[np.ndarray], alpha: float) -> np.ndarray:
    """Point at arclength fraction alpha along the checkpoint polyline."""
    lengths = [float(np.linalg.norm(b - a)) for a, b in zip(points, points[1:])]
    total = sum(lengths)
    if total == 0.0:
        return points[0].copy()
    target = alpha * total
    walked = 0.0
    for seg_start, seg_len in zip(range(len(lengths)), lengths):
        if walked + seg_len >= target or seg_start == len(lengths) - 1:
            t = 0.0 if seg_len == 0 else (target - walked) / seg_len
            t = min(max(t, 0.0), 1.0)
            return points[seg_start] + t * (points[seg_start + 1] - points[seg_start])
        walked += seg_len
    return points[-1].copy()


def criticality_grid(
    theta0: np.ndarray,
    theta_end: np.ndarray,
    eval_fn,
    cfg: CriticalityConfig,
    rng: RngStream,
    path_points: list[np.ndarray] | None = None,
) -> CriticalityMap:
    """Generic grid engine over one module's flat vector.

    eval_fn(vector) -> (train_metric, test_metric). The network wrapper
    substitutes the vector into the module's slice; the synthetic closed-form
    tests drive this directly.
    """
    theta0 = np.asarray(theta0, dtype=np.float64)
    theta_end = np.asarray(theta_end, dtype=np.float64)
    p = theta0.size
    path_distance = float(np.linalg.norm(theta_end - theta0))
    if cfg.path == "optimization":
        if not path_points or len(path_points) < 2:
            raise DomainError("optimization path needs at least two checkpoints")
        points = [np.asarray(q, dtype=np.float64) for q in path_points]
    else:
        points = None

    na, ns = cfg.alpha_grid.size, cfg.sigma_grid.size
    train_grid = np.zeros((na, ns))
    test_grid = np.zeros((na, ns))
    key = _module_stream_key(cfg.module_name)
    for i, alpha in enumerate(cfg.alpha_grid):
        if points is not None:
            theta_alpha = _polyline_point(points, float(alpha))
        else:
            theta_alpha = (1.0 - alpha) * theta0 + alpha * theta_end
        if cfg.noise_mode == "current_norm":
            scale = float(np.linalg.norm(theta_alpha)) / math.sqrt(p)
        elif cfg.noise_mode == "path_norm":
            scale = path_distance / math.sqrt(p)
        else:
            scale = 1.0
        for j, sigma in enumerate(cfg.sigma_grid):
            cell_rng = rng.split(key, i, j)
            std = float(sigma) * scale
            tr_acc = 0.0
            te_acc = 0.0
            for _ in range(cfg.noise_samples):
                u = gaussian(cell_rng, p, std)
                tr, te = eval_fn(theta_alpha + u)
                tr_acc += tr
                te_acc += te
            train_grid[i, j] = tr_acc / cfg.noise_samples
            test_grid[i, j] = te_acc / cfg.noise_samples
    feasible = train_grid <= cfg.epsilon
    mu, arg = _minimize(cfg.alpha_grid, cfg.sigma_grid, train_grid, cfg.epsilon, path_distance)
    return CriticalityMap(
        module_name=cfg.module_name,
        alpha_grid=cfg.alpha_grid.copy(),
        sigma_grid=cfg.sigma_grid.copy(),
        train=train_grid,
        test=test_grid,
        feasible=feasible,
        epsilon=cfg.epsilon,
        path_distance=path_distance,
        mu=mu,
        argmin=arg,
    )


def _metric_pair(params: ParamVector, arch, train_ds, test_ds, metric: str) -> tuple[float, float]:
    tr = evaluate(params, arch, train_ds)
    te = evaluate(params, arch, test_ds)
    if metric == "error":
        return 1.0 - tr.accuracy, 1.0 - te.accuracy
    return tr.loss, te.loss


def criticality_map(
    final_or_opt: Checkpoint,
    init: Checkpoint,
    cfg: CriticalityConfig,
    rng: RngStream,
    train_ds,
    test_ds,
    checkpoints: list[Checkpoint] | None = None,
) -> CriticalityMap:
    """Criticality map for one module of a trained network.

    final_or_opt supplies both the frozen context (all other modules) and the
    path endpoint; for the optimization path, pass the saved checkpoints in
    epoch order (truncated at the optimal one when endpoint="optimal").
    """
    if final_or_opt.arch != init.arch:
        raise DomainError("checkpoint architectures differ")
    if cfg.module_name not in final_or_opt.params.module_names():
        raise DomainError(f"unknown module {cfg.module_name!r}")
    arch = final_or_opt.arch
    span = final_or_opt.params.module_slice(cfg.module_name)
    base = final_or_opt.params.values.astype(np.float64)
    theta0 = init.params.values[span].astype(np.float64)
    theta_end = final_or_opt.params.values[span].astype(np.float64)

    path_points = None
    if cfg.path == "optimization":
        if not checkpoints:
            raise DomainError("optimization path requires checkpoints")
        ordered = sorted(checkpoints, key=lambda c: c.epoch)
        for a, b in zip(ordered, ordered[1:]):
            if a.epoch == b.epoch:
                raise DomainError("duplicate checkpoint epochs on optimization path")
        path_points = [c.params.values[span].astype(np.float64) for c in ordered]
        path_points = [theta0] + path_points if ordered[0].epoch != init.epoch else path_points
        path_points.append(theta_end)

    def eval_fn(vec):
        work = base.copy()
        work[span] = vec
        params = ParamVector(work, final_or_opt.params.index)
        return _metric_pair(params, arch, train_ds, test_ds, cfg.metric)

    return criticality_grid(theta0, theta_end, eval_fn, cfg, rng, path_points=path_points)


def rewind_probe(final: Checkpoint, init: Checkpoint, module_name: str, train_ds, test_ds) -> dict:
    """Evaluate the hybrid network with one module rewound to its init value."""
    if final.arch != init.arch:
        raise DomainError("checkpoint architectures differ")
    params = final.params.copy()
    view = params.module_view(module_name)
    view.set(init.params.values[init.params.module_slice(module_name)])
    tr = evaluate(params, final.arch, train_ds)
    te = evaluate(params, final.arch, test_ds)
    return {
        "module": module_name,
        "train_loss": tr.loss,
        "train_acc": tr.accuracy,
        "test_loss": te.loss,
        "test_acc": te.accuracy,
    }


def network_criticality(maps: list[CriticalityMap]) -> float:
    """Sum of module criticalities; +inf propagates from any infeasible module."""
    if not maps:
        raise DomainError("need at least one map")
    return float(sum(m.mu for m in maps))
