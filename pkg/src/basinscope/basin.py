"""Monte-Carlo certification of (epsilon, delta)-basins over balls in
parameter space.

A ball S is certified by three estimates: (1) the mean absolute deviation of
the loss inside S stays within epsilon; (2) Gaussian perturbations of
boundary points raise the loss by at least 2*epsilon; (3) half-normal
outward extrapolation past the boundary does the same. Verdicts require a
two-standard-error margin in either direction; anything closer is
inconclusive.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError
from .model import ParamVector
from .rng import RngStream, gaussian, uniform_in_ball

_STREAM_MU = 1
_STREAM_PAIRS2 = 2
_STREAM_NOISE2 = 3
_STREAM_PAIRS3 = 4
_STREAM_NOISE3 = 5
_STREAM_DEGENERATE = 6


@dataclass
class BallSet:
    """Closed ball: the concrete convex family used for certification."""

    center: np.ndarray
    radius: float

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=np.float64)
        if not (np.isfinite(self.radius) and self.radius > 0):
            raise DomainError("radius must be finite and positive")

    @property
    def dimension(self) -> int:
        return self.center.size

    def contains(self, w, tol: float = 1e-9) -> bool:
        return float(np.linalg.norm(np.asarray(w) - self.center)) <= self.radius * (1 + tol)


@dataclass
class ConditionEstimate:
    estimate: float
    stderr: float
    threshold: float
    relation: str  # "<=" (condition 1) or ">=" (conditions 2, 3)
    verdict: str = field(init=False)

    def __post_init__(self):
        margin = 2.0 * self.stderr
        if self.relation == "<=":
            ok, bad = self.estimate <= self.threshold - margin, self.estimate > self.threshold + margin
        else:
            ok, bad = self.estimate >= self.threshold + margin, self.estimate < self.threshold - margin
        self.verdict = "pass" if ok else ("fail" if bad else "inconclusive")

    def to_dict(self) -> dict:
        return {
            "estimate": self.estimate,
            "stderr": self.stderr,
            "threshold": self.threshold,
            "relation": self.relation,
            "verdict": self.verdict,
        }


@dataclass
class BasinReport:
    mu_hat: float
    cond1: ConditionEstimate
    cond2: ConditionEstimate
    cond3: ConditionEstimate
    epsilon: float
    delta: float
    samples: int
    degenerate: bool = False

    def all_pass(self) -> bool:
        return all(c.verdict == "pass" for c in (self.cond1, self.cond2, self.cond3))

    def to_dict(self) -> dict:
        return {
            "mu": self.mu_hat,
            "epsilon": self.epsilon,
            "delta": self.delta,
            "samples": self.samples,
            "degenerate": self.degenerate,
            "cond1": self.cond1.to_dict(),
            "cond2": self.cond2.to_dict(),
            "cond3": self.cond3.to_dict(),
        }


def boundary_point(ball: BallSet, w1, w2) -> np.ndarray:
    """Farthest point of the ball along the ray from w1 through w2 (closed form)."""
    w1 = np.asarray(w1, dtype=np.float64)
    w2 = np.asarray(w2, dtype=np.float64)
    d = w2 - w1
    dd = float(d @ d)
    if dd == 0.0:
        raise DomainError("degenerate ray: w1 == w2")
    rel = w1 - ball.center
    b = 2.0 * float(rel @ d)
    c = float(rel @ rel) - ball.radius**2
    disc = b * b - 4.0 * dd * c
    if disc < 0:
        raise DomainError("ray does not intersect the ball (w1 outside?)")
    alpha = (-b + math.sqrt(disc)) / (2.0 * dd)
    return w1 + alpha * d


class _ConditionDraws:
    """Frozen random draws so delta can vary with common random numbers."""

    def __init__(self, ball: BallSet, rng: RngStream, samples: int):
        n = ball.dimension
        mu_rng = rng.split(_STREAM_MU)
        self.ball = ball
        self.w_inside = [uniform_in_ball(mu_rng, ball.center, ball.radius) for _ in range(samples)]

        p2 = rng.split(_STREAM_PAIRS2)
        n2 = rng.split(_STREAM_NOISE2)
        self.f2, self.z2 = [], []
        for _ in range(samples):
            w1 = uniform_in_ball(p2, ball.center, ball.radius)
            w2 = uniform_in_ball(p2, ball.center, ball.radius)
            self.f2.append(boundary_point(ball, w1, w2))
            self.z2.append(gaussian(n2, n, 1.0))

        p3 = rng.split(_STREAM_PAIRS3)
        n3 = rng.split(_STREAM_NOISE3)
        self.f3, self.dir3 = [], []
        for _ in range(samples):
            w1 = uniform_in_ball(p3, ball.center, ball.radius)
            w2 = uniform_in_ball(p3, ball.center, ball.radius)
            f = boundary_point(ball, w1, w2)
            self.f3.append(f)
            self.dir3.append((f - w1) / np.linalg.norm(f - w1))
        self.z3 = np.abs(gaussian(n3, samples, 1.0))


def _mean_se(x: np.ndarray) -> tuple[float, float]:
    x = np.asarray(x, dtype=np.float64)
    se = float(x.std(ddof=1) / math.sqrt(len(x))) if len(x) > 1 else 0.0
    return float(x.mean()), se


def _report_from_draws(draws: _ConditionDraws, loss, epsilon: float, delta: float, mu_losses=None) -> BasinReport:
    n = draws.ball.dimension
    losses = np.array([loss(w) for w in draws.w_inside]) if mu_losses is None else mu_losses
    if not np.all(np.isfinite(losses)):
        raise DomainError("loss returned non-finite value on a ball sample")
    mu_hat = float(losses.mean())
    est1, se1 = _mean_se(np.abs(losses - mu_hat))
    scale2 = delta / math.sqrt(n)
    vals2 = np.array([loss(f + scale2 * z) for f, z in zip(draws.f2, draws.z2)])
    est2, se2 = _mean_se(vals2 - mu_hat)
    vals3 = np.array([loss(f + (delta * a) * d) for f, d, a in zip(draws.f3, draws.dir3, draws.z3)])
    est3, se3 = _mean_se(vals3 - mu_hat)
    return BasinReport(
        mu_hat=mu_hat,
        cond1=ConditionEstimate(est1, se1, epsilon, "<="),
        cond2=ConditionEstimate(est2, se2, 2.0 * epsilon, ">="),
        cond3=ConditionEstimate(est3, se3, 2.0 * epsilon, ">="),
        epsilon=epsilon,
        delta=delta,
        samples=len(draws.w_inside),
    )


def check_basin(ball: BallSet, loss, epsilon: float, delta: float, samples: int, rng: RngStream) -> BasinReport:
    """Estimate the three conditions by Monte Carlo and return verdicts.

    loss maps a flat float64 vector to a scalar; epsilon and delta are the
    candidate basin parameters.
    """
    if samples < 100:
        raise DomainError("need at least 100 samples")
    if epsilon <= 0 or delta <= 0:
        raise DomainError("epsilon and delta must be positive")
    draws = _ConditionDraws(ball, rng, samples)
    return _report_from_draws(draws, loss, epsilon, delta)


@dataclass
class BasinFit:
    verdict: str  # "in_basin" | "not_in_one_basin"
    reason: str
    ball: BallSet | None
    mu_segment: float
    epsilon_target: float
    epsilon_certified: float | None
    delta_certified: float | None
    report: BasinReport | None
    degenerate: bool

    def to_dict(self) -> dict:
        return {
            "verdict": self.verdict,
            "reason": self.reason,
            "radius": None if self.ball is None else self.ball.radius,
            "dimension": None if self.ball is None else self.ball.dimension,
            "mu_segment": self.mu_segment,
            "epsilon_target": self.epsilon_target,
            "epsilon_certified": self.epsilon_certified,
            "delta_certified": self.delta_certified,
            "degenerate": self.degenerate,
            "report": None if self.report is None else self.report.to_dict(),
        }


def _walk_to_threshold(point_fn, loss, lam_from: float, direction: float, threshold: float,
                       step: float, max_steps: int, bisect_steps: int) -> float | None:
    """March along the line until the loss crosses threshold; bisect the crossing."""
    prev = lam_from
    for j in range(1, max_steps + 1):
        lam = lam_from + direction * step * j
        if loss(point_fn(lam)) > threshold:
            lo, hi = prev, lam
            for _ in range(bisect_steps):
                mid = 0.5 * (lo + hi)
                if loss(point_fn(mid)) > threshold:
                    hi = mid
                else:
                    lo = mid
            return 0.5 * (lo + hi)
        prev = lam
    return None


def fit_basin(
    theta_a,
    theta_b,
    loss,
    epsilon_target: float,
    rng: RngStream,
    samples: int = 500,
    interval_points: int = 21,
    walk_step: float = 0.25,
    max_walk_steps: int = 60,
    bisect_steps: int = 12,
    delta_bracket: tuple[float, float] = (1e-3, 10.0),
    delta_bisect_steps: int = 20,
) -> BasinFit:
    """Fit a ball to two solutions by walking their line to the loss boundary,
    then certify (epsilon, delta) per the three conditions.

    Accepts ParamVectors or flat arrays. epsilon is certified as the measured
    condition-1 value; delta as the smallest value passing conditions 2 and 3,
    located by doubling-then-bisection with common random numbers. The delta
    bracket is expressed in units of the fitted radius.
    """
    if isinstance(theta_a, ParamVector):
        theta_a = theta_a.values
    if isinstance(theta_b, ParamVector):
        theta_b = theta_b.values
    a = np.asarray(theta_a, dtype=np.float64)
    b = np.asarray(theta_b, dtype=np.float64)
    if a.shape != b.shape:
        raise DomainError("endpoint shapes differ")

    degenerate = bool(np.array_equal(a, b))
    if degenerate:
        direction = gaussian(rng.split(_STREAM_DEGENERATE), a.size, 1.0)
        direction /= np.linalg.norm(direction)
        point_fn = lambda lam: a + lam * direction
        seg_losses = np.array([loss(a)])
    else:
        d = b - a
        point_fn = lambda lam: a + lam * d
        seg = np.linspace(0.0, 1.0, interval_points)
        seg_losses = np.array([loss(point_fn(t)) for t in seg])
    mu_seg = float(seg_losses.mean())
    threshold = mu_seg + 2.0 * epsilon_target

    loss_a, loss_b = float(loss(a)), float(loss(b))
    if loss_a > threshold or loss_b > threshold:
        return BasinFit(
            "not_in_one_basin",
            "an endpoint sits above the segment loss threshold",
            None, mu_seg, epsilon_target, None, None, None, degenerate,
        )

    lam_hi = _walk_to_threshold(point_fn, loss, 1.0 if not degenerate else 0.0, +1.0,
                                threshold, walk_step, max_walk_steps, bisect_steps)
    lam_lo = _walk_to_threshold(point_fn, loss, 0.0, -1.0,
                                threshold, walk_step, max_walk_steps, bisect_steps)
    if lam_hi is None or lam_lo is None:
        return BasinFit(
            "not_in_one_basin",
            "no loss boundary found along the line within the walk range",
            None, mu_seg, epsilon_target, None, None, None, degenerate,
        )

    center = point_fn(0.5 * (lam_lo + lam_hi))
    radius = float(np.linalg.norm(point_fn(lam_hi) - point_fn(lam_lo))) / 2.0
    if radius <= 0:
        return BasinFit(
            "not_in_one_basin", "degenerate zero radius",
            None, mu_seg, epsilon_target, None, None, None, degenerate,
        )
    ball = BallSet(center, radius)

    draws = _ConditionDraws(ball, rng, samples)
    mu_losses = np.array([loss(w) for w in draws.w_inside])
    base = _report_from_draws(draws, loss, epsilon_target, delta_bracket[1] * radius, mu_losses=mu_losses)
    eps_cert = base.cond1.estimate
    if base.cond1.verdict != "pass":
        return BasinFit(
            "not_in_one_basin",
            "condition 1 fails at the target epsilon (loss varies across the ball)",
            ball, mu_seg, epsilon_target, eps_cert, None, base, degenerate,
        )

    def passes(delta: float) -> tuple[bool, BasinReport]:
        rep = _report_from_draws(draws, loss, eps_cert, delta, mu_losses=mu_losses)
        return rep.cond2.verdict == "pass" and rep.cond3.verdict == "pass", rep

    lo_d = delta_bracket[0] * radius
    hi_d = delta_bracket[1] * radius
    ok_lo, rep_lo = passes(lo_d)
    if ok_lo:
        return BasinFit("in_basin", "ok", ball, mu_seg, epsilon_target, eps_cert, lo_d, rep_lo, degenerate)
    # double upward until a passing delta is found
    delta = lo_d
    ok_hi, rep_hi = False, None
    while delta < hi_d:
        delta = min(2.0 * delta, hi_d)
        ok_hi, rep_hi = passes(delta)
        if ok_hi:
            break
    if not ok_hi:
        return BasinFit(
            "not_in_one_basin",
            "conditions 2-3 fail for every delta in the bracket",
            ball, mu_seg, epsilon_target, eps_cert, None, rep_hi, degenerate,
        )
    lo, hi = delta / 2.0, delta
    best = rep_hi
    for _ in range(delta_bisect_steps):
        mid = 0.5 * (lo + hi)
        ok, rep = passes(mid)
        if ok:
            hi, best = mid, rep
        else:
            lo = mid
    return BasinFit("in_basin", "ok", ball, mu_seg, epsilon_target, eps_cert, hi, best, degenerate)
