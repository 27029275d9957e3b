"""Catch-plane intersection, impact median filter and commit logic."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, replace

import numpy as np

from .core import GRAVITY, Frame, RigidTransform
from .trajectory import Parabola

E_Y = np.array([0.0, 1.0, 0.0])


class ParallelTrajectory(ValueError):
    pass


class PastImpact(ValueError):
    """The trajectory crossed the plane before the parabola's reference time."""

    def __init__(self, estimate: "ImpactEstimate"):
        super().__init__(f"impact {estimate.t_imp:.4f} s already passed")
        self.estimate = estimate


@dataclass(frozen=True)
class CatchPlane:
    """Plane through the body origin with normal ``e_y x g_B``."""

    n_imp: np.ndarray

    def __post_init__(self):
        if not np.linalg.norm(self.n_imp) > 0:
            raise ValueError("plane normal must be non-zero")

    @classmethod
    def from_gravity(cls, g_body, axis=E_Y) -> "CatchPlane":
        """Plane spanned by ``g_body`` and the body ``axis`` (lateral by default)."""
        return cls(np.cross(np.asarray(axis, float), np.asarray(g_body, float)))

    @classmethod
    def for_pose(cls, T_world_body: RigidTransform, axis=E_Y) -> "CatchPlane":
        return cls.from_gravity(T_world_body.inverse().rotate(GRAVITY), axis)

    def signed_distance(self, p) -> float:
        return float(np.dot(self.n_imp, p))


@dataclass(frozen=True)
class ImpactEstimate:
    t_imp: float  # absolute seconds
    p_imp: np.ndarray  # body frame
    residual: float = 0.0
    t_created: float = 0.0


def to_body(parabola_world: Parabola, T_body_world: RigidTransform) -> Parabola:
    return parabola_world.transformed(T_body_world)


def intersect(parabola: Parabola, plane: CatchPlane, residual: float = 0.0) -> ImpactEstimate:
    """``t = -(n.p0)/(n.v0)`` after ``t_ref``; exact because ``n`` is orthogonal to ``g``.

    Raises :class:`PastImpact` (carrying the estimate) when the crossing is
    before ``t_ref``.
    """
    if parabola.frame != Frame.BODY:
        raise ValueError("intersect expects a body-frame parabola")
    n = plane.n_imp
    nv = float(np.dot(n, parabola.v0))
    if abs(nv) < 1e-9:
        raise ParallelTrajectory("trajectory parallel to the catch plane")
    t_rel = -float(np.dot(n, parabola.p0)) / nv
    p = parabola.p0 + parabola.v0 * t_rel + 0.5 * parabola.g * t_rel * t_rel
    # Strip the rounding residual (and any component of g along n) off the plane.
    p = p - n * (np.dot(n, p) / np.dot(n, n))
    est = ImpactEstimate(parabola.t_ref + t_rel, p, residual, parabola.t_ref)
    if t_rel < 0:
        raise PastImpact(est)
    return est


class MedianFilter:
    """Per-component median over the last ``k`` estimates (k odd)."""

    def __init__(self, k: int = 5):
        if k < 1 or k % 2 == 0:
            raise ValueError("window must be a positive odd number")
        self.k = k
        self.window: deque[ImpactEstimate] = deque(maxlen=k)

    def __len__(self) -> int:
        return len(self.window)

    def reset(self) -> None:
        self.window.clear()

    def push(self, estimate: ImpactEstimate) -> ImpactEstimate:
        self.window.append(estimate)
        return self.value()

    def value(self) -> ImpactEstimate:
        if not self.window:
            raise ValueError("empty filter")
        pts = np.array([e.p_imp for e in self.window])
        ts = np.array([e.t_imp for e in self.window])
        last = self.window[-1]
        return ImpactEstimate(float(np.median(ts)), np.median(pts, axis=0), last.residual, last.t_created)


def filter_push(filt: MedianFilter, estimate: ImpactEstimate) -> ImpactEstimate:
    return filt.push(estimate)


class ImpactTracker:
    """Median-filters estimates until time-to-impact drops below the commit horizon.

    After the commit the filtered estimate is frozen: the catch manoeuvre has
    started and later (noisier, closer-range) fits are ignored.
    """

    def __init__(self, k: int = 5, commit_horizon: float = 0.05):
        self.filter = MedianFilter(k)
        self.commit_horizon = commit_horizon
        self.committed: ImpactEstimate | None = None
        self.latest: ImpactEstimate | None = None

    def reset(self) -> None:
        self.filter.reset()
        self.committed = None
        self.latest = None

    @property
    def frozen(self) -> bool:
        return self.committed is not None

    def push(self, estimate: ImpactEstimate, now: float) -> ImpactEstimate:
        if self.committed is not None:
            return self.committed
        out = self.filter.push(estimate)
        self.latest = out
        # Only a full window may commit, so one early bad fit cannot freeze.
        if len(self.filter) == self.filter.k and out.t_imp - now < self.commit_horizon:
            self.committed = replace(out)
        return out

    @property
    def current(self) -> ImpactEstimate | None:
        return self.committed if self.committed is not None else self.latest
