"""3D detections from boxes of known-size objects and robust ballistic fitting."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import GRAVITY, CameraIntrinsics, Frame, NonPositiveDepth, RigidTransform, back_project

REFINE_ROUNDS = 5  # refine/re-gate passes after the consensus search


class ZeroWidth(ValueError):
    pass


class DegenerateTimes(ValueError):
    pass


class RankDeficient(ValueError):
    pass


class TooFewDetections(ValueError):
    pass


class NoConsensus(RuntimeError):
    pass


@dataclass(frozen=True)
class Detection3D:
    t: float  # s since stream epoch
    p_world: np.ndarray
    p_camera: np.ndarray
    width_px: float
    R_world_camera: np.ndarray = field(default_factory=lambda: np.eye(3))

    def __post_init__(self):
        if not self.p_camera[2] > 0:
            raise NonPositiveDepth("detection behind the camera")


@dataclass(frozen=True)
class Parabola:
    p0: np.ndarray
    v0: np.ndarray
    t_ref: float = 0.0
    g: np.ndarray = field(default_factory=lambda: GRAVITY.copy())
    frame: Frame = Frame.WORLD

    def position(self, t):
        """``p(t)`` for absolute time(s) ``t``; shape (3,) or (n, 3)."""
        dt = np.asarray(t, dtype=float) - self.t_ref
        dt = dt[..., None]
        return self.p0 + self.v0 * dt + 0.5 * self.g * dt * dt

    def velocity(self, t):
        dt = np.asarray(t, dtype=float) - self.t_ref
        return self.v0 + self.g * dt[..., None]

    def rereference(self, t_ref: float) -> "Parabola":
        """Same trajectory with its reference point moved to ``t_ref``."""
        return Parabola(self.position(t_ref), self.velocity(t_ref), float(t_ref), self.g, self.frame)

    def transformed(self, T: RigidTransform) -> "Parabola":
        if T.from_frame != self.frame:
            from .core import FrameMismatch

            raise FrameMismatch(f"parabola in {self.frame.value}, transform expects {T.from_frame.value}")
        return Parabola(T.apply(self.p0), T.rotate(self.v0), self.t_ref, T.rotate(self.g), T.to_frame)


@dataclass(frozen=True)
class RansacConfig:
    iterations: int = 200
    inlier_threshold: float = 0.3
    sigma_xy2: float = 1.0
    sigma_z2: float = 5.0
    min_inliers: int | None = None  # None: max(4, ceil(N / 2))
    min_detections: int = 2
    weighted_refine: bool = False

    def __post_init__(self):
        if self.iterations < 1 or self.inlier_threshold <= 0 or self.min_detections < 2:
            raise ValueError("need iterations >= 1, threshold > 0, min_detections >= 2")
        if self.sigma_xy2 <= 0 or self.sigma_z2 <= 0:
            raise ValueError("variances must be positive")

    def required_inliers(self, n: int) -> int:
        if self.min_inliers is not None:
            return self.min_inliers
        return max(4, math.ceil(0.5 * n))


@dataclass(frozen=True)
class FitResult:
    parabola: Parabola
    inliers: np.ndarray
    rms: float  # Lambda-norm RMS over inliers
    n_detections: int


# -- detections ----------------------------------------------------------------


def depth_from_size(intrinsics: CameraIntrinsics, width_px: float, width_m: float) -> float:
    if width_px <= 0:
        raise ZeroWidth("box width must be positive")
    if width_m <= 0:
        raise ValueError("object width must be positive")
    return intrinsics.fx * width_m / width_px


def lift(cluster, intrinsics: CameraIntrinsics, T_world_camera: RigidTransform, width_m: float,
         t: float | None = None) -> Detection3D:
    """Back-project the box center to the depth implied by the box width."""
    if T_world_camera.from_frame != Frame.CAMERA or T_world_camera.to_frame != Frame.WORLD:
        from .core import FrameMismatch

        raise FrameMismatch("lift needs a camera-to-world transform")
    Z = depth_from_size(intrinsics, cluster.width, width_m)
    p_cam = back_project(intrinsics, cluster.center, Z)
    if t is None:
        t = cluster.timestamp * 1e-9
    return Detection3D(float(t), T_world_camera.apply(p_cam), p_cam, float(cluster.width),
                       T_world_camera.rotation)


# -- fitting -------------------------------------------------------------------


def _arrays(detections):
    t = np.array([d.t for d in detections], dtype=float)
    p = np.array([d.p_world for d in detections], dtype=float).reshape(-1, 3)
    return t, p


def information_matrices(detections, config: RansacConfig) -> np.ndarray:
    """``R_WC diag(1/sxy2, 1/sxy2, 1/sz2) R_WC^T`` per detection, (N, 3, 3)."""
    R = np.array([d.R_world_camera for d in detections], dtype=float).reshape(-1, 3, 3)
    inv = np.array([1 / config.sigma_xy2, 1 / config.sigma_xy2, 1 / config.sigma_z2])
    return np.einsum("nij,j,nkj->nik", R, inv, R)


def minimal_solve(d1: Detection3D, d2: Detection3D, g=GRAVITY) -> Parabola:
    """Parabola through two timed points with gravity fixed; ``t_ref = d1.t``."""
    dt = d2.t - d1.t
    if abs(dt) < 1e-6:
        raise DegenerateTimes(f"detections {dt:.3g} s apart")
    g = np.asarray(g, float)
    v0 = (d2.p_world - d1.p_world - 0.5 * g * dt * dt) / dt
    return Parabola(np.array(d1.p_world, float), v0, d1.t, g.copy())


def lambda_norms(parabola: Parabola, t: np.ndarray, p: np.ndarray, info: np.ndarray) -> np.ndarray:
    e = p - parabola.position(t)
    return np.sqrt(np.einsum("ni,nij,nj->n", e, info, e))


def count_inliers(parabola: Parabola, detections, config: RansacConfig) -> np.ndarray:
    """Indices ``i`` with ``||p_i - p(t_i)||_Lambda <= theta``."""
    if len(detections) == 0:
        return np.zeros(0, np.int64)
    t, p = _arrays(detections)
    d = lambda_norms(parabola, t, p, information_matrices(detections, config))
    return np.nonzero(d <= config.inlier_threshold)[0]


def refine(detections, g=GRAVITY, t_ref: float | None = None, info: np.ndarray | None = None) -> Parabola:
    """Closed-form least squares for ``p0, v0`` with gravity fixed.

    Unweighted per-axis regression of ``p_i - g (t_i - t_ref)^2 / 2`` on
    ``{1, t_i - t_ref}``.  Passing ``info`` (N, 3, 3) minimizes the
    Lambda-weighted cost instead, which couples the axes.
    """
    t, p = _arrays(detections)
    if len(t) < 2 or np.ptp(t) < 1e-6:
        raise RankDeficient("need two distinct detection times")
    g = np.asarray(g, float)
    if t_ref is None:
        t_ref = float(t[0])
    dt = t - t_ref
    y = p - 0.5 * g * (dt * dt)[:, None]
    if info is None:
        A = np.stack([np.ones_like(dt), dt], axis=1)
        coef, _, rank, _ = np.linalg.lstsq(A, y, rcond=None)
        if rank < 2:
            raise RankDeficient("time design matrix is rank deficient")
        return Parabola(coef[0], coef[1], float(t_ref), g.copy())
    # Weighted: residual r_i = y_i - p0 - v0 dt_i, cost sum r_i^T L_i r_i.
    s0 = info.sum(axis=0)
    s1 = np.einsum("n,nij->ij", dt, info)
    s2 = np.einsum("n,nij->ij", dt * dt, info)
    H = np.block([[s0, s1], [s1, s2]])
    b = np.concatenate([np.einsum("nij,nj->i", info, y), np.einsum("n,nij,nj->i", dt, info, y)])
    try:
        x = np.linalg.solve(H, b)
    except np.linalg.LinAlgError as exc:
        raise RankDeficient(str(exc)) from exc
    return Parabola(x[:3], x[3:], float(t_ref), g.copy())


def _sample_pairs(rng: np.random.Generator, t: np.ndarray, n_pairs: int) -> np.ndarray:
    n = len(t)
    pairs = np.empty((n_pairs, 2), np.int64)
    todo = np.arange(n_pairs)
    for _ in range(100):
        if len(todo) == 0:
            return pairs
        a = rng.integers(0, n, len(todo))
        b = rng.integers(0, n - 1, len(todo))
        b = b + (b >= a)
        pairs[todo, 0], pairs[todo, 1] = a, b
        bad = np.abs(t[a] - t[b]) < 1e-6
        todo = todo[bad]
    raise DegenerateTimes("could not draw detections at distinct times")


def ransac_fit(detections, config: RansacConfig = RansacConfig(), seed: int = 0,
               g=GRAVITY) -> FitResult:
    """Best-consensus two-point parabola, refined on its inliers.

    All hypotheses are scored at once.  Ties in inlier count go to the lower
    Lambda-norm RMS over the inliers.  The refined model replaces the minimal
    one only if it keeps at least ``min_inliers`` points.
    """
    detections = list(detections)
    n = len(detections)
    if n < config.min_detections:
        raise TooFewDetections(f"{n} detections, need {config.min_detections}")
    need = config.required_inliers(n)
    g = np.asarray(g, float)
    t, p = _arrays(detections)
    if np.ptp(t) < 1e-6:
        raise TooFewDetections("all detections share one timestamp")
    info = information_matrices(detections, config)
    rng = np.random.default_rng(seed)
    pairs = _sample_pairs(rng, t, config.iterations)

    i, j = pairs[:, 0], pairs[:, 1]
    dt = (t[j] - t[i])[:, None]
    v0 = (p[j] - p[i] - 0.5 * g * dt * dt) / dt  # (K, 3)
    tau = t[None, :] - t[i][:, None]  # (K, N)
    pred = p[i][:, None, :] + v0[:, None, :] * tau[..., None] + 0.5 * g * (tau * tau)[..., None]
    e = p[None] - pred
    d2 = np.einsum("kni,nij,knj->kn", e, info, e)
    inl = d2 <= config.inlier_threshold**2
    counts = inl.sum(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        rms = np.sqrt(np.where(inl, d2, 0.0).sum(axis=1) / counts)
    best_count = counts.max()
    cand = np.nonzero(counts == best_count)[0]
    k = int(cand[np.argmin(rms[cand])])  # argmin keeps the earliest on exact ties
    if best_count < need:
        raise NoConsensus(f"best consensus {best_count} < {need}")

    model = Parabola(p[i[k]].copy(), v0[k].copy(), float(t[i[k]]), g.copy())
    members = np.nonzero(inl[k])[0]
    # Refine and re-gate until the inlier set is stable, so the returned
    # model is the least-squares fit of exactly the returned inliers.
    for _ in range(REFINE_ROUNDS):
        try:
            refined = refine([detections[m] for m in members], g, t_ref=float(t[members].min()),
                             info=info[members] if config.weighted_refine else None)
        except RankDeficient:
            break
        r_inl = np.nonzero(lambda_norms(refined, t, p, info) <= config.inlier_threshold)[0]
        if len(r_inl) < need:
            break
        stable = np.array_equal(r_inl, members)
        model, members = refined, r_inl
        if stable:
            break
    dist = lambda_norms(model, t[members], p[members], info[members])
    return FitResult(model, members, float(np.sqrt(np.mean(dist**2))), n)
