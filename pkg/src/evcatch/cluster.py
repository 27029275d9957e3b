"""Optical flow on timestamp images, pixel dissimilarity, DBSCAN and boxes."""

from __future__ import annotations

import math
from dataclasses import dataclass

import cv2
import numpy as np
from numba import njit
from scipy import ndimage
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from .segment import NormalizedImage, TimestampImage


class DimensionMismatch(ValueError):
    pass


class EmptyCluster(ValueError):
    pass


LK_WINDOW = 15
LK_ITERATIONS = 3
EIG_FLOOR = 1e-6
FILL_SIGMA = 1.5  # px, normalized-convolution densification of the sparse T image
FILL_SUPPORT = 0.05
FLOW_TILE = 32  # px; candidate groups farther apart get separate flow crops


@dataclass(frozen=True)
class ClusterConfig:
    w_p: float = 0.5
    w_v: float = 0.01
    w_rho: float = 1.0
    eps: float = 5.0
    min_pts: int = 6

    def __post_init__(self):
        if min(self.w_p, self.w_v, self.w_rho) < 0:
            raise ValueError("weights must be non-negative")
        if self.eps <= 0 or self.min_pts < 1:
            raise ValueError("need eps > 0 and min_pts >= 1")


@dataclass(frozen=True)
class FlowField:
    """Flow in px/s over a crop of the sensor; pixels outside the crop are invalid."""

    flow: np.ndarray  # (h, w, 2)
    valid: np.ndarray  # (h, w) bool
    origin: tuple[int, int] = (0, 0)  # (x, y) of crop corner
    shape: tuple[int, int] | None = None  # full sensor (H, W); defaults to crop

    @property
    def sensor_shape(self) -> tuple[int, int]:
        return self.shape if self.shape is not None else self.valid.shape

    def sample(self, x, y):
        """Flow (n, 2) and validity (n,) at integer pixel coordinates."""
        x = np.asarray(x, np.int64) - self.origin[0]
        y = np.asarray(y, np.int64) - self.origin[1]
        h, w = self.valid.shape
        if h == 0 or w == 0:
            return np.zeros(x.shape + (2,)), np.zeros(x.shape, bool)
        inside = (x >= 0) & (x < w) & (y >= 0) & (y < h)
        xc, yc = np.where(inside, x, 0), np.where(inside, y, 0)
        return self.flow[yc, xc], inside & self.valid[yc, xc]

    @classmethod
    def empty(cls, shape) -> "FlowField":
        return cls(np.zeros((0, 0, 2)), np.zeros((0, 0), bool), (0, 0), tuple(shape))


@dataclass(frozen=True)
class Cluster:
    members: np.ndarray  # (n, 2) int (x, y)
    box: tuple[int, int, int, int]  # x_min, y_min, x_max, y_max (inclusive)
    mean_flow: np.ndarray
    mean_rho: float
    timestamp: int  # ns, buffer end

    @property
    def width(self) -> int:
        return self.box[2] - self.box[0] + 1

    @property
    def height(self) -> int:
        return self.box[3] - self.box[1] + 1

    @property
    def center(self) -> np.ndarray:
        x0, y0, x1, y1 = self.box
        return np.array([(x0 + x1) / 2.0, (y0 + y1) / 2.0])


# -- optical flow --------------------------------------------------------------


def _densify(ts: TimestampImage, sl) -> tuple[np.ndarray, np.ndarray]:
    """Fill empty pixels of a crop by normalized convolution; returns (T / window, support)."""
    valid = (ts.count[sl] > 0).astype(np.float32)
    img = np.nan_to_num(ts.mean_ts[sl] / ts.window).astype(np.float32)
    num = cv2.GaussianBlur(img * valid, (0, 0), FILL_SIGMA)
    den = cv2.GaussianBlur(valid, (0, 0), FILL_SIGMA)
    support = den > FILL_SUPPORT
    out = np.where(support, num / np.maximum(den, 1e-12), 0.0)
    return out.astype(np.float32), support


def lucas_kanade(prev: np.ndarray, curr: np.ndarray, window: int = LK_WINDOW,
                 iterations: int = LK_ITERATIONS, eig_floor: float = EIG_FLOOR):
    """Dense single-level iterative Lucas-Kanade.

    Returns per-pixel displacement (H, W, 2) in pixels and a validity mask that
    rejects pixels whose window-averaged structure tensor has its smallest
    eigenvalue below ``eig_floor``.
    """
    prev = np.asarray(prev, np.float32)
    curr = np.asarray(curr, np.float32)
    if prev.shape != curr.shape:
        raise DimensionMismatch(f"{prev.shape} vs {curr.shape}")
    H, W = prev.shape
    ix = cv2.Sobel(prev, cv2.CV_32F, 1, 0, ksize=3, scale=1 / 8, borderType=cv2.BORDER_REPLICATE)
    iy = cv2.Sobel(prev, cv2.CV_32F, 0, 1, ksize=3, scale=1 / 8, borderType=cv2.BORDER_REPLICATE)

    def box(a):
        return cv2.boxFilter(a, -1, (window, window), normalize=True, borderType=cv2.BORDER_REPLICATE)

    sxx, sxy, syy = box(ix * ix), box(ix * iy), box(iy * iy)
    tr = sxx + syy
    det = sxx * syy - sxy * sxy
    lam_min = 0.5 * (tr - np.sqrt(np.maximum(tr * tr - 4 * det, 0.0)))
    valid = lam_min >= eig_floor
    inv_det = np.where(valid, 1.0 / np.where(valid, det, 1.0), 0.0)

    d = np.zeros((H, W, 2), np.float32)
    gx, gy = np.meshgrid(np.arange(W, dtype=np.float32), np.arange(H, dtype=np.float32))
    for _ in range(iterations):
        warped = cv2.remap(curr, gx + d[..., 0], gy + d[..., 1], cv2.INTER_LINEAR,
                           borderMode=cv2.BORDER_REPLICATE)
        it = warped - prev
        bx, by = box(ix * it), box(iy * it)
        d[..., 0] -= (syy * bx - sxy * by) * inv_det
        d[..., 1] -= (sxx * by - sxy * bx) * inv_det
    d[~valid] = 0.0
    return d, valid


def optical_flow(prev: TimestampImage, curr: TimestampImage, region=None) -> FlowField:
    """Dense LK flow (px/s) between consecutive mean timestamp images.

    ``region`` = (x0, y0, x1, y1) inclusive limits the computation to a crop
    (padded by the LK window); pixels outside it are reported invalid.
    """
    if prev.mean_ts.shape != curr.mean_ts.shape:
        raise DimensionMismatch(f"{prev.mean_ts.shape} vs {curr.mean_ts.shape}")
    dt = (curr.t0 - prev.t0) * 1e-9
    if dt <= 0:
        raise ValueError("curr must start after prev")
    H, W = curr.mean_ts.shape
    if region is None:
        x0, y0, x1, y1 = 0, 0, W - 1, H - 1
    else:
        m = LK_WINDOW
        x0, y0 = max(0, region[0] - m), max(0, region[1] - m)
        x1, y1 = min(W - 1, region[2] + m), min(H - 1, region[3] + m)
    sl = (slice(y0, y1 + 1), slice(x0, x1 + 1))
    a, sa = _densify(prev, sl)
    b, sb = _densify(curr, sl)
    d, ok = lucas_kanade(a, b)
    valid = ok & sa & sb & np.all(np.isfinite(d), axis=-1)
    return FlowField(d.astype(np.float64) / dt, valid, (x0, y0), (H, W))


@dataclass(frozen=True)
class PatchFlow:
    """Flow from several crops; each pixel reads the crop of its own tile group."""

    patches: tuple[FlowField, ...]
    group: np.ndarray  # (th, tw) int, -1 where no crop was computed
    tile: int
    shape: tuple[int, int]

    @property
    def sensor_shape(self) -> tuple[int, int]:
        return self.shape

    def sample(self, x, y):
        x = np.asarray(x, np.int64)
        y = np.asarray(y, np.int64)
        f = np.zeros(x.shape + (2,))
        ok = np.zeros(x.shape, bool)
        inside = (x >= 0) & (x < self.shape[1]) & (y >= 0) & (y < self.shape[0])
        g = np.full(x.shape, -1, np.int64)
        g[inside] = self.group[y[inside] // self.tile, x[inside] // self.tile]
        for k, patch in enumerate(self.patches):
            sel = g == k
            if np.any(sel):
                f[sel], ok[sel] = patch.sample(x[sel], y[sel])
        return f, ok


def grouped_flow(prev: TimestampImage, curr: TimestampImage, pixels: np.ndarray,
                 tile: int = FLOW_TILE) -> PatchFlow:
    """LK flow over one crop per 8-connected group of tiles holding ``pixels``.

    Scattered candidates would otherwise stretch a single bounding box over
    most of the sensor.
    """
    H, W = curr.mean_ts.shape
    occ = np.zeros(((H + tile - 1) // tile, (W + tile - 1) // tile), bool)
    px = np.asarray(pixels, np.int64).reshape(-1, 2)
    occ[px[:, 1] // tile, px[:, 0] // tile] = True
    lab, n = ndimage.label(occ, structure=np.ones((3, 3), bool))
    group = lab.astype(np.int64) - 1
    g = group[px[:, 1] // tile, px[:, 0] // tile]
    patches = []
    for k in range(n):
        sel = px[g == k]
        x0, y0 = sel.min(axis=0)
        x1, y1 = sel.max(axis=0)
        patches.append(optical_flow(prev, curr, (int(x0), int(y0), int(x1), int(y1))))
    return PatchFlow(tuple(patches), group, tile, (H, W))


def image_flow(prev: np.ndarray, curr: np.ndarray, dt: float) -> FlowField:
    """Dense LK flow between two plain images taken ``dt`` seconds apart."""
    d, ok = lucas_kanade(prev, curr)
    return FlowField(d.astype(np.float64) / dt, ok)


# -- dissimilarity -------------------------------------------------------------


def dissimilarity(a, b, flow: FlowField, rho: NormalizedImage, config: ClusterConfig) -> float:
    """``w_p |a-b| + w_v |v(a)-v(b)| + w_rho |rho(a)-rho(b)|`` for pixels (x, y).

    The flow term is dropped (and the remaining weights rescaled to the same
    total) if either pixel has no valid flow.
    """
    a = np.asarray(a)
    b = np.asarray(b)
    f, ok = flow.sample([a[0], b[0]], [a[1], b[1]])
    both = bool(ok[0] and ok[1])
    return float(
        _pair_cost(
            np.array([_norm(*(a - b).astype(float))]),
            np.array([_norm(f[0, 0] - f[1, 0], f[0, 1] - f[1, 1])]),
            np.array([abs(rho.rho[a[1], a[0]] - rho.rho[b[1], b[0]])]),
            np.array([both]),
            config,
        )[0]
    )


def _pair_cost(dpos, dflow, drho, flow_ok, config: ClusterConfig) -> np.ndarray:
    full = config.w_p * dpos + config.w_v * np.where(flow_ok, dflow, 0.0) + config.w_rho * drho
    return np.where(flow_ok, full, full * _renorm_scale(config))


# -- DBSCAN -------------------------------------------------------------------


def _norm(dx, dy):
    # Same operation order as the compiled kernels, so costs agree bit for bit.
    return np.sqrt(dx * dx + dy * dy)


def _offsets(radius: float) -> np.ndarray:
    r = int(np.floor(radius))
    dy, dx = np.mgrid[-r : r + 1, -r : r + 1]
    d2 = dx * dx + dy * dy
    keep = d2 <= radius * radius + 1e-9
    # Nearest first, so core tests that stop at min_pts touch few cells.
    order = np.argsort(d2[keep], kind="stable")
    return np.stack([dx[keep], dy[keep]], axis=1)[order]


def _half(offsets: np.ndarray) -> np.ndarray:
    """One offset of every +/- pair."""
    dx, dy = offsets[:, 0], offsets[:, 1]
    return offsets[(dy > 0) | ((dy == 0) & (dx > 0))]


@njit(cache=True)
def _grid_neighbors(x, y, grid, offsets, a, out):
    """Indices of pixels at the given offsets from pixel ``a``; returns the count."""
    H, W = grid.shape
    k = 0
    for o in range(len(offsets)):
        dx = offsets[o, 0]
        dy = offsets[o, 1]
        if dx == 0 and dy == 0:
            continue
        xs = x[a] + dx
        ys = y[a] + dy
        if xs < 0 or xs >= W or ys < 0 or ys >= H:
            continue
        b = grid[ys, xs]
        if b >= 0:
            out[k] = b
            k += 1
    return k


@njit(cache=True)
def _count_kernel(x, y, grid, offsets):
    n = len(x)
    counts = np.zeros(n, np.int64)
    buf = np.empty(len(offsets), np.int64)
    for a in range(n):
        counts[a] = _grid_neighbors(x, y, grid, offsets, a, buf)
    return counts


@njit(cache=True)
def _cost(dx, dy, dfx, dfy, drho, ok, w_p, w_v, w_rho, scale):
    # Scalars only: array arguments would pay reference counting on every call.
    c = w_p * math.sqrt(dx * dx + dy * dy)
    if ok:
        c += w_v * math.sqrt(dfx * dfx + dfy * dfy)
    else:
        c += 0.0
    c += w_rho * abs(drho)
    if not ok:
        c = c * scale
    return c


@njit(cache=True)
def _graph_kernel(x, y, grid, offsets, fx, fy, fok, rho, w_p, w_v, w_rho, eps, scale):
    n = len(x)
    cap = n * 8 + 16
    ii = np.empty(cap, np.int64)
    jj = np.empty(cap, np.int64)
    buf = np.empty(len(offsets), np.int64)
    k = 0
    for a in range(n):
        m = _grid_neighbors(x, y, grid, offsets, a, buf)
        for q in range(m):
            b = buf[q]
            if _cost(float(x[a] - x[b]), float(y[a] - y[b]), fx[a] - fx[b], fy[a] - fy[b], rho[a] - rho[b],
                     fok[a] and fok[b], w_p, w_v, w_rho, scale) > eps:
                continue
            if k == cap:
                cap *= 2
                ii2 = np.empty(cap, np.int64)
                jj2 = np.empty(cap, np.int64)
                ii2[:k] = ii[:k]
                jj2[:k] = jj[:k]
                ii, jj = ii2, jj2
            ii[k] = a
            jj[k] = b
            k += 1
    return ii[:k], jj[:k]


@njit(cache=True)
def _find(parent, a):
    while parent[a] != a:
        parent[a] = parent[parent[a]]
        a = parent[a]
    return a


@njit(cache=True)
def _dbscan_kernel(x, y, grid, offsets, half, fx, fy, fok, rho, w_p, w_v, w_rho, eps, scale, min_pts):
    """Labels and core flags without materializing the neighbor graph."""
    n = len(x)
    buf = np.empty(len(offsets), np.int64)
    core = np.zeros(n, np.bool_)
    H, W = grid.shape
    for a in range(n):
        cnt = 1
        for o in range(len(offsets)):
            if cnt >= min_pts:  # only the core flag is needed
                break
            xs = x[a] + offsets[o, 0]
            ys = y[a] + offsets[o, 1]
            if (xs == x[a] and ys == y[a]) or xs < 0 or xs >= W or ys < 0 or ys >= H:
                continue
            b = grid[ys, xs]
            if b >= 0 and _cost(float(x[a] - x[b]), float(y[a] - y[b]), fx[a] - fx[b], fy[a] - fy[b],
                                rho[a] - rho[b], fok[a] and fok[b], w_p, w_v, w_rho, scale) <= eps:
                cnt += 1
        core[a] = cnt >= min_pts
    parent = np.arange(n)
    for a in range(n):
        if not core[a]:
            continue
        m = _grid_neighbors(x, y, grid, half, a, buf)  # each unordered pair once
        for q in range(m):
            b = buf[q]
            if not core[b]:
                continue
            ra = _find(parent, a)
            rb = _find(parent, b)
            if ra == rb:
                continue
            if _cost(float(x[a] - x[b]), float(y[a] - y[b]), fx[a] - fx[b], fy[a] - fy[b], rho[a] - rho[b],
                     fok[a] and fok[b], w_p, w_v, w_rho, scale) <= eps:
                parent[max(ra, rb)] = min(ra, rb)
    labels = np.full(n, -1, np.int64)
    root_label = np.full(n, -1, np.int64)
    nxt = 0
    for a in range(n):  # number components by their first core point
        if core[a]:
            r = _find(parent, a)
            if root_label[r] < 0:
                root_label[r] = nxt
                nxt += 1
            labels[a] = root_label[r]
    for a in range(n):
        if core[a]:
            continue
        m = _grid_neighbors(x, y, grid, offsets, a, buf)
        best = -1
        for q in range(m):
            b = buf[q]
            if core[b] and (best < 0 or labels[b] < best):
                if _cost(float(x[a] - x[b]), float(y[a] - y[b]), fx[a] - fx[b], fy[a] - fy[b], rho[a] - rho[b],
                     fok[a] and fok[b], w_p, w_v, w_rho, scale) <= eps:
                    best = labels[b]
        labels[a] = best
    return labels, core


def _index_grid(pixels: np.ndarray, shape):
    x = np.ascontiguousarray(pixels[:, 0], dtype=np.int64)
    y = np.ascontiguousarray(pixels[:, 1], dtype=np.int64)
    grid = np.full(tuple(shape), -1, np.int32)
    grid[y, x] = np.arange(len(pixels), dtype=np.int32)
    return x, y, grid


def spatial_neighbor_counts(pixels: np.ndarray, radius: float, shape) -> np.ndarray:
    """Number of other pixels within ``radius`` px of each pixel.

    A dense index image serves as the spatial bucket grid, so the cost is
    proportional to points times the disc area.  Pixels must be distinct.
    """
    if len(pixels) == 0:
        return np.zeros(0, np.int64)
    x, y, grid = _index_grid(pixels, shape)
    return _count_kernel(x, y, grid, _offsets(radius))


def _renorm_scale(config: ClusterConfig) -> float:
    rest = config.w_p + config.w_rho
    if config.w_v > 0 and rest > 0:
        return (config.w_p + config.w_v + config.w_rho) / rest
    return 1.0


def neighbor_graph(pixels, flow: FlowField, rho: NormalizedImage, config: ClusterConfig):
    """Ordered pairs (i, j), i != j, with ``C(p_i, p_j) <= eps``.

    ``C >= w_p |p_i - p_j|`` bounds the search to a disc of ``eps / w_p`` px.
    """
    n = len(pixels)
    x, y = pixels[:, 0], pixels[:, 1]
    f, fok = flow.sample(x, y)
    r = rho.rho[y, x].astype(np.float64)
    if config.w_p > 0:
        xi, yi, grid = _index_grid(pixels, rho.rho.shape)
        return _graph_kernel(xi, yi, grid, _offsets(config.eps / config.w_p),
                             np.ascontiguousarray(f[:, 0], np.float64),
                             np.ascontiguousarray(f[:, 1], np.float64), fok, r,
                             float(config.w_p), float(config.w_v), float(config.w_rho),
                             float(config.eps), _renorm_scale(config))
    i, j = np.nonzero(~np.eye(n, dtype=bool))
    cost = _pair_cost(_norm((x[i] - x[j]).astype(float), (y[i] - y[j]).astype(float)),
                      _norm(f[i, 0] - f[j, 0], f[i, 1] - f[j, 1]),
                      np.abs(r[i] - r[j]), fok[i] & fok[j], config)
    keep = cost <= config.eps
    return i[keep], j[keep]


def dbscan_labels(pixels: np.ndarray, flow: FlowField, rho: NormalizedImage,
                  config: ClusterConfig) -> tuple[np.ndarray, np.ndarray]:
    """DBSCAN labels (-1 = noise) and core flags for ``pixels`` (n, 2) in given order.

    Clusters are numbered in the order their first core point appears; a
    border point joins the lowest-numbered cluster with a core point in reach,
    which is what sequential expansion in input order produces.
    """
    n = len(pixels)
    if n == 0:
        return np.zeros(0, np.int64), np.zeros(0, bool)
    if config.w_p > 0:
        x, y = pixels[:, 0], pixels[:, 1]
        f, fok = flow.sample(x, y)
        xi, yi, grid = _index_grid(pixels, rho.rho.shape)
        offsets = _offsets(config.eps / config.w_p)
        return _dbscan_kernel(xi, yi, grid, offsets, _half(offsets),
                              np.ascontiguousarray(f[:, 0], np.float64),
                              np.ascontiguousarray(f[:, 1], np.float64), fok,
                              rho.rho[y, x].astype(np.float64), float(config.w_p),
                              float(config.w_v), float(config.w_rho), float(config.eps),
                              _renorm_scale(config), int(config.min_pts))
    # Without a position term every pair is in reach: go through the explicit graph.
    i, j = neighbor_graph(pixels, flow, rho, config)
    n_nbrs = np.bincount(i, minlength=n) + 1  # the point itself counts
    core = n_nbrs >= config.min_pts

    labels = np.full(n, -1, np.int64)
    if not np.any(core):
        return labels, core
    cc = core[i] & core[j]
    g = csr_matrix((np.ones(int(cc.sum()), np.int8), (i[cc], j[cc])), shape=(n, n))
    _, comp = connected_components(g, directed=False)
    core_idx = np.nonzero(core)[0]
    # Renumber components by first appearance of a core point in input order.
    _, first = np.unique(comp[core_idx], return_index=True)
    order = np.argsort(first)
    rank = np.empty(len(order), np.int64)
    rank[order] = np.arange(len(order))
    remap = dict(zip(np.unique(comp[core_idx]).tolist(), rank.tolist()))
    labels[core_idx] = [remap[c] for c in comp[core_idx].tolist()]

    border = ~core[i] & core[j]
    if np.any(border):
        bi, bl = i[border], labels[j[border]]
        best = np.full(n, np.iinfo(np.int64).max)
        np.minimum.at(best, bi, bl)
        hit = best < np.iinfo(np.int64).max
        labels[hit] = best[hit]
    return labels, core


def row_major(pixels: np.ndarray) -> np.ndarray:
    order = np.lexsort((pixels[:, 0], pixels[:, 1]))
    return pixels[order]


def dbscan(mask: np.ndarray, flow: FlowField, rho: NormalizedImage, config: ClusterConfig,
           timestamp: int = 0, pixels: np.ndarray | None = None) -> list[Cluster]:
    """Cluster the true pixels of ``mask`` (row-major order unless ``pixels`` given)."""
    if pixels is None:
        ys, xs = np.nonzero(mask)
        pixels = np.stack([xs, ys], axis=1)
    labels, _ = dbscan_labels(pixels, flow, rho, config)
    out = []
    for lab in range(int(labels.max()) + 1 if len(labels) else 0):
        members = pixels[labels == lab]
        if len(members) < config.min_pts:  # its border points went to earlier clusters
            continue
        out.append(make_cluster(members, flow, rho, timestamp))
    return out


def make_cluster(members: np.ndarray, flow: FlowField, rho: NormalizedImage, timestamp: int) -> Cluster:
    box, _ = circumscribe(members)
    x, y = members[:, 0], members[:, 1]
    f, fok = flow.sample(x, y)
    mean_flow = f[fok].mean(axis=0) if fok.any() else np.full(2, np.nan)
    return Cluster(members, box, mean_flow, float(np.nanmean(rho.rho[y, x])), timestamp)


def circumscribe(cluster) -> tuple[tuple[int, int, int, int], int]:
    """Tight inclusive box around the members and its width ``W`` in px."""
    members = cluster.members if isinstance(cluster, Cluster) else np.asarray(cluster)
    if len(members) == 0:
        raise EmptyCluster("cluster has no members")
    x0, y0 = members.min(axis=0)
    x1, y1 = members.max(axis=0)
    box = (int(x0), int(y0), int(x1), int(y1))
    return box, box[2] - box[0] + 1


def candidate_pixels(mask: np.ndarray, config: ClusterConfig, pixels: np.ndarray | None = None) -> np.ndarray:
    """Mask pixels that can possibly end up in a cluster (row-major).

    ``C >= w_p |x - y|``, so a core point needs ``min_pts`` pixels within
    ``eps / w_p`` px, and a border point needs a core point that close.
    Everything else is DBSCAN noise whatever its flow and rho are.
    """
    if pixels is None:
        ys, xs = np.nonzero(mask)
        pixels = np.stack([xs, ys], axis=1)
    if config.w_p <= 0 or len(pixels) == 0:
        return pixels
    radius = config.eps / config.w_p
    x, y, grid = _index_grid(pixels, mask.shape)
    offsets = _offsets(radius)
    maybe_core = _reaches(x, y, grid, offsets, config.min_pts - 1)
    return pixels[_near_core(x, y, grid, offsets, maybe_core)]


@njit(cache=True)
def _reaches(x, y, grid, offsets, need):
    """Whether each pixel has at least ``need`` other pixels at the offsets."""
    H, W = grid.shape
    out = np.zeros(len(x), np.bool_)
    for a in range(len(x)):
        k = 0
        for o in range(len(offsets)):
            if k >= need:
                break
            xs = x[a] + offsets[o, 0]
            ys = y[a] + offsets[o, 1]
            if (offsets[o, 0] != 0 or offsets[o, 1] != 0) and 0 <= xs < W and 0 <= ys < H and grid[ys, xs] >= 0:
                k += 1
        out[a] = k >= need
    return out


@njit(cache=True)
def _near_core(x, y, grid, offsets, core):
    n = len(x)
    keep = core.copy()
    buf = np.empty(len(offsets), np.int64)
    for a in range(n):
        if keep[a]:
            continue
        m = _grid_neighbors(x, y, grid, offsets, a, buf)
        for q in range(m):
            if core[buf[q]]:
                keep[a] = True
                break
    return keep


def dump_clusters(path, shape, clusters: list[Cluster]) -> None:
    """Grayscale label image with box outlines, as a portable graymap."""
    from .segment import write_pgm

    img = np.zeros(shape)
    for k, c in enumerate(clusters):
        level = 0.3 + 0.7 * (k + 1) / len(clusters)
        img[c.members[:, 1], c.members[:, 0]] = level
        x0, y0, x1, y1 = c.box
        img[y0, x0 : x1 + 1] = img[y1, x0 : x1 + 1] = 1.0
        img[y0 : y1 + 1, x0] = img[y0 : y1 + 1, x1] = 1.0
    write_pgm(path, img, 0.0, 1.0)
