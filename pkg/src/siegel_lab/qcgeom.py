"""Piecewise quasiconformal maps between marked unit squares.

A square's bottom edge carries marks x_0 = 0 < ... < x_M = 1. A map P -> Q
sends x_j to y_j, is affine on each bottom cell and is the identity on the
other three sides. Maps here are piecewise affine on triangulations. The
target positions of interior vertices come from a mean-value Tutte embedding
refined by projected Newton on a p-norm of the conformal distortion.
Sources made of several saddle-node pieces are cut along polylines into four
sub-polygons, and the construction recurses on the piece count.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import triangle
from matplotlib.tri import Triangulation
from scipy import sparse
from scipy.sparse.linalg import spsolve
from scipy.spatial import cKDTree

from .errors import (DegenerateTriangle, InvalidBreakpoints, RecursionDepthExceeded,
                     SingularDifferential)

# ---------------------------------------------------------------------------
# piecewise-affine maps


def _edges(V: np.ndarray, T: np.ndarray) -> np.ndarray:
    """(t, 2, 2) matrices whose columns are the two edges out of vertex 0."""
    return np.stack([V[T[:, 1]] - V[T[:, 0]], V[T[:, 2]] - V[T[:, 0]]], axis=2)


def _det2(A: np.ndarray) -> np.ndarray:
    return A[..., 0, 0] * A[..., 1, 1] - A[..., 0, 1] * A[..., 1, 0]


def dilatation_of(J: np.ndarray) -> np.ndarray:
    """s1/s2 of 2x2 matrices; inf where the matrix is singular."""
    a = 0.5 * ((J[..., 0, 0] + J[..., 1, 1]) ** 2 + (J[..., 1, 0] - J[..., 0, 1]) ** 2)
    b = 0.5 * ((J[..., 0, 0] - J[..., 1, 1]) ** 2 + (J[..., 1, 0] + J[..., 0, 1]) ** 2)
    # |f_z| and |f_zbar|, so s1 = |f_z| + |f_zbar| and s2 = ||f_z| - |f_zbar||
    fz, fzb = np.sqrt(a), np.sqrt(b)
    lo = np.abs(fz - fzb)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(lo > 0, (fz + fzb) / lo, np.inf)


class PLMap:
    """Affine on each triangle of a source mesh; ``dst`` holds vertex images."""

    def __init__(self, src, dst, tris, identity: bool = False):
        self.src = np.ascontiguousarray(src, float)
        self.dst = np.ascontiguousarray(dst, float)
        self.tris = np.ascontiguousarray(tris, np.int64)
        self.identity = identity
        E = _edges(self.src, self.tris)
        area = _det2(E)
        if np.any(area <= 0):
            raise DegenerateTriangle(f"{int((area <= 0).sum())} source triangles with area <= 0")
        self._Einv = np.linalg.inv(E)
        self._finder = Triangulation(self.src[:, 0], self.src[:, 1], self.tris).get_trifinder()
        self._tree = None

    @property
    def jacobians(self) -> np.ndarray:
        if self.identity:
            return np.broadcast_to(np.eye(2), (len(self.tris), 2, 2)).copy()
        return _edges(self.dst, self.tris) @ self._Einv

    def triangle_dilatation(self) -> np.ndarray:
        return dilatation_of(self.jacobians)

    def min_det(self) -> float:
        return float(_det2(self.jacobians).min())

    def locate(self, pts: np.ndarray, tol: float = 1e-9) -> np.ndarray:
        """Triangle index per point, -1 outside the mesh."""
        pts = np.asarray(pts, float)
        good = np.isfinite(pts).all(axis=1)
        idx = -np.ones(len(pts), np.int64)
        idx[good] = self._finder(pts[good, 0], pts[good, 1])
        miss = np.flatnonzero((idx < 0) & good)
        if miss.size:
            # points on the boundary can fall through the trapezoid map
            if self._tree is None:
                self._tree = cKDTree(self.src[self.tris].mean(axis=1))
            k = min(12, len(self.tris))
            _, cand = self._tree.query(pts[miss], k=k)
            cand = np.atleast_2d(cand).reshape(len(miss), k)
            lam = self._bary(pts[miss, None, :], cand)
            score = lam.min(axis=2)
            best = score.argmax(axis=1)
            ok = score[np.arange(len(miss)), best] >= -tol
            idx[miss[ok]] = cand[np.arange(len(miss)), best][ok]
            rest = miss[~ok]
            # neighbours by centroid can skip a long thin triangle; scan them all
            allt = np.arange(len(self.tris))
            for s in range(0, len(rest), 256):
                r = rest[s:s + 256]
                score = self._bary(pts[r, None, :], allt[None, :]).min(axis=2)
                best = score.argmax(axis=1)
                ok = score[np.arange(len(r)), best] >= -tol
                idx[r[ok]] = best[ok]
        return idx

    def _bary(self, p: np.ndarray, t: np.ndarray) -> np.ndarray:
        v0 = self.src[self.tris[t, 0]]
        l12 = np.einsum("...ij,...j->...i", self._Einv[t], p - v0)
        return np.concatenate([1 - l12.sum(axis=-1, keepdims=True), l12], axis=-1)

    def __call__(self, pts) -> np.ndarray:
        pts = np.asarray(pts, float)
        if self.identity:
            return pts.copy()
        idx = self.locate(pts)
        out = np.full(pts.shape, np.nan)
        ok = idx >= 0
        t = idx[ok]
        lam = self._bary(pts[ok], t)
        out[ok] = np.einsum("ni,nij->nj", lam, self.dst[self.tris[t]])
        return out

    def jacobian(self, pts) -> np.ndarray:
        idx = self.locate(np.asarray(pts, float))
        out = np.full((len(idx), 2, 2), np.nan)
        ok = idx >= 0
        out[ok] = self.jacobians[idx[ok]]
        return out

    def inverse(self) -> "PLMap":
        return PLMap(self.dst, self.src, self.tris, self.identity)


def _mean_value_tutte(P, T, U, fixed) -> np.ndarray:
    """Floater embedding: free vertices are mean-value averages of neighbours."""
    n = len(P)
    rows, cols, vals = [], [], []
    for k in range(3):
        i, j, l = T[:, k], T[:, (k + 1) % 3], T[:, (k + 2) % 3]
        a, b = P[j] - P[i], P[l] - P[i]
        la, lb = np.linalg.norm(a, axis=1), np.linalg.norm(b, axis=1)
        ang = np.arccos(np.clip((a * b).sum(1) / (la * lb), -1.0, 1.0))
        t = np.tan(ang / 2)
        rows += [i, i]
        cols += [j, l]
        vals += [t / la, t / lb]
    W = sparse.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                          shape=(n, n))
    L = (sparse.diags(np.asarray(W.sum(1)).ravel()) - W).tocsr()
    free = ~fixed
    A = L[free][:, free].tocsc()
    B = L[free][:, fixed]
    X = U.copy()
    for c in range(2):
        X[free, c] = spsolve(A, -(B @ U[fixed, c]))
    return X


def _flip_free_step(U, dU, T) -> float:
    """Largest t > 0 with every det(E + s dE), 0 <= s < t, still positive."""
    a, b = U[T[:, 1]] - U[T[:, 0]], U[T[:, 2]] - U[T[:, 0]]
    da, db = dU[T[:, 1]] - dU[T[:, 0]], dU[T[:, 2]] - dU[T[:, 0]]
    c2 = da[:, 0] * db[:, 1] - da[:, 1] * db[:, 0]
    c1 = a[:, 0] * db[:, 1] - a[:, 1] * db[:, 0] + da[:, 0] * b[:, 1] - da[:, 1] * b[:, 0]
    c0 = a[:, 0] * b[:, 1] - a[:, 1] * b[:, 0]
    t = np.full(len(T), np.inf)
    with np.errstate(divide="ignore", invalid="ignore"):
        lin = np.abs(c2) <= 1e-14 * (np.abs(c1) + np.abs(c0))
        r = -c0 / c1
        sel = lin & (r > 0)
        t[sel] = r[sel]
        disc = c1 * c1 - 4 * c2 * c0
        quad = ~lin & (disc >= 0)
        sq = np.sqrt(np.where(quad, disc, 0.0))
        for s in (-1.0, 1.0):
            rr = (-c1 + s * sq) / (2 * c2)
            sel = quad & (rr > 0)
            t[sel] = np.minimum(t[sel], rr[sel])
    return float(t.min())


_HESS_DET = np.array([[0, 0, 0, 1], [0, 0, -1, 0], [0, -1, 0, 0], [1, 0, 0, 0]], float)


def _jacobian_operator(Einv: np.ndarray) -> np.ndarray:
    """B with vec(J) = B @ (x0, y0, x1, y1, x2, y2) per triangle."""
    B = np.zeros((len(Einv), 4, 6))
    for r in range(2):
        for c in range(2):
            for k in range(2):
                B[:, 2 * r + c, 2 * (k + 1) + r] += Einv[:, k, c]
                B[:, 2 * r + c, r] -= Einv[:, k, c]
    return B


def _distortion_energy(U, T, B, p, scale, hess=True):
    """sum_t (D_t/scale)^p with D = |J|_F^2 / (2 det J) = (K + 1/K)/2."""
    j = np.einsum("tij,tj->ti", B, U[T].reshape(len(T), 6))
    f = (j * j).sum(1)
    g = j[:, 0] * j[:, 3] - j[:, 1] * j[:, 2]
    if np.any(g <= 0):
        return math.inf, None, None
    r = f / (2 * g) / scale
    val = float((r ** p).sum())
    if not hess:
        return val, None, None
    dg = np.stack([j[:, 3], -j[:, 2], -j[:, 1], j[:, 0]], 1)
    dD = j / g[:, None] - (f / (2 * g * g))[:, None] * dg
    c1 = p * r ** (p - 1) / scale
    c2 = p * (p - 1) * r ** (p - 2) / scale ** 2
    outer = lambda x, y: np.einsum("ti,tj->tij", x, y)  # noqa: E731
    HD = (np.eye(4)[None] / g[:, None, None]
          - (outer(j, dg) + outer(dg, j)) / (g * g)[:, None, None]
          + (f / g ** 3)[:, None, None] * outer(dg, dg)
          - (f / (2 * g * g))[:, None, None] * _HESS_DET[None])
    Hj = c1[:, None, None] * HD + c2[:, None, None] * outer(dD, dD)
    w, V = np.linalg.eigh(Hj)
    Hj = np.einsum("tij,tj,tkj->tik", V, np.maximum(w, 0.0), V)  # PSD projection
    ge = np.einsum("tji,tj->ti", B, c1[:, None] * dD)
    He = np.einsum("tji,tjk,tkl->til", B, Hj, B)
    return val, ge, He


def _projected_newton(U, free, T, B, p, scale, iters, rtol=1e-12):
    n = len(U)
    dof = np.stack([2 * T, 2 * T + 1], 2).reshape(len(T), 6)
    fmask = np.repeat(free, 2)
    fidx = -np.ones(2 * n, np.int64)
    fidx[fmask] = np.arange(fmask.sum())
    ri = np.repeat(dof, 6, 1).ravel()
    ci = np.tile(dof, (1, 6)).ravel()
    sel = fmask[ri] & fmask[ci]
    nf = int(fmask.sum())
    f, ge, He = _distortion_energy(U, T, B, p, scale)
    for _ in range(iters):
        G = np.bincount(dof.ravel(), ge.ravel(), 2 * n)[fmask]
        H = sparse.coo_matrix((He.reshape(len(T), -1).ravel()[sel], (fidx[ri[sel]], fidx[ci[sel]])),
                              shape=(nf, nf)).tocsc()
        H = H + 1e-12 * abs(H.diagonal()).max() * sparse.identity(nf, format="csc")
        d = -spsolve(H, G)
        dU = np.zeros_like(U)
        dU[free] = d.reshape(-1, 2)
        t = min(1.0, 0.9 * _flip_free_step(U, dU, T))
        while True:
            fn = _distortion_energy(U + t * dU, T, B, p, scale, hess=False)[0]
            if fn <= f + 1e-4 * t * float(G @ d):
                break
            t *= 0.5
            if t < 1e-16:
                return U
        U = U + t * dU
        fprev = f
        f, ge, He = _distortion_energy(U, T, B, p, scale)
        if fprev - f <= rtol * fprev:
            break
    return U


DEFAULT_STAGES = (2, 8, 32, 128)


def fit_interior(P, T, U0, fixed, stages: Sequence[int] = DEFAULT_STAGES, iters: int = 60) -> PLMap:
    """PL map P -> U with boundary values U0[fixed], interior optimized.

    The target boundary must be convex for the initial embedding to be valid.
    Each stage minimizes sum (D_t / D_max)^p for growing p, which pushes the
    largest triangle dilatation down.
    """
    U = _mean_value_tutte(P, T, U0, fixed)
    E = _edges(P, T)
    if np.any(_det2(_edges(U, T)) <= 0):
        raise DegenerateTriangle("initial embedding folds; target boundary not convex?")
    if stages and (~fixed).any():
        B = _jacobian_operator(np.linalg.inv(E))
        Einv = np.linalg.inv(E)
        for p in stages:
            K = dilatation_of(_edges(U, T) @ Einv)
            scale = float((0.5 * (K + 1 / K)).max())
            U = _projected_newton(U, ~fixed, T, B, p, scale, iters)
    return PLMap(P, U, T)


# ---------------------------------------------------------------------------
# marked bottom edges


@dataclass(frozen=True, eq=False)
class PolygonSpec:
    """Unit square whose bottom edge carries ``points`` (both corners included).

    ``breakpoints`` are indices into ``points`` delimiting the saddle-node
    pieces; a linear spec has the single piece (0, M).
    """

    points: np.ndarray
    tag: str = "linear"
    breakpoints: tuple[int, ...] = ()
    C0: float = 1.0

    def __post_init__(self):
        x = np.asarray(self.points, float)
        if x.ndim != 1 or len(x) < 2:
            raise InvalidBreakpoints("need at least the two bottom corners")
        if x[0] != 0.0 or x[-1] != 1.0 or np.any(np.diff(x) <= 0):
            raise InvalidBreakpoints("points must increase strictly from 0 to 1")
        object.__setattr__(self, "points", x)
        bp = tuple(self.breakpoints) or (0, len(x) - 1)
        if bp[0] != 0 or bp[-1] != len(x) - 1 or any(b2 <= b1 for b1, b2 in zip(bp, bp[1:])):
            raise InvalidBreakpoints(f"breakpoints {bp} must increase from 0 to {len(x) - 1}")
        object.__setattr__(self, "breakpoints", bp)
        if self.tag not in ("saddle", "linear"):
            raise ValueError(f"unknown geometry tag {self.tag!r}")

    @property
    def m(self) -> int:
        return len(self.points)

    @property
    def lengths(self) -> np.ndarray:
        return np.diff(self.points)

    @property
    def pieces(self) -> int:
        return len(self.breakpoints) - 1

    def saddle_band(self) -> float:
        """Smallest C with every cell within [1/C, C] times its normalized profile value."""
        ratios = []
        for lo, hi in zip(self.breakpoints, self.breakpoints[1:]):
            prof = _saddle_profile(hi - lo)
            r = self.lengths[lo:hi] / (prof * (self.points[hi] - self.points[lo]))
            ratios.append(r)
        r = np.concatenate(ratios)
        return float(math.sqrt(r.max() / r.min()))

    def linear_band(self) -> float:
        r = self.lengths * (self.m - 1)
        return float(max(r.max(), 1 / r.min()))


def _saddle_profile(n: int) -> np.ndarray:
    """Cell weights 1/min(k, n-k+1)^2, k = 1..n, normalized to sum 1."""
    k = np.arange(1, n + 1)
    w = 1.0 / np.minimum(k, n - k + 1) ** 2
    return w / w.sum()


def make_saddle_partition(m: int, pieces: Sequence[int] | None = None, C0: float = 1.0,
                          weights: Sequence[float] | None = None,
                          rng: np.random.Generator | None = None) -> PolygonSpec:
    """m marked points (corners included) with saddle-node cells on each piece.

    ``pieces`` lists breakpoint indices 0 = m_0 < ... < m_l = m - 1. Piece
    lengths follow ``weights`` (equal by default). With ``rng`` and C0 > 1 each
    cell is perturbed by a factor in [C0^-1/2, C0^1/2] before normalizing, so
    the band stays within C0.
    """
    if m < 2:
        raise InvalidBreakpoints("m >= 2 required")
    bp = tuple(int(b) for b in (pieces if pieces is not None else (0, m - 1)))
    if bp[0] != 0 or bp[-1] != m - 1 or any(b2 <= b1 for b1, b2 in zip(bp, bp[1:])):
        raise InvalidBreakpoints(f"breakpoints {bp} must increase from 0 to {m - 1}")
    l = len(bp) - 1
    w = np.ones(l) if weights is None else np.asarray(weights, float)
    if len(w) != l or np.any(w <= 0):
        raise InvalidBreakpoints("one positive weight per piece required")
    w = w / w.sum()
    cells = []
    for i, (lo, hi) in enumerate(zip(bp, bp[1:])):
        c = _saddle_profile(hi - lo)
        if rng is not None and C0 > 1:
            c = c * np.exp(rng.uniform(-0.5, 0.5, len(c)) * math.log(C0))
            c = c / c.sum()
        cells.append(c * w[i])
    pts = np.concatenate([[0.0], np.cumsum(np.concatenate(cells))])
    pts[-1] = 1.0
    return PolygonSpec(pts, "saddle", bp, C0)


def linear_partition(m: int) -> PolygonSpec:
    return PolygonSpec(np.linspace(0.0, 1.0, m), "linear")


# ---------------------------------------------------------------------------
# single-piece leaf: unit square to unit square


def _corner_fan(c, e1, e2, R0, k, rings, beta):
    """Polar patch at corner c: k sectors, ``rings`` geometric rings of ratio beta."""
    c, e1, e2 = (np.asarray(v, float) for v in (c, e1, e2))
    th = 0.5 * np.pi * np.arange(k + 1) / k
    pts = [c] + [c + R0 * beta ** j * (np.cos(t) * e1 + np.sin(t) * e2)
                 for j in range(rings + 1) for t in th]
    idx = lambda j, i: 1 + j * (k + 1) + i  # noqa: E731
    tris = []
    for j in range(rings):
        for i in range(k):
            a, b, cc, d = idx(j, i), idx(j, i + 1), idx(j + 1, i), idx(j + 1, i + 1)
            tris += [(a, b, d), (a, d, cc)]
    tris += [(idx(rings, i), idx(rings, i + 1), 0) for i in range(k)]
    return np.array(pts), np.array(tris)


def _weld(V, T, digits=13):
    key = np.round(V, digits)
    _, first, inv = np.unique(key, axis=0, return_index=True, return_inverse=True)
    inv = inv.ravel()
    P = V[first]
    T = inv[T]
    E = _edges(P, T)
    neg = _det2(E) < 0
    T[neg] = T[neg][:, [0, 2, 1]]
    return P, T


def square_mesh(x: np.ndarray, fan_sectors: int = 16, fan_ratio: float = 0.6,
                fan_depth: float = 1e-4, side_n: int = 8, min_angle: float = 30.0):
    """Triangulate the unit square with the bottom marks as vertices.

    Each bottom corner gets a polar fan. Near a corner the bottom edge is
    rescaled while the side is not, and a plain corner triangle would carry
    that whole ratio as its dilatation.
    """
    x = np.asarray(x, float)
    R0 = 0.5 * min(x[1] - x[0], x[-1] - x[-2], 0.25)
    rings = max(1, int(math.ceil(math.log(fan_depth / R0) / math.log(fan_ratio))))
    fl, tl = _corner_fan((0, 0), (1, 0), (0, 1), R0, fan_sectors, rings, fan_ratio)
    fr, tr = _corner_fan((1, 0), (0, 1), (-1, 0), R0, fan_sectors, rings, fan_ratio)
    th = 0.5 * np.pi * np.arange(fan_sectors + 1) / fan_sectors
    arc_l = [(R0 * math.cos(t), R0 * math.sin(t)) for t in th[::-1]][1:-1]
    arc_r = [(1 - R0 * math.cos(t), R0 * math.sin(t)) for t in th][1:-1]
    bottom = [(R0, 0.0)] + [(v, 0.0) for v in x[1:-1]] + [(1 - R0, 0.0)]
    right = [(1.0, y) for y in np.linspace(R0, 1, side_n + 1)[:-1]]
    top = [(1 - t, 1.0) for t in np.linspace(0, 1, side_n + 1)[:-1]]
    left = [(0.0, 1 - t) for t in np.linspace(0, 1 - R0, side_n + 1)]
    loop = np.array(bottom + arc_r + right + top + left + arc_l)
    n = len(loop)
    seg = np.column_stack([np.arange(n), (np.arange(n) + 1) % n])
    out = triangle.triangulate({"vertices": loop, "segments": seg}, f"pq{min_angle}Y")
    V = np.concatenate([out["vertices"], fl, fr])
    T = np.concatenate([out["triangles"], tl + len(out["vertices"]),
                        tr + len(out["vertices"]) + len(fl)])
    return _weld(V, T)


def _square_boundary(P, x, y):
    """Boundary images: bottom affine per cell, other sides fixed."""
    U = P.copy()
    eps = 1e-14
    bot = np.abs(P[:, 1]) <= eps
    U[bot, 0] = np.interp(P[bot, 0], x, y)
    U[bot, 1] = 0.0
    fixed = (bot | (np.abs(P[:, 1] - 1) <= eps) | (np.abs(P[:, 0]) <= eps)
             | (np.abs(P[:, 0] - 1) <= eps))
    return U, fixed


@dataclass
class SquareMap:
    """Square-to-square evaluator with bottom marks ``x -> y``."""

    x: np.ndarray
    y: np.ndarray
    pl: PLMap

    def __call__(self, pts):
        return self.pl(pts)

    def jacobian(self, pts):
        return self.pl.jacobian(pts)

    @property
    def piece_max_dilatation(self) -> float:
        return float(self.pl.triangle_dilatation().max())

    @property
    def n_triangles(self) -> int:
        return len(self.pl.tris)


def square_leaf(x, y, stages: Sequence[int] = DEFAULT_STAGES, iters: int = 60, **mesh_kw) -> SquareMap:
    """Leaf map between unit squares with bottom marks x -> y (same count)."""
    x, y = np.asarray(x, float), np.asarray(y, float)
    if len(x) != len(y):
        raise InvalidBreakpoints(f"mark counts differ: {len(x)} vs {len(y)}")
    P, T = square_mesh(x, **mesh_kw)
    if np.array_equal(x, y):
        return SquareMap(x, y, PLMap(P, P, T, identity=True))
    U0, fixed = _square_boundary(P, x, y)
    return SquareMap(x, y, fit_interior(P, T, U0, fixed, stages, iters))


# ---------------------------------------------------------------------------
# polygons with four sides, standardized to the unit square

_SQUARE = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])


def _arc_fractions(path: np.ndarray) -> np.ndarray:
    s = np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(path, axis=0), axis=1))])
    return s / s[-1]


def _split_dividing_edges(P, T, on_side, max_rounds=20):
    """Split interior edges whose endpoints sit on one straight target side.

    A mean-value embedding is only guaranteed injective when no such edge
    exists. The midpoint of such an edge is interior, so it becomes a new
    free vertex.
    """
    P, T, on_side = P.copy(), T.copy(), list(on_side)
    for _ in range(max_rounds):
        edges: dict = {}
        for t, tri in enumerate(T):
            for k in range(3):
                u, v = int(tri[k]), int(tri[(k + 1) % 3])
                edges.setdefault((min(u, v), max(u, v)), []).append(t)
        bad = [(e, ts) for e, ts in edges.items()
               if len(ts) == 2 and on_side[e[0]] & on_side[e[1]]]
        if not bad:
            return P, T, on_side
        used: set = set()
        new_P, new_T, drop = [], [], []
        for (u, v), (t1, t2) in bad:
            if t1 in used or t2 in used:
                continue
            used.update((t1, t2))
            w = len(P) + len(new_P)
            new_P.append(0.5 * (P[u] + P[v]))
            on_side.append(0)
            for t in (t1, t2):
                tri = list(T[t])
                o = next(x for x in tri if x not in (u, v))
                k = tri.index(o)
                a, b = tri[(k + 1) % 3], tri[(k + 2) % 3]  # ccw order o, a, b
                new_T += [(o, a, w), (o, w, b)]
                drop.append(t)
        P = np.concatenate([P, np.array(new_P)])
        keep = np.setdiff1d(np.arange(len(T)), drop)
        T = np.concatenate([T[keep], np.array(new_T)])
    raise DegenerateTriangle("could not remove edges joining boundary points of one side")


def polygon_to_square(loop, corners, stages: Sequence[int] = (2, 8), iters: int = 30,
                      min_angle: float = 20.0, cells: int = 400) -> PLMap:
    """PL map from a ccw polygon onto the unit square.

    ``corners`` are the loop indices sent to (0,0), (1,0), (1,1), (0,1). Each
    of the four boundary paths between them goes to its side by arc length,
    so every polygon edge is mapped affinely.
    """
    loop = np.asarray(loop, float)
    n = len(loop)
    seg = np.column_stack([np.arange(n), (np.arange(n) + 1) % n])
    x, y = loop[:, 0], loop[:, 1]
    area = 0.5 * abs(float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1))))
    out = triangle.triangulate({"vertices": loop, "segments": seg},
                               f"pq{min_angle}a{area / cells:.12f}")
    P, T = out["vertices"], out["triangles"]
    E = _edges(P, T)
    neg = _det2(E) < 0
    T[neg] = T[neg][:, [0, 2, 1]]
    # boundary parameter of every mesh vertex, loop vertices first
    paths = []
    for s in range(4):
        i0, i1 = corners[s], corners[(s + 1) % 4]
        idx = list(range(i0, i1 + 1)) if i1 > i0 else list(range(i0, n)) + list(range(0, i1 + 1))
        paths.append(loop[idx])
    U = P.copy()
    fixed = np.zeros(len(P), bool)
    on_side = [0] * len(P)
    for s, path in enumerate(paths):
        fr = _arc_fractions(path)
        seg_len = np.linalg.norm(np.diff(path, axis=0), axis=1)
        a, b = _SQUARE[s], _SQUARE[(s + 1) % 4]
        for v in range(len(P)):
            d = path[1:] - path[:-1]
            w = P[v] - path[:-1]
            t = np.clip((w * d).sum(1) / np.maximum((d * d).sum(1), 1e-300), 0, 1)
            dist = np.linalg.norm(w - t[:, None] * d, axis=1)
            k = int(dist.argmin())
            if dist[k] <= 1e-12 * max(1.0, seg_len.max()):
                u = fr[k] + t[k] * (fr[k + 1] - fr[k])
                U[v] = a + u * (b - a)
                fixed[v] = True
                on_side[v] |= 1 << s
    P, T, on_side = _split_dividing_edges(P, T, on_side)
    U = np.concatenate([U, P[len(U):]])
    fixed = np.concatenate([fixed, np.zeros(len(P) - len(fixed), bool)])
    return fit_interior(P, T, U, fixed, stages, iters)


# ---------------------------------------------------------------------------
# several saddle-node pieces: cut along polylines, recurse

_C60, _S60 = 0.5, math.sqrt(3) / 2
_C45 = math.sqrt(0.5)


def _hat(x0, x1, nseg_up, flat_x, nseg_down):
    """Polyline over [x0, x1]: up at 60 degrees, flat, down at 60 degrees."""
    w = x1 - x0
    p0, p1 = np.array([x0, 0.0]), np.array([x0 + w / 2 * _C60, w / 2 * _S60])
    p2, p3 = np.array([x1 - w / 2 * _C60, w / 2 * _S60]), np.array([x1, 0.0])
    up = [p0 + (p1 - p0) * t for t in np.linspace(0, 1, nseg_up + 1)]
    flat = [np.array([p1[0] + (p2[0] - p1[0]) * t, p1[1]]) for t in flat_x]
    down = [p2 + (p3 - p2) * t for t in np.linspace(0, 1, nseg_down + 1)]
    return np.array(up[:-1] + flat[:-1] + down)


def _s_polyline(a: float) -> np.ndarray:
    # the second leg rises at 45 degrees; at 60 it would lie on the hat above
    return np.array([[0.0, 0.0], [a / 3 * _C45, a / 3 * _C45],
                     [a - a / 3 * _C45, a / 3 * _C45], [a, 0.0]])


@dataclass
class Cut:
    """Polylines L and S for one recursion step on one side."""

    a: float
    L: np.ndarray    # n + 1 vertices from (0,0) to (1,0) touching (a,0) at index n-3
    S: np.ndarray    # 4 vertices from (0,0) to (a,0)

    @property
    def n(self) -> int:
        return len(self.L) - 1


def source_cut(a: float, n: int) -> Cut:
    flat = np.concatenate([[0.0], np.cumsum(_saddle_profile(n - 5))])
    left = _hat(0.0, a, 1, flat, 1)
    right = _hat(a, 1.0, 1, np.array([0.0, 1.0]), 1)
    return Cut(a, np.concatenate([left, right[1:]]), _s_polyline(a))


def target_cut(a: float, n: int) -> Cut:
    n1, n2 = n // 3, (2 * n) // 3
    left = _hat(0.0, a, n1, np.linspace(0, 1, n2 - n1 + 1), n - 3 - n2)
    right = _hat(a, 1.0, 1, np.array([0.0, 1.0]), 1)
    return Cut(a, np.concatenate([left, right[1:]]), _s_polyline(a))


def _regions(c: Cut):
    """(loop, corners, bottom-mark fractions or None) for P_1..P_4."""
    n, a, L, S = c.n, c.a, c.L, c.S
    top = np.array([[1.0, 1.0], [0.0, 1.0]])
    p1 = (np.concatenate([L, top]), (0, n, n + 1, n + 2), _arc_fractions(L))
    p2 = (np.array([[a, 0.0], [1.0, 0.0], L[n - 1], L[n - 2]]), (0, 1, 2, 3), None)
    l1 = L[n - 3::-1]
    p3 = (np.concatenate([l1, S[1:3]]), (0, n - 3, n - 2, n - 1), _arc_fractions(l1))
    p4 = (np.array([[0.0, 0.0], [a, 0.0], S[2], S[1]]), (0, 1, 2, 3), None)
    return [p1, p2, p3, p4]


def _reflect(pts):
    out = np.array(pts, float, copy=True)
    out[..., 0] = 1.0 - out[..., 0]
    return out


_R = np.diag([-1.0, 1.0])


class Chain:
    """psi^{-1} o sigma o phi on one sub-polygon."""

    def __init__(self, phi: PLMap, sigma, psi_inv: PLMap):
        self.phi, self.sigma, self.psi_inv = phi, sigma, psi_inv

    def locate(self, pts):
        return self.phi.locate(pts)

    def __call__(self, pts):
        return self.psi_inv(self.sigma(self.phi(pts)))

    def jacobian(self, pts):
        u = self.phi(pts)
        v = self.sigma(u)
        return self.psi_inv.jacobian(v) @ self.sigma.jacobian(u) @ self.phi.jacobian(pts)

    def sample_points(self):
        c = _sample_points(self.sigma)
        back = self.phi.inverse()(c)
        return np.concatenate([self.phi.src[self.phi.tris].mean(axis=1),
                               back[np.isfinite(back).all(axis=1)]])


def _sample_points(ev) -> np.ndarray:
    if isinstance(ev, SquareMap):
        ev = ev.pl
    if isinstance(ev, PLMap):
        return ev.src[ev.tris].mean(axis=1)
    return ev.sample_points()


class CompositeMap:
    """Region maps glued along the cuts; each region has its own mesh."""

    def __init__(self, regions, x, y, mirrored=False, depth=1, cuts=None):
        self.regions = regions
        self.cuts = cuts
        self.x, self.y = np.asarray(x, float), np.asarray(y, float)
        self.mirrored = mirrored
        self.depth = depth

    def _apply(self, pts, want_jac):
        pts = np.asarray(pts, float)
        q = _reflect(pts) if self.mirrored else pts
        out = np.full(q.shape, np.nan)
        jac = np.full((len(q), 2, 2), np.nan) if want_jac else None
        todo = np.ones(len(q), bool)
        for reg in self.regions:
            if not todo.any():
                break
            sub = np.flatnonzero(todo)
            hit = sub[reg.locate(q[sub]) >= 0]
            if not hit.size:
                continue
            out[hit] = reg(q[hit])
            if want_jac:
                jac[hit] = reg.jacobian(q[hit])
            todo[hit] = False
        if self.mirrored:
            out = _reflect(out)
            if want_jac:
                jac = _R @ jac @ _R
        return out, jac

    def __call__(self, pts):
        return self._apply(pts, False)[0]

    def jacobian(self, pts):
        return self._apply(pts, True)[1]

    def sample_points(self) -> np.ndarray:
        """Points meeting every triangle of every mesh involved."""
        pts = np.concatenate([_sample_points(r) for r in self.regions])
        return _reflect(pts) if self.mirrored else pts

    @property
    def piece_max_dilatation(self) -> float:
        return float(np.nanmax(dilatation_of(self.jacobian(self.sample_points()))))


def build_map(src: PolygonSpec, dst: PolygonSpec, max_depth: int = 6,
              stages: Sequence[int] = DEFAULT_STAGES, iters: int = 60,
              _depth: int = 0):
    """Evaluator for P -> Q sending src.points to dst.points, edges linearly."""
    if src.m != dst.m:
        raise InvalidBreakpoints(f"src has {src.m} marks, dst has {dst.m}")
    l = src.pieces
    if l == 1:
        return square_leaf(src.points, dst.points, stages, iters)
    if _depth >= max_depth:
        raise RecursionDepthExceeded(f"{l} pieces left at depth {_depth}")
    bp = src.breakpoints
    if bp[1] - bp[0] < bp[-1] - bp[-2]:
        # reflect so that the first piece is at least as long as the last
        rs = PolygonSpec(1 - src.points[::-1], src.tag, tuple(src.m - 1 - b for b in bp[::-1]), src.C0)
        rd = PolygonSpec(1 - dst.points[::-1], dst.tag, (), dst.C0)
        inner = build_map(rs, rd, max_depth, stages, iters, _depth)
        if isinstance(inner, CompositeMap):
            inner.mirrored = not inner.mirrored
            inner.x, inner.y = src.points, dst.points
            return inner
        return CompositeMap([inner.pl], src.points, dst.points, mirrored=True)
    M, k = bp[-1], bp[-2]
    n = M // (M - k) + 16
    a, a2 = float(src.points[k]), float(dst.points[k])
    cs, ct = source_cut(a, n), target_cut(a2, n)
    rs, rt = _regions(cs), _regions(ct)
    sub_src = PolygonSpec(src.points[:k + 1] / a, src.tag, bp[:-1], src.C0)
    sub_dst = PolygonSpec(dst.points[:k + 1] / a2, dst.tag, (), dst.C0)
    x2 = (src.points[k:] - a) / (1 - a)
    y2 = (dst.points[k:] - a2) / (1 - a2)
    x2[-1] = y2[-1] = 1.0
    sigmas = [square_leaf(rs[0][2], rt[0][2], stages, iters),
              square_leaf(x2, y2, stages, iters),
              square_leaf(rs[2][2], rt[2][2], stages, iters),
              build_map(sub_src, sub_dst, max_depth, stages, iters, _depth + 1)]
    regions = []
    for (ls, cs_, _), (lt, ct_, _), sigma in zip(rs, rt, sigmas):
        chain = Chain(polygon_to_square(ls, cs_), sigma, polygon_to_square(lt, ct_).inverse())
        regions.append(chain)
    return CompositeMap(regions, src.points, dst.points, depth=_depth + 1, cuts=(cs, ct))


# ---------------------------------------------------------------------------
# dilatation estimates


@dataclass
class QcMapReport:
    sample_grid: int
    max_dilatation: float
    edge_linearity_residual: float
    orientation_certificate: bool
    min_jacobian: float = math.nan
    piece_max_dilatation: float | None = None
    argmax: tuple[float, float] | None = None
    field: np.ndarray | None = field(default=None, repr=False)

    def row(self) -> dict:
        return {"sample_grid": self.sample_grid, "max_dilatation": self.max_dilatation,
                "edge_linearity_residual": self.edge_linearity_residual,
                "orientation_certificate": self.orientation_certificate,
                "min_jacobian": self.min_jacobian,
                "piece_max_dilatation": self.piece_max_dilatation}


def _boundary_residual(ev, x, y, per_cell: int = 8, per_side: int = 256) -> float:
    t = (np.arange(per_cell) + 0.5) / per_cell
    s = np.concatenate([x, (x[:-1, None] + np.diff(x)[:, None] * t).ravel()])
    bottom = np.column_stack([s, np.zeros_like(s)])
    want = np.column_stack([np.interp(s, x, y), np.zeros_like(s)])
    u = np.linspace(0.0, 1.0, per_side + 1)
    sides = np.concatenate([np.column_stack([np.ones_like(u), u]),
                            np.column_stack([u, np.ones_like(u)]),
                            np.column_stack([np.zeros_like(u), u])])
    pts = np.concatenate([bottom, sides])
    got = ev(pts)
    err = np.abs(got - np.concatenate([want, sides]))
    if not np.isfinite(err).all():
        return math.inf
    return float(err.max())


def dilatation_field(ev: Callable, grid: int = 512, h: float = 2.0 ** -20,
                     marks: tuple[np.ndarray, np.ndarray] | None = None,
                     chunk: int = 65536, keep_field: bool = False) -> QcMapReport:
    """Dilatation s1/s2 by central differences on the cell centres of a grid x grid mesh.

    ``marks = (x, y)`` gives the expected bottom correspondence; by default it
    is read from ``ev.x``, ``ev.y`` when present, otherwise the identity.
    """
    c = (np.arange(grid) + 0.5) / grid
    X, Y = np.meshgrid(c, c, indexing="xy")
    pts = np.column_stack([X.ravel(), Y.ravel()])
    K = np.empty(len(pts))
    dets = np.empty(len(pts))
    ex, ey = np.array([h, 0.0]), np.array([0.0, h])
    for i in range(0, len(pts), chunk):
        q = pts[i:i + chunk]
        fx = (ev(q + ex) - ev(q - ex)) / (2 * h)
        fy = (ev(q + ey) - ev(q - ey)) / (2 * h)
        J = np.stack([fx, fy], axis=-1)
        if not np.isfinite(J).all():
            bad = q[~np.isfinite(J).all(axis=(1, 2))][0]
            raise SingularDifferential(f"non-finite differential near {tuple(bad)}")
        s = np.linalg.svd(J, compute_uv=False)
        if (s[:, 1] <= 0).any():
            raise SingularDifferential("rank-deficient differential on the grid")
        K[i:i + chunk] = s[:, 0] / s[:, 1]
        dets[i:i + chunk] = _det2(J)
    if marks is None:
        marks = (getattr(ev, "x", np.array([0.0, 1.0])), getattr(ev, "y", np.array([0.0, 1.0])))
    j = int(np.argmax(K))
    piece = getattr(ev, "piece_max_dilatation", None)
    return QcMapReport(
        sample_grid=grid,
        max_dilatation=float(K[j]),
        edge_linearity_residual=_boundary_residual(ev, *map(np.asarray, marks)),
        orientation_certificate=bool((dets > 0).all()),
        min_jacobian=float(dets.min()),
        piece_max_dilatation=piece,
        argmax=(float(pts[j, 0]), float(pts[j, 1])),
        field=K.reshape(grid, grid) if keep_field else None,
    )


def build_polygon_map(src: PolygonSpec, dst: PolygonSpec, grid: int = 512, **kw):
    """(evaluator, report) for the map P -> Q sending src.points to dst.points."""
    ev = build_map(src, dst, **kw)
    return ev, dilatation_field(ev, grid)


def fit_growth(ms, K) -> float:
    """Least-squares C in K ~ C (1 + log^2 m)."""
    g = 1.0 + np.log(np.asarray(ms, float)) ** 2
    K = np.asarray(K, float)
    return float((K * g).sum() / (g * g).sum())


def growth_sweep(ms: Sequence[int], pieces: int = 1, grid: int = 512, C0: float = 1.0,
                 rng: np.random.Generator | None = None, **kw) -> list[dict]:
    """One row per m: measured K and its quotient by 1 + log^2 m.

    ``pieces`` equal-length saddle pieces; ``m`` must make them fit
    (m - 1 divisible by ``pieces``).
    """
    rows = []
    for m in ms:
        if (m - 1) % pieces:
            raise InvalidBreakpoints(f"m={m} does not split into {pieces} equal pieces")
        step = (m - 1) // pieces
        bp = tuple(range(0, m, step)) if pieces > 1 else None
        src = make_saddle_partition(m, bp, C0=C0, rng=rng)
        _, rep = build_polygon_map(src, linear_partition(m), grid=grid, **kw)
        rows.append({"m": m, "l": pieces, "max_dilatation": rep.max_dilatation,
                     "quotient": rep.max_dilatation / (1 + math.log(m) ** 2),
                     "orientation_certificate": rep.orientation_certificate,
                     "edge_linearity_residual": rep.edge_linearity_residual})
    C = fit_growth([r["m"] for r in rows], [r["max_dilatation"] for r in rows])
    for r in rows:
        r["fitted_C"] = C
    return rows


def growth_csv(rows: Sequence[dict]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["m", "l", "max_dilatation", "fitted_C"])
    for r in rows:
        w.writerow([r["m"], r["l"], repr(float(r["max_dilatation"])), repr(float(r["fitted_C"]))])
    return buf.getvalue()


def _heat(t: float) -> str:
    # white -> orange -> dark red
    t = min(max(t, 0.0), 1.0)
    r = 255 if t < 0.5 else int(255 - 2 * (t - 0.5) * 140)
    g = int(255 - t * 220)
    b = int(255 * (1 - t) ** 2)
    return f"#{r:02x}{g:02x}{b:02x}"


def _poly_svg(pts, ox, size, stroke):
    s = " ".join(f"{ox + p[0] * size:.3f},{(1 - p[1]) * size + 10:.3f}" for p in pts)
    return f'<polyline points="{s}" fill="none" stroke="{stroke}" stroke-width="1"/>'


def to_svg(ev, report: QcMapReport | None = None, heat_grid: int = 64, size: float = 400.0) -> str:
    """Source square with cuts and log K heat map on the left, target square on the right."""
    if report is None or report.field is None:
        report = dilatation_field(ev, heat_grid, keep_field=True)
    F = report.field
    n = F.shape[0]
    lk = np.log(F)
    top = lk.max() if lk.max() > 0 else 1.0
    ox2 = size + 40
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{2 * size + 50:.0f}" '
           f'height="{size + 40:.0f}">']
    cell = size / n
    for i in range(n):
        for j in range(n):
            out.append(f'<rect x="{10 + j * cell:.3f}" y="{10 + (n - 1 - i) * cell:.3f}" '
                       f'width="{cell:.3f}" height="{cell:.3f}" fill="{_heat(lk[i, j] / top)}"/>')
    for ox in (10.0, ox2):
        out.append(_poly_svg(_SQUARE[[0, 1, 2, 3, 0]], ox, size, "black"))
    cuts = getattr(ev, "cuts", None)
    if cuts is not None:
        flip = getattr(ev, "mirrored", False)
        for ox, c in zip((10.0, ox2), cuts):
            for path in (c.L, c.S):
                out.append(_poly_svg(_reflect(path) if flip else path, ox, size, "#1f4e9c"))
    for ox, marks in ((10.0, ev.x), (ox2, ev.y)):
        for v in marks:
            out.append(f'<circle cx="{ox + v * size:.3f}" cy="{size + 10:.3f}" r="1.5" fill="black"/>')
    out.append(f'<text x="10" y="{size + 32:.0f}" font-size="12">max K = '
               f'{report.max_dilatation:.4g} (grid {report.sample_grid})</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
