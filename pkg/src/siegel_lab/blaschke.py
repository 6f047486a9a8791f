"""Blaschke premodels B(z) = e^{2 pi i t} z^d prod (z - b_i)/(1 - conj(b_i) z), |b_i| > 1.

With m = d - 1 factors the degree is 2d - 1. On the unit circle the lift is

    F(x) = t + x + sum_i [arg(b_i) + arg(1 - e^{2 pi i x}/b_i)] / pi

which is continuous in x because |e^{2 pi i x}/b_i| < 1.
"""

from __future__ import annotations

import csv
import io
import json
import math
import warnings
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Sequence

import numpy as np
from scipy.interpolate import PchipInterpolator
from scipy.optimize import brentq, minimize_scalar

from . import circlemap as cm
from .contfrac import RotationNumber
from .errors import (BracketExhausted, DegenerateCell, ExtensionInversionFailed, GridTooCoarse,
                     NotMonotone, OrbitTooSparse, RotationMismatch)

TWO_PI = 2 * math.pi


@dataclass(frozen=True, eq=False)
class BlaschkeProduct:
    t: float
    zeros: tuple[complex, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "zeros", tuple(complex(b) for b in self.zeros))
        if any(abs(b) <= 1 for b in self.zeros):
            raise ValueError("zeros of the factors must lie outside the closed unit disk")

    @property
    def d(self) -> int:
        return len(self.zeros) + 1

    @property
    def degree(self) -> int:
        return 2 * len(self.zeros) + 1

    @property
    def lam(self) -> complex:
        return complex(math.cos(TWO_PI * self.t), math.sin(TWO_PI * self.t))

    def with_t(self, t: float) -> "BlaschkeProduct":
        return BlaschkeProduct(t, self.zeros)

    def __call__(self, z):
        z = np.asarray(z, dtype=complex)
        out = self.lam * z ** self.d
        for b in self.zeros:
            out = out * (z - b) / (1 - np.conj(b) * z)
        return out if out.ndim else complex(out)

    def derivative(self, z):
        z = np.asarray(z, dtype=complex)
        logd = self.d / z
        for b in self.zeros:
            logd = logd + 1 / (z - b) + np.conj(b) / (1 - np.conj(b) * z)
        out = self(z) * logd
        return out if np.ndim(out) else complex(out)

    # circle restriction ------------------------------------------------
    @property
    def _offset(self) -> float:
        return self.t + sum(math.atan2(b.imag, b.real) for b in self.zeros) / math.pi

    def lift(self, x):
        """Lift of B on the circle, x in R/Z coordinates."""
        s = self._offset
        if np.ndim(x) == 0:
            x = float(x)
            acc = s + x
            for b in self.zeros:
                c = 1 / b
                ang = TWO_PI * x + math.atan2(c.imag, c.real)
                r = abs(c)
                acc += math.atan2(-r * math.sin(ang), 1 - r * math.cos(ang)) / math.pi
            return acc
        x = np.asarray(x, dtype=float)
        acc = s + x
        for b in self.zeros:
            w = 1 - np.exp(2j * np.pi * x) / b
            acc = acc + np.angle(w) / np.pi
        return acc

    def lift_derivative(self, x):
        z = np.exp(2j * np.pi * np.asarray(x, dtype=float))
        out = np.ones_like(np.real(z))
        for b in self.zeros:
            out = out - 2 * np.real(z / (b - z))
        return out

    def lift_second_derivative(self, x):
        z = np.exp(2j * np.pi * np.asarray(x, dtype=float))
        out = np.zeros_like(np.real(z))
        for b in self.zeros:
            out = out - 2 * np.real(2j * np.pi * z * b / (b - z) ** 2)
        return out

    def handle(self) -> cm.CircleMapHandle:
        crit = tuple(critical_args_on_circle(self)) if self.zeros else ()
        return cm.CircleMapHandle("blaschke", self.lift, crit, None, None, {"t": self.t})

    def to_json(self) -> dict:
        return {"t": self.t, "zeros": [[b.real, b.imag] for b in self.zeros],
                "degree": self.degree}

    @classmethod
    def from_json(cls, obj: dict) -> "BlaschkeProduct":
        B = cls(float(obj["t"]), tuple(complex(re, im) for re, im in obj.get("zeros", [])))
        if "degree" in obj and obj["degree"] != B.degree:
            raise ValueError("degree does not match zero count")
        return B


def build_dg(t: float = 0.0) -> BlaschkeProduct:
    """e^{2 pi i t} z^2 (z - 3)/(1 - 3z); double critical point at z = 1."""
    return BlaschkeProduct(t, (3.0 + 0j,))


def rotation_family(t: float = 0.0) -> BlaschkeProduct:
    return BlaschkeProduct(t, ())


def critical_args_on_circle(B: BlaschkeProduct, grid: int = 2 ** 14,
                            tol: float = 1e-7) -> list[float]:
    """Circle coordinates in [0, 1) where the lift derivative vanishes.

    Critical points of a circle homeomorphism are minima of F' with value 0:
    bracket sign changes of F'' (- to +) on the grid, then bisect.
    """
    if not B.zeros:
        return []
    x = (np.arange(grid) + 0.5) / grid  # offset grid: a root at 0 sits mid-cell
    f2 = B.lift_second_derivative(x)
    nxt = np.roll(f2, -1)
    cells = np.where((f2 < 0) & (nxt >= 0))[0]
    out = []
    for k in cells:
        a = x[k]
        b = x[k] + 1.0 / grid
        g = lambda s: float(B.lift_second_derivative(s))
        r = brentq(g, a, b, xtol=1e-15) if g(a) * g(b) < 0 else b
        if abs(float(B.lift_derivative(r))) < tol:
            out.append(r % 1.0)
    out = sorted(0.0 if abs(r - 1) < 1e-12 or abs(r) < 1e-12 else r for r in out)
    if len(out) > 2 * (B.d - 1):
        raise GridTooCoarse(f"{len(out)} critical arguments exceed the bound {2 * (B.d - 1)}")
    return out


def symmetric_two_critical(phi: float, t: float = 0.0) -> BlaschkeProduct:
    """Degree-5 model with zeros r e^{+-i phi}, r chosen so that min F' = 0.

    Conjugate-symmetric zeros make F'(x) = F'(-x), so the two critical
    points sit at +-x_c.
    """
    def min_deriv(r):
        B = BlaschkeProduct(t, (r * np.exp(1j * phi), r * np.exp(-1j * phi)))
        xs = np.linspace(0, 0.5, 2049)
        vals = B.lift_derivative(xs)
        k = int(np.argmin(vals))
        lo, hi = xs[max(k - 1, 0)], xs[min(k + 1, len(xs) - 1)]
        res = minimize_scalar(lambda s: float(B.lift_derivative(s)), bounds=(lo, hi),
                              method="bounded", options={"xatol": 1e-14})
        return min(res.fun, vals[k])

    r = brentq(min_deriv, 1.0 + 1e-9, 50.0, xtol=1e-15, rtol=1e-15)
    return BlaschkeProduct(t, (r * np.exp(1j * phi), r * np.exp(-1j * phi)))


# ---------------------------------------------------------------- tuning

@dataclass(frozen=True)
class TuneResult:
    t: float
    lo: float
    hi: float
    bisections: int
    model: BlaschkeProduct | None
    plateau: tuple[float, float] | None = None
    depth: int = 0

    @property
    def width(self) -> float:
        return self.hi - self.lo


def _is_rational(target) -> Fraction | None:
    if isinstance(target, Fraction):
        return target
    if isinstance(target, RotationNumber) and not target.is_periodic:
        fr = Fraction(0)
        for a in reversed(target.prefix):
            fr = 1 / (a + fr)
        if fr == target.exact() or abs(float(fr) - float(target)) < 1e-15:
            return fr
    return None


def _sweep_certificate(base: Callable, ts: np.ndarray, iters: int = 2000) -> None:
    prev_lo, prev_hi = -math.inf, -math.inf
    for t in ts:
        lo, hi = cm.rotation_bracket(cm.from_lift(lambda x, t=t: base(x) + t), iters)
        if hi < prev_lo - 1e-12:
            raise NotMonotone(f"rotation number decreases near t = {t:.6g}")
        prev_lo, prev_hi = lo, hi


def _side(base: Callable, t: float, convs: list[tuple[int, int]]) -> int:
    """-1: t too small, +1: t too big, 0: undecided through the last convergent."""
    x, k = 0.0, 0
    for p, q, above in convs:
        while k < q:
            x = base(x) + t
            k += 1
        if x == p:
            continue
        if (x > p) != above:
            return 1 if x > p else -1
    return 0


def tune_rotation(family, target, tol: float = 1e-10, t_range=(0.0, 1.0),
                  max_bisections: int = 60, max_q: int = 200_000,
                  sweep: int = 64) -> TuneResult:
    """Find t with rho(F_0 + t) = target by bisection on the lift offset.

    ``family`` is a BlaschkeProduct (its own t is ignored) or a base lift F_0.
    For an irrational target the side of t is read off the first convergent
    p_n/q_n at which F_t^{q_n}(0) - p_n and q_n alpha - p_n disagree in sign.
    """
    if isinstance(family, BlaschkeProduct):
        proto = family.with_t(0.0)
        base = proto.lift
        if not proto.zeros:
            if isinstance(target, RotationNumber):
                return TuneResult(float(target), float(target), float(target), 0,
                                  proto.with_t(float(target)))
    else:
        proto, base = None, family
    rational = _is_rational(target)
    lo, hi = map(float, t_range)
    if sweep:
        _sweep_certificate(base, np.linspace(lo, hi, sweep))
    if rational is not None:
        return _tune_plateau(base, proto, rational, tol, lo, hi, max_bisections)

    alpha = target
    shift = math.floor(cm.rotation_bracket(cm.from_lift(lambda x: base(x) + lo), 200)[0])
    convs = []
    n = 1
    while True:
        p, q = alpha.convergent(n)
        if q > max_q:
            break
        # q alpha - p > 0 for even n
        convs.append((p + shift * q, q, n % 2 == 0))
        n += 1
    if _side(base, lo, convs) > 0 or _side(base, hi, convs) < 0:
        raise BracketExhausted("target rotation number not bracketed by t_range")
    und = None
    steps = 0
    while hi - lo > tol and steps < max_bisections:
        steps += 1
        if und is None:
            mid = 0.5 * (lo + hi)
        elif und - lo > hi - und:
            mid = 0.5 * (lo + und)
        else:
            mid = 0.5 * (und + hi)
        s = _side(base, mid, convs)
        if s < 0:
            lo = mid
        elif s > 0:
            hi = mid
        else:
            und = mid
    t = und if und is not None else 0.5 * (lo + hi)
    model = proto.with_t(t) if proto is not None else None
    if hi - lo > tol:
        warnings.warn(f"tuning bracket {hi - lo:.3e} wider than tol after {steps} steps",
                      cm.UnconvergedWarning, stacklevel=2)
    return TuneResult(t, lo, hi, steps, model, None, len(convs))


def _tune_plateau(base, proto, frac: Fraction, tol, lo, hi, max_bisections) -> TuneResult:
    """Endpoints of the mode-locking interval {t : rho = p/q}."""
    p, q = frac.numerator, frac.denominator
    xs = np.linspace(0.0, 1.0, 513)

    def disp(t):
        y = xs.copy()
        for _ in range(q):
            y = base(y) + t
        return y - xs - p

    def bisect(pred, a, b):
        k = 0
        while b - a > tol and k < max_bisections:
            m = 0.5 * (a + b)
            if pred(m):
                b = m
            else:
                a = m
            k += 1
        return a, b, k

    # left end: first t with max disp >= 0; right end: last t with min disp <= 0
    la, lb, k1 = bisect(lambda t: disp(t).max() >= 0, lo, hi)
    ra, rb, k2 = bisect(lambda t: disp(t).min() > 0, lo, hi)
    t = lb
    model = proto.with_t(t) if proto is not None else None
    return TuneResult(t, la, lb, k1 + k2, model, (lb, ra))


# ---------------------------------------------------------------- conjugacy and surgery

@dataclass(frozen=True)
class BoundaryConjugacy:
    nodes: np.ndarray   # sorted orbit positions u_k = F^k(0) mod 1
    values: np.ndarray  # h(u_k) = k alpha mod 1
    interp: PchipInterpolator = field(repr=False)
    inverse: PchipInterpolator = field(repr=False)
    n: int = 0
    max_gap: float = 0.0
    last: int = -1  # sorted position of the final orbit point, whose image is not a node

    def inner_nodes(self) -> np.ndarray:
        return np.delete(self.nodes, self.last)

    def __call__(self, u):
        u = np.asarray(u, dtype=float)
        f = np.floor(u)
        return self.interp(u - f) + f

    def inv(self, v):
        v = np.asarray(v, dtype=float)
        f = np.floor(v)
        return self.inverse(v - f) + f


def boundary_conjugacy(B, alpha: RotationNumber, n: int = 4096) -> BoundaryConjugacy:
    """h with h(F^k(0)) = k alpha on the orbit, monotone (PCHIP) in between."""
    lift = B.lift if hasattr(B, "lift") else B
    u = np.empty(n)
    x = 0.0
    for k in range(n):
        u[k] = x - math.floor(x)
        x = float(lift(x))
    fr = alpha.exact()
    num, den = fr.numerator, fr.denominator
    h = np.array([((k * num) % den) / den for k in range(n)])
    order = np.argsort(u, kind="stable")
    us, hs = u[order], h[order]
    gaps = np.diff(np.concatenate([us, [us[0] + 1]]))
    if gaps.max() > 1 / math.sqrt(n):
        raise OrbitTooSparse(f"largest orbit gap {gaps.max():.3e} > 1/sqrt(n)")
    if not np.all(np.diff(hs) > 0):
        raise RotationMismatch("orbit order differs from the rotation order")
    # periodic padding so the interpolant is smooth across 0
    U = np.concatenate([us[-3:] - 1, us, us[:3] + 1])
    H = np.concatenate([hs[-3:] - 1, hs, hs[:3] + 1])
    last = int(np.where(order == n - 1)[0][0])
    return BoundaryConjugacy(us, hs, PchipInterpolator(U, H), PchipInterpolator(H, U), n,
                             float(gaps.max()), last)


def conjugacy_residual(B, h: BoundaryConjugacy, alpha: RotationNumber,
                       at: str = "nodes") -> float:
    """max |h(F(u)) - h(u) - alpha| on the circle, at nodes or at gap midpoints."""
    lift = B.lift if hasattr(B, "lift") else B
    a = float(alpha)
    if at == "nodes":
        u = h.inner_nodes()
    else:
        u = 0.5 * (h.nodes + np.concatenate([h.nodes[1:], [h.nodes[0] + 1]]))
    r = h(lift(u)) - h(u) - a
    return float(np.max(np.abs(r - np.round(r))))


def smoothstep(r):
    r = np.clip(r, 0.0, 1.0)
    return r * r * r * (10 - 15 * r + 6 * r * r)


@dataclass(frozen=True)
class SurgeryModel:
    exterior: BlaschkeProduct
    alpha: RotationNumber
    conjugacy: BoundaryConjugacy

    def H(self, z):
        z = np.asarray(z, dtype=complex)
        r = np.abs(z)
        u = np.angle(z) / TWO_PI
        w = smoothstep(r)
        ang = (1 - w) * u + w * self.conjugacy(u)
        out = r * np.exp(2j * np.pi * ang)
        return out if out.ndim else complex(out)

    def H_inv(self, z, tol: float = 1e-14):
        z = np.atleast_1d(np.asarray(z, dtype=complex))
        r = np.abs(z)
        v = np.angle(z) / TWO_PI
        w = smoothstep(r)
        # phi_r(u) = (1 - w) u + w h(u) is increasing with phi_r(u + 1) = phi_r(u) + 1
        lo = v - 1.0
        hi = v + 1.0
        for _ in range(80):
            mid = 0.5 * (lo + hi)
            val = (1 - w) * mid + w * self.conjugacy(mid)
            below = val < v
            lo = np.where(below, mid, lo)
            hi = np.where(below, hi, mid)
            if np.max(hi - lo) < tol:
                break
        else:
            if np.max(hi - lo) > 1e-10:
                raise ExtensionInversionFailed("angular bisection did not converge")
        out = r * np.exp(2j * np.pi * 0.5 * (lo + hi))
        return out

    def interior(self, z):
        rot = complex(math.cos(TWO_PI * float(self.alpha)), math.sin(TWO_PI * float(self.alpha)))
        return self.H_inv(rot * self.H(z))

    def __call__(self, z):
        z = np.atleast_1d(np.asarray(z, dtype=complex))
        out = np.empty_like(z)
        outside = np.abs(z) >= 1
        if outside.any():
            out[outside] = self.exterior(z[outside])
        if (~outside).any():
            out[~outside] = self.interior(z[~outside])
        return out


def surgery_model(B: BlaschkeProduct, alpha: RotationNumber, n: int = 4096) -> SurgeryModel:
    return SurgeryModel(B, alpha, boundary_conjugacy(B, alpha, n))


def surgery_eval(m: SurgeryModel, z):
    out = m(z)
    return complex(out[0]) if np.ndim(z) == 0 else out


def glue_residual(m: SurgeryModel, at: str = "nodes") -> float:
    """max |B(z) - H^{-1} R H(z)| for z on the circle."""
    h = m.conjugacy
    if at == "nodes":
        u = h.inner_nodes()
    else:
        u = 0.5 * (h.nodes + np.concatenate([h.nodes[1:], [h.nodes[0] + 1]]))
    z = np.exp(2j * np.pi * u)
    return float(np.max(np.abs(m.exterior(z) - m.interior(z))))


# ---------------------------------------------------------------- Yoccoz cells

@dataclass(frozen=True)
class CellComplex:
    level: int
    q_n: int
    order: np.ndarray         # backward-point indices in circular order
    base_points: np.ndarray   # x_i as circle coordinates, circular order
    tops: np.ndarray          # y_i, complex, circular order
    cells: tuple[np.ndarray, ...] = field(repr=False)  # closed polygons, complex vertices
    cell_areas: np.ndarray = None
    y_area: float = 0.0
    disk_area: float = 0.0

    def to_svg(self, size: int = 512) -> str:
        def pt(z):
            return f"{size / 2 * (1 + z.real):.3f},{size / 2 * (1 - z.imag):.3f}"
        polys = "\n".join(
            f'<polygon points="{" ".join(pt(z) for z in c)}" fill="hsl({(37 * k) % 360},60%,75%)" '
            f'stroke="#333" stroke-width="0.4"/>' for k, c in enumerate(self.cells))
        return (f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}">\n'
                f"{polys}\n</svg>\n")


def shoelace(poly: np.ndarray) -> float:
    x, y = poly.real, poly.imag
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


def first_cell_level(alpha: RotationNumber, handle, max_level: int = 40) -> int:
    """Smallest n with q_n >= 2 and every neighbour span of Q_n below 1."""
    for n in range(1, max_level):
        q = alpha.convergent(n)[1]
        if q < 2:
            continue
        xs = np.sort(cm.backward_orbit(handle, q))
        gaps = np.diff(np.concatenate([xs, [xs[0] + 1]]))
        if np.all(gaps + np.roll(gaps, 1) < 1):
            return n
    raise GridTooCoarse("no admissible level found")


def yoccoz_cells(m, alpha: RotationNumber, level: int, arc_samples: int = 16,
                 resolution: float = 1e-12) -> CellComplex:
    """Cells over the gaps of Q_n = {x_i : i < q_n}.

    Distances between circle points are arc lengths in R/Z units, so y_i sits
    at radius 1 - (gap_left + gap_right)/2.
    """
    handle = m.handle() if isinstance(m, BlaschkeProduct) else m
    q = alpha.convergent(level)[1]
    if q < 2:
        raise DegenerateCell(f"level {level} has a single backward point")
    xs = cm.backward_orbit(handle, q)
    order = np.argsort(xs, kind="stable")
    pos = xs[order]
    gaps = np.diff(np.concatenate([pos, [pos[0] + 1]]))
    if gaps.min() < resolution:
        raise DegenerateCell(f"adjacent backward points {gaps.min():.3e} apart")
    span = gaps + np.roll(gaps, 1)  # right gap + left gap at each point
    radius = 1 - span / 2
    tops = radius * np.exp(2j * np.pi * pos)
    cells, areas = [], []
    s = np.linspace(0, 1, arc_samples + 1)
    arc_all = []
    for j in range(q):
        k = (j + 1) % q
        arc = np.exp(2j * np.pi * (pos[j] + gaps[j] * s))
        arc_all.append(arc[:-1])
        poly = np.concatenate([arc, [tops[k], tops[j]]])
        cells.append(poly)
        areas.append(shoelace(poly))
    circle = np.concatenate(arc_all)
    disk = shoelace(circle)
    y_area = disk - shoelace(tops)
    return CellComplex(level, q, order, pos, tops, tuple(cells), np.array(areas), y_area, disk)


def tiling_report(cx: CellComplex) -> dict:
    """Overlap and coverage of the cells, measured with polygon boolean ops."""
    from shapely.geometry import Polygon
    from shapely.ops import unary_union

    polys = [Polygon(np.column_stack([c.real, c.imag])) for c in cx.cells]
    union = unary_union(polys)
    total = float(sum(p.area for p in polys))
    outer = Polygon(np.column_stack([np.concatenate([c[:-2] for c in cx.cells]).real,
                                     np.concatenate([c[:-2] for c in cx.cells]).imag]))
    if len(cx.tops) >= 3:
        region = outer.difference(Polygon(np.column_stack([cx.tops.real, cx.tops.imag])))
    else:  # two tops: the top polyline is a chord of zero area
        region = outer
    return {
        "valid": all(p.is_valid for p in polys),
        "overlap": total - union.area,
        "sum_cells": total,
        "y_area": cx.y_area,
        "coverage_defect": region.symmetric_difference(union).area,
    }


def area_decay(m, alpha: RotationNumber, levels: Sequence[int], arc_samples: int = 16) -> dict:
    areas = [yoccoz_cells(m, alpha, n, arc_samples).y_area for n in levels]
    slope, intercept = np.polyfit(np.asarray(levels, dtype=float), np.log(areas), 1)
    return {"levels": list(levels), "areas": areas, "rate": float(math.exp(slope)),
            "log_intercept": float(intercept)}


def cells_to_csv(complexes: Sequence[CellComplex]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["level", "cell_count", "area_Y"])
    for cx in complexes:
        w.writerow([cx.level, len(cx.cells), repr(float(cx.y_area))])
    return buf.getvalue()


def dumps(B: BlaschkeProduct) -> str:
    return json.dumps(B.to_json(), indent=2)
