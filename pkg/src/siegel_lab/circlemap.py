"""Circle homeomorphisms through their lifts: rotation numbers, backward orbits,
dynamical partitions, cross-ratio distortion, saddle-node profiles and the
Schwarzian derivative.

Points of the circle are stored as x in [0, 1), with x = 0 standing for 1.
"""

from __future__ import annotations

import csv
import io
import math
import warnings
from fractions import Fraction
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .contfrac import RotationNumber
from .errors import (DegenerateQuadruple, DerivativeVanishes, InverseBisectionFailed,
                     NotMonotone, RotationMismatch, TooFewSubintervals, UnconvergedWarning)

MONOTONE_SAMPLES = 2 ** 14
INVERSE_TOL = 1e-13


@dataclass(frozen=True, eq=False)
class CircleMapHandle:
    """A degree-one lift F with F(x + 1) = F(x) + 1.

    ``kind`` is "rotation", "blaschke" or "user". ``critical_args`` lists the
    critical points as circle coordinates in [0, 1).
    """

    kind: str
    lift: Callable
    critical_args: tuple[float, ...] = ()
    alpha: RotationNumber | None = None  # exact angle for rigid rotations
    inverse: Callable | None = None
    meta: dict = field(default_factory=dict, compare=False)

    def __call__(self, x):
        return self.lift(x)

    def iterate(self, x, n: int):
        for _ in range(n):
            x = self.lift(x)
        return x

    def certify(self, samples: int = MONOTONE_SAMPLES, tol: float = 1e-12) -> None:
        x = np.linspace(0.0, 1.0, samples + 1)
        y = np.asarray(self.lift(x), dtype=float)
        if not np.all(np.diff(y) > 0):
            bad = int(np.argmin(np.diff(y)))
            raise NotMonotone(f"lift not increasing near x = {x[bad]:.6g}")
        if abs(y[-1] - y[0] - 1) > tol:
            raise NotMonotone(f"F(1) - F(0) - 1 = {y[-1] - y[0] - 1:.3e}")


def rigid(alpha: RotationNumber) -> CircleMapHandle:
    a = float(alpha)
    return CircleMapHandle("rotation", lambda x: np.asarray(x) + a if np.ndim(x) else x + a,
                           (), alpha, lambda y: y - a)


def from_lift(lift: Callable, critical_args: Sequence[float] = (), kind: str = "user",
              inverse: Callable | None = None) -> CircleMapHandle:
    return CircleMapHandle(kind, lift, tuple(float(c) for c in critical_args), None, inverse)


# ---------------------------------------------------------------- rotation number

@dataclass(frozen=True)
class RotationEstimate:
    value: float
    lo: float
    hi: float
    iterations: int

    @property
    def error(self) -> float:
        return (self.hi - self.lo) / 2

    def __float__(self) -> float:
        return self.value


def rotation_bracket(m: CircleMapHandle, iters: int, x0: float = 0.0) -> tuple[float, float]:
    """floor(F^q(x0) - x0) <= q*rho < floor(...) + 1 for every q, intersected over q <= iters."""
    lo, hi = -math.inf, math.inf
    x = float(x0)
    for q in range(1, iters + 1):
        x = float(m.lift(x))
        p = math.floor(x - x0)
        lo = max(lo, p / q)
        hi = min(hi, (p + 1) / q)
    return lo, hi


def rotation_number(m: CircleMapHandle, iters: int = 20_000, tol: float = 1e-8) -> RotationEstimate:
    """Rotation number from the orbit bracket of 0.

    The bracket shrinks like 1/(q_n q_{n+1}) along closest-return times, so
    it converges at the Diophantine rate even when the map is critical.
    """
    if m.kind == "rotation" and m.alpha is not None:
        v = float(m.alpha)
        return RotationEstimate(v, v, v, 0)
    lo, hi = rotation_bracket(m, iters)
    est = RotationEstimate((lo + hi) / 2, lo, hi, iters)
    if est.error > tol:
        warnings.warn(f"rotation number bracket width {hi - lo:.3e} exceeds tol {tol:.1e}",
                      UnconvergedWarning, stacklevel=2)
    return est


# ---------------------------------------------------------------- backward orbits

def _mod1(x: float) -> float:
    y = x - math.floor(x)
    return 0.0 if y >= 1.0 else y


def invert_lift(m: CircleMapHandle, y: float, tol: float = INVERSE_TOL) -> float:
    """The x in [0, 1) with F(x) = y mod 1, by bisection."""
    if m.inverse is not None:
        return _mod1(m.inverse(y))
    f0 = float(m.lift(0.0))
    target = y + math.ceil(f0 - y)  # now target in [F(0), F(0) + 1)
    if target >= f0 + 1:
        target -= 1
    lo, hi = 0.0, 1.0
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        if float(m.lift(mid)) < target:
            lo = mid
        else:
            hi = mid
        if hi - lo <= tol:
            break
    else:
        if hi - lo > 1e3 * tol:
            raise InverseBisectionFailed(f"bracket width {hi - lo:.3e} after 80 steps")
    return _mod1(0.5 * (lo + hi))


def backward_orbit(m: CircleMapHandle, count: int, seed: float = 0.0) -> np.ndarray:
    """x_0 = seed and F(x_{i+1}) = x_i mod 1, so F^i(x_i) = seed."""
    if m.kind == "rotation" and m.alpha is not None and seed == 0.0:
        fr = m.alpha.exact()
        num, den = fr.numerator, fr.denominator
        return np.array([((-i * num) % den) / den for i in range(count)])
    out = np.empty(count)
    x = _mod1(seed)
    for i in range(count):
        out[i] = x
        x = invert_lift(m, x)
    return out


def forward_residuals(m: CircleMapHandle, xs: np.ndarray, seed: float = 0.0) -> np.ndarray:
    """|F^i(x_i) - seed| measured on the circle."""
    res = np.empty(len(xs))
    for i, x in enumerate(xs):
        y = m.iterate(float(x), i) - seed
        res[i] = abs(y - round(y))
    return res


# ---------------------------------------------------------------- partitions

@dataclass(frozen=True)
class PartitionInterval:
    left: int   # index into backward points
    right: int
    start: float
    length: float
    family: str  # "n": B^i maps it to I_n; "n+1": to I_{n+1}
    i: int


@dataclass(frozen=True)
class DynamicalPartition:
    level: int
    q_n: int
    q_next: int
    backward_points: np.ndarray
    intervals: tuple[PartitionInterval, ...]  # in circular order starting at x_0
    alpha: RotationNumber

    @property
    def lengths(self) -> np.ndarray:
        return np.array([iv.length for iv in self.intervals])

    def adjacency_ratios(self) -> np.ndarray:
        L = self.lengths
        nxt = np.roll(L, -1)
        return np.maximum(L / nxt, nxt / L)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["level", "family", "i", "left_index", "right_index", "start", "length",
                    "ratio_to_next"])
        ratios = self.adjacency_ratios()
        for iv, r in zip(self.intervals, ratios):
            w.writerow([self.level, iv.family, iv.i, iv.left, iv.right, repr(iv.start),
                        repr(iv.length), repr(float(r))])
        return buf.getvalue()


def _circular_order(points: np.ndarray) -> np.ndarray:
    """Indices sorted by position, rotated so x_0 (at 0) comes first."""
    order = np.argsort(points, kind="stable")
    k = int(np.where(order == 0)[0][0])
    return np.roll(order, -k)


def _gaps(points: np.ndarray, order: np.ndarray) -> np.ndarray:
    pos = points[order]
    return np.diff(np.concatenate([pos, [pos[0] + 1.0]]))


def dynamical_partition(m: CircleMapHandle, alpha: RotationNumber, level: int,
                        rot_tol: float | None = 1e-6) -> DynamicalPartition:
    _, q_n = alpha.convergent(level)
    _, q_next = alpha.convergent(level + 1)
    if rot_tol is not None and m.kind != "rotation":
        est = rotation_number(m, tol=math.inf)
        if abs(est.value - float(alpha)) > max(rot_tol, est.error):
            raise RotationMismatch(f"rotation number {est.value:.12g} vs {float(alpha):.12g}")
    N = q_n + q_next
    xs = backward_orbit(m, N)
    order = _circular_order(xs)
    gaps = _gaps(xs, order)
    used = {"n": set(), "n+1": set()}
    intervals = []
    for j in range(N):
        u, v = int(order[j]), int(order[(j + 1) % N])
        i, diff = min(u, v), abs(u - v)
        fam = None
        if diff == q_n and i < q_next and i not in used["n"]:
            fam = "n"
        elif diff == q_next and i < q_n and i not in used["n+1"]:
            fam = "n+1"
        if fam is None:
            raise RotationMismatch(
                f"gap between x_{u} and x_{v} is not a level-{level} partition interval")
        used[fam].add(i)
        intervals.append(PartitionInterval(u, v, float(xs[u]), float(gaps[j]), fam, i))
    return DynamicalPartition(level, q_n, q_next, xs, tuple(intervals), alpha)


def endpoint_residual(m: CircleMapHandle, p: DynamicalPartition) -> float:
    """max over intervals of the circle distance between B^i(endpoints) and those of I_n / I_{n+1}."""
    xs = p.backward_points
    worst = 0.0
    for iv in p.intervals:
        a, b = (iv.i, iv.i + (p.q_n if iv.family == "n" else p.q_next))
        for idx, want in ((a, 0.0), (b, xs[b - iv.i])):
            y = m.iterate(float(xs[idx]), iv.i) - want
            worst = max(worst, abs(y - round(y)))
    return worst


def closest_return_check(p: DynamicalPartition) -> dict:
    """Integer adjacency and refinement rules for Q_n = {x_i : i < q_n} at n = p.level.

    Q_n and Q_{n+1} are both contained in the backward points of the level-n
    partition. Skipped (reported ok) when q_n = 1 or n = 0.
    """
    n, alpha, xs = p.level, p.alpha, p.backward_points
    q_n, q_prev, q_next = p.q_n, alpha.convergent(n - 1)[1] if n >= 1 else None, p.q_next
    out = {"level": n, "adjacency_ok": True, "refinement_ok": True, "checked": False}
    if n < 1 or q_n < 2:
        return out
    out["checked"] = True
    a_next = alpha.coeff(n + 1)
    order = _circular_order(xs[:q_n])
    found = sorted(tuple(sorted((int(order[j]), int(order[(j + 1) % q_n])))) for j in range(q_n))
    expected = sorted([(j, j + q_prev) for j in range(q_n - q_prev)]
                      + [(j, j + q_n - q_prev) for j in range(q_prev)])
    out["adjacency_ok"] = found == expected
    # refinement: walk the circular gaps of Q_n and read off the Q_{n+1} points inside
    fine = xs[:q_next]
    rel_all = np.argsort(fine, kind="stable")
    pos = {int(i): r for r, i in enumerate(rel_all)}
    ok = True
    for g in range(q_n):
        u, v = int(order[g]), int(order[(g + 1) % q_n])
        a, b = pos[u], pos[v]
        span = (b - a) % q_next or q_next
        got = {int(rel_all[(a + s) % q_next]) for s in range(1, span)}
        j, k = min(u, v), max(u, v)
        options = []
        if k == j + q_prev and j < q_n - q_prev:
            options.append({k + l * q_n for l in range(1, a_next)})
        if k == j + q_n - q_prev and j < q_prev:
            options.append({j + l * q_n for l in range(1, a_next + 1)})
        ok &= got in options
    out["refinement_ok"] = bool(ok)
    return out


def commensurability_report(p: DynamicalPartition) -> float:
    if len(p.intervals) < 2:
        return 1.0
    return float(p.adjacency_ratios().max())


# ---------------------------------------------------------------- cross ratios

def cross_ratio(a: float, b: float, c: float, d: float) -> float:
    """[a, b, c, d] = (b - a)/(c - a) * (d - c)/(d - b) for a < b < c < d < a + 1."""
    if not (a < b < c < d < a + 1):
        raise DegenerateQuadruple(f"need a < b < c < d < a + 1, got {(a, b, c, d)}")
    return (b - a) / (c - a) * (d - c) / (d - b)


def distortion(a: float, b: float, c: float, d: float, m: CircleMapHandle, power: int) -> float:
    """[F^m a, F^m b, F^m c, F^m d] / [a, b, c, d]."""
    if m.kind == "rotation" and m.alpha is not None:
        # exact displacement by power * alpha, in rational arithmetic
        shift = power * m.alpha.exact()
        q = [Fraction(x) for x in (a, b, c, d)]
        return float(cross_ratio(*(x + shift for x in q)) / cross_ratio(*q))
    src = cross_ratio(a, b, c, d)
    img = [float(m.iterate(float(x), power)) for x in (a, b, c, d)]
    return cross_ratio(*img) / src


def herman_quadruples(p: DynamicalPartition, rng: np.random.Generator, per_power: int = 20):
    """(quadruple, power) pairs whose first `power` forward images are pairwise disjoint.

    The interval I_n^{m-1} = [x_{m-1}, x_{m-1+q_n}] has images I_n^{m-1-i},
    i < m, all in the level-n partition, so any quadruple inside it works for
    m <= q_{n+1}.
    """
    by_i = {iv.i: iv for iv in p.intervals if iv.family == "n"}
    out = []
    for m in range(1, p.q_next + 1):
        iv = by_i[m - 1]
        for _ in range(per_power):
            t = np.sort(rng.uniform(0, 1, 4))
            while np.min(np.diff(t)) < 1e-3:
                t = np.sort(rng.uniform(0, 1, 4))
            q = iv.start + iv.length * t
            out.append((tuple(float(v) for v in q), m))
    return out


# ---------------------------------------------------------------- saddle nodes

@dataclass(frozen=True)
class SaddleNodeFit:
    exponent: float
    intercept: float
    residual: float
    m: int
    lengths: np.ndarray


def saddle_node_fit(lengths: Sequence[float]) -> SaddleNodeFit:
    """Least squares of log|I_k| = c - s log min(k, m - k + 1); returns s."""
    L = np.asarray(lengths, dtype=float)
    m = len(L)
    if m < 4:
        raise TooFewSubintervals(f"need at least 4 subintervals, got {m}")
    k = np.arange(1, m + 1)
    x = -np.log(np.minimum(k, m - k + 1))
    A = np.column_stack([x, np.ones(m)])
    coef, *_ = np.linalg.lstsq(A, np.log(L), rcond=None)
    resid = float(np.sqrt(np.mean((A @ coef - np.log(L)) ** 2)))
    return SaddleNodeFit(float(coef[0]), float(coef[1]), resid, m, L)


def gap_subdivisions(p_n: DynamicalPartition, p_next: DynamicalPartition) -> list[np.ndarray]:
    """For each gap of Q_{n+1} (circular order from x_0), the lengths it is cut into by Q_{n+2}."""
    if p_next.level != p_n.level + 1:
        raise ValueError("p_next must be the partition one level finer")
    coarse = p_n.backward_points[: p_n.q_next]
    fine = p_next.backward_points[: p_next.q_next]
    order = _circular_order(coarse)
    out = []
    for j in range(len(order)):
        s = coarse[order[j]]
        e = coarse[order[(j + 1) % len(order)]]
        span = (e - s) % 1.0 or 1.0
        rel = np.sort((fine - s) % 1.0)
        cuts = np.concatenate([rel[(rel > 0) & (rel < span)], [span]])
        out.append(np.diff(np.concatenate([[0.0], cuts])))
    return out


def saddle_node_profile(p_n: DynamicalPartition, p_next: DynamicalPartition,
                        index: int | None = None) -> SaddleNodeFit:
    """Fit the saddle-node exponent inside one gap; default is the most subdivided gap."""
    subs = gap_subdivisions(p_n, p_next)
    if index is None:
        index = int(np.argmax([len(s) for s in subs]))
    return saddle_node_fit(subs[index])


# ---------------------------------------------------------------- Schwarzian

def _schwarzian_once(F: Callable, x: float, h: float) -> float:
    f_p2, f_p1, f0, f_m1, f_m2 = (float(F(x + k * h)) for k in (2, 1, 0, -1, -2))
    d1 = (f_p1 - f_m1) / (2 * h)
    d2 = (f_p1 - 2 * f0 + f_m1) / (h * h)
    d3 = (f_p2 - 2 * f_p1 + 2 * f_m1 - f_m2) / (2 * h ** 3)
    if abs(d1) < 1e-6:
        raise DerivativeVanishes(f"F'({x}) ~ {d1:.3e}")
    return d3 / d1 - 1.5 * (d2 / d1) ** 2


def schwarzian(m, x: float, h: float = 5e-3) -> float:
    """F'''/F' - 3/2 (F''/F')^2 by central differences, Richardson over h and h/2."""
    F = m.lift if isinstance(m, CircleMapHandle) else m
    if isinstance(m, CircleMapHandle):
        for c in m.critical_args:
            dist = abs((x - c + 0.5) % 1.0 - 0.5)
            if dist <= 2 * h:
                raise DerivativeVanishes(f"critical point {c} inside the stencil around {x}")
    s1 = _schwarzian_once(F, x, h)
    s2 = _schwarzian_once(F, x, h / 2)
    return (4 * s2 - s1) / 3
