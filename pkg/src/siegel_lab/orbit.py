"""Critical orbits, the oscillation functional sigma_{k,m}, and boundary curves."""

from __future__ import annotations

import csv
import io
import math
import weakref
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.spatial import cKDTree

from . import polyfam
from .contfrac import RotationNumber, truncate_bounded
from .errors import EmptySet, EscapedOrbit, IndexBeyondEscape, NonFinite


@dataclass(frozen=True, eq=False)
class RigidRotation:
    """z -> e^{2 pi i theta} z; orbits are generated from exact phases."""

    alpha: RotationNumber

    def __call__(self, z):
        return np.exp(2j * np.pi * float(self.alpha)) * z

    def orbit(self, n: int) -> np.ndarray:
        return np.exp(2j * np.pi * phases(self.alpha, n + 1))


@dataclass(frozen=True)
class OrbitTrace:
    points: np.ndarray
    escaped_at: int | None
    escape_radius: float

    @property
    def n(self) -> int:
        return len(self.points) - 1


@dataclass(frozen=True)
class OscillationBin:
    lo: float
    hi: float
    min_sigma: float
    max_sigma: float
    count: int


@dataclass(frozen=True)
class OscillationTable:
    bins: tuple[OscillationBin, ...]
    theta: RotationNumber
    max_index: int

    def nonempty(self) -> list[OscillationBin]:
        return [b for b in self.bins if b.count]


@dataclass(frozen=True)
class BoundaryCurve:
    phases: np.ndarray  # sorted k*theta mod 1
    points: np.ndarray
    order: np.ndarray  # order[j] = k of the j-th sample
    source_orbit_length: int

    @property
    def max_gap(self) -> float:
        ph = self.phases
        gaps = np.diff(np.concatenate([ph, [ph[0] + 1]]))
        return float(gaps.max())


# ---------------------------------------------------------------- phases

def _exact_ratio(theta: RotationNumber) -> tuple[int, int]:
    fr = theta.exact()
    return fr.numerator, fr.denominator


def phases(theta: RotationNumber, n: int, start: int = 0) -> np.ndarray:
    """k * theta mod 1 for k = start..start+n-1, reduced in exact arithmetic."""
    num, den = _exact_ratio(theta)
    return np.array([((k * num) % den) / den for k in range(int(start), int(start) + int(n))])


def phase_distance(theta: RotationNumber, ks: Sequence[int]) -> np.ndarray:
    """|e^{2 pi i k theta} - 1| = 2 sin(pi ||k theta||) with ||.|| taken exactly."""
    num, den = _exact_ratio(theta)
    out = np.empty(len(ks))
    for j, k in enumerate(ks):
        r = (int(k) * num) % den
        r = min(r, den - r)
        out[j] = 2.0 * math.sin(math.pi * (r / den))
    return out


# ---------------------------------------------------------------- iteration

def default_escape_radius(f) -> float:
    a = [abs(c) for c in f.coefficients]
    d = len(a)
    return 2.0 * (1.0 + sum(a[:-1]) / a[-1]) ** (1.0 / (d - 1))


def _step_fn(f) -> Callable[[complex], complex]:
    if isinstance(f, polyfam.SiegelPolynomial):
        coeffs = tuple(reversed(f.coefficients))

        def step(z: complex) -> complex:
            acc = 0j
            for a in coeffs:
                acc = (acc + a) * z
            return acc
        return step
    return lambda z: complex(f(z))


def iterate(f, n: int, escape_radius: float | None = None, start: complex = 1.0) -> OrbitTrace:
    if n < 1:
        raise ValueError("n must be >= 1")
    if escape_radius is None:
        escape_radius = default_escape_radius(f) if hasattr(f, "coefficients") else math.inf
    if hasattr(f, "orbit") and start == 1.0:
        return OrbitTrace(f.orbit(n), None, escape_radius)
    step = _step_fn(f)
    pts = [complex(start)]
    z = complex(start)
    escaped = None
    for k in range(1, n + 1):
        z = step(z)
        if not (math.isfinite(z.real) and math.isfinite(z.imag)):
            raise NonFinite(f"orbit value at index {k} is not finite")
        pts.append(z)
        if abs(z) > escape_radius:
            escaped = k
            break
    return OrbitTrace(np.array(pts), escaped, escape_radius)


_TRACES: "weakref.WeakKeyDictionary" = weakref.WeakKeyDictionary()


def cached_trace(f, n: int, escape_radius: float | None = None) -> OrbitTrace:
    """Shared forward trace of 1, grown on demand."""
    tr = _TRACES.get(f)
    if tr is None or (tr.n < n and tr.escaped_at is None):
        tr = iterate(f, max(n, 2 * tr.n if tr else n), escape_radius)
        _TRACES[f] = tr
    return tr


def _bounded_points(f, K: int) -> np.ndarray:
    tr = cached_trace(f, K)
    if tr.escaped_at is not None and tr.escaped_at <= K:
        raise EscapedOrbit(f"orbit of 1 escapes at index {tr.escaped_at}")
    return tr.points[: K + 1]


def sigma(f, k: int, m: int) -> complex:
    """f^k(1) - f^m(1)."""
    if not k > m >= 0:
        raise ValueError("need k > m >= 0")
    tr = cached_trace(f, k)
    if tr.escaped_at is not None and k >= tr.escaped_at:
        raise IndexBeyondEscape(f"index {k} at or beyond escape index {tr.escaped_at}")
    return complex(tr.points[k] - tr.points[m])


# ---------------------------------------------------------------- oscillation

def default_bin_edges(bins: int = 32, floor: float = 1e-4) -> np.ndarray:
    """[0, floor] followed by bins-1 log-spaced edges up to 2."""
    return np.concatenate([[0.0], np.geomspace(floor, 2.0, bins)])


def oscillation_table(f, theta: RotationNumber, K: int, bins: int = 32,
                      floor: float = 1e-4) -> OscillationTable:
    pts = _bounded_points(f, K)
    edges = default_bin_edges(bins, floor)
    lags = np.arange(1, K + 1)
    delta = phase_distance(theta, lags)
    idx = np.clip(np.searchsorted(edges, delta, side="left") - 1, 0, bins - 1)
    mins = np.full(bins, np.inf)
    maxs = np.full(bins, -np.inf)
    counts = np.zeros(bins, dtype=np.int64)
    for lag, b in zip(lags, idx):
        s = np.abs(pts[lag:] - pts[:-lag])
        mins[b] = min(mins[b], s.min())
        maxs[b] = max(maxs[b], s.max())
        counts[b] += len(s)
    out = []
    for b in range(bins):
        if counts[b]:
            out.append(OscillationBin(float(edges[b]), float(edges[b + 1]), float(mins[b]), float(maxs[b]), int(counts[b])))
        else:
            out.append(OscillationBin(float(edges[b]), float(edges[b + 1]), math.nan, math.nan, 0))
    return OscillationTable(tuple(out), theta, K)


def table_to_csv(table: OscillationTable) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["bin_lo", "bin_hi", "min_sigma", "max_sigma", "count"])
    for b in table.bins:
        w.writerow([repr(b.lo), repr(b.hi), repr(b.min_sigma), repr(b.max_sigma), b.count])
    return buf.getvalue()


def telescoping_residual(f, triples: Sequence[tuple[int, int, int]]) -> float:
    """max relative |sigma_{k,m} - sigma_{k,j} - sigma_{j,m}| over (k, j, m)."""
    worst = 0.0
    for k, j, m in triples:
        lhs = sigma(f, k, m)
        rhs = sigma(f, k, j) + sigma(f, j, m)
        scale = max(abs(lhs), abs(sigma(f, k, j)), abs(sigma(f, j, m)), 1e-300)
        worst = max(worst, abs(lhs - rhs) / scale)
    return worst


# ---------------------------------------------------------------- curves

def boundary_curve(f, theta: RotationNumber, n: int) -> BoundaryCurve:
    """The first n orbit points of 1 placed at phases k*theta mod 1, sorted."""
    pts = _bounded_points(f, n - 1)
    ph = phases(theta, n)
    order = np.argsort(ph, kind="stable")
    return BoundaryCurve(ph[order], pts[order], order, n)


def equivariance_residual(f, curve: BoundaryCurve) -> float:
    """max_k |f(gamma_k) - gamma_{k+1}| over samples whose successor is present."""
    n = curve.source_orbit_length
    by_k = np.empty(n, dtype=complex)
    by_k[curve.order] = curve.points
    step = _step_fn(f)
    return max((abs(step(by_k[k]) - by_k[k + 1]) for k in range(n - 1)), default=0.0)


def jordan_proxy(curve: BoundaryCurve, phase_margin: float, chunk: int = 512) -> float:
    """Min distance between samples whose circular phase distance exceeds the margin."""
    ph = curve.phases
    z = curve.points
    if len(z) < 4:
        raise ValueError("need at least 4 samples")
    best = math.inf
    for s in range(0, len(z), chunk):
        dph = np.abs(ph[s:s + chunk, None] - ph[None, :])
        dph = np.minimum(dph, 1 - dph)
        dist = np.abs(z[s:s + chunk, None] - z[None, :])
        dist = np.where(dph > phase_margin, dist, np.inf)
        best = min(best, float(dist.min()))
    return best


def hausdorff(A, B) -> float:
    a = np.asarray(A, dtype=complex).ravel()
    b = np.asarray(B, dtype=complex).ravel()
    if a.size == 0 or b.size == 0:
        raise EmptySet("Hausdorff distance needs two nonempty sets")
    pa = np.column_stack([a.real, a.imag])
    pb = np.column_stack([b.real, b.imag])
    d1 = cKDTree(pb).query(pa)[0].max()
    d2 = cKDTree(pa).query(pb)[0].max()
    return float(max(d1, d2))


def curve_to_svg(curve: BoundaryCurve, size: int = 512) -> str:
    z = curve.points
    lo = min(z.real.min(), z.imag.min())
    hi = max(z.real.max(), z.imag.max())
    scale = (size - 20) / max(hi - lo, 1e-12)
    xs = 10 + (z.real - lo) * scale
    ys = size - 10 - (z.imag - lo) * scale
    poly = " ".join(f"{x:.3f},{y:.3f}" for x, y in zip(xs, ys))
    dots = "\n".join(
        f'<circle cx="{x:.3f}" cy="{y:.3f}" r="1.2" fill="hsl({360 * p:.1f},80%,45%)"/>'
        for x, y, p in zip(xs, ys, curve.phases))
    return (f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}">\n'
            f'<polygon points="{poly}" fill="none" stroke="#444" stroke-width="0.5"/>\n'
            f"{dots}\n</svg>\n")


# ---------------------------------------------------------------- experiment

@dataclass
class PerturbationReport:
    N_list: list[int]
    curves: dict[int, BoundaryCurve] = field(repr=False)
    tables: dict[int, OscillationTable] = field(repr=False)
    hausdorff_matrix: np.ndarray = None

    def successive(self) -> list[float]:
        H = self.hausdorff_matrix
        return [float(H[i, i + 1]) for i in range(len(self.N_list) - 1)]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["N"] + [str(N) for N in self.N_list])
        for N, row in zip(self.N_list, self.hausdorff_matrix):
            w.writerow([N] + [repr(float(v)) for v in row])
        return buf.getvalue()


def perturbation_experiment(theta: RotationNumber, spec: polyfam.CriticalSpec,
                            N_list: Sequence[int], n_samples: int = 5000,
                            K: int = 500, bins: int = 32) -> PerturbationReport:
    """Boundary curves and oscillation tables for each truncation theta_N."""
    curves, tables = {}, {}
    for N in N_list:
        tN = truncate_bounded(theta, N)
        f = polyfam.from_critical_points(polyfam.CriticalSpec(tN, spec.points))
        curves[N] = boundary_curve(f, tN, n_samples)
        tables[N] = oscillation_table(f, tN, K, bins)
    L = len(N_list)
    H = np.zeros((L, L))
    for i in range(L):
        for j in range(i + 1, L):
            H[i, j] = H[j, i] = hausdorff(curves[N_list[i]].points, curves[N_list[j]].points)
    return PerturbationReport(list(N_list), curves, tables, H)
