"""Siegel polynomials f(z) = e^{2 pi i alpha} z + ... + a_d z^d with f'(1) = 0.

A polynomial in the family is fixed by its critical set c_1, ..., c_{d-1}
(c_{d-1} = 1). Coefficients are

    a_i = e^{2 pi i alpha} (-1)^{i-1} / i * Q_{d-i}(c) / (c_1 ... c_{d-1})

with Q_k the degree-k elementary symmetric polynomial.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Sequence

import mpmath
import numpy as np
from mpmath import mp
from scipy.optimize import linear_sum_assignment

from .contfrac import RotationNumber
from .errors import (IndexOutOfRange, NotACriticalPoint, RootFindingDiverged,
                     ZeroCriticalPoint)


def multiplier(alpha: RotationNumber) -> complex:
    """e^{2 pi i alpha}, with the phase reduced in high precision."""
    with mp.workprec(alpha.prec):
        v = mpmath.expj(2 * mp.pi * alpha.frac_mul(1))
    return complex(v)


def elementary_symmetric(points: Sequence[complex], k: int) -> complex:
    n = len(points)
    if not 0 <= k <= n:
        raise IndexOutOfRange(f"k={k} outside [0, {n}]")
    e = [1.0 + 0j] + [0j] * k
    for c in points:
        for j in range(k, 0, -1):
            e[j] += e[j - 1] * c
    return e[k]


def build_tolerance(points: Sequence[complex]) -> float:
    d = len(points) + 1
    return 1e-10 * max(1.0, max(abs(c) for c in points) ** (d - 1))


@dataclass(frozen=True)
class CriticalSpec:
    alpha: RotationNumber
    points: tuple[complex, ...] = ()  # c_1..c_{d-2}; c_{d-1} = 1 is implied

    def __post_init__(self):
        object.__setattr__(self, "points", tuple(complex(c) for c in self.points))
        if any(c == 0 for c in self.points):
            raise ZeroCriticalPoint("critical points must be nonzero")

    @property
    def degree(self) -> int:
        return len(self.points) + 2

    @property
    def critical_set(self) -> tuple[complex, ...]:
        return self.points + (1.0 + 0j,)


@dataclass(frozen=True, eq=False)
class SiegelPolynomial:
    """Degree-d polynomial with f(0) = 0, f'(0) = ``mult``.

    ``coefficients`` holds a_1..a_d. Instances hash by identity so orbit
    caches can key on them.
    """

    alpha: RotationNumber
    coefficients: tuple[complex, ...]
    critical_points: tuple[complex, ...]

    @property
    def degree(self) -> int:
        return len(self.coefficients)

    @property
    def mult(self) -> complex:
        return self.coefficients[0]

    @property
    def coeffs(self) -> np.ndarray:
        return np.asarray(self.coefficients, dtype=complex)

    def __call__(self, z):
        return evaluate(self, z)

    def derivative(self, z):
        return derivative(self, z)

    def to_json(self) -> dict:
        return {
            "degree": self.degree,
            "alpha": {"prefix": list(self.alpha.prefix), "period": list(self.alpha.period)},
            "coefficients": [[c.real, c.imag] for c in self.coefficients],
            "critical_points": [[c.real, c.imag] for c in self.critical_points],
        }


def evaluate(f: SiegelPolynomial, z):
    z = np.asarray(z, dtype=complex)
    acc = np.zeros_like(z)
    for a in reversed(f.coefficients):
        acc = (acc + a) * z
    return acc if acc.ndim else complex(acc)


def derivative(f: SiegelPolynomial, z):
    z = np.asarray(z, dtype=complex)
    acc = np.zeros_like(z)
    d = f.degree
    for i in range(d, 0, -1):
        acc = acc * z + i * f.coefficients[i - 1]
    return acc if acc.ndim else complex(acc)


def derivative_scale(f: SiegelPolynomial, z) -> float:
    """sum_i i |a_i| |z|^{i-1}: the size of the terms Horner adds up for f'."""
    r = abs(z)
    return sum(i * abs(a) * r ** (i - 1) for i, a in enumerate(f.coefficients, start=1))


def from_critical_points(spec: CriticalSpec, check: bool = True) -> SiegelPolynomial:
    crit = spec.critical_set
    if any(c == 0 for c in crit):
        raise ZeroCriticalPoint("critical points must be nonzero")
    d = len(crit) + 1
    lam = multiplier(spec.alpha)
    prod = complex(np.prod(crit))
    # all Q_k in one pass
    e = [1.0 + 0j] + [0j] * (d - 1)
    for c in crit:
        for j in range(d - 1, 0, -1):
            e[j] += e[j - 1] * c
    coeffs = [lam * ((-1) ** (i - 1) / i) * e[d - i] / prod for i in range(1, d + 1)]
    f = SiegelPolynomial(spec.alpha, tuple(coeffs), crit)
    if check:
        tol = build_tolerance(crit)
        worst = max(abs(derivative(f, c)) for c in crit)
        if worst > tol:
            raise NotACriticalPoint(f"|f'(c)| = {worst:.3e} exceeds build tolerance {tol:.3e}")
    return f


def rescale_to_critical(f: SiegelPolynomial, c: complex, tol: float | None = None) -> SiegelPolynomial:
    """Q(z) = c^{-1} f(c z); its critical point c/c = 1 is stored last."""
    c = complex(c)
    if c == 0:
        raise ZeroCriticalPoint("cannot rescale by 0")
    if tol is None:
        tol = 1e-8 * max(1.0, derivative_scale(f, c))
    if abs(derivative(f, c)) > tol:
        raise NotACriticalPoint(f"|f'({c})| = {abs(derivative(f, c)):.3e}")
    coeffs = tuple(a * c ** (i - 1) for i, a in enumerate(f.coefficients, start=1))
    crit = [w / c for w in f.critical_points]
    j = int(np.argmin([abs(w - 1) for w in crit]))
    crit.append(crit.pop(j))
    crit[-1] = 1.0 + 0j
    return SiegelPolynomial(f.alpha, coeffs, tuple(crit))


def _aberth(coeffs: np.ndarray, maxiter: int = 500, tol: float = 1e-15) -> np.ndarray:
    """All roots of sum coeffs[k] z^k at once (Aberth-Ehrlich iteration)."""
    p = np.polynomial.Polynomial(coeffs)
    dp = p.deriv()
    n = len(coeffs) - 1
    lead = coeffs[-1]
    # initial guesses on a circle of Cauchy-bound-like radius, slightly rotated
    radius = max(abs(c / lead) for c in coeffs[:-1]) ** (1.0 / 1) if n else 1.0
    radius = min(max(abs(coeffs[0] / lead) ** (1.0 / n), 1e-3), 1 + radius)
    z = radius * np.exp(2j * np.pi * (np.arange(n) + 0.25) / n + 0.4j)
    for _ in range(maxiter):
        pz, dpz = p(z), dp(z)
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = pz / dpz
            diff = z[:, None] - z[None, :]
            np.fill_diagonal(diff, np.inf)
            s = np.sum(1.0 / diff, axis=1)
            w = ratio / (1 - ratio * s)
        w = np.where(pz == 0, 0, w)
        if not np.all(np.isfinite(w)):
            raise RootFindingDiverged("non-finite Aberth correction")
        z = z - w
        if np.max(np.abs(w) / np.maximum(np.abs(z), 1e-300)) < tol:
            return z
    raise RootFindingDiverged("Aberth iteration did not converge")


def _newton_polish(coeffs: np.ndarray, z: np.ndarray, steps: int = 3) -> np.ndarray:
    p = np.polynomial.Polynomial(coeffs)
    dp = p.deriv()
    for _ in range(steps):
        d = dp(z)
        ok = np.abs(d) > 1e-12 * np.maximum(1, np.abs(p(z)))
        z = np.where(ok, z - p(z) / np.where(ok, d, 1), z)
    return z


def critical_points(f: SiegelPolynomial) -> list[complex]:
    """Roots of f' with multiplicity; companion matrix if Aberth fails."""
    d = f.degree
    dcoef = np.array([i * a for i, a in enumerate(f.coefficients, start=1)], dtype=complex)
    if d == 2:
        return [complex(-dcoef[0] / dcoef[1])]
    try:
        roots = _aberth(dcoef)
    except RootFindingDiverged:
        roots = np.roots(dcoef[::-1])
    return [complex(r) for r in roots]


def match_error(found: Sequence[complex], expected: Sequence[complex]) -> float:
    """Max distance under the best one-to-one matching."""
    a = np.asarray(found, dtype=complex)
    b = np.asarray(expected, dtype=complex)
    cost = np.abs(a[:, None] - b[None, :])
    r, c = linear_sum_assignment(cost)
    return float(cost[r, c].max())


def critical_spec_from_json(obj: dict, prec: int = 512) -> CriticalSpec:
    alpha = obj["alpha"]
    if isinstance(alpha, dict):
        rot = RotationNumber.from_coeffs(alpha.get("prefix", []), alpha.get("period", [1]), prec)
    else:
        rot = RotationNumber.from_coeffs(alpha, (1,), prec)
    pts = [complex(re, im) for re, im in obj.get("points", [])]
    return CriticalSpec(rot, tuple(pts))


def critical_spec_to_json(spec: CriticalSpec) -> dict:
    return {
        "alpha": {"prefix": list(spec.alpha.prefix), "period": list(spec.alpha.period)},
        "points": [[c.real, c.imag] for c in spec.points],
    }


def polynomial_from_json(obj: dict, prec: int = 512) -> SiegelPolynomial:
    alpha = obj["alpha"]
    rot = RotationNumber.from_coeffs(alpha.get("prefix", []), alpha.get("period", [1]), prec)
    coeffs = tuple(complex(re, im) for re, im in obj["coefficients"])
    crit = tuple(complex(re, im) for re, im in obj["critical_points"])
    if len(coeffs) != obj.get("degree", len(coeffs)):
        raise ValueError("degree does not match coefficient count")
    return SiegelPolynomial(rot, coeffs, crit)


def dumps(obj) -> str:
    if isinstance(obj, SiegelPolynomial):
        return json.dumps(obj.to_json(), indent=2)
    return json.dumps(critical_spec_to_json(obj), indent=2)


def quadratic(alpha: RotationNumber) -> SiegelPolynomial:
    """e^{2 pi i alpha} (z - z^2 / 2)."""
    return from_critical_points(CriticalSpec(alpha, ()))


def random_spec(rng: np.random.Generator, alpha: RotationNumber, degree: int,
                rmin: float = 0.2, rmax: float = 5.0) -> CriticalSpec:
    k = degree - 2
    radii = np.exp(rng.uniform(math.log(rmin), math.log(rmax), size=k))
    args = rng.uniform(0, 2 * np.pi, size=k)
    return CriticalSpec(alpha, tuple(radii * np.exp(1j * args)))


def orbit_diameter(points: np.ndarray) -> float:
    from scipy.spatial import ConvexHull
    from scipy.spatial.distance import pdist

    xy = np.column_stack([points.real, points.imag])
    if len(xy) > 8:
        try:
            xy = xy[ConvexHull(xy).vertices]
        except Exception:  # collinear orbit: fall back to all pairs
            pass
    return float(pdist(xy).max()) if len(xy) > 1 else 0.0


def critical_diameter_ratio(f: SiegelPolynomial, n_iter: int = 10_000,
                            escape: float = 1e6) -> float | None:
    """diam(orbit of 1) / min |c|, or None if the orbit escapes."""
    z = 1.0 + 0j
    orb = np.empty(n_iter + 1, dtype=complex)
    orb[0] = z
    for k in range(1, n_iter + 1):
        z = evaluate(f, z)
        if not abs(z) < escape:
            return None
        orb[k] = z
    return orbit_diameter(orb) / min(abs(c) for c in f.critical_points)


def fit_diameter_constant(polys: Sequence[SiegelPolynomial], n_iter: int = 10_000) -> dict:
    """Smallest L with diam <= L * min|c| over the bounded-orbit members."""
    ratios = [r for r in (critical_diameter_ratio(f, n_iter) for f in polys) if r is not None]
    return {"n_bounded": len(ratios), "n_total": len(polys),
            "L": max(ratios) if ratios else float("nan")}
