"""Continued fractions of rotation numbers in (0, 1).

Convention, used everywhere in the package: theta = [a_1, a_2, ...] means
theta = 1/(a_1 + 1/(a_2 + ...)), with seeds (p_{-1}, q_{-1}) = (1, 0) and
(p_0, q_0) = (0, 1), so that q_1 = a_1 and q_{n+1} = a_{n+1} q_n + q_{n-1}.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Sequence

import mpmath
from mpmath import mp

from .errors import InsufficientCoefficients, PrecisionExhausted, RationalInput

DEFAULT_PREC = 512
# bits kept in reserve beyond 2*log2(q_n) before a Gauss-map digit is trusted
GUARD_BITS = 32


def _tail_fixed_point(period: Sequence[int], prec: int) -> mpmath.mpf:
    """Value of the purely periodic fraction [b_1, ..., b_k, b_1, ...]."""
    # compose x -> 1/(b + x) as integer Moebius matrices
    a, b, c, d = 1, 0, 0, 1
    for bi in period:
        a, b, c, d = b, a + bi * b, d, c + bi * d
    # t = (a t + b) / (c t + d)  =>  c t^2 + (d - a) t - b = 0
    with mp.workprec(prec + 16):
        disc = mpmath.mpf((d - a) ** 2 + 4 * b * c)
        t = (-(d - a) + mpmath.sqrt(disc)) / (2 * c)
    return t


def _fold(prefix: Sequence[int], tail, prec: int):
    with mp.workprec(prec + 16):
        x = mpmath.mpf(tail)
        for a in reversed(prefix):
            x = 1 / (a + x)
    return x


@dataclass(frozen=True)
class RotationNumber:
    """Coefficient prefix plus an optional periodic tail, and the value.

    With an empty ``period`` only ``prefix`` is known and asking for more
    coefficients raises :class:`InsufficientCoefficients`.
    """

    prefix: tuple[int, ...]
    period: tuple[int, ...] = ()
    value: mpmath.mpf = field(default=None, compare=False)
    prec: int = DEFAULT_PREC

    def __post_init__(self):
        if any(int(a) < 1 for a in self.prefix + self.period):
            raise ValueError("continued-fraction coefficients must be >= 1")
        if self.value is None:
            if not self.period:
                raise ValueError("a finite prefix needs an explicit value")
            v = _fold(self.prefix, _tail_fixed_point(self.period, self.prec), self.prec)
            object.__setattr__(self, "value", v)

    @classmethod
    def from_coeffs(cls, prefix: Iterable[int], period: Iterable[int] = (),
                    prec: int = DEFAULT_PREC) -> "RotationNumber":
        return cls(tuple(int(a) for a in prefix), tuple(int(a) for a in period), None, prec)

    @classmethod
    def golden(cls, prec: int = DEFAULT_PREC) -> "RotationNumber":
        return cls.from_coeffs((), (1,), prec)

    @property
    def available(self) -> float:
        return math.inf if self.period else len(self.prefix)

    @property
    def is_periodic(self) -> bool:
        return bool(self.period)

    def coeff(self, n: int) -> int:
        """The 1-based coefficient a_n."""
        if n < 1:
            raise IndexError("coefficients are indexed from 1")
        if n <= len(self.prefix):
            return self.prefix[n - 1]
        if not self.period:
            raise InsufficientCoefficients(f"a_{n} requested, {len(self.prefix)} stored")
        return self.period[(n - len(self.prefix) - 1) % len(self.period)]

    def coeffs(self, n: int) -> list[int]:
        return [self.coeff(k) for k in range(1, n + 1)]

    def convergent(self, n: int) -> tuple[int, int]:
        """(p_n, q_n) for n >= -1."""
        if n == -1:
            return 1, 0
        p0, q0, p1, q1 = 1, 0, 0, 1
        for k in range(1, n + 1):
            a = self.coeff(k)
            p0, q0, p1, q1 = p1, q1, a * p1 + p0, a * q1 + q0
        return p1, q1

    def denominators(self, n: int) -> list[int]:
        """[q_0, q_1, ..., q_n]."""
        qs = [1]
        q0, q1 = 0, 1
        for k in range(1, n + 1):
            q0, q1 = q1, self.coeff(k) * q1 + q0
            qs.append(q1)
        return qs

    def exact(self) -> Fraction:
        """The stored value as an exact dyadic rational."""
        return mpf_to_fraction(self.value)

    def __float__(self) -> float:
        return float(self.value)

    def frac_mul(self, k: int) -> mpmath.mpf:
        """k * theta mod 1, computed at the stored precision."""
        with mp.workprec(self.prec):
            x = k * self.value
            return x - mpmath.floor(x)


@dataclass(frozen=True)
class ArithClassReport:
    depth: int
    bounded_by: int | None
    david_constant: float
    brjuno_partial: float
    C: float
    bound: int
    in_theta_C: bool
    within_bound: bool
    bounded_type: bool | None


def mpf_to_fraction(x) -> Fraction:
    if not isinstance(x, mpmath.mpf):
        x = mpmath.mpf(x)  # re-wrapping an mpf would round it to mp.prec
    man, exp = x.man_exp
    if exp >= 0:
        return Fraction(int(man) << int(exp))
    return Fraction(int(man), 1 << int(-exp))


def _as_fraction(x, prec: int) -> Fraction:
    if isinstance(x, Fraction):
        return x
    if isinstance(x, int):
        return Fraction(x)
    with mp.workprec(prec):
        return mpf_to_fraction(mpmath.mpf(x))


def expand(x, n: int, prec: int = DEFAULT_PREC) -> RotationNumber:
    """First ``n`` coefficients of ``x`` by exact Euclid on its binary value."""
    r = _as_fraction(x, prec)
    if not 0 < r < 1:
        raise ValueError("x must lie in (0, 1)")
    coeffs: list[int] = []
    q0, q1 = 0, 1
    for k in range(n):
        inv = 1 / r
        a = inv.numerator // inv.denominator
        r = inv - a
        coeffs.append(a)
        q0, q1 = q1, a * q1 + q0
        if r == 0:
            raise RationalInput(f"expansion terminates after {k + 1} terms")
        if 2 * q1.bit_length() + GUARD_BITS > prec:
            raise PrecisionExhausted(
                f"term {k + 1} needs about {2 * q1.bit_length()} bits, have {prec}")
    exact = _as_fraction(x, prec)
    with mp.workprec(prec):
        value = mpmath.mpf(exact.numerator) / exact.denominator
    return RotationNumber(tuple(coeffs), (), value, prec)


def convergents(r: RotationNumber, n: int) -> list[tuple[int, int]]:
    """[(p_1, q_1), ..., (p_n, q_n)]."""
    if n > r.available:
        raise InsufficientCoefficients(f"{n} convergents requested, {r.available} coefficients")
    out = []
    p0, q0, p1, q1 = 1, 0, 0, 1
    for k in range(1, n + 1):
        a = r.coeff(k)
        p0, q0, p1, q1 = p1, q1, a * p1 + p0, a * q1 + q0
        out.append((p1, q1))
    return out


def david_constant(r: RotationNumber, depth: int) -> float:
    if depth > r.available:
        raise InsufficientCoefficients(f"depth {depth} exceeds stored coefficients")
    return max((math.log(r.coeff(k)) / math.sqrt(k) for k in range(1, depth + 1)), default=0.0)


def brjuno_partial(r: RotationNumber, N: int) -> float:
    """Sum of log(q_{n+1}) / q_n for n = 1..N."""
    if N + 1 > r.available:
        raise InsufficientCoefficients(f"brjuno_partial({N}) needs {N + 1} coefficients")
    qs = r.denominators(N + 1)
    return math.fsum(math.log(qs[n + 1]) / qs[n] for n in range(1, N + 1))


def classify(r: RotationNumber, C: float, bound: int, depth: int) -> ArithClassReport:
    if depth > r.available:
        raise InsufficientCoefficients(f"depth {depth} exceeds stored coefficients")
    dc = david_constant(r, depth)
    sup = max(r.coeffs(depth), default=1)
    if r.is_periodic:
        sup = max(sup, *r.period)
    bj_depth = depth if depth + 1 <= r.available else depth - 1
    bj = brjuno_partial(r, max(bj_depth, 0))
    return ArithClassReport(
        depth=depth,
        bounded_by=sup,
        david_constant=dc,
        brjuno_partial=bj,
        C=C,
        bound=bound,
        in_theta_C=dc <= C,
        within_bound=sup <= bound,
        bounded_type=True if r.is_periodic else None,
    )


def truncate_bounded(r: RotationNumber, N: int) -> RotationNumber:
    """theta_N = [a_1, ..., a_N, 1, 1, 1, ...]."""
    if N > r.available:
        raise InsufficientCoefficients(f"truncation at {N} exceeds stored coefficients")
    return RotationNumber.from_coeffs(r.coeffs(N), (1,), r.prec)


def parse_cf(text: str, prec: int = DEFAULT_PREC) -> RotationNumber:
    """Parse "1,2,3" (finite, value from the fraction) or "2,3,..." / "2,(3,4)"."""
    text = text.replace(" ", "")
    if text in ("golden", "g"):
        return RotationNumber.golden(prec)
    period: list[int] = []
    if "(" in text:
        head, _, rest = text.partition("(")
        period = [int(t) for t in rest.rstrip(")").split(",") if t]
        prefix = [int(t) for t in head.split(",") if t]
    elif text.endswith("..."):
        items = [int(t) for t in text[:-3].split(",") if t]
        # trailing "..." repeats the last coefficient
        prefix, period = items[:-1], items[-1:]
    else:
        prefix = [int(t) for t in text.split(",") if t]
    if period:
        return RotationNumber.from_coeffs(prefix, period, prec)
    frac = Fraction(0)
    for a in reversed(prefix):
        frac = 1 / (a + frac)
    with mp.workprec(prec):
        value = mpmath.mpf(frac.numerator) / frac.denominator
    return RotationNumber(tuple(prefix), (), value, prec)


def to_csv(r: RotationNumber, n: int) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["n", "a_n", "p_n", "q_n", "log_a_over_sqrt_n", "brjuno_partial"])
    conv = convergents(r, n)
    for k in range(1, n + 1):
        a = r.coeff(k)
        p, q = conv[k - 1]
        bj = repr(brjuno_partial(r, k)) if k + 1 <= r.available else ""
        w.writerow([k, a, p, q, repr(math.log(a) / math.sqrt(k)), bj])
    return buf.getvalue()
