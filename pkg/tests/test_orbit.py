import cmath
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from siegel_lab import orbit as O
from siegel_lab import polyfam as P
from siegel_lab.contfrac import RotationNumber
from siegel_lab.errors import EmptySet, EscapedOrbit, IndexBeyondEscape

G = RotationNumber.golden()
LAM = cmath.exp(2j * math.pi * float(G))
QUAD = P.quadratic(G)


def test_quadratic_orbit_bounded():
    tr = O.iterate(QUAD, 10_000, escape_radius=10)
    assert tr.escaped_at is None and tr.points[0] == 1
    assert np.abs(tr.points).max() <= 10


def test_escape_recorded():
    f = P.SiegelPolynomial(G, (LAM, 5.0 + 0j), (-LAM / 10,))
    tr = O.iterate(f, 100)
    assert tr.escaped_at is not None
    assert abs(tr.points[tr.escaped_at]) > tr.escape_radius
    assert np.all(np.abs(tr.points[: tr.escaped_at]) <= tr.escape_radius)
    with pytest.raises(IndexBeyondEscape):
        O.sigma(f, tr.escaped_at + 1, 0)
    with pytest.raises(EscapedOrbit):
        O.oscillation_table(f, G, 50)


def test_single_step():
    tr = O.iterate(QUAD, 1)
    assert len(tr.points) == 2 and tr.points[1] == pytest.approx(LAM / 2)


def test_sigma_first():
    assert O.sigma(QUAD, 1, 0) == pytest.approx(LAM / 2 - 1, abs=1e-15)
    with pytest.raises(ValueError):
        O.sigma(QUAD, 3, 3)


def test_telescoping():
    rng = np.random.default_rng(1)
    triples = []
    for _ in range(2000):
        m, j, k = sorted(rng.choice(10_000, 3, replace=False))
        triples.append((int(k), int(j), int(m)))
    assert O.telescoping_residual(QUAD, triples) <= 1e-10


def test_rigid_table_min_equals_max_per_lag():
    rot = O.RigidRotation(G)
    K = 40
    tab = O.oscillation_table(rot, G, K)
    delta = O.phase_distance(G, range(1, K + 1))
    for b in tab.nonempty():
        inside = delta[(delta > b.lo) & (delta <= b.hi)]
        assert b.min_sigma == pytest.approx(inside.min(), abs=1e-13)
        assert b.max_sigma == pytest.approx(inside.max(), abs=1e-13)


def test_table_single_pair():
    tab = O.oscillation_table(QUAD, G, 1)
    assert sum(b.count for b in tab.bins) == 1
    assert tab.nonempty()[0].min_sigma == pytest.approx(abs(LAM / 2 - 1))


def test_table_bins_partition():
    tab = O.oscillation_table(QUAD, G, 300)
    assert tab.bins[0].lo == 0 and tab.bins[-1].hi == 2
    assert all(a.hi == b.lo for a, b in zip(tab.bins, tab.bins[1:]))
    assert sum(b.count for b in tab.bins) == 300 * 301 // 2
    assert all(b.min_sigma <= b.max_sigma for b in tab.nonempty())


def test_phase_distance_high_lag():
    # double precision would lose several digits of k*theta at this size
    k = 10**15
    exact = O.phase_distance(G, [k])[0]
    from mpmath import mp, mpf, sqrt, sin, pi, floor
    with mp.workprec(300):
        x = k * (sqrt(5) - 1) / 2
        x = x - floor(x)
        ref = 2 * abs(sin(pi * x))
    assert exact == pytest.approx(float(ref), rel=1e-14)


def test_rigid_curve_is_circle():
    rot = O.RigidRotation(G)
    n = 400
    c = O.boundary_curve(rot, G, n)
    assert np.all(np.diff(c.phases) > 0)
    circle = np.exp(2j * np.pi * np.linspace(0, 1, 20_000, endpoint=False))
    assert O.hausdorff(c.points, circle) <= 2 * math.pi / n


def test_small_curve_sorted():
    c = O.boundary_curve(QUAD, G, 3)
    assert len(c.points) == 3 and np.all(np.diff(c.phases) > 0)
    assert O.equivariance_residual(QUAD, c) == 0


def test_jordan_proxy_circle():
    n = 2000
    ph = np.arange(n) / n
    c = O.BoundaryCurve(ph, np.exp(2j * np.pi * ph), np.arange(n), n)
    got = O.jordan_proxy(c, 0.1)
    assert got == pytest.approx(2 * math.sin(math.pi * 0.1), abs=2 * math.pi / n)


def test_jordan_proxy_collision():
    ph = np.array([0.0, 0.25, 0.5, 0.75])
    z = np.array([1, 1j, 1, -1j])
    assert O.jordan_proxy(O.BoundaryCurve(ph, z, np.arange(4), 4), 0.1) == 0


def test_hausdorff_examples():
    assert O.hausdorff([1, 2j], [1, 2j]) == 0
    assert O.hausdorff([0], [3, 4j]) == pytest.approx(4)
    with pytest.raises(EmptySet):
        O.hausdorff([], [1])


def test_perturbation_singleton_and_repeat():
    spec = P.CriticalSpec(G, ())
    rep = O.perturbation_experiment(G, spec, [5], n_samples=200, K=50)
    assert rep.hausdorff_matrix.shape == (1, 1) and rep.successive() == []
    rep2 = O.perturbation_experiment(G, spec, [5, 5], n_samples=200, K=50)
    assert rep2.hausdorff_matrix[0, 1] == 0


def test_csv_is_plain():
    text = O.table_to_csv(O.oscillation_table(QUAD, G, 20, bins=8))
    assert "np." not in text and text.count("\n") == 9


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 400))
def test_binning_shift_invariant(offset):
    # phase bin for (k, m) depends on k - m only
    lag = 37
    a = O.phase_distance(G, [lag])[0]
    ph = O.phases(G, 2, start=offset)
    ph2 = O.phases(G, 1, start=offset + lag)
    b = abs(np.exp(2j * np.pi * ph2[0]) - np.exp(2j * np.pi * ph[0]))
    assert a == pytest.approx(b, abs=1e-12)
