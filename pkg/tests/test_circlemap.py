import math
import warnings

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from mpmath import mp

from siegel_lab import blaschke as bl
from siegel_lab import circlemap as cm
from siegel_lab.contfrac import RotationNumber
from siegel_lab.errors import (DegenerateQuadruple, DerivativeVanishes, NotMonotone,
                               RotationMismatch, TooFewSubintervals, UnconvergedWarning)

G = RotationNumber.golden()
ROT = cm.rigid(G)


@pytest.fixture(scope="module")
def dg_golden():
    return bl.tune_rotation(bl.build_dg(), G).model.handle()


def moebius_lift(a: complex):
    """Lift of z -> (z - a)/(1 - conj(a) z) for |a| < 1."""
    ac = np.conj(a)

    def F(x):
        return x - np.angle(1 - ac * np.exp(2j * np.pi * np.asarray(x, dtype=float))) / np.pi
    return F


def brute_force_gaps(alpha_mp, N):
    """Sorted {-i alpha mod 1 : i < N}, in high precision."""
    with mp.workprec(300):
        pts = [(-i * alpha_mp) % 1 for i in range(N)]
        order = sorted(range(N), key=lambda i: pts[i])
        gaps = [pts[order[(j + 1) % N]] - pts[order[j]] + (1 if j == N - 1 else 0)
                for j in range(N)]
    return order, [float(g) for g in gaps]


def test_rigid_rotation_number():
    assert cm.rotation_number(ROT).value == float(G)


def test_orbit_bracket_on_translation():
    est = cm.rotation_number(cm.from_lift(lambda x: x + 0.3819660112501051), iters=5000, tol=1e-6)
    assert abs(est.value - 0.3819660112501051) < 1e-6
    assert est.lo <= 0.3819660112501051 <= est.hi


@pytest.mark.parametrize("seed", range(20))
def test_rotation_number_conjugacy_invariant(seed):
    rng = np.random.default_rng(seed)
    a = 0.5 * math.sqrt(rng.uniform()) * np.exp(2j * np.pi * rng.uniform())
    h, hinv = moebius_lift(a), moebius_lift(-a)
    alpha = float(G)
    m = cm.from_lift(lambda x: float(h(float(hinv(x)) + alpha)))
    est = cm.rotation_number(m, iters=3000, tol=1e-5)
    assert abs(est.value - alpha) <= 1e-5


def test_dg_rotation_monotone_in_t():
    B = bl.build_dg()
    vals = [cm.rotation_number(B.with_t(t).handle(), iters=1500, tol=1).value
            for t in np.linspace(0, 1, 17)]
    assert all(b >= a - 1e-3 for a, b in zip(vals, vals[1:]))


def test_unconverged_flag():
    with pytest.warns(UnconvergedWarning):
        cm.rotation_number(bl.build_dg(0.3).handle(), iters=50, tol=1e-12)


def test_certificate_rejects_fold():
    with pytest.raises(NotMonotone):
        cm.from_lift(lambda x: x + 0.2 * np.sin(2 * np.pi * np.asarray(x))).certify()
    bl.build_dg(0.1).handle().certify()


def test_rigid_backward_orbit_exact():
    xs = cm.backward_orbit(ROT, 50)
    with mp.workprec(200):
        a = (mpmath.sqrt(5) - 1) / 2
        ref = [float((-i * a) % 1) for i in range(50)]
    assert np.max(np.abs(xs - ref)) < 1e-15


def test_backward_orbit_shift(dg_golden):
    xs = cm.backward_orbit(dg_golden, 30)
    ys = cm.backward_orbit(dg_golden, 30, seed=xs[1])
    assert np.allclose(xs[1:], ys[:-1], atol=1e-12)


def test_dg_backward_residuals(dg_golden):
    xs = cm.backward_orbit(dg_golden, 101)
    assert cm.forward_residuals(dg_golden, xs).max() <= 1e-9


@pytest.mark.parametrize("level", range(1, 11))
def test_rigid_partition_matches_brute_force(level):
    p = cm.dynamical_partition(ROT, G, level)
    N = p.q_n + p.q_next
    with mp.workprec(300):
        order, gaps = brute_force_gaps((mpmath.sqrt(5) - 1) / 2, N)
    assert [iv.left for iv in p.intervals] == order
    assert np.max(np.abs(p.lengths - gaps)) <= 1e-12
    assert abs(p.lengths.sum() - 1) <= 1e-10
    # lengths are the two closest-return distances
    d_n = float(abs(p.q_n * G.value - G.convergent(level)[0]))
    d_next = float(abs(p.q_next * G.value - G.convergent(level + 1)[0]))
    for iv in p.intervals:
        assert iv.length == pytest.approx(d_n if iv.family == "n" else d_next, abs=1e-12)
    rep = cm.closest_return_check(p)
    assert rep["adjacency_ok"] and rep["refinement_ok"]


def test_minimal_partition_two_intervals():
    assert len(cm.dynamical_partition(ROT, G, 0).intervals) == 2


@pytest.mark.parametrize("coeffs", [(2,), (1, 3), (3, 1, 2), (1, 4, 1, 1, 5)])
def test_adjacency_other_rotations(coeffs):
    r = RotationNumber.from_coeffs(coeffs, (2, 1))
    for n in range(1, 8):
        rep = cm.closest_return_check(cm.dynamical_partition(cm.rigid(r), r, n))
        assert rep["adjacency_ok"] and rep["refinement_ok"], (coeffs, n)


def test_dg_partitions(dg_golden):
    for n in range(1, 9):
        p = cm.dynamical_partition(dg_golden, G, n)
        assert abs(p.lengths.sum() - 1) <= 1e-10
        rep = cm.closest_return_check(p)
        assert rep["adjacency_ok"] and rep["refinement_ok"]
        assert cm.endpoint_residual(dg_golden, p) < 1e-9
        assert cm.commensurability_report(p) < 10


def test_rotation_mismatch(dg_golden):
    with pytest.raises(RotationMismatch):
        cm.dynamical_partition(dg_golden, RotationNumber.from_coeffs((2,), (1,)), 4)


def test_rigid_commensurability():
    phi = (1 + math.sqrt(5)) / 2
    for n in (3, 6, 9):
        assert cm.commensurability_report(cm.dynamical_partition(ROT, G, n)) == pytest.approx(phi)


def test_single_interval_commensurability():
    iv = cm.PartitionInterval(0, 0, 0.0, 1.0, "n", 0)
    p = cm.DynamicalPartition(0, 1, 1, np.zeros(1), (iv,), G)
    assert cm.commensurability_report(p) == 1.0


def test_cross_ratio_examples():
    assert cm.cross_ratio(0, 0.25, 0.5, 0.75) == pytest.approx(0.25)
    with pytest.raises(DegenerateQuadruple):
        cm.cross_ratio(0, 0.2, 0.2, 0.5)
    with pytest.raises(DegenerateQuadruple):
        cm.cross_ratio(0, 0.3, 0.6, 1.2)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(0, 0.999, exclude_max=True), min_size=4, max_size=4, unique=True),
       st.integers(1, 500))
def test_rigid_distortion_is_one(pts, power):
    a, b, c, d = sorted(pts)
    if min(b - a, c - b, d - c) < 1e-6:
        return
    assert abs(cm.distortion(a, b, c, d, ROT, power) - 1) <= 1e-14


def test_dg_distortion_finite(dg_golden):
    p = cm.dynamical_partition(dg_golden, G, 7)
    rng = np.random.default_rng(0)
    quads = cm.herman_quadruples(p, rng, per_power=5)
    assert max(m for _, m in quads) == p.q_next == 34
    vals = [cm.distortion(*q, dg_golden, m) for q, m in quads]
    assert np.all(np.isfinite(vals)) and max(vals) < 1e3


def test_saddle_node_synthetic():
    m = 25
    k = np.arange(1, m + 1)
    fit = cm.saddle_node_fit(0.3 / np.minimum(k, m - k + 1) ** 2)
    assert abs(fit.exponent - 2) < 1e-10 and fit.residual < 1e-10
    with pytest.raises(TooFewSubintervals):
        cm.saddle_node_fit([1, 1, 1])


def test_saddle_node_rigid_contrast():
    r = RotationNumber.from_coeffs((1, 1, 1, 1, 20), (1,))
    R = cm.rigid(r)
    fit = cm.saddle_node_profile(cm.dynamical_partition(R, r, 3), cm.dynamical_partition(R, r, 4))
    assert fit.m >= 20 and abs(fit.exponent) < 0.2


def test_schwarzian_sine():
    eps = 0.1
    F = lambda x: x + eps * math.sin(2 * math.pi * x)
    for x in (0.1, 0.37, 0.8):
        d1 = 1 + 2 * math.pi * eps * math.cos(2 * math.pi * x)
        d2 = -4 * math.pi ** 2 * eps * math.sin(2 * math.pi * x)
        d3 = -8 * math.pi ** 3 * eps * math.cos(2 * math.pi * x)
        exact = d3 / d1 - 1.5 * (d2 / d1) ** 2
        assert cm.schwarzian(F, x) == pytest.approx(exact, rel=1e-4)


def test_schwarzian_real_moebius():
    F = lambda x: (2 * x + 1) / (x + 3)
    for x in (0.0, 0.2, 0.9):
        assert abs(cm.schwarzian(F, x)) < 1e-6


def test_schwarzian_circle_moebius():
    F = moebius_lift(0.3 + 0.2j)
    for x in (0.05, 0.4, 0.77):
        h = 1e-6
        d1 = (F(x + h) - F(x - h)) / (2 * h)
        assert cm.schwarzian(F, x) == pytest.approx(2 * math.pi ** 2 * (1 - d1 ** 2), rel=1e-4)


def test_schwarzian_dg_near_critical(dg_golden):
    for x in (0.003, 0.01, 0.03, -0.02):
        assert cm.schwarzian(dg_golden, x, h=1e-4) < -1 / x ** 2
    with pytest.raises(DerivativeVanishes):
        cm.schwarzian(dg_golden, 0.0)


def test_partition_csv(dg_golden):
    text = cm.dynamical_partition(dg_golden, G, 3).to_csv()
    assert text.splitlines()[0].startswith("level,family")
    assert len(text.splitlines()) == 1 + 8
