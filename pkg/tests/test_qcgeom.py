import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from siegel_lab import qcgeom as qc
from siegel_lab.errors import InvalidBreakpoints, RecursionDepthExceeded, SingularDifferential


def _svd_k(J):
    s = np.linalg.svd(J, compute_uv=False)
    return s[..., 0] / s[..., 1]


# partitions

def test_saddle_profile_m5():
    spec = qc.make_saddle_partition(5)
    L = spec.lengths
    assert np.allclose(L / L[0], [1, 0.25, 0.25, 1], rtol=0, atol=1e-15)
    assert spec.points[0] == 0.0 and spec.points[-1] == 1.0


def test_m2_single_cell():
    spec = qc.make_saddle_partition(2)
    assert spec.points.tolist() == [0.0, 1.0]


def test_two_equal_pieces_symmetric():
    spec = qc.make_saddle_partition(13, (0, 6, 12))
    L = spec.lengths
    assert np.allclose(L, L[::-1], atol=1e-15)
    assert np.allclose(L[:6], L[6:], atol=1e-15)
    assert math.isclose(spec.points[6], 0.5, abs_tol=1e-15)


def test_band_holds_for_perturbed_generator():
    spec = qc.make_saddle_partition(40, (0, 13, 39), C0=3.0, rng=np.random.default_rng(1))
    assert spec.saddle_band() <= 3.0
    assert qc.make_saddle_partition(40, (0, 13, 39)).saddle_band() == pytest.approx(1.0)


@pytest.mark.parametrize("bp", [(0, 3), (1, 4), (0, 3, 2, 4)])
def test_bad_breakpoints(bp):
    with pytest.raises(InvalidBreakpoints):
        qc.make_saddle_partition(5, bp)


def test_m_below_two():
    with pytest.raises(InvalidBreakpoints):
        qc.make_saddle_partition(1)


# dilatation primitives

@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=4, max_size=4))
def test_dilatation_of_matches_svd(v):
    J = np.array(v).reshape(2, 2)
    s = np.linalg.svd(J, compute_uv=False)
    if s[1] < 1e-6 * max(s[0], 1e-300) or s[0] < 1e-6:
        return
    assert qc.dilatation_of(J) == pytest.approx(s[0] / s[1], rel=1e-9)


def test_field_identity():
    rep = qc.dilatation_field(lambda p: np.array(p, float), grid=32)
    assert rep.max_dilatation == 1.0
    assert rep.orientation_certificate
    assert rep.edge_linearity_residual == 0.0


def test_field_diag():
    rep = qc.dilatation_field(lambda p: np.asarray(p) * [2.0, 1.0], grid=32)
    assert rep.max_dilatation == pytest.approx(2.0, abs=1e-9)


def test_field_rotation():
    c, s = math.cos(math.pi / 6), math.sin(math.pi / 6)
    R = np.array([[c, -s], [s, c]])
    rep = qc.dilatation_field(lambda p: np.asarray(p) @ R.T, grid=32)
    assert abs(rep.max_dilatation - 1.0) < 1e-8
    assert rep.orientation_certificate


def test_field_singular():
    with pytest.raises(SingularDifferential):
        qc.dilatation_field(lambda p: np.column_stack([p[:, 0], 0 * p[:, 0]]), grid=8)


def test_plmap_affine_images():
    rng = np.random.default_rng(3)
    P, T = qc.square_mesh(np.linspace(0, 1, 5))
    A = rng.normal(size=(2, 2))
    if np.linalg.det(A) < 0:
        A[:, 0] *= -1
    pl = qc.PLMap(P, P @ A.T, T)
    assert np.allclose(pl.jacobians, A, atol=1e-12)
    assert np.allclose(pl.triangle_dilatation(), _svd_k(A), rtol=1e-10)
    q = rng.uniform(0, 1, (200, 2))
    assert np.allclose(pl(q), q @ A.T, atol=1e-12)
    assert np.allclose(pl.inverse()(pl(q)), q, atol=1e-12)


# single piece

def test_identity_map_exact():
    spec = qc.linear_partition(9)
    ev, rep = qc.build_polygon_map(spec, spec, grid=64)
    assert rep.max_dilatation == 1.0
    assert rep.edge_linearity_residual == 0.0


def test_mark_count_mismatch():
    with pytest.raises(InvalidBreakpoints):
        qc.build_map(qc.make_saddle_partition(5), qc.linear_partition(6))


@pytest.fixture(scope="module")
def leaf16():
    return qc.build_map(qc.make_saddle_partition(16), qc.linear_partition(16))


def test_leaf_marks_exact(leaf16):
    pts = np.column_stack([leaf16.x, np.zeros_like(leaf16.x)])
    img = leaf16(pts)
    assert np.abs(img[:, 0] - leaf16.y).max() <= 1e-12
    assert np.abs(img[:, 1]).max() <= 1e-12


def test_leaf_boundary_linear(leaf16):
    assert qc._boundary_residual(leaf16, leaf16.x, leaf16.y) <= 1e-12


def test_leaf_orientation(leaf16):
    assert leaf16.pl.min_det() > 0
    rep = qc.dilatation_field(leaf16, grid=128)
    assert rep.orientation_certificate
    # grid estimate cannot exceed the per-triangle maximum by more than rounding
    assert rep.max_dilatation <= leaf16.piece_max_dilatation * (1 + 1e-6)


@settings(max_examples=25, deadline=None)
@given(st.lists(st.floats(0.0, 1.0), min_size=300, max_size=300))
def test_leaf_is_injective_on_samples(u):
    ev = _leaf8()
    q = np.array(u).reshape(-1, 2)
    img = ev(q)
    assert np.isfinite(img).all()
    back = ev.pl.inverse()(img)
    assert np.allclose(back, q, atol=1e-9)


_CACHE = {}


def _leaf8():
    if "leaf8" not in _CACHE:
        _CACHE["leaf8"] = qc.build_map(qc.make_saddle_partition(8), qc.linear_partition(8))
    return _CACHE["leaf8"]


def test_growth_quotient_stable():
    ms = [8, 16, 32, 64]
    K = [qc.build_map(qc.make_saddle_partition(m), qc.linear_partition(m)).piece_max_dilatation
         for m in ms]
    q = np.array(K) / (1 + np.log(ms) ** 2)
    assert q.max() / q.min() <= 2.0
    # sublinear in m
    assert K[-1] / K[0] < (ms[-1] / ms[0]) ** 0.75


# several pieces

def test_multi_piece_boundary_and_orientation():
    src = qc.make_saddle_partition(25, (0, 12, 24))
    ev = qc.build_map(src, qc.linear_partition(25))
    assert qc._boundary_residual(ev, ev.x, ev.y) <= 1e-12
    rep = qc.dilatation_field(ev, grid=64)
    assert rep.orientation_certificate
    assert math.isfinite(rep.max_dilatation)


def test_mirrored_pieces():
    # first piece shorter than the last triggers the reflection branch
    src = qc.make_saddle_partition(19, (0, 6, 18), weights=(1, 2))
    ev = qc.build_map(src, qc.linear_partition(19))
    assert ev.mirrored
    assert qc._boundary_residual(ev, ev.x, ev.y) <= 1e-12
    assert qc.dilatation_field(ev, grid=48).orientation_certificate


def test_multi_piece_bounded_in_m():
    K = []
    for m in (25, 49):
        ev = qc.build_map(qc.make_saddle_partition(m, (0, (m - 1) // 2, m - 1)),
                          qc.linear_partition(m))
        K.append(ev.piece_max_dilatation)
    assert max(K) / min(K) <= 2.0


def test_recursion_depth():
    src = qc.make_saddle_partition(13, (0, 3, 6, 9, 12))
    with pytest.raises(RecursionDepthExceeded):
        qc.build_map(src, qc.linear_partition(13), max_depth=1)


# artifacts

def test_growth_csv_roundtrip():
    rows = qc.growth_sweep([8, 16], grid=32)
    text = qc.growth_csv(rows)
    lines = text.strip().split("\n")
    assert lines[0] == "m,l,max_dilatation,fitted_C"
    assert float(lines[1].split(",")[2]) == rows[0]["max_dilatation"]
    assert qc.growth_csv(qc.growth_sweep([8, 16], grid=32)) == text


def test_fit_growth_exact():
    ms = [8, 16, 64]
    K = [3.0 * (1 + math.log(m) ** 2) for m in ms]
    assert qc.fit_growth(ms, K) == pytest.approx(3.0, rel=1e-14)


def test_svg(leaf16):
    s = qc.to_svg(leaf16, heat_grid=16)
    assert s.startswith("<svg") and s.rstrip().endswith("</svg>")
    assert s.count("<rect") == 256
