import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import SURFACES, X, Y, Z, cone, cusp, fd_restricted_gradient, plane
from singflow.errors import ConvergenceError, PreconditionError
from singflow.geometry import (
    HeightSlicer,
    Metric,
    PolyFunction,
    Surface,
    project_to_surface,
    restricted_gradient,
    retraction_flow,
    sample_surface_points,
    slice_curve,
)


# --- PolyFunction -----------------------------------------------------------

polys = st.lists(
    st.tuples(st.tuples(*[st.integers(0, 4)] * 3), st.floats(-3, 3, allow_nan=False)), min_size=1, max_size=6
).map(PolyFunction)
ball = st.tuples(*[st.floats(-0.55, 0.55)] * 3).filter(lambda p: 0.05 < math.hypot(*p) < 0.95)


@settings(max_examples=60, deadline=None)
@given(polys, ball)
def test_polyfunction_gradient_matches_central_differences(f, p):
    p = np.array(p)
    g = f.gradient(p)
    h = 1e-5
    fd = np.array([(f(p + h * e) - f(p - h * e)) / (2 * h) for e in np.eye(3)])
    scale = max(np.linalg.norm(g), sum(abs(c) for _, c in f.monomials) * 1e-3, 1e-12)
    assert np.linalg.norm(g - fd) <= 1e-6 * scale


def test_polyfunction_records_and_algebra():
    f = X**2 - 3 * Y * Z + 1.5
    assert PolyFunction.from_records(f.to_records()) == f
    p = np.array([0.3, -0.2, 0.7])
    assert f(p) == pytest.approx(0.09 + 0.42 + 1.5)
    assert (f - f).is_zero()
    assert f.degree == 2


# --- Metric -----------------------------------------------------------------


def test_metric_requires_symmetry_and_positivity():
    one, zero = PolyFunction.constant(1.0), PolyFunction()
    with pytest.raises(ValueError):
        Metric(((one, X, zero), (zero, one, zero), (zero, zero, one)))
    m = Metric(((one + X**2, zero, zero), (zero, one, zero), (zero, zero, one)))
    assert m.check_positive(np.array([[0.1, 0.2, 0.3]]))
    bad = Metric(((one - 4 * X**2, zero, zero), (zero, one, zero), (zero, zero, one)))
    assert not bad.check_positive(np.array([[0.9, 0.0, 0.0]]))


# --- projection -------------------------------------------------------------


def test_project_cone_point():
    s = cone()
    q = project_to_surface(s, np.array([1.001, 0.0, 1.0]))
    assert abs(s.equation(q)) < 1e-12


def test_project_fixed_point():
    s = cone()
    p = np.array([0.6, 0.8, 1.0])
    assert np.allclose(project_to_surface(s, p), p, atol=1e-15)


def test_project_origin_rejected():
    with pytest.raises(PreconditionError):
        project_to_surface(cone(), np.zeros(3))


def test_project_nonconvergence_reports_residual():
    s = Surface(X**2 + Y**2 + Z**2 - Z**3, seed_point=(0, 0, 1))
    with pytest.raises((ConvergenceError, PreconditionError)):
        project_to_surface(s, np.array([0.5, 0.5, 0.0]), max_steps=2)


# --- restricted gradient ----------------------------------------------------


def test_restricted_gradient_plane():
    v = restricted_gradient(plane(), None, X**2 + Y**2, np.array([1.0, 0.0, 0.0]))
    assert np.array_equal(v, [2.0, 0.0, 0.0])


def test_restricted_gradient_cone_hand_projection():
    v = restricted_gradient(cone(), None, Z, np.array([1.0, 0.0, 1.0]))
    assert np.allclose(v, [0.5, 0.0, 0.5], atol=1e-15)


def test_restricted_gradient_constant_function():
    v = restricted_gradient(cone(), None, PolyFunction.constant(3.0), np.array([1.0, 0.0, 1.0]))
    assert np.all(v == 0)


def test_restricted_gradient_preconditions():
    with pytest.raises(PreconditionError):
        restricted_gradient(cone(), None, Z, np.array([1.0, 0.0, 0.5]))
    with pytest.raises(PreconditionError):
        restricted_gradient(cone(), None, Z, np.zeros(3))


def test_planar_gradient_is_exact(rng):
    f = X**3 - 2 * X * Y + Y**2
    p = np.column_stack([rng.uniform(-1, 1, 50), rng.uniform(-1, 1, 50), np.zeros(50)])
    v = restricted_gradient(plane(), None, f, p)
    exact = np.column_stack([3 * p[:, 0] ** 2 - 2 * p[:, 1], -2 * p[:, 0] + 2 * p[:, 1], np.zeros(50)])
    # agreement to a few ulps of the operands
    assert np.max(np.abs(v - exact)) <= 4 * np.finfo(float).eps * 3.0


def test_general_metric_energy_identity():
    one, zero = PolyFunction.constant(1.0), PolyFunction()
    m = Metric(((2 * one + X**2, 0.5 * one, zero), (0.5 * one, one, zero), (zero, zero, one + Z**2)))
    s = cone()
    f = X + 2 * Y - Z
    p = np.array([[0.3, 0.4, 0.5], [-0.6, 0.8, 1.0]])
    v = restricted_gradient(s, m, f, p)
    assert np.allclose(np.sum(s.equation.gradient(p) * v, axis=-1), 0, atol=1e-14)
    assert np.allclose(np.sum(f.gradient(p) * v, axis=-1), m.inner(p, v, v), rtol=1e-12)


FUNCS = {"plane": X**2 - Y**2 + X * Y, "cone": Z + X * Y, "cusp": -Z + X, "shifted_cusp": -Z + Y}


@pytest.mark.parametrize("name", ["plane", "cone", "cusp", "shifted_cusp"])
def test_restricted_gradient_against_finite_differences(name):
    s = SURFACES[name]()
    f = FUNCS[name]
    pts = sample_surface_points(s, 60, rng=7)
    v = restricted_gradient(s, None, f, pts)
    for p, vi in zip(pts, v):
        fd = fd_restricted_gradient(s, f, p)
        assert np.linalg.norm(vi - fd) <= 1e-6 * np.linalg.norm(vi)


# --- slices -----------------------------------------------------------------


def test_cone_slice_is_closed_form_circle():
    s = cone()
    c = slice_curve(s, 0.5, 256)
    assert c.shape == (256, 3)
    assert np.allclose(c[:, 2], 0.5 / math.sqrt(2), atol=1e-12)
    assert np.allclose(np.hypot(c[:, 0], c[:, 1]), 0.5 / math.sqrt(2), atol=1e-12)


def test_cusp_height_slice_radius():
    s = cusp().with_slicer(HeightSlicer((0.0, 0.0, 1.0)))
    c = slice_curve(s, 0.1, 128)
    assert np.allclose(c[:, 2], 0.1, rtol=1e-12)
    assert np.allclose(np.hypot(c[:, 0], c[:, 1]), 0.1**2.5, rtol=1e-9)


def test_slice_level_above_working_radius():
    with pytest.raises(PreconditionError):
        slice_curve(cone(), 0.6, 128)


@pytest.mark.parametrize("name", ["cone", "cusp", "shifted_cusp"])
def test_slice_points_on_surface_and_level(name):
    s = SURFACES[name]()
    for level in (0.3, 1e-2, 1e-4):
        c = slice_curve(s, level, 128)
        assert np.max(np.abs(s.equation(c))) < 1e-9
        assert np.max(np.abs(s.slicer.value(c) - level)) < 1e-9 * max(level, 1.0)
        gaps = np.linalg.norm(np.roll(c, -1, axis=0) - c, axis=-1)
        # equal arcs; chords differ only through curvature variation
        assert gaps.std() / gaps.mean() < 1e-3
        # one orientation: successive chords follow grad F x grad L
        t = np.cross(s.equation.gradient(c), s.slicer.grad(c))
        assert np.all(np.sum((np.roll(c, -1, axis=0) - c) * t, axis=-1) > 0)


def test_retraction_preserves_labels_on_cone():
    s = cone()
    top = slice_curve(s, 0.4, 64)
    down = retraction_flow(s, top, [0.4, 1e-2, 1e-4])
    ang = lambda q: np.arctan2(q[..., 1], q[..., 0])
    assert np.allclose(ang(down[-1]), ang(top), atol=1e-10)


def test_surface_rejects_nonvanishing_equation():
    with pytest.raises(PreconditionError):
        Surface(Z + 1.0)


def test_isolated_singularity_check(rng):
    assert cone().check_isolated(n=200, rng=rng) > 0
