"""Reference-path geometry tests."""
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from safedrive.paths import MAX_SAMPLE_SPACING, PathExtentError, ReferencePath


def test_straight_path_basics():
    path = ReferencePath.straight(100.0, 10.0)
    assert path.length == pytest.approx(100.0)
    assert path.heading_at(50.0) == pytest.approx(0.0)
    assert path.curvature_at(50.0) == pytest.approx(0.0)
    x, y = path.point_at(42.0)
    assert (x, y) == (pytest.approx(42.0), pytest.approx(0.0))


def test_projection_signed_offset():
    path = ReferencePath.straight(100.0, 10.0)
    station, offset, heading = path.project(30.0, 2.0)
    assert station == pytest.approx(30.0)
    assert offset == pytest.approx(2.0)     # left of the tangent
    assert heading == pytest.approx(0.0)
    _, offset, _ = path.project(30.0, -1.5)
    assert offset == pytest.approx(-1.5)


def test_projection_rejects_out_of_extent():
    path = ReferencePath.straight(100.0, 10.0)
    with pytest.raises(PathExtentError):
        path.project(-5.0, 0.0)
    with pytest.raises(PathExtentError):
        path.project(105.0, 0.0)
    with pytest.raises(PathExtentError):
        path.point_at(101.0)


def test_sinusoid_curvature_sign():
    # y = 5 sin(0.05 x): curvature has the sign of -y''... y'' < 0 at the
    # crest, so the path bends right (negative curvature) there
    path = ReferencePath.from_function(lambda x: 5.0 * np.sin(0.05 * x),
                                       200.0, 10.0)
    crest = np.pi / 2 / 0.05   # x of the first crest
    station, _, _ = path.project(crest, 5.0)
    assert path.curvature_at(station) < 0.0


def test_sample_spacing_invariant_enforced():
    with pytest.raises(ValueError):
        ReferencePath(np.array([0.0, 1.0]), np.array([0.0, 0.0]), 10.0)
    with pytest.raises(ValueError):
        ReferencePath(np.array([0.0, 0.0]), np.array([0.0, 0.0]), 10.0)


def test_normal_is_left_of_tangent():
    path = ReferencePath.straight(10.0, 1.0)
    nx, ny = path.normal_at(5.0)
    assert (nx, ny) == (pytest.approx(0.0, abs=1e-12), pytest.approx(1.0))


@settings(max_examples=30, deadline=None)
@given(st.floats(1.0, 99.0), st.floats(-3.0, 3.0))
def test_projection_roundtrip_on_curvy_path(station, offset):
    path = ReferencePath.from_function(
        lambda x: 4.0 * np.sin(0.03 * x) + 2.0, 120.0, 10.0)
    px, py = path.point_at(station)
    nx, ny = path.normal_at(station)
    s, off, _ = path.project(px + offset * nx, py + offset * ny)
    # polyline projection: agreement to within the sampling resolution
    assert abs(off - offset) < 0.02
    assert abs(s - station) < 0.3
