import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mr2xray import geometry as G
from mr2xray.geometry import ConeBeamGeometry, Ray, Trajectory, ViewPose

CONE = ConeBeamGeometry()
PAR = ConeBeamGeometry(beam_mode="parallel")
SMALL = ConeBeamGeometry(785.0, 1200.0, 9, 12, 2.0)


def test_defaults():
    g = ConeBeamGeometry()
    assert (g.sad_mm, g.sdd_mm, g.det_rows, g.det_cols, g.det_spacing_mm, g.beam_mode) == (
        785.0, 1200.0, 256, 256, 1.2, "cone")


@pytest.mark.parametrize("kwargs", [
    dict(sad_mm=0.0),
    dict(sad_mm=-1.0),
    dict(sdd_mm=700.0),
    dict(sdd_mm=785.0),
    dict(det_rows=0),
    dict(det_cols=0),
    dict(det_spacing_mm=0.0),
    dict(beam_mode="fan"),
])
def test_geometry_rejects_invalid(kwargs):
    with pytest.raises(ValueError):
        ConeBeamGeometry(**kwargs)


def test_parallel_mode_allows_any_sdd():
    ConeBeamGeometry(sdd_mm=100.0, beam_mode="parallel")


def test_geometry_text_round_trip():
    g = ConeBeamGeometry(785.5, 1200.25, 31, 17, 0.3, "cone")
    text = g.to_text()
    keys = [line.split("=")[0] for line in text.splitlines()]
    assert keys == ["sad_mm", "sdd_mm", "det_rows", "det_cols", "det_spacing_mm", "beam_mode"]
    assert ConeBeamGeometry.from_text(text) == g
    assert ConeBeamGeometry.from_text(text).to_text() == text


def test_geometry_id_tracks_content():
    assert CONE.geometry_id == ConeBeamGeometry().geometry_id
    assert CONE.geometry_id != PAR.geometry_id


def test_viewpose_wraps_azimuth():
    assert ViewPose(360.0, 0.0).azimuth_deg == 0.0
    assert ViewPose(-90.0, 0.0).azimuth_deg == 270.0


@pytest.mark.parametrize("incl", [-90.5, 91.0, math.nan])
def test_viewpose_rejects_inclination(incl):
    with pytest.raises(ValueError):
        ViewPose(0.0, incl)


def test_ray_requires_unit_direction():
    Ray(np.zeros(3), np.array([0.0, 0.6, 0.8]))
    with pytest.raises(ValueError):
        Ray(np.zeros(3), np.array([0.0, 0.6, 0.9]))


def test_trajectory_must_be_non_empty():
    with pytest.raises(ValueError):
        Trajectory([], "custom")
    with pytest.raises(ValueError):
        Trajectory([ViewPose(0, 0)], "validation")


def test_training_trajectory_default_count():
    t = G.make_training_trajectory(30, 15, 20.0)
    assert len(t) == 450
    assert t.label == "train"
    incl = sorted({p.inclination_deg for p in t})
    assert incl[0] == -20.0 and incl[-1] == 20.0 and len(incl) == 15
    assert G.make_training_trajectory() == t


def test_training_trajectory_degenerate():
    t = G.make_training_trajectory(1, 1, 0.0)
    assert [(p.azimuth_deg, p.inclination_deg) for p in t] == [(0.0, 0.0)]


def test_training_trajectory_four_azimuths():
    t = G.make_training_trajectory(4, 1, 0.0)
    assert [p.azimuth_deg for p in t] == [0.0, 90.0, 180.0, 270.0]


@pytest.mark.parametrize("args", [(0, 1, 0.0), (1, 0, 0.0), (2, 2, -1.0), (2, 2, 91.0), (2.5, 1, 0.0)])
def test_training_trajectory_rejects(args):
    with pytest.raises(ValueError):
        G.make_training_trajectory(*args)


def test_test_trajectory():
    t = G.make_test_trajectory(360)
    assert [p.azimuth_deg for p in t] == [float(k) for k in range(360)]
    assert all(p.inclination_deg == 0.0 for p in t)
    assert t.label == "test"
    assert [p.azimuth_deg for p in G.make_test_trajectory(2)] == [0.0, 180.0]
    assert [p.azimuth_deg for p in G.make_test_trajectory(1)] == [0.0]
    assert len(G.make_test_trajectory()) == 360
    with pytest.raises(ValueError):
        G.make_test_trajectory(0)


@pytest.mark.parametrize("pose, expected", [
    ((0, 0), (785, 0, 0)),
    ((90, 0), (0, 785, 0)),
    ((0, 90), (0, 0, 785)),
    ((180, 0), (-785, 0, 0)),
    ((270, -90), (0, 0, -785)),
])
def test_source_position(pose, expected):
    np.testing.assert_array_equal(G.source_position(CONE, ViewPose(*pose)), expected)


def test_source_position_parallel_unsupported():
    with pytest.raises(G.UnsupportedModeError):
        G.source_position(PAR, ViewPose(0, 0))


def test_central_ray_passes_isocenter():
    g = ConeBeamGeometry(785.0, 1200.0, 9, 9, 1.0)
    for pose in (ViewPose(0, 0), ViewPose(37.5, 12.0), ViewPose(300.0, -80.0)):
        ray = G.ray_for_pixel(g, pose, 4, 4)
        # distance from origin to the line
        dist = np.linalg.norm(np.cross(ray.origin_mm, ray.direction))
        assert dist < 1e-9


def test_even_detector_center_between_pixels():
    # with an even count the principal point falls between pixels 1 and 2
    g = ConeBeamGeometry(785.0, 1200.0, 4, 4, 1.0)
    o, d = G.view_rays(g, ViewPose(0, 0))
    mid = (d[1, 1] + d[2, 2]) / 2
    assert abs(mid[1]) < 1e-12 and abs(mid[2]) < 1e-12


def test_pixel_orientation():
    # row 0 is the top (+z), column index grows along +y at azimuth 0
    g = ConeBeamGeometry(785.0, 1200.0, 3, 3, 1.0)
    top = G.ray_for_pixel(g, ViewPose(0, 0), 0, 1).direction
    right = G.ray_for_pixel(g, ViewPose(0, 0), 1, 2).direction
    assert top[2] > 0 and abs(top[1]) < 1e-12
    assert right[1] > 0 and abs(right[2]) < 1e-12


def test_ray_for_pixel_matches_view_rays():
    pose = ViewPose(123.0, 17.0)
    o, d = G.view_rays(SMALL, pose)
    assert o.shape == d.shape == (9, 12, 3)
    for r, c in [(0, 0), (3, 7), (8, 11)]:
        ray = G.ray_for_pixel(SMALL, pose, r, c)
        np.testing.assert_array_equal(ray.origin_mm, o[r, c])
        np.testing.assert_array_equal(ray.direction, d[r, c])


@pytest.mark.parametrize("rc", [(9, 0), (0, 12), (-1, 0)])
def test_ray_for_pixel_out_of_range(rc):
    with pytest.raises(ValueError):
        G.ray_for_pixel(SMALL, ViewPose(0, 0), *rc)


def test_parallel_rays_share_direction():
    g = ConeBeamGeometry(785.0, 1200.0, 5, 7, 1.5, "parallel")
    o, d = G.view_rays(g, ViewPose(40.0, 10.0))
    assert np.all(d == d[0, 0])
    # origins differ only laterally: all on the plane through the source point
    n = d[0, 0]
    np.testing.assert_allclose(o.reshape(-1, 3) @ n, -785.0, atol=1e-9)
    assert np.linalg.norm(o[0, 0] - o[0, 1]) == pytest.approx(1.5)


def test_magnification_point_impulse():
    # a point 10 mm off-axis at the isocenter plane lands sdd/sad * 10 mm off the principal point
    g = ConeBeamGeometry(785.0, 1200.0, 1, 1, 1.0)
    assert g.magnification == pytest.approx(1200.0 / 785.0)
    src = G.source_position(g, ViewPose(0, 0))
    p = np.array([0.0, 10.0, 0.0])
    d = (p - src) / np.linalg.norm(p - src)
    axis = -src / np.linalg.norm(src)
    hit = src + d * (1200.0 / (d @ axis))
    assert hit[1] == pytest.approx(10.0 * 1200.0 / 785.0, rel=1e-12)
    assert round(1200.0 / 785.0, 3) == 1.529


def test_rao_lao_convention_text():
    assert "RAO 90" in G.RAO_LAO_CONVENTION and "LAO 90" in G.RAO_LAO_CONVENTION


poses = st.builds(
    ViewPose,
    st.floats(0.0, 359.999, allow_nan=False),
    st.floats(-90.0, 90.0, allow_nan=False),
)


@settings(max_examples=60, deadline=None)
@given(poses, st.sampled_from(["cone", "parallel"]))
def test_directions_unit_norm(pose, mode):
    g = ConeBeamGeometry(785.0, 1200.0, 5, 6, 3.0, mode)
    _, d = G.view_rays(g, pose)
    np.testing.assert_allclose(np.linalg.norm(d, axis=-1), 1.0, atol=1e-9)


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 12), st.integers(1, 8), st.floats(0.5, 90.0))
def test_training_trajectory_count_and_uniqueness(a, i, r):
    t = G.make_training_trajectory(a, i, r)
    assert len(t) == a * i
    keys = {(p.azimuth_deg, p.inclination_deg) for p in t}
    assert len(keys) == a * i


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 360 * 64 - 1), st.floats(-90.0, 90.0), st.sampled_from(["cone", "parallel"]))
def test_azimuth_period_bit_identical(k, incl, mode):
    # phi = k / 64 keeps phi + 360 exactly representable
    phi = k / 64.0
    g = ConeBeamGeometry(785.0, 1200.0, 3, 4, 2.0, mode)
    o1, d1 = G.view_rays(g, ViewPose(phi, incl))
    o2, d2 = G.view_rays(g, ViewPose(phi + 360.0, incl))
    assert np.array_equal(o1, o2) and np.array_equal(d1, d2)


@settings(max_examples=60, deadline=None)
@given(st.floats(0.0, 359.99))
def test_central_row_stays_transversal(az):
    g = ConeBeamGeometry(785.0, 1200.0, 5, 8, 2.0)
    _, d = G.view_rays(g, ViewPose(az, 0.0))
    assert np.all(np.abs(d[2, :, 2]) <= 1e-12)
