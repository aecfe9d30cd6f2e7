import math

import pytest
from hypothesis import given, strategies as st

from layoutforge.geometry import (
    Aabb, Boundary, Layout, ObjectSpec, PlaneMap, Pose, SceneSpec, Vec3,
    aabb_from_pose, footprint_contains, intersection_volume, iou, is_stacking_pair,
)
from oracles import iou_bruteforce
from conftest import box

coord = st.floats(-50, 50, allow_nan=False)
extent = st.floats(0.1, 30, allow_nan=False)
# multiples of 1/8 keep center +- size/2 exact in binary floating point
dyadic = st.integers(-4000, 4000).map(lambda k: k / 8)
dyadic_pos = st.integers(1, 800).map(lambda k: k / 8)


@st.composite
def boxes(draw):
    lo = [draw(coord) for _ in range(3)]
    size = [draw(extent) for _ in range(3)]
    return box(lo, [l + s for l, s in zip(lo, size)])


def as_tuples(b):
    return (b.min.as_tuple(), b.max.as_tuple())


def test_vec3_rejects_non_finite():
    with pytest.raises(ValueError):
        Vec3(0.0, math.inf, 1.0)


def test_object_spec_requires_positive_size():
    with pytest.raises(ValueError):
        ObjectSpec("plate", Vec3(26, 0, 2))


def test_scene_spec_invariants():
    b = Boundary(120, 60)
    with pytest.raises(ValueError):
        SceneSpec("x", (), b)
    o = ObjectSpec("cup", Vec3(8, 8, 9))
    with pytest.raises(ValueError):
        SceneSpec("x", (o, o), b)
    with pytest.raises(ValueError):
        Boundary(0, 60)


@given(boxes(), boxes())
def test_iou_symmetric(a, b):
    assert abs(iou(a, b) - iou(b, a)) <= 1e-12


@given(boxes())
def test_iou_identity(a):
    assert abs(iou(a, a) - 1.0) <= 1e-12


@given(boxes(), st.floats(0.0, 10.0))
def test_iou_disjoint_is_zero(a, gap):
    shift = a.max.x - a.min.x + gap
    assert iou(a, a.translated(shift, 0.0, 0.0)) == 0.0


def test_iou_offset_unit_cubes_is_one_third():
    # [DERIVED] half-overlapping unit cubes: intersection 0.5, union 1.5
    a = box((0, 0, 0), (1, 1, 1))
    b = box((0.5, 0, 0), (1.5, 1, 1))
    assert abs(iou(a, b) - 1 / 3) <= 1e-12
    assert abs(iou_bruteforce(as_tuples(a), as_tuples(b)) - 1 / 3) <= 1e-12


@given(boxes(), boxes())
def test_iou_matches_bruteforce(a, b):
    assert abs(iou(a, b) - iou_bruteforce(as_tuples(a), as_tuples(b))) <= 1e-12


def test_iou_degenerate_pair_rejected():
    flat = box((0, 0, 0), (1, 1, 0))
    with pytest.raises(ValueError, match="degenerate"):
        iou(flat, flat)


def test_inverted_box_rejected():
    with pytest.raises(ValueError):
        box((1, 0, 0), (0, 1, 1))


@given(dyadic, dyadic, dyadic, dyadic_pos, dyadic_pos, dyadic_pos)
def test_aabb_round_trip_exact(x, y, z, sx, sy, sz):
    center, size = Vec3(x, y, z), Vec3(sx, sy, sz)
    b = aabb_from_pose(Pose(center), size)
    assert b.center == center
    assert b.size == size


@given(st.integers(0, 600 - 130), st.integers(0, 300 - 130))
def test_plane_map_round_trip(px, py):
    pm = PlaneMap(Boundary(120, 60))
    size = Vec3(26, 26, 2)
    x_min, y_min = pm.corner_to_min_xy(px, py, size)
    qx, qy = pm.min_xy_to_corner(x_min, y_min, size)
    assert abs(qx - px) < 1e-9 and abs(qy - py) < 1e-9


def test_plane_map_orientation():
    pm = PlaneMap(Boundary(120, 60))
    # pixel (0, 0) is the back-left corner: the footprint touches the back edge
    x_min, y_min = pm.corner_to_min_xy(0, 0, Vec3(10, 10, 1))
    assert (x_min, y_min + 10) == (0.0, 60.0)


def test_stacking_and_containment():
    plate = box((0, 0, 0), (26, 26, 2))
    bowl = box((5, 5, 2), (20, 20, 9))
    beside = box((30, 0, 0), (40, 10, 5))
    assert is_stacking_pair(plate, bowl) and is_stacking_pair(bowl, plate)
    assert footprint_contains(plate, bowl)
    assert not is_stacking_pair(plate, beside)
    assert intersection_volume(plate, bowl) == 0.0


def test_layout_key_sets_must_match():
    b = box((0, 0, 0), (1, 1, 1))
    with pytest.raises(ValueError):
        Layout({"a": Pose(b.center)}, {"b": b})
    lay = Layout.from_boxes({"a": b})
    assert lay.names == ["a"] and lay.poses["a"].position == b.center
