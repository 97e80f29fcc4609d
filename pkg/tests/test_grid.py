from __future__ import annotations

import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ogb import grid
from ogb.errors import GridHierarchyError, InvalidCoordinate, UnsupportedGeometry
from ogb.grid import BoundingBox, GeoPoint, TileId


def test_locate_rome_point_all_levels():
    p = GeoPoint(12.51133, 41.8919)
    assert grid.locate(p, 0) == TileId(12, 41)
    assert grid.locate(p, 1) == TileId(12, 41, ((5, 8),))
    assert grid.locate(p, 2) == TileId(12, 41, ((5, 8), (1, 9)))


def test_locate_negative_coordinates_floor():
    p = GeoPoint(-0.5, -0.5)
    assert grid.locate(p, 0) == TileId(-1, -1)
    assert grid.locate(p, 1) == TileId(-1, -1, ((5, 5),))


def test_locate_on_tile_edge_belongs_to_upper_tile():
    # Half-open membership: an edge point is owned by the tile starting there.
    p = GeoPoint(12.5, 41.8)
    assert grid.locate(p, 1) == TileId(12, 41, ((5, 8),))
    q = GeoPoint(13.0, 42.0)
    assert grid.locate(q, 0) == TileId(13, 42)


def test_parent_child_round_trip():
    t = grid.locate(GeoPoint(12.51133, 41.8919), 2)
    assert grid.parent(t) == TileId(12, 41, ((5, 8),))
    assert grid.parent(grid.parent(t)) == TileId(12, 41)
    kids = grid.children(TileId(12, 41))
    assert len(kids) == grid.RATIO
    assert len(set(kids)) == grid.RATIO
    assert all(grid.parent(k) == TileId(12, 41) for k in kids)


def test_parent_of_root_and_children_of_leaf_raise():
    with pytest.raises(GridHierarchyError):
        grid.parent(TileId(12, 41))
    with pytest.raises(GridHierarchyError):
        grid.children(TileId(12, 41, ((5, 8), (1, 9))))


def test_tile_bbox_values():
    box = grid.tile_bbox(TileId(12, 41, ((5, 8), (1, 9))))
    assert box.min.lng == pytest.approx(12.51)
    assert box.min.lat == pytest.approx(41.89)
    assert box.max.lng == pytest.approx(12.52)
    assert box.max.lat == pytest.approx(41.90)


def test_coordinate_validation():
    with pytest.raises(InvalidCoordinate):
        GeoPoint(180.0, 0.0)
    with pytest.raises(InvalidCoordinate):
        GeoPoint(0.0, 90.0)
    with pytest.raises(InvalidCoordinate):
        GeoPoint(float("nan"), 0.0)
    GeoPoint(-180.0, -90.0)  # lower corners are inside


def test_intersected_tiles_point_and_multipoint():
    point = {"type": "Point", "coordinates": [12.51133, 41.8919]}
    assert grid.intersected_tiles(point, 2) == {TileId(12, 41, ((5, 8), (1, 9)))}
    multi = {"type": "MultiPoint",
             "coordinates": [[12.511, 41.891], [12.512, 41.891], [12.525, 41.891]]}
    tiles = grid.intersected_tiles(multi, 2)
    assert len(tiles) == 2
    with pytest.raises(UnsupportedGeometry):
        grid.intersected_tiles({"type": "LineString", "coordinates": []}, 2)


coords = st.tuples(
    st.floats(min_value=-180.0, max_value=179.999999, allow_nan=False),
    st.floats(min_value=-90.0, max_value=89.999999, allow_nan=False),
)


@given(coords, st.integers(min_value=0, max_value=2))
@settings(max_examples=300)
def test_locate_bbox_round_trip(coord, level):
    p = GeoPoint(*coord)
    t = grid.locate(p, level)
    box = grid.tile_bbox(t)
    assert box.min.lng <= p.lng < box.max.lng
    assert box.min.lat <= p.lat < box.max.lat
    assert grid.tile_contains(t, p)


@given(coords)
@settings(max_examples=100)
def test_exactly_one_owner_per_level(coord):
    # The tile to the left/below must not also claim the point.
    p = GeoPoint(*coord)
    t = grid.locate(p, 2)
    box = grid.tile_bbox(t)
    assert not (p.lng >= box.max.lng or p.lat >= box.max.lat)
    assert not (p.lng < box.min.lng or p.lat < box.min.lat)


@given(coords, st.integers(min_value=1, max_value=2))
@settings(max_examples=100)
def test_child_bbox_nested_in_parent(coord, level):
    p = GeoPoint(*coord)
    t = grid.locate(p, level)
    inner = grid.tile_bbox(t)
    outer = grid.tile_bbox(grid.parent(t))
    assert outer.min.lng <= inner.min.lng and inner.max.lng <= outer.max.lng
    assert outer.min.lat <= inner.min.lat and inner.max.lat <= outer.max.lat


def test_sibling_disjointness_exact_edges():
    parent_tile = TileId(12, 41)
    kids = grid.children(parent_tile)
    # Neighbouring children share the identical float edge value.
    k00 = TileId(12, 41, ((0, 0),))
    k10 = TileId(12, 41, ((1, 0),))
    assert grid.tile_bbox(k00).max.lng == grid.tile_bbox(k10).min.lng
    seen = set()
    for k in kids:
        b = grid.tile_bbox(k)
        seen.add((b.min.lng, b.min.lat))
    assert len(seen) == grid.RATIO


def test_bounding_box_contains_is_closed():
    box = BoundingBox.of(0.0, 0.0, 1.0, 1.0)
    assert box.contains(GeoPoint(1.0, 1.0))
    assert box.contains(GeoPoint(0.0, 0.0))
    assert not box.contains(GeoPoint(1.0000001, 1.0))
    degenerate = BoundingBox.of(2.5, 3.5, 2.5, 3.5)
    assert degenerate.contains(GeoPoint(2.5, 3.5))
    assert degenerate.area == 0.0
