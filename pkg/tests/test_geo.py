# tests/test_geo.py
import math

import numpy as np
import pytest

from core.errors import DegenerateGeometry, InvalidGeometry
from core.geo import (EARTH_RADIUS_M, BBox, GeoPoint, GeoPolygon, PolygonIndex, centroid, distance_m,
                      ground_distance, haversine_m, point_in_polygon)
from conftest import square


def crossing_number_inside(x, y, ring):
    """Oracle indépendant (parité des croisements), valable hors du bord"""
    inside = False
    n = len(ring)
    for i in range(n):
        (x1, y1), (x2, y2) = ring[i], ring[(i + 1) % n]
        if (y1 > y) != (y2 > y):
            x_cross = x1 + (y - y1) * (x2 - x1) / (y2 - y1)
            if x < x_cross:
                inside = not inside
    return inside


def test_geopoint_rejects_out_of_range():
    with pytest.raises(InvalidGeometry):
        GeoPoint(0.0, 95.0)
    with pytest.raises(InvalidGeometry):
        GeoPoint(181.0, 0.0)


def test_polygon_ring_is_closed():
    poly = GeoPolygon(((0, 0), (1, 0), (1, 1), (0, 1)))
    assert poly.exterior[0] == poly.exterior[-1]
    assert len(poly.exterior) == 5


def test_polygon_needs_three_distinct_vertices():
    with pytest.raises(InvalidGeometry):
        GeoPolygon(((0, 0), (1, 1), (0, 0)))


def test_collinear_polygon_is_degenerate():
    with pytest.raises(DegenerateGeometry):
        GeoPolygon(((0, 0), (1, 1), (2, 2)))


def test_self_intersecting_polygon_is_rejected():
    with pytest.raises(InvalidGeometry):
        GeoPolygon(((0, 0), (2, 2), (2, 0), (0, 1)))


def test_bbox_rejects_inverted_bounds():
    with pytest.raises(InvalidGeometry):
        BBox(1.0, 0.0, 0.0, 1.0)


@pytest.mark.parametrize("x, y, expected", [
    (0.5, 0.5, True),
    (2.0, 2.0, False),
    (0.0, 0.5, True),
    (1.0, 1.0, True),
    (1.0000001, 0.5, False),
])
def test_point_in_unit_square(unit_square, x, y, expected):
    assert point_in_polygon(GeoPoint(x, y), unit_square) is expected


def test_point_in_hole_is_outside():
    poly = GeoPolygon(((0, 0), (4, 0), (4, 4), (0, 4)), holes=(((1, 1), (2, 1), (2, 2), (1, 2)),))
    assert not point_in_polygon(GeoPoint(1.5, 1.5), poly)
    assert point_in_polygon(GeoPoint(3.0, 3.0), poly)
    # le bord du trou appartient au polygone
    assert point_in_polygon(GeoPoint(1.0, 1.5), poly)


def test_point_in_polygon_agrees_with_crossing_oracle():
    # polygone non convexe en peigne, coordonnées entières
    ring = [(0, 0), (6, 0), (6, 5), (5, 5), (5, 1), (4, 1), (4, 5), (2, 5), (2, 2), (1, 2), (1, 5), (0, 5)]
    poly = GeoPolygon(tuple(ring))
    rng = np.random.default_rng(3)
    xs = rng.uniform(-1.0, 7.0, 9_900)
    ys = rng.uniform(-1.0, 6.0, 9_900)
    for x, y in zip(xs, ys):
        assert point_in_polygon(GeoPoint(float(x), float(y)), poly) == crossing_number_inside(x, y, ring)

    # 100 points exactement sur des arêtes verticales ou horizontales
    edges = list(zip(ring, ring[1:] + ring[:1]))
    for k in range(100):
        (x1, y1), (x2, y2) = edges[k % len(edges)]
        t = (k % 7 + 1) / 8
        p = GeoPoint(x1 + t * (x2 - x1), y1 + t * (y2 - y1))
        assert point_in_polygon(p, poly)


def test_centroid_unit_square(unit_square):
    c = centroid(unit_square)
    assert (c.lon, c.lat) == pytest.approx((0.5, 0.5))


def test_centroid_triangle():
    c = centroid(GeoPolygon(((0, 0), (1, 0), (0, 1))))
    assert (c.lon, c.lat) == pytest.approx((1 / 3, 1 / 3), rel=1e-9)


def test_centroid_l_shape():
    # deux rectangles: [0,2]x[0,1] (aire 2) et [0,1]x[1,2] (aire 1)
    c = centroid(GeoPolygon(((0, 0), (2, 0), (2, 1), (1, 1), (1, 2), (0, 2))))
    assert (c.lon, c.lat) == pytest.approx((2.5 / 3, 2.5 / 3), rel=1e-9)


def test_centroid_subtracts_holes():
    poly = GeoPolygon(((0, 0), (4, 0), (4, 4), (0, 4)), holes=(((1, 1), (2, 1), (2, 2), (1, 2)),))
    c = centroid(poly)
    expected = (16 * 2 - 1 * 1.5) / 15
    assert (c.lon, c.lat) == pytest.approx((expected, expected), rel=1e-9)


def test_distance_identity_and_one_degree():
    assert distance_m(10.0, 20.0, 10.0, 20.0) == 0.0
    assert distance_m(0.0, 0.0, 1.0, 0.0) == pytest.approx(111_195, abs=5)


def test_distance_antipodal():
    assert ground_distance(GeoPoint(0.0, 0.0), GeoPoint(180.0, 0.0)) == pytest.approx(math.pi * EARTH_RADIUS_M, abs=10)
    assert ground_distance(GeoPoint(0.0, 0.0), GeoPoint(180.0, 0.0)) == pytest.approx(20_015_087, abs=10)


def test_vectorized_haversine_matches_scalar():
    rng = np.random.default_rng(0)
    lon1, lat1 = rng.uniform(-96, -95, 50), rng.uniform(29, 30, 50)
    lon2, lat2 = rng.uniform(-96, -95, 50), rng.uniform(29, 30, 50)
    vector = haversine_m(lon1, lat1, lon2, lat2)
    scalar = [distance_m(a, b, c, d) for a, b, c, d in zip(lon1, lat1, lon2, lat2)]
    assert vector.tolist() == pytest.approx(scalar, rel=1e-9)


def test_polygon_index_prefers_smaller_key_on_shared_edge():
    index = PolygonIndex(["480010001002", "480010001001"], [square(1.0, 0.0), square(0.0, 0.0)])
    located = index.locate(np.array([1.0, 0.5, 1.5, 5.0]), np.array([0.5, 0.5, 0.5, 5.0]))
    assert located == ["480010001001", "480010001001", "480010001002", None]


def star_polygon(rng, n=9):
    # sommets triés par angle autour d'un centre: anneau simple
    angles = np.sort(rng.uniform(0, 2 * math.pi, n))
    radii = rng.uniform(0.2, 1.0, n)
    x0, y0 = rng.uniform(-96, -94), rng.uniform(29, 31)
    return GeoPolygon(tuple((x0 + r * math.cos(a), y0 + r * math.sin(a)) for a, r in zip(angles, radii)))


def test_centroid_lies_in_bounding_box():
    rng = np.random.default_rng(4)
    for _ in range(200):
        try:
            poly = star_polygon(rng)
        except InvalidGeometry:
            continue
        c = centroid(poly)
        assert poly.bbox.contains(c)


def test_ground_distance_is_a_metric_on_random_triples():
    rng = np.random.default_rng(6)
    for _ in range(1000):
        a, b, c = (GeoPoint(float(rng.uniform(-96, -94)), float(rng.uniform(29, 31))) for _ in range(3))
        assert ground_distance(a, b) == pytest.approx(ground_distance(b, a), rel=1e-12)
        assert ground_distance(a, c) <= ground_distance(a, b) + ground_distance(b, c) + 1e-6
