# core/geo.py
"""Primitives géométriques planes (lon, lat) pour les jointures à l'échelle d'un comté.

Les distances au sol utilisent la formule de haversine; tout le reste traite
(lon, lat) comme un plan, ce qui reste sous 0.1% de distorsion d'aire pour des
polygones infra-kilométriques à la latitude de Houston.
"""
import math
from dataclasses import dataclass, field
from typing import Hashable, List, Optional, Sequence, Tuple

import numpy as np
import shapely
from shapely.geometry import Point, Polygon

from core.errors import DegenerateGeometry, InvalidGeometry

EARTH_RADIUS_M = 6_371_000.0
# Mètres par degré de latitude sur la sphère de rayon EARTH_RADIUS_M
METERS_PER_DEGREE = 2 * math.pi * EARTH_RADIUS_M / 360.0

Coord = Tuple[float, float]


@dataclass(frozen=True)
class GeoPoint:
    lon: float
    lat: float

    def __post_init__(self):
        if not (-180.0 <= self.lon <= 180.0) or not (-90.0 <= self.lat <= 90.0):
            raise InvalidGeometry(f"Coordonnées hors limites: lon={self.lon}, lat={self.lat}")


@dataclass(frozen=True)
class BBox:
    min_lon: float
    min_lat: float
    max_lon: float
    max_lat: float

    def __post_init__(self):
        if self.min_lon > self.max_lon or self.min_lat > self.max_lat:
            raise InvalidGeometry(f"BBox inversée: {self}")

    def contains(self, p: GeoPoint) -> bool:
        return self.min_lon <= p.lon <= self.max_lon and self.min_lat <= p.lat <= self.max_lat


def _normalize_ring(coords: Sequence[Coord]) -> Tuple[Coord, ...]:
    ring = [(float(x), float(y)) for x, y in coords]
    if ring and ring[0] != ring[-1]:
        ring.append(ring[0])
    if len(set(ring)) < 3:
        raise InvalidGeometry(f"Anneau avec moins de 3 sommets distincts: {ring}")
    for lon, lat in ring:
        GeoPoint(lon, lat)
    return tuple(ring)


@dataclass(frozen=True)
class GeoPolygon:
    """Polygone (extérieur + trous), validé à la construction"""
    exterior: Tuple[Coord, ...]
    holes: Tuple[Tuple[Coord, ...], ...] = ()
    shape: Polygon = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        exterior = _normalize_ring(self.exterior)
        holes = tuple(_normalize_ring(h) for h in self.holes)
        poly = Polygon(exterior, holes)
        if poly.area == 0.0:
            raise DegenerateGeometry("Polygone d'aire nulle")
        if not poly.is_valid:
            raise InvalidGeometry(f"Polygone invalide: {shapely.is_valid_reason(poly)}")
        object.__setattr__(self, "exterior", exterior)
        object.__setattr__(self, "holes", holes)
        object.__setattr__(self, "shape", poly)

    @classmethod
    def from_shapely(cls, geom) -> "GeoPolygon":
        if geom is None or geom.geom_type != "Polygon":
            kind = None if geom is None else geom.geom_type
            raise InvalidGeometry(f"Géométrie non prise en charge: {kind} (Polygon attendu)")
        return cls(tuple(geom.exterior.coords), tuple(tuple(r.coords) for r in geom.interiors))

    @property
    def bbox(self) -> BBox:
        return BBox(*self.shape.bounds)


def point_in_polygon(p: GeoPoint, poly: GeoPolygon) -> bool:
    """Vrai si p est dans l'extérieur et hors des trous; le bord compte comme dedans"""
    if not poly.bbox.contains(p):
        return False
    return bool(poly.shape.covers(Point(p.lon, p.lat)))


def centroid(poly: GeoPolygon) -> GeoPoint:
    """Centroïde pondéré par l'aire (lacet), trous soustraits"""
    if poly.shape.area == 0.0:
        raise DegenerateGeometry("Centroïde d'un polygone d'aire nulle")
    c = poly.shape.centroid
    return GeoPoint(c.x, c.y)


def distance_m(lon1: float, lat1: float, lon2: float, lat2: float) -> float:
    """Haversine scalaire, en mètres"""
    phi1 = math.radians(lat1)
    phi2 = math.radians(lat2)
    dphi = phi2 - phi1
    dlmb = math.radians(lon2 - lon1)
    a = math.sin(dphi / 2) ** 2 + math.cos(phi1) * math.cos(phi2) * math.sin(dlmb / 2) ** 2
    return 2 * EARTH_RADIUS_M * math.asin(min(1.0, math.sqrt(a)))


def ground_distance(a: GeoPoint, b: GeoPoint) -> float:
    return distance_m(a.lon, a.lat, b.lon, b.lat)


def haversine_m(lon1, lat1, lon2, lat2) -> np.ndarray:
    """Haversine vectorisée (tableaux numpy diffusables), en mètres"""
    phi1 = np.radians(lat1)
    phi2 = np.radians(lat2)
    dphi = phi2 - phi1
    dlmb = np.radians(np.asarray(lon2) - np.asarray(lon1))
    a = np.sin(dphi / 2) ** 2 + np.cos(phi1) * np.cos(phi2) * np.sin(dlmb / 2) ** 2
    return 2 * EARTH_RADIUS_M * np.arcsin(np.minimum(1.0, np.sqrt(a)))


def degree_buffers(lats: np.ndarray, radius_m: float) -> Tuple[np.ndarray, np.ndarray]:
    """Demi-côtés (dlon, dlat) en degrés d'une boîte couvrant un rayon donné"""
    dlat = np.full(np.shape(lats), radius_m / METERS_PER_DEGREE * 1.01)
    cos_lat = np.maximum(np.cos(np.radians(np.abs(lats) + dlat)), 1e-6)
    return dlat / cos_lat, dlat


class PolygonIndex:
    """Index STRtree: préfiltre par boîte englobante puis test exact bord inclus"""

    def __init__(self, keys: Sequence[Hashable], polygons: Sequence[GeoPolygon]):
        if len(keys) != len(polygons):
            raise ValueError("keys et polygons doivent avoir la même longueur")
        self.keys = list(keys)
        self.polygons = list(polygons)
        self._tree = shapely.STRtree([p.shape for p in self.polygons])

    def __len__(self) -> int:
        return len(self.keys)

    def query_pairs(self, lons: np.ndarray, lats: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Paires (indice du point, indice du polygone) pour chaque polygone couvrant le point"""
        lons = np.asarray(lons, dtype=float)
        if len(lons) == 0 or not self.keys:
            return np.empty(0, dtype=int), np.empty(0, dtype=int)
        points = shapely.points(lons, np.asarray(lats, dtype=float))
        # pour un point, intersects équivaut à covers
        pairs = self._tree.query(points, predicate="intersects")
        return pairs[0], pairs[1]

    def locate(self, lons: np.ndarray, lats: np.ndarray) -> List[Optional[Hashable]]:
        """Clé du polygone contenant chaque point; en cas d'égalité sur un bord, la plus petite clé"""
        result: List[Optional[Hashable]] = [None] * len(lons)
        point_idx, poly_idx = self.query_pairs(lons, lats)
        for i, j in zip(point_idx.tolist(), poly_idx.tolist()):
            key = self.keys[j]
            if result[i] is None or key < result[i]:
                result[i] = key
        return result
