# modules/visits.py
"""Attribution des arrêts aux POI et agrégation quotidienne CBG de résidence → catégorie."""
from dataclasses import dataclass
from datetime import date
from enum import Enum
from typing import Dict, FrozenSet, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
import shapely
from loguru import logger

from config import DEFAULT_CATEGORY_PREFIXES
from core.errors import ConfigError
from core.geo import PolygonIndex, degree_buffers, haversine_m
from core.ingest import PoiRecord
from modules.trajectory import Stop
from utils.time_windows import local_dates


class PoiCategory(str, Enum):
    GROCERY = "Grocery"
    PHARMACY = "Pharmacy"
    GAS_STATION = "GasStation"
    HOME_IMPROVEMENT = "HomeImprovement"


CategoryMap = Dict[PoiCategory, FrozenSet[str]]

EVENT_COLUMNS = ["device_id", "place_id", "category", "naics_code", "start"]
VISIT_TABLE_COLUMNS = ["home_cbg", "place_id", "count", "naics_code", "date"]
DAILY_COLUMNS = ["cbg", "category", "date", "visits"]


def build_category_map(categories: Mapping[str, Iterable[str]]) -> CategoryMap:
    """Construit la table catégorie → préfixes NAICS; les préfixes doivent être disjoints"""
    result: CategoryMap = {}
    owner: Dict[str, PoiCategory] = {}
    for name, prefixes in categories.items():
        try:
            category = PoiCategory(name)
        except ValueError:
            raise ConfigError(f"Catégorie inconnue: {name}")
        prefixes = frozenset(prefixes)
        for prefix in prefixes:
            if prefix in owner:
                raise ConfigError(f"Préfixe {prefix} partagé par {owner[prefix].value} et {name}")
            owner[prefix] = category
        result[category] = prefixes
    return result


DEFAULT_CATEGORY_MAP = build_category_map(DEFAULT_CATEGORY_PREFIXES)


def category_for(naics_code: str, category_map: Optional[CategoryMap] = None) -> Optional[PoiCategory]:
    """Catégorie d'un code NAICS à 6 chiffres, par ses 4 premiers chiffres"""
    category_map = category_map or DEFAULT_CATEGORY_MAP
    prefix = str(naics_code)[:4]
    for category, prefixes in category_map.items():
        if prefix in prefixes:
            return category
    return None


@dataclass(frozen=True)
class VisitEvent:
    device_id: str
    place_id: str
    category: PoiCategory
    naics_code: str
    start: int


class PoiMatcher:
    """Attribue des arrêts au POI le plus plausible.

    Priorité: contenance dans une emprise, puis rayon autour des POI sans
    emprise; ensuite la distance au point du POI, puis le plus petit place_id.
    """

    def __init__(self, registry: Sequence[PoiRecord], visit_min_dwell_s: int = 300,
                 point_poi_radius_m: float = 50.0, category_map: Optional[CategoryMap] = None):
        self.registry = list(registry)
        self.visit_min_dwell_s = visit_min_dwell_s
        self.point_poi_radius_m = point_poi_radius_m
        self.category_map = category_map or DEFAULT_CATEGORY_MAP

        self._place_ids = np.array([p.place_id for p in self.registry], dtype=object)
        self._lons = np.array([p.loc.lon for p in self.registry], dtype=float)
        self._lats = np.array([p.loc.lat for p in self.registry], dtype=float)
        self._categories = [category_for(p.naics_code, self.category_map) for p in self.registry]

        with_fp = [i for i, p in enumerate(self.registry) if p.footprint is not None]
        self._footprints = PolygonIndex(with_fp, [self.registry[i].footprint for i in with_fp])
        self._point_ids = np.array([i for i, p in enumerate(self.registry) if p.footprint is None], dtype=int)
        self._point_tree = shapely.STRtree(shapely.points(self._lons[self._point_ids], self._lats[self._point_ids]))

    def _candidates(self, lons: np.ndarray, lats: np.ndarray) -> pd.DataFrame:
        frames = []
        stop_idx, fp_pos = self._footprints.query_pairs(lons, lats)
        if len(stop_idx):
            frames.append(pd.DataFrame({
                "stop": stop_idx,
                "poi": np.asarray(self._footprints.keys, dtype=int)[fp_pos],
                "rank": 0,
            }))
        if len(self._point_ids) and len(lons):
            dlon, dlat = degree_buffers(lats, self.point_poi_radius_m)
            boxes = shapely.box(lons - dlon, lats - dlat, lons + dlon, lats + dlat)
            stop_idx, pt_pos = self._point_tree.query(boxes)
            frames.append(pd.DataFrame({"stop": stop_idx, "poi": self._point_ids[pt_pos], "rank": 1}))
        if not frames:
            return pd.DataFrame(columns=["stop", "poi", "rank", "dist", "place_id"])
        cand = pd.concat(frames, ignore_index=True)
        stop_pos = cand["stop"].to_numpy(dtype=int)
        poi_pos = cand["poi"].to_numpy(dtype=int)
        cand["dist"] = haversine_m(lons[stop_pos], lats[stop_pos], self._lons[poi_pos], self._lats[poi_pos])
        cand = cand[(cand["rank"] == 0) | (cand["dist"] <= self.point_poi_radius_m)].copy()
        cand["place_id"] = self._place_ids[cand["poi"].to_numpy(dtype=int)]
        return cand

    def attribute_many(self, stops: Sequence[Stop]) -> List[Optional[Tuple[str, PoiCategory]]]:
        result: List[Optional[Tuple[str, PoiCategory]]] = [None] * len(stops)
        eligible = [i for i, s in enumerate(stops) if s.dwell >= self.visit_min_dwell_s]
        if not eligible or not self.registry:
            return result
        lons = np.array([stops[i].lon for i in eligible], dtype=float)
        lats = np.array([stops[i].lat for i in eligible], dtype=float)
        cand = self._candidates(lons, lats)
        if cand.empty:
            return result
        best = cand.sort_values(["stop", "rank", "dist", "place_id"], kind="mergesort").drop_duplicates("stop")
        for stop_pos, poi in zip(best["stop"].tolist(), best["poi"].tolist()):
            category = self._categories[poi]
            if category is not None:
                result[eligible[stop_pos]] = (self.registry[poi].place_id, category)
        return result

    def attribute(self, stop: Stop) -> Optional[Tuple[str, PoiCategory]]:
        return self.attribute_many([stop])[0]

    def events(self, stops: Sequence[Stop]) -> List[VisitEvent]:
        naics = {p.place_id: p.naics_code for p in self.registry}
        events = []
        for stop, hit in zip(stops, self.attribute_many(stops)):
            if hit is not None:
                place_id, category = hit
                events.append(VisitEvent(stop.device_id, place_id, category, naics[place_id], stop.start))
        return events


def attribute_visit(stop: Stop, registry: Sequence[PoiRecord], visit_min_dwell: int = 300,
                    point_poi_radius: float = 50.0,
                    category_map: Optional[CategoryMap] = None) -> Optional[Tuple[str, PoiCategory]]:
    """POI visité lors d'un arrêt, ou None pour un simple passage ou un POI hors catégories"""
    return PoiMatcher(registry, visit_min_dwell, point_poi_radius, category_map).attribute(stop)


def events_to_frame(events: Sequence[VisitEvent]) -> pd.DataFrame:
    return pd.DataFrame({
        "device_id": [e.device_id for e in events],
        "place_id": [e.place_id for e in events],
        "category": [e.category.value for e in events],
        "naics_code": [e.naics_code for e in events],
        "start": np.array([e.start for e in events], dtype=np.int64),
    }, columns=EVENT_COLUMNS)


def _homed_events(events: pd.DataFrame, homes: Mapping[str, Optional[str]], tz: str,
                  dates: Optional[Sequence[date]]) -> Tuple[pd.DataFrame, int]:
    """Ajoute CBG de résidence et date locale; écarte les appareils sans résidence"""
    frame = events.copy()
    frame["home_cbg"] = frame["device_id"].map(lambda d: homes.get(d))
    homeless = frame["home_cbg"].isna()
    dropped = int(homeless.sum())
    if dropped:
        logger.warning(f"{dropped} visites d'appareils sans CBG de résidence écartées")
    frame = frame.loc[~homeless].copy()
    frame["date"] = local_dates(frame["start"], tz) if len(frame) else pd.Series(dtype=object)
    if dates is not None:
        frame = frame[frame["date"].isin(set(dates))]
    return frame, dropped


def aggregate_visit_table(events: pd.DataFrame, homes: Mapping[str, Optional[str]], tz: str,
                          dates: Optional[Sequence[date]] = None) -> Tuple[pd.DataFrame, int]:
    """Table des visites quotidiennes home_cbg → place_id (une ligne par triplet)"""
    frame, dropped = _homed_events(events, homes, tz, dates)
    if frame.empty:
        return pd.DataFrame(columns=VISIT_TABLE_COLUMNS), dropped
    table = (frame.groupby(["home_cbg", "place_id", "naics_code", "date"]).size()
             .rename("count").reset_index())
    table = table.sort_values(["home_cbg", "date", "place_id"], kind="mergesort").reset_index(drop=True)
    return table[VISIT_TABLE_COLUMNS], dropped


def aggregate_daily(events: pd.DataFrame, homes: Mapping[str, Optional[str]], tz: str,
                    dates: Optional[Sequence[date]] = None,
                    categories: Optional[Sequence[PoiCategory]] = None) -> Tuple[pd.DataFrame, int]:
    """E_{i,d,t}: nombre d'événements de visite par CBG de résidence, catégorie et jour.

    Les zéros sont matérialisés pour chaque CBG ayant au moins un appareil
    résident, chaque catégorie et chaque date de l'étude.
    """
    frame, dropped = _homed_events(events, homes, tz, dates)
    categories = [c.value for c in (categories or list(PoiCategory))]
    cbgs = sorted({h for h in homes.values() if h is not None})
    if dates is None:
        dates = sorted(set(frame["date"]))
    dates = sorted(dates)

    full = pd.MultiIndex.from_product([cbgs, categories, dates], names=["cbg", "category", "date"])
    if frame.empty:
        counts = pd.Series(0, index=full, dtype=np.int64)
    else:
        counts = frame.groupby(["home_cbg", "category", "date"]).size()
        counts.index = counts.index.set_names(["cbg", "category", "date"])
    daily = counts.reindex(full, fill_value=0).rename("visits").reset_index()
    daily["visits"] = daily["visits"].astype(np.int64)
    return daily[DAILY_COLUMNS], dropped
