# modules/trajectory.py
"""Arrêts, CBG de résidence et épisodes d'évacuation à partir des pings d'un appareil."""
from collections import defaultdict
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from loguru import logger

from core.errors import NoHome
from core.geo import GeoPoint, PolygonIndex, distance_m, haversine_m
from core.ingest import CbgRecord
from utils.time_windows import TimeWindow, epochs_to_iso, iso_to_epochs

ONE_DAY_S = 86_400
# Au-delà de ce multiple du rayon entre deux pings successifs, la coupure est certaine
FAR_STEP_FACTOR = 2.2
# Segment dont tous les pings sont à moins de ce multiple du rayon du premier: un seul groupe
TIGHT_FACTOR = 0.45

STOP_COLUMNS = ["device_id", "start", "end", "dwell_s", "lat", "lon", "cbg_geoid"]


@dataclass(frozen=True)
class Stop:
    device_id: str
    lon: float
    lat: float
    start: int
    end: int
    cbg_geoid: Optional[str] = None

    @property
    def dwell(self) -> int:
        return self.end - self.start

    @property
    def loc(self) -> GeoPoint:
        return GeoPoint(self.lon, self.lat)


@dataclass(frozen=True)
class HomeAssignment:
    device_id: str
    home_cbg: Optional[str]
    total_dwell_by_cbg: Dict[str, int] = field(default_factory=dict)


@dataclass(frozen=True)
class EvacuationFlag:
    device_id: str
    evacuated: bool
    longest_absence: int


def _segment_starts(ts: np.ndarray, lons: np.ndarray, lats: np.ndarray, radius_m: float,
                    max_gap_s: int) -> np.ndarray:
    """Indices où un nouveau groupe commence forcément (trou temporel ou saut lointain)"""
    gap = np.diff(ts) > max_gap_s
    far = haversine_m(lons[:-1], lats[:-1], lons[1:], lats[1:]) > FAR_STEP_FACTOR * radius_m
    return np.concatenate(([0], np.flatnonzero(gap | far) + 1))


def _scan_segment(lons: List[float], lats: List[float], lo: int, hi: int,
                  radius_m: float) -> List[Tuple[int, int, float, float]]:
    """Parcours ping par ping d'un segment: (début, fin exclue, somme lon, somme lat) par groupe"""
    groups = []
    start, sum_lon, sum_lat = lo, lons[lo], lats[lo]
    for i in range(lo + 1, hi):
        n = i - start
        if distance_m(sum_lon / n, sum_lat / n, lons[i], lats[i]) <= radius_m:
            sum_lon += lons[i]
            sum_lat += lats[i]
        else:
            groups.append((start, i, sum_lon, sum_lat))
            start, sum_lon, sum_lat = i, lons[i], lats[i]
    groups.append((start, hi, sum_lon, sum_lat))
    return groups


def detect_stops(pings: pd.DataFrame, radius_m: float = 100.0, max_gap_s: int = 1800,
                 min_dwell_s: int = 300) -> List[Stop]:
    """Regroupement séquentiel spatio-temporel des pings d'un seul appareil.

    Un ping rejoint le groupe courant s'il est à moins de radius_m du centroïde
    courant ET à moins de max_gap_s du ping précédent. Un groupe fermé devient
    un arrêt si sa durée atteint min_dwell_s.

    Les coupures certaines sont trouvées en une passe vectorisée; seuls les
    segments dispersés sont parcourus ping par ping.
    """
    if pings.empty:
        return []
    devices = pings["device_id"].unique()
    if len(devices) != 1:
        raise ValueError(f"detect_stops attend un seul appareil, reçu {len(devices)}")
    device_id = str(devices[0])
    ts = pings["ts"].to_numpy(dtype=np.int64)
    if len(ts) > 1 and (np.diff(ts) < 0).any():
        raise ValueError(f"Pings non triés pour l'appareil {device_id}")
    lons = pings["lon"].to_numpy(dtype=float)
    lats = pings["lat"].to_numpy(dtype=float)

    starts = _segment_starts(ts, lons, lats, radius_m, max_gap_s)
    ends = np.append(starts[1:], len(ts))
    sizes = ends - starts
    spread = np.maximum.reduceat(
        haversine_m(np.repeat(lons[starts], sizes), np.repeat(lats[starts], sizes), lons, lats), starts)
    tight = spread <= TIGHT_FACTOR * radius_m
    sums_lon = np.add.reduceat(lons, starts)
    sums_lat = np.add.reduceat(lats, starts)

    lon_list, lat_list = lons.tolist(), lats.tolist()
    stops: List[Stop] = []
    for k, (lo, hi) in enumerate(zip(starts.tolist(), ends.tolist())):
        if tight[k]:
            groups = [(lo, hi, float(sums_lon[k]), float(sums_lat[k]))]
        else:
            groups = _scan_segment(lon_list, lat_list, lo, hi, radius_m)
        for a, b, sum_lon, sum_lat in groups:
            if ts[b - 1] - ts[a] >= min_dwell_s:
                n = b - a
                stops.append(Stop(device_id, sum_lon / n, sum_lat / n, int(ts[a]), int(ts[b - 1])))
    return stops


def cbg_index(cbgs: Sequence[CbgRecord]) -> PolygonIndex:
    return PolygonIndex([c.geoid for c in cbgs], [c.boundary for c in cbgs])


def assign_stop_cbgs(stops: Sequence[Stop], cbgs: Union[Sequence[CbgRecord], PolygonIndex]) -> List[Stop]:
    """Renseigne le CBG de chaque arrêt (plus petit GEOID sur une limite partagée)"""
    if not stops:
        return []
    index = cbgs if isinstance(cbgs, PolygonIndex) else cbg_index(cbgs)
    geoids = index.locate(np.array([s.lon for s in stops]), np.array([s.lat for s in stops]))
    return [replace(s, cbg_geoid=g) for s, g in zip(stops, geoids)]


def infer_home(stops: Sequence[Stop], window: TimeWindow, device_id: Optional[str] = None) -> HomeAssignment:
    """CBG de résidence: durée cumulée maximale, retenue seulement au-delà d'un jour"""
    if device_id is None:
        device_id = stops[0].device_id if stops else ""
    totals: Dict[str, int] = defaultdict(int)
    for stop in stops:
        if stop.cbg_geoid is None or not window.overlaps(stop.start, stop.end):
            continue
        start, end = window.clip(stop.start, stop.end)
        totals[stop.cbg_geoid] += max(0, end - start)
    totals = dict(sorted(totals.items()))
    home = None
    if totals:
        geoid, dwell = min(totals.items(), key=lambda kv: (-kv[1], kv[0]))
        if dwell > ONE_DAY_S:
            home = geoid
    return HomeAssignment(device_id, home, totals)


def detect_evacuation(stops: Sequence[Stop], home: Optional[str], window: TimeWindow,
                      device_id: Optional[str] = None) -> EvacuationFlag:
    """Plus longue absence contiguë hors du CBG de résidence dans la fenêtre.

    Une absence va du début du premier arrêt hors résidence à la fin du dernier
    arrêt hors résidence avant le prochain arrêt au domicile. Les arrêts hors de
    tout CBG comptent comme hors résidence.
    """
    if device_id is None:
        device_id = stops[0].device_id if stops else ""
    if home is None:
        raise NoHome(f"Appareil {device_id} sans CBG de résidence")

    longest = 0
    episode_start: Optional[int] = None
    episode_end: Optional[int] = None
    for stop in sorted(stops, key=lambda s: (s.start, s.end)):
        if not window.overlaps(stop.start, stop.end):
            continue
        start, end = window.clip(stop.start, stop.end)
        if stop.cbg_geoid == home:
            if episode_start is not None:
                longest = max(longest, episode_end - episode_start)
            episode_start = episode_end = None
            continue
        if episode_start is None:
            episode_start = start
        episode_end = max(end, episode_end if episode_end is not None else end)
    if episode_start is not None:
        longest = max(longest, episode_end - episode_start)
    return EvacuationFlag(device_id, longest > ONE_DAY_S, longest)


def observed_in(stops: Sequence[Stop], window: TimeWindow) -> bool:
    return any(window.overlaps(s.start, s.end) for s in stops)


def stops_to_frame(stops: Sequence[Stop]) -> pd.DataFrame:
    """Table des arrêts (export CSV)"""
    if not stops:
        return pd.DataFrame(columns=STOP_COLUMNS)
    frame = pd.DataFrame({
        "device_id": [s.device_id for s in stops],
        "start": epochs_to_iso([s.start for s in stops]).to_numpy(),
        "end": epochs_to_iso([s.end for s in stops]).to_numpy(),
        "dwell_s": [s.dwell for s in stops],
        "lat": [s.lat for s in stops],
        "lon": [s.lon for s in stops],
        "cbg_geoid": [s.cbg_geoid if s.cbg_geoid is not None else "" for s in stops],
    })
    return frame


def stops_from_frame(frame: pd.DataFrame) -> Dict[str, List[Stop]]:
    """Relit la table des arrêts, groupée par appareil"""
    starts = iso_to_epochs(frame["start"].astype(str))
    ends = iso_to_epochs(frame["end"].astype(str))
    if starts.isna().any() or ends.isna().any():
        raise ValueError("Horodatages invalides dans la table des arrêts")
    by_device: Dict[str, List[Stop]] = defaultdict(list)
    geoids = frame["cbg_geoid"].fillna("").astype(str)
    for device_id, lon, lat, start, end, geoid in zip(frame["device_id"].astype(str), frame["lon"], frame["lat"],
                                                      starts, ends, geoids):
        by_device[device_id].append(Stop(device_id, float(lon), float(lat), int(start), int(end), geoid or None))
    logger.debug(f"{len(frame)} arrêts relus pour {len(by_device)} appareils")
    return dict(by_device)
