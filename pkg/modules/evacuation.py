# modules/evacuation.py
"""Taux d'évacuation par secteur, variation par rapport à la référence et quadrants."""
from dataclasses import dataclass
from enum import Enum
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Set, Tuple, Union

import geopandas as gpd
import pandas as pd
from loguru import logger

from core.errors import InsufficientData
from core.ingest import CbgRecord
from modules.metrics import PreparednessRecord
from modules.stats import median
from modules.trajectory import EvacuationFlag
from modules.visits import PoiCategory

FLAG_COLUMNS = ["device_id", "window", "evacuated", "longest_absence_s"]
RATE_COLUMNS = ["tract", "window", "evacuated", "total", "rate"]
CHANGE_COLUMNS = ["tract", "base_rate", "prep_rate", "evac_change"]
QUADRANT_COLUMNS = ["cbg", "category", "evac_change", "extent", "quadrant"]

BASE_WINDOW = "base"
PREP_WINDOW = "prep"


class Level(str, Enum):
    LOW = "Low"
    HIGH = "High"


def tract_of(geoid: str) -> str:
    return geoid[:11]


@dataclass(frozen=True)
class EvacRate:
    area_id: str
    window: str
    evacuated: int
    total: int

    @property
    def rate(self) -> float:
        return self.evacuated / self.total


@dataclass(frozen=True)
class QuadrantAssignment:
    cbg: str
    category: str
    evac_change: float
    extent: float
    evac_level: Level
    prep_level: Level

    @property
    def quadrant(self) -> str:
        return f"{self.evac_level.value}Evac-{self.prep_level.value}Prep"


QUADRANTS = [f"{e.value}Evac-{p.value}Prep" for e in Level for p in Level]


def evac_rate(flags: Sequence[EvacuationFlag], homes: Mapping[str, Optional[str]], window: str,
              tracts: Optional[Iterable[str]] = None) -> List[EvacRate]:
    """Part des appareils résidents d'un secteur absents plus de 24 h d'affilée.

    Les drapeaux ne concernent que les appareils observés dans la fenêtre.
    """
    totals: Dict[str, List[int]] = {}
    homeless = 0
    for flag in flags:
        home = homes.get(flag.device_id)
        if home is None:
            homeless += 1
            continue
        counts = totals.setdefault(tract_of(home), [0, 0])
        counts[0] += int(flag.evacuated)
        counts[1] += 1
    if homeless:
        logger.warning(f"[{window}] {homeless} appareils sans résidence ignorés")
    if tracts is not None:
        empty = sorted(set(tracts) - set(totals))
        if empty:
            logger.warning(f"[{window}] {len(empty)} secteurs sans appareil observé omis")
    return [EvacRate(tract, window, evacuated, total) for tract, (evacuated, total) in sorted(totals.items())]


def evac_change(prep_rate: Union[EvacRate, float], base_rate: Union[EvacRate, float]) -> Optional[float]:
    """(prep - base) / base; None si la référence est nulle"""
    prep = prep_rate.rate if isinstance(prep_rate, EvacRate) else float(prep_rate)
    base = base_rate.rate if isinstance(base_rate, EvacRate) else float(base_rate)
    if base == 0:
        return None
    return (prep - base) / base


def evac_changes(prep_rates: Sequence[EvacRate], base_rates: Sequence[EvacRate]) -> Dict[str, Tuple[Optional[float], Optional[float], Optional[float]]]:
    """Par secteur: (taux de référence, taux de préparation, variation)"""
    prep = {r.area_id: r for r in prep_rates}
    base = {r.area_id: r for r in base_rates}
    result = {}
    excluded = 0
    for tract in sorted(set(prep) | set(base)):
        p, b = prep.get(tract), base.get(tract)
        change = evac_change(p, b) if p is not None and b is not None else None
        if change is None:
            excluded += 1
        result[tract] = (b.rate if b else None, p.rate if p else None, change)
    if excluded:
        logger.warning(f"{excluded} secteurs exclus de l'analyse (référence nulle ou absente)")
    return result


def classify_quadrants(tract_changes: Mapping[str, Optional[float]],
                       records: Sequence[PreparednessRecord]) -> List[QuadrantAssignment]:
    """Découpage aux médianes: valeur ≤ médiane → Low.

    Chaque CBG hérite de la variation de son secteur. La médiane d'évacuation
    porte sur les CBG entrant dans l'analyse, celle de préparation est calculée
    par catégorie.
    """
    entering = [r for r in records if tract_changes.get(tract_of(r.cbg)) is not None]
    cbgs = sorted({r.cbg for r in entering})
    if len(cbgs) < 2:
        raise InsufficientData(f"{len(cbgs)} CBG entrant dans l'analyse des quadrants")
    evac_median = median([tract_changes[tract_of(c)] for c in cbgs])
    logger.info(f"Médiane de variation d'évacuation: {evac_median:.4f} sur {len(cbgs)} CBG")

    assignments = []
    for category in sorted({r.category for r in entering}):
        part = [r for r in entering if r.category == category]
        prep_median = median([r.extent for r in part])
        for r in sorted(part, key=lambda r: r.cbg):
            change = tract_changes[tract_of(r.cbg)]
            assignments.append(QuadrantAssignment(
                cbg=r.cbg,
                category=category,
                evac_change=change,
                extent=r.extent,
                evac_level=Level.LOW if change <= evac_median else Level.HIGH,
                prep_level=Level.LOW if r.extent <= prep_median else Level.HIGH,
            ))
    return assignments


def hotspots(assignments: Sequence[QuadrantAssignment],
             categories: Optional[Iterable[str]] = None) -> Set[str]:
    """CBG en (Low, Low) dans toutes les catégories"""
    categories = list(categories) if categories is not None else [c.value for c in PoiCategory]
    result: Optional[Set[str]] = None
    for category in categories:
        low_low = {a.cbg for a in assignments
                   if a.category == category and a.evac_level is Level.LOW and a.prep_level is Level.LOW}
        result = low_low if result is None else result & low_low
    return result or set()


def quadrant_counts(assignments: Sequence[QuadrantAssignment]) -> pd.DataFrame:
    rows = []
    for category in sorted({a.category for a in assignments}):
        for quadrant in QUADRANTS:
            count = sum(1 for a in assignments if a.category == category and a.quadrant == quadrant)
            rows.append({"category": category, "quadrant": quadrant, "count": count})
    return pd.DataFrame(rows, columns=["category", "quadrant", "count"])


def flags_to_frame(flags_by_window: Mapping[str, Sequence[EvacuationFlag]]) -> pd.DataFrame:
    rows = [(f.device_id, window, f.evacuated, f.longest_absence)
            for window, flags in flags_by_window.items() for f in flags]
    frame = pd.DataFrame(rows, columns=FLAG_COLUMNS)
    return frame.sort_values(["window", "device_id"], kind="mergesort").reset_index(drop=True)


def flags_from_frame(frame: pd.DataFrame) -> Dict[str, List[EvacuationFlag]]:
    result: Dict[str, List[EvacuationFlag]] = {BASE_WINDOW: [], PREP_WINDOW: []}
    for device_id, window, evacuated, longest in zip(frame["device_id"], frame["window"], frame["evacuated"],
                                                     frame["longest_absence_s"]):
        evacuated = evacuated if isinstance(evacuated, bool) else str(evacuated) == "True"
        result.setdefault(str(window), []).append(EvacuationFlag(str(device_id), evacuated, int(longest)))
    return result


def rates_to_frame(rates: Sequence[EvacRate]) -> pd.DataFrame:
    rows = [(r.area_id, r.window, r.evacuated, r.total, r.rate) for r in rates]
    return pd.DataFrame(rows, columns=RATE_COLUMNS)


def changes_to_frame(changes: Mapping[str, Tuple[Optional[float], Optional[float], Optional[float]]]) -> pd.DataFrame:
    rows = [(tract, base, prep, change) for tract, (base, prep, change) in sorted(changes.items())]
    return pd.DataFrame(rows, columns=CHANGE_COLUMNS)


def tract_changes_from_frame(frame: pd.DataFrame) -> Dict[str, Optional[float]]:
    return {str(t): (None if pd.isna(c) else float(c)) for t, c in zip(frame["tract"], frame["evac_change"])}


def assignments_to_frame(assignments: Sequence[QuadrantAssignment]) -> pd.DataFrame:
    rows = [(a.cbg, a.category, a.evac_change, a.extent, a.quadrant)
            for a in sorted(assignments, key=lambda a: (a.cbg, a.category))]
    return pd.DataFrame(rows, columns=QUADRANT_COLUMNS)


def quadrant_features(cbgs: Sequence[CbgRecord], assignments: Sequence[QuadrantAssignment],
                      hotspot_set: Set[str]) -> gpd.GeoDataFrame:
    """Limites de CBG avec une propriété quadrant_<catégorie> et le drapeau hotspot"""
    by_key = {(a.cbg, a.category): a.quadrant for a in assignments}
    categories = [c.value for c in PoiCategory]
    records = []
    for cbg in sorted(cbgs, key=lambda c: c.geoid):
        row = {"geoid": cbg.geoid}
        for category in categories:
            row[f"quadrant_{category}"] = by_key.get((cbg.geoid, category))
        row["hotspot"] = cbg.geoid in hotspot_set
        records.append(row)
    return gpd.GeoDataFrame(records, geometry=[c.boundary.shape for c in sorted(cbgs, key=lambda c: c.geoid)],
                            crs="EPSG:4326")
