# core/ingest.py
"""Lecture, validation et rapprochement des cinq jeux de données d'entrée."""
import re
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, Iterator, List, Optional, Tuple, Union

import geopandas as gpd
import numpy as np
import pandas as pd
import shapely
from loguru import logger

from core.errors import DuplicateKey, InvalidGeometry, ParseError
from core.geo import GeoPoint, GeoPolygon, degree_buffers, haversine_m
from utils.time_windows import TimeWindow, iso_to_epochs

PING_COLUMNS = ["device_id", "timestamp", "lat", "lon"]
POI_COLUMNS = ["place_id", "name", "naics_code", "lat", "lon"]
INCOME_COLUMNS = ["geoid", "median_household_income"]

NAICS_PATTERN = r"[0-9]{6}"
GEOID_PATTERN = r"[0-9]{12}"
_LINE_RE = re.compile(r"line (\d+)")

PathLike = Union[str, Path]


@dataclass(frozen=True)
class PoiRecord:
    place_id: str
    name: str
    naics_code: str
    loc: GeoPoint
    footprint: Optional[GeoPolygon] = None


@dataclass(frozen=True)
class CbgRecord:
    geoid: str
    boundary: GeoPolygon
    median_income: Optional[float] = None
    tract_geoid: str = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "tract_geoid", self.geoid[:11])


@dataclass
class LoadReport:
    """Compteurs de lignes écartées pendant le chargement"""
    dropped_outside_window: int = 0
    skipped_rows: int = 0
    duplicate_pings: int = 0
    skipped_features: int = 0
    unmatched_pois: int = 0
    orphan_income_rows: int = 0
    missing_income: int = 0

    def as_dict(self) -> Dict[str, int]:
        return asdict(self)


def _read_csv_strict(path: PathLike, columns: List[str], lenient: bool, report: LoadReport) -> pd.DataFrame:
    """Lit un CSV en texte brut après vérification de l'en-tête"""
    path = Path(path)
    try:
        header = list(pd.read_csv(path, nrows=0, dtype=str).columns)
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as e:
        raise ParseError(f"En-tête illisible: {e}", line=1, path=str(path))
    if header != columns:
        raise ParseError(f"En-tête inattendu {header}, attendu {columns}", line=1, path=str(path))

    skipped = []
    on_bad_lines = "error"
    engine = "c"
    if lenient:
        on_bad_lines = lambda bad: skipped.append(bad)  # noqa: E731
        engine = "python"
    try:
        df = pd.read_csv(path, dtype=str, keep_default_na=False, skip_blank_lines=False,
                         on_bad_lines=on_bad_lines, engine=engine)
    except pd.errors.ParserError as e:
        match = _LINE_RE.search(str(e))
        raise ParseError(f"Ligne malformée: {e}", line=int(match.group(1)) if match else None, path=str(path))
    if skipped:
        report.skipped_rows += len(skipped)
        logger.warning(f"{path.name}: {len(skipped)} lignes malformées ignorées")
    return df


def _reject_rows(df: pd.DataFrame, problems: Dict[str, pd.Series], path: PathLike,
                 lenient: bool, report: LoadReport) -> pd.DataFrame:
    """Écarte (mode tolérant) ou signale (mode strict) les lignes invalides"""
    bad = pd.Series(False, index=df.index)
    for mask in problems.values():
        bad |= mask.fillna(True)
    if not bad.any():
        return df
    if not lenient:
        first = bad.idxmax()
        reason = next(name for name, mask in problems.items() if bool(mask.fillna(True).loc[first]))
        # +2: en-tête et numérotation à partir de 1
        raise ParseError(reason, line=int(first) + 2, path=str(path))
    n_bad = int(bad.sum())
    report.skipped_rows += n_bad
    logger.warning(f"{Path(path).name}: {n_bad} lignes invalides ignorées")
    return df.loc[~bad]


def _mismatch(values: pd.Series, pattern: str) -> pd.Series:
    """Vrai si la valeur ne respecte pas le motif; un champ absent (ligne courte) aussi"""
    return ~values.str.fullmatch(pattern).fillna(False).astype(bool)


def _coordinate_problems(lat: pd.Series, lon: pd.Series) -> Dict[str, pd.Series]:
    return {
        "Latitude invalide": lat.isna() | ~lat.between(-90.0, 90.0),
        "Longitude invalide": lon.isna() | ~lon.between(-180.0, 180.0),
    }


def load_pings(path: PathLike, window: TimeWindow, lenient: bool = False,
               report: Optional[LoadReport] = None) -> pd.DataFrame:
    """Charge les pings, triés par appareil puis par temps.

    Colonnes du résultat: device_id (str), ts (int64, epoch UTC), lat, lon.
    Les lignes hors fenêtre sont comptées puis écartées; un doublon
    (device_id, ts) garde sa première occurrence.
    """
    report = report if report is not None else LoadReport()
    raw = _read_csv_strict(path, PING_COLUMNS, lenient, report)

    ts = iso_to_epochs(raw["timestamp"])
    lat = pd.to_numeric(raw["lat"], errors="coerce")
    lon = pd.to_numeric(raw["lon"], errors="coerce")
    problems = {
        "device_id vide": raw["device_id"].str.strip() == "",
        "Horodatage invalide (ISO-8601 UTC attendu)": ts.isna(),
        **_coordinate_problems(lat, lon),
    }
    raw = _reject_rows(raw, problems, path, lenient, report)

    pings = pd.DataFrame({
        "device_id": raw["device_id"].astype(str),
        "ts": ts.loc[raw.index].astype("int64"),
        "lat": lat.loc[raw.index].astype(float),
        "lon": lon.loc[raw.index].astype(float),
    })

    inside = (pings["ts"] >= window.start) & (pings["ts"] < window.end)
    dropped = int((~inside).sum())
    if dropped:
        report.dropped_outside_window += dropped
        logger.warning(f"{dropped} pings hors fenêtre d'étude écartés")
    pings = pings.loc[inside]

    before = len(pings)
    pings = pings.drop_duplicates(subset=["device_id", "ts"], keep="first")
    if len(pings) < before:
        report.duplicate_pings += before - len(pings)
        logger.warning(f"{before - len(pings)} pings dupliqués écartés")

    pings = pings.sort_values(["device_id", "ts"], kind="mergesort").reset_index(drop=True)
    logger.info(f"Pings chargés: {len(pings)} ({pings['device_id'].nunique()} appareils)")
    return pings


def iter_device_pings(pings: pd.DataFrame) -> Iterator[Tuple[str, pd.DataFrame]]:
    """Flux des pings groupés par appareil, dans l'ordre des identifiants"""
    for device_id, group in pings.groupby("device_id", sort=True):
        yield str(device_id), group


def read_polygons(path: PathLike, lenient: bool = False,
                  report: Optional[LoadReport] = None) -> Tuple[pd.DataFrame, List[GeoPolygon]]:
    """Lit une FeatureCollection GeoJSON de Polygons; renvoie (propriétés, polygones)"""
    report = report if report is not None else LoadReport()
    try:
        gdf = gpd.read_file(path)
    except Exception as e:
        logger.error(f"Erreur lecture GeoJSON {path}: {str(e)}")
        raise ParseError(f"GeoJSON illisible: {e}", path=str(path))

    properties = pd.DataFrame(gdf.drop(columns="geometry", errors="ignore"))
    polygons: List[GeoPolygon] = []
    keep = []
    for i, geom in enumerate(gdf.geometry if "geometry" in gdf else []):
        try:
            polygons.append(GeoPolygon.from_shapely(geom))
            keep.append(i)
        except InvalidGeometry as e:
            if not lenient:
                raise ParseError(f"Entité {i}: {e}", path=str(path))
            report.skipped_features += 1
            logger.warning(f"{Path(path).name}: entité {i} ignorée ({e})")
    properties = properties.iloc[keep].reset_index(drop=True)
    return properties, polygons


def build_poi_registry(poi_path: PathLike, footprints_path: PathLike, match_radius: float = 50.0,
                       lenient: bool = False, report: Optional[LoadReport] = None) -> List[PoiRecord]:
    """Rapproche chaque POI de l'emprise de bâtiment dont le centroïde est le plus proche.

    Un POI n'est lié que si ce centroïde est à moins de match_radius mètres; une
    emprise n'est liée qu'à un seul POI (le plus proche, puis le plus petit place_id).
    """
    report = report if report is not None else LoadReport()
    raw = _read_csv_strict(poi_path, POI_COLUMNS, lenient, report)
    lat = pd.to_numeric(raw["lat"], errors="coerce")
    lon = pd.to_numeric(raw["lon"], errors="coerce")
    problems = {
        "place_id vide": raw["place_id"].str.strip() == "",
        "Code NAICS invalide (6 chiffres attendus)": _mismatch(raw["naics_code"], NAICS_PATTERN),
        **_coordinate_problems(lat, lon),
    }
    raw = _reject_rows(raw, problems, poi_path, lenient, report)
    lat, lon = lat.loc[raw.index].to_numpy(float), lon.loc[raw.index].to_numpy(float)
    dupes = raw["place_id"][raw["place_id"].duplicated()]
    if not dupes.empty:
        raise DuplicateKey(f"place_id dupliqué: {dupes.iloc[0]}")

    _, footprints = read_polygons(footprints_path, lenient, report)
    place_ids = raw["place_id"].tolist()
    links = _match_footprints(place_ids, lon, lat, footprints, match_radius)

    registry = []
    for i, row in enumerate(raw.itertuples(index=False)):
        fp_idx = links.get(i)
        registry.append(PoiRecord(
            place_id=row.place_id,
            name=row.name,
            naics_code=row.naics_code,
            loc=GeoPoint(float(lon[i]), float(lat[i])),
            footprint=footprints[fp_idx] if fp_idx is not None else None,
        ))
    unmatched = sum(1 for r in registry if r.footprint is None)
    report.unmatched_pois += unmatched
    logger.info(f"Registre POI: {len(registry)} POI, {len(registry) - unmatched} liés à une emprise")
    if unmatched:
        logger.warning(f"{unmatched} POI sans emprise (attribution par rayon)")
    return registry


def _match_footprints(place_ids: List[str], lon: np.ndarray, lat: np.ndarray,
                      footprints: List[GeoPolygon], radius: float) -> Dict[int, int]:
    """Appariement partiel injectif POI → emprise"""
    if not footprints or len(place_ids) == 0:
        return {}
    centroids = [fp.shape.centroid for fp in footprints]
    tree = shapely.STRtree(centroids)
    dlon, dlat = degree_buffers(lat, radius)
    boxes = shapely.box(lon - dlon, lat - dlat, lon + dlon, lat + dlat)
    poi_idx, fp_idx = tree.query(boxes)
    if len(poi_idx) == 0:
        return {}
    cx = np.array([c.x for c in centroids])[fp_idx]
    cy = np.array([c.y for c in centroids])[fp_idx]
    candidates = pd.DataFrame({
        "poi": poi_idx,
        "fp": fp_idx,
        "dist": haversine_m(lon[poi_idx], lat[poi_idx], cx, cy),
        "place_id": np.asarray(place_ids, dtype=object)[poi_idx],
    })
    candidates = candidates[candidates["dist"] <= radius]
    # emprise la plus proche pour chaque POI
    nearest = candidates.sort_values(["poi", "dist", "fp"], kind="mergesort").drop_duplicates("poi")
    # le POI le plus proche gagne l'emprise
    winners = nearest.sort_values(["fp", "dist", "place_id"], kind="mergesort").drop_duplicates("fp")
    return {int(p): int(f) for p, f in zip(winners["poi"], winners["fp"])}


def load_cbgs(boundaries_path: PathLike, income_path: Optional[PathLike] = None, lenient: bool = False,
              report: Optional[LoadReport] = None) -> List[CbgRecord]:
    """Charge les limites de CBG et y joint le revenu médian (jointure externe gauche)"""
    report = report if report is not None else LoadReport()
    properties, polygons = read_polygons(boundaries_path, lenient, report)
    if polygons and "GEOID" not in properties.columns:
        raise ParseError("Propriété GEOID absente", path=str(boundaries_path))
    geoids = properties["GEOID"].astype(str).str.strip().tolist() if polygons else []
    for i, geoid in enumerate(geoids):
        if not re.fullmatch(GEOID_PATTERN, geoid):
            raise ParseError(f"Entité {i}: GEOID invalide (12 chiffres attendus): {geoid!r}",
                             path=str(boundaries_path))
    seen = set()
    for geoid in geoids:
        if geoid in seen:
            raise DuplicateKey(f"GEOID dupliqué: {geoid}")
        seen.add(geoid)

    incomes = _load_incomes(income_path, seen, lenient, report)
    records = [CbgRecord(geoid=g, boundary=p, median_income=incomes.get(g)) for g, p in zip(geoids, polygons)]
    missing = sum(1 for r in records if r.median_income is None)
    report.missing_income += missing
    if missing and incomes:
        logger.warning(f"{missing} CBG sans revenu médian")
    logger.info(f"CBG chargés: {len(records)}")
    return records


def _load_incomes(income_path: Optional[PathLike], geoids: set, lenient: bool,
                  report: LoadReport) -> Dict[str, float]:
    if income_path is None or not Path(income_path).exists():
        logger.warning(f"Table de revenus absente ({income_path}): revenus non renseignés")
        return {}
    raw = _read_csv_strict(income_path, INCOME_COLUMNS, lenient, report)
    value = pd.to_numeric(raw["median_household_income"].replace("", np.nan), errors="coerce")
    problems = {
        "GEOID invalide": _mismatch(raw["geoid"], GEOID_PATTERN),
        "Revenu invalide": value.isna() & (raw["median_household_income"].str.strip() != ""),
    }
    problems = {k: v.fillna(False) for k, v in problems.items()}
    raw = _reject_rows(raw, problems, income_path, lenient, report)
    dupes = raw["geoid"][raw["geoid"].duplicated()]
    if not dupes.empty:
        raise DuplicateKey(f"GEOID dupliqué dans la table de revenus: {dupes.iloc[0]}")

    incomes: Dict[str, float] = {}
    orphans = 0
    for geoid, amount in zip(raw["geoid"], value.loc[raw.index]):
        if geoid not in geoids:
            orphans += 1
            continue
        if pd.notna(amount):
            incomes[geoid] = float(amount)
    if orphans:
        report.orphan_income_rows += orphans
        logger.warning(f"{orphans} lignes de revenu sans limite de CBG ignorées")
    return incomes
