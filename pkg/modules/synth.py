# modules/synth.py
"""Générateur de traces synthétiques à vérité terrain connue.

Les CBG sont des cellules de 0.01° sur une grille carrée; chaque cellule porte
un POI par catégorie (avec emprise carrée) et les domiciles de ses agents.
Chaque agent tire ses nombres quotidiens de visites d'une loi de Poisson et
reçoit son propre flux aléatoire, ce qui rend la génération reproductible
quel que soit le nombre de workers.
"""
import json
import math
from dataclasses import asdict, dataclass, field
from datetime import date, datetime, timedelta
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import geopandas as gpd
import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from loguru import logger
from shapely.geometry import box
from tqdm import tqdm

from config import SCENARIO_GROUP_PREFIX, PipelineConfig, read_config_file
from core.errors import ConfigError
from modules.visits import PoiCategory
from utils.time_windows import epochs_to_iso, local_midnight_epoch, parse_date

ORIGIN_LON = -95.5
ORIGIN_LAT = 29.6
CELL_DEG = 0.01
STATE_COUNTY = "48201"
FOOTPRINT_HALF_DEG = 0.0002
JITTER_DEG = 0.00002

# Position des POI dans la cellule (fraction de CELL_DEG) et code NAICS
POI_LAYOUT: Dict[PoiCategory, Tuple[float, float, str]] = {
    PoiCategory.GROCERY: (0.2, 0.2, "445110"),
    PoiCategory.PHARMACY: (0.4, 0.2, "446110"),
    PoiCategory.GAS_STATION: (0.6, 0.2, "447110"),
    PoiCategory.HOME_IMPROVEMENT: (0.8, 0.2, "444110"),
}
# POI hors catégories, sans emprise
POINT_POI = (0.1, 0.1, "722511")
# Zone des domiciles dans la cellule, loin de la rangée de POI
HOME_AREA = ((0.1, 0.9), (0.5, 0.9))

DAY_START_S = 6 * 3600 + 1800
DAY_END_S = 19 * 3600 + 1800
NIGHT_START_S = 20 * 3600
NIGHT_LENGTH_S = 10 * 3600
TRAVEL_S = 300


@dataclass
class CbgGroup:
    name: str
    cells: Optional[List[int]] = None
    evac_fraction: float = 0.0
    # catégorie → (multiplicateur, jour du pic)
    surge: Dict[str, Tuple[float, date]] = field(default_factory=dict)


@dataclass
class ScenarioConfig:
    n_cbgs: int = 16
    agents_per_cbg: int = 50
    seed: int = 0
    cbgs_per_tract: int = 4
    base_visit_rate: Dict[str, float] = field(default_factory=lambda: {c.value: 0.5 for c in PoiCategory})
    groups: List[CbgGroup] = field(default_factory=list)
    ping_interval_s: int = 600
    visit_duration_s: int = 900
    departure: Optional[datetime] = None
    baseline_away_fraction: float = 0.0
    away_nights: int = 2
    point_pois: bool = True
    income_min: float = 20_000.0
    income_max: float = 150_000.0

    @property
    def cols(self) -> int:
        return math.ceil(math.sqrt(self.n_cbgs))

    def cell_origin(self, cell: int) -> Tuple[float, float]:
        row, col = divmod(cell, self.cols)
        return ORIGIN_LON + col * CELL_DEG, ORIGIN_LAT + row * CELL_DEG

    def geoid(self, cell: int) -> str:
        tract, block_group = divmod(cell, self.cbgs_per_tract)
        return f"{STATE_COUNTY}{tract + 1:06d}{block_group + 1}"

    def group_of(self) -> Dict[int, CbgGroup]:
        """Groupe de chaque cellule; un groupe sans cellules prend toutes les autres"""
        owner: Dict[int, CbgGroup] = {}
        default: Optional[CbgGroup] = None
        for group in self.groups:
            if group.cells is None:
                if default is not None:
                    raise ConfigError(f"Deux groupes par défaut: {default.name} et {group.name}")
                default = group
                continue
            for cell in group.cells:
                if not 0 <= cell < self.n_cbgs:
                    raise ConfigError(f"Cellule {cell} hors grille dans le groupe {group.name}")
                if cell in owner:
                    raise ConfigError(f"Cellule {cell} dans {owner[cell].name} et {group.name}")
                owner[cell] = group
        default = default or CbgGroup("default")
        return {cell: owner.get(cell, default) for cell in range(self.n_cbgs)}

    def departure_at(self, cfg: PipelineConfig) -> datetime:
        return self.departure or datetime.combine(cfg.landfall_date - timedelta(days=1), datetime.min.time()).replace(hour=12)

    def validate(self, cfg: PipelineConfig) -> "ScenarioConfig":
        if self.n_cbgs < 1 or self.agents_per_cbg < 1:
            raise ConfigError("n_cbgs et agents_per_cbg doivent être positifs")
        if not 1 <= self.cbgs_per_tract <= 9:
            raise ConfigError("cbgs_per_tract doit être entre 1 et 9 (un chiffre de groupe de blocs)")
        if self.n_cbgs > self.cbgs_per_tract * 999_999:
            raise ConfigError("Trop de CBG pour la numérotation des secteurs")
        for name, rate in self.base_visit_rate.items():
            if name not in {c.value for c in PoiCategory}:
                raise ConfigError(f"Catégorie inconnue dans [rates]: {name}")
            if rate < 0:
                raise ConfigError(f"Taux de visite négatif pour {name}")
        if self.ping_interval_s <= 0 or self.ping_interval_s > cfg.stop_max_gap_s:
            raise ConfigError(f"ping_interval_s doit être dans ]0, {cfg.stop_max_gap_s}]")
        if self.visit_duration_s < max(cfg.visit_min_dwell_s, cfg.stop_min_dwell_s):
            raise ConfigError("visit_duration_s plus court que la durée minimale d'une visite")
        if not 0.0 <= self.baseline_away_fraction <= 1.0:
            raise ConfigError("baseline_away_fraction doit être dans [0, 1]")
        if self.baseline_away_fraction > 0:
            if self.away_nights < 2:
                raise ConfigError("away_nights doit valoir au moins 2 pour dépasser 24 h d'absence")
            if cfg.evac_base_range.n_days < self.away_nights + 1:
                raise ConfigError("Fenêtre de référence d'évacuation trop courte pour away_nights")
        if self.departure_at(cfg).date() not in cfg.prep_range:
            raise ConfigError("Le départ des évacués doit tomber dans la période de préparation")
        if self.income_min > self.income_max:
            raise ConfigError("income_min > income_max")
        groups = self.group_of()
        for group in self.groups:
            if not 0.0 <= group.evac_fraction <= 1.0:
                raise ConfigError(f"evac_fraction hors [0, 1] pour {group.name}")
            for category, (multiplier, _) in group.surge.items():
                if category not in {c.value for c in PoiCategory}:
                    raise ConfigError(f"Catégorie inconnue dans {group.name}: {category}")
                if multiplier < 0:
                    raise ConfigError(f"Multiplicateur négatif pour {group.name}/{category}")
        needs_travel = self.baseline_away_fraction > 0 or any(g.evac_fraction > 0 for g in groups.values())
        if needs_travel and self.n_cbgs < 2:
            raise ConfigError("Évacuation ou déplacement impossibles avec une seule cellule")
        return self


@dataclass
class GroundTruth:
    homes: Dict[str, str] = field(default_factory=dict)
    evac_fraction: Dict[str, float] = field(default_factory=dict)
    expected: Dict[str, Dict[str, Dict]] = field(default_factory=dict)
    evacuees: List[str] = field(default_factory=list)
    travellers: List[str] = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, indent=2, ensure_ascii=False) + "\n"


def _parse_cells(raw: str) -> List[int]:
    cells = []
    for part in raw.split(","):
        part = part.strip()
        if not part:
            continue
        try:
            if "-" in part:
                lo, hi = (int(v) for v in part.split("-", 1))
                cells.extend(range(lo, hi + 1))
            else:
                cells.append(int(part))
        except ValueError:
            raise ConfigError(f"Liste de cellules invalide: {raw!r}")
    return cells


def _parse_group(name: str, section) -> CbgGroup:
    group = CbgGroup(name)
    for key, raw in section.items():
        try:
            if key == "cells":
                group.cells = _parse_cells(raw)
            elif key == "evac_fraction":
                group.evac_fraction = float(raw)
            elif key.startswith("surge."):
                multiplier, day = raw.split()
                group.surge[key[len("surge."):]] = (float(multiplier), parse_date(day))
            else:
                raise ConfigError(f"Clé inconnue [{SCENARIO_GROUP_PREFIX}{name}] {key}")
        except ValueError:
            raise ConfigError(f"Valeur invalide [{SCENARIO_GROUP_PREFIX}{name}] {key} = {raw!r}")
    return group


_SCENARIO_TYPES = {
    "n_cbgs": int, "agents_per_cbg": int, "seed": int, "cbgs_per_tract": int,
    "ping_interval_s": int, "visit_duration_s": int, "baseline_away_fraction": float,
    "away_nights": int, "income_min": float, "income_max": float,
}


def load_scenario(path: Union[str, Path], seed: Optional[int] = None) -> ScenarioConfig:
    """Lit les sections [scenario], [rates] et [group:*] du fichier de configuration"""
    parser = read_config_file(path)
    if not parser.has_section("scenario"):
        raise ConfigError(f"Section [scenario] absente de {path}")
    scenario = ScenarioConfig()
    for key, raw in parser.items("scenario"):
        try:
            if key in _SCENARIO_TYPES:
                setattr(scenario, key, _SCENARIO_TYPES[key](raw.strip()))
            elif key == "departure":
                scenario.departure = datetime.fromisoformat(raw.strip())
            elif key == "point_pois":
                scenario.point_pois = raw.strip().lower() in ("1", "true", "yes", "on")
            else:
                raise ConfigError(f"Clé inconnue [scenario] {key}")
        except ValueError:
            raise ConfigError(f"Valeur invalide [scenario] {key} = {raw!r}")
    if parser.has_section("rates"):
        rates = {}
        for key, raw in parser.items("rates"):
            try:
                rates[key] = float(raw)
            except ValueError:
                raise ConfigError(f"Valeur invalide [rates] {key} = {raw!r}")
        scenario.base_visit_rate = rates
    for section in parser.sections():
        if section.startswith(SCENARIO_GROUP_PREFIX):
            scenario.groups.append(_parse_group(section[len(SCENARIO_GROUP_PREFIX):], parser[section]))
    if seed is not None:
        scenario.seed = seed
    return scenario


def _emitted_dates(cfg: PipelineConfig) -> List[date]:
    lookahead_days = math.ceil(cfg.evac_lookahead_h / 24)
    dates = set(cfg.baseline_range.dates()) | set(cfg.evac_base_range.dates()) | set(cfg.prep_range.dates())
    dates |= {cfg.landfall_date + timedelta(days=i) for i in range(1, lookahead_days + 1)}
    return sorted(dates)


@dataclass(frozen=True)
class _Agent:
    device_id: str
    cell: int
    home: Tuple[float, float]
    # (instant de départ, instant de retour ou None, cellule, point de nuit)
    trips: Tuple[Tuple[int, Optional[int], int, Tuple[float, float]], ...]


def _random_home(scenario: ScenarioConfig, cell: int, rng: np.random.Generator) -> Tuple[float, float]:
    lon0, lat0 = scenario.cell_origin(cell)
    (x0, x1), (y0, y1) = HOME_AREA
    return lon0 + rng.uniform(x0, x1) * CELL_DEG, lat0 + rng.uniform(y0, y1) * CELL_DEG


def _poi_point(scenario: ScenarioConfig, cell: int, category: PoiCategory) -> Tuple[float, float]:
    lon0, lat0 = scenario.cell_origin(cell)
    fx, fy, _ = POI_LAYOUT[category]
    return lon0 + fx * CELL_DEG, lat0 + fy * CELL_DEG


def _other_cell(scenario: ScenarioConfig, cell: int, rng: np.random.Generator) -> int:
    choice = int(rng.integers(0, scenario.n_cbgs - 1))
    return choice if choice < cell else choice + 1


def _local_epoch(d: date, seconds: int, tz: str) -> int:
    return local_midnight_epoch(d, tz) + seconds


class _CellSimulator:
    """Simule tous les agents d'une cellule (fonction pure de la graine)"""

    def __init__(self, scenario: ScenarioConfig, cfg: PipelineConfig, dates: Sequence[date],
                 group: CbgGroup, window: Tuple[int, int]):
        self.scenario = scenario
        self.cfg = cfg
        self.dates = list(dates)
        self.group = group
        self.window = window
        self.categories = [c for c in PoiCategory if self.scenario.base_visit_rate.get(c.value, 0.0) > 0]

    def agents(self, cell: int) -> List[_Agent]:
        scenario, cfg = self.scenario, self.cfg
        rng = np.random.default_rng([scenario.seed, 0, cell])
        n = scenario.agents_per_cbg
        order = rng.permutation(n)
        n_evac = int(round(self.group.evac_fraction * n))
        n_away = int(round(scenario.baseline_away_fraction * n))
        evacuees = set(order[:n_evac].tolist())
        travellers = set(rng.permutation(n)[:n_away].tolist())
        departure = scenario.departure_at(cfg)
        departure_ts = _local_epoch(departure.date(), departure.hour * 3600 + departure.minute * 60, cfg.timezone)
        base_days = cfg.evac_base_range.dates()

        agents = []
        for i in range(n):
            agent_rng = np.random.default_rng([scenario.seed, 1, cell, i])
            home = _random_home(scenario, cell, agent_rng)
            trips = []
            if i in travellers:
                first = base_days[int(agent_rng.integers(0, len(base_days) - scenario.away_nights))]
                dest = _other_cell(scenario, cell, agent_rng)
                leave = _local_epoch(first, 12 * 3600, cfg.timezone)
                back = _local_epoch(first + timedelta(days=scenario.away_nights), 12 * 3600, cfg.timezone)
                trips.append((leave, back, dest, _random_home(scenario, dest, agent_rng)))
            if i in evacuees:
                dest = _other_cell(scenario, cell, agent_rng)
                trips.append((departure_ts, None, dest, _random_home(scenario, dest, agent_rng)))
            agents.append(_Agent(f"d{cell:04d}-{i:05d}", cell, home, tuple(trips)))
        return agents

    def _place(self, agent: _Agent, ts: int) -> Tuple[int, Tuple[float, float]]:
        for leave, back, dest, night in agent.trips:
            if ts >= leave and (back is None or ts < back):
                return dest, night
        return agent.cell, agent.home

    def _multiplier(self, category: PoiCategory, d: date) -> float:
        surge = self.group.surge.get(category.value)
        if surge is not None and surge[1] == d:
            return surge[0]
        return 1.0

    def simulate(self, agent: _Agent, rng: np.random.Generator) -> Tuple[List[int], List[float], List[float], int]:
        scenario, cfg = self.scenario, self.cfg
        ts: List[int] = []
        lons: List[float] = []
        lats: List[float] = []
        truncated = 0

        def emit(t: int, lon: float, lat: float):
            ts.append(t)
            lons.append(lon)
            lats.append(lat)

        for d in self.dates:
            midnight = local_midnight_epoch(d, cfg.timezone)
            counts = {c: int(rng.poisson(scenario.base_visit_rate[c.value] * self._multiplier(c, d)))
                      for c in self.categories}
            # entrelacement des catégories pour espacer les visites d'un même POI
            sequence = []
            while any(counts.values()):
                for c in self.categories:
                    if counts[c] > 0:
                        sequence.append(c)
                        counts[c] -= 1

            t = midnight + DAY_START_S
            previous = None
            for category in sequence:
                cell, _ = self._place(agent, t)
                if previous == (cell, category):
                    t += cfg.stop_max_gap_s + TRAVEL_S
                if t + scenario.visit_duration_s > midnight + DAY_END_S:
                    truncated += 1
                    continue
                lon, lat = _poi_point(scenario, cell, category)
                # un ping toutes les ping_interval_s, plus un à la sortie
                offsets = list(range(0, scenario.visit_duration_s, scenario.ping_interval_s))
                for k in offsets + [scenario.visit_duration_s]:
                    emit(t + k, lon, lat)
                t += scenario.visit_duration_s + TRAVEL_S
                previous = (cell, category)

            night = midnight + NIGHT_START_S
            _, (lon, lat) = self._place(agent, night)
            for k in range(0, NIGHT_LENGTH_S + 1, scenario.ping_interval_s):
                emit(night + k, lon, lat)
        jitter = rng.uniform(-JITTER_DEG, JITTER_DEG, size=(2, len(ts)))
        return ts, (np.array(lons) + jitter[0]).tolist(), (np.array(lats) + jitter[1]).tolist(), truncated

    def run(self, cell: int) -> Tuple[pd.DataFrame, List[_Agent], int]:
        agents = self.agents(cell)
        frames = []
        truncated = 0
        for agent in agents:
            rng = np.random.default_rng([self.scenario.seed, 2, cell, int(agent.device_id[-5:])])
            ts, lons, lats, lost = self.simulate(agent, rng)
            truncated += lost
            frame = pd.DataFrame({"device_id": agent.device_id, "ts": ts, "lat": lats, "lon": lons})
            frames.append(frame)
        pings = pd.concat(frames, ignore_index=True)
        inside = (pings["ts"] >= self.window[0]) & (pings["ts"] < self.window[1])
        pings = pings.loc[inside].sort_values(["device_id", "ts"], kind="mergesort")
        return pings, agents, truncated


def _write_csv(frame: pd.DataFrame, path: Path, **kwargs):
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, lineterminator="\n", **kwargs)


def _write_geojson(gdf: gpd.GeoDataFrame, path: Path):
    path.parent.mkdir(parents=True, exist_ok=True)
    if path.exists():
        path.unlink()
    gdf.to_file(path, driver="GeoJSON")


def generate(scenario: ScenarioConfig, cfg: PipelineConfig, workers: int = 1,
             progress: bool = False) -> GroundTruth:
    """Écrit pings, POI, emprises, limites de CBG et revenus aux chemins de la configuration.

    La vérité terrain est renvoyée et écrite dans out_dir/ground_truth.json.
    """
    scenario.validate(cfg)
    groups = scenario.group_of()
    dates = _emitted_dates(cfg)
    study = cfg.study_window()
    logger.info(f"Scénario: {scenario.n_cbgs} CBG × {scenario.agents_per_cbg} agents, "
                f"{len(dates)} jours, graine {scenario.seed}")

    cells = range(scenario.n_cbgs)
    if progress:
        cells = tqdm(cells, desc="Génération des cellules", unit="cellule")
    results = Parallel(n_jobs=workers)(
        delayed(_CellSimulator(scenario, cfg, dates, groups[cell], (study.start, study.end)).run)(cell)
        for cell in cells
    )

    pings = pd.concat([r[0] for r in results], ignore_index=True)
    truncated = sum(r[2] for r in results)
    if truncated:
        logger.warning(f"{truncated} visites tronquées faute de temps dans la journée")
    pings_out = pd.DataFrame({
        "device_id": pings["device_id"],
        "timestamp": epochs_to_iso(pings["ts"]).to_numpy(),
        "lat": pings["lat"],
        "lon": pings["lon"],
    })
    _write_csv(pings_out, Path(cfg.pings_path), float_format="%.6f")
    logger.info(f"{len(pings_out)} pings écrits dans {cfg.pings_path}")

    _write_pois(scenario, cfg)
    _write_cbgs(scenario, cfg)

    truth = GroundTruth()
    for cell in range(scenario.n_cbgs):
        geoid = scenario.geoid(cell)
        group = groups[cell]
        agents = results[cell][1]
        n_evac = int(round(group.evac_fraction * scenario.agents_per_cbg))
        truth.evac_fraction[geoid] = n_evac / scenario.agents_per_cbg
        truth.expected[geoid] = {}
        for category in PoiCategory:
            multiplier, day = group.surge.get(category.value, (1.0, None))
            truth.expected[geoid][category.value] = {
                "multiplier": multiplier,
                "surge_day": day.isoformat() if day is not None else None,
                "expected_extent": multiplier - 1.0,
            }
        for agent in agents:
            truth.homes[agent.device_id] = geoid
            for leave, back, _, _ in agent.trips:
                (truth.evacuees if back is None else truth.travellers).append(agent.device_id)
    truth.evacuees.sort()
    truth.travellers.sort()

    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "ground_truth.json", "w", encoding="utf-8", newline="\n") as f:
        f.write(truth.to_json())
    return truth


def _write_pois(scenario: ScenarioConfig, cfg: PipelineConfig):
    rows = []
    footprints = []
    for cell in range(scenario.n_cbgs):
        lon0, lat0 = scenario.cell_origin(cell)
        for k, (category, (fx, fy, naics)) in enumerate(POI_LAYOUT.items()):
            lon, lat = lon0 + fx * CELL_DEG, lat0 + fy * CELL_DEG
            place_id = f"poi-{cell:04d}-{k}"
            rows.append((place_id, f"{category.value} {cell}", naics, lat, lon))
            footprints.append((f"fp-{cell:04d}-{k}", box(lon - FOOTPRINT_HALF_DEG, lat - FOOTPRINT_HALF_DEG,
                                                        lon + FOOTPRINT_HALF_DEG, lat + FOOTPRINT_HALF_DEG)))
        if scenario.point_pois:
            fx, fy, naics = POINT_POI
            rows.append((f"poi-{cell:04d}-r", f"Restaurant {cell}", naics,
                         lat0 + fy * CELL_DEG, lon0 + fx * CELL_DEG))
    pois = pd.DataFrame(rows, columns=["place_id", "name", "naics_code", "lat", "lon"])
    _write_csv(pois, Path(cfg.poi_path), float_format="%.6f")
    gdf = gpd.GeoDataFrame({"footprint_id": [f[0] for f in footprints]},
                           geometry=[f[1] for f in footprints], crs="EPSG:4326")
    _write_geojson(gdf, Path(cfg.footprints_path))


def _write_cbgs(scenario: ScenarioConfig, cfg: PipelineConfig):
    geoids = [scenario.geoid(cell) for cell in range(scenario.n_cbgs)]
    shapes = []
    for cell in range(scenario.n_cbgs):
        lon0, lat0 = scenario.cell_origin(cell)
        shapes.append(box(lon0, lat0, lon0 + CELL_DEG, lat0 + CELL_DEG))
    gdf = gpd.GeoDataFrame({"GEOID": geoids}, geometry=shapes, crs="EPSG:4326")
    _write_geojson(gdf, Path(cfg.cbg_path))

    if cfg.income_path is None:
        return
    rng = np.random.default_rng([scenario.seed, 3])
    incomes = np.round(rng.uniform(scenario.income_min, scenario.income_max, scenario.n_cbgs)).astype(int)
    _write_csv(pd.DataFrame({"geoid": geoids, "median_household_income": incomes}), Path(cfg.income_path))
