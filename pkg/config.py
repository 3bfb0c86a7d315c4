# config.py
import configparser
import hashlib
import json
import os
from dataclasses import asdict, dataclass, field
from datetime import date
from pathlib import Path
from typing import Dict, FrozenSet, Optional, Union
from zoneinfo import ZoneInfo, ZoneInfoNotFoundError

from dotenv import load_dotenv

from core.errors import ConfigError
from utils.time_windows import DateRange, TimeWindow, parse_date

load_dotenv()

LOG_LEVELS = ("TRACE", "DEBUG", "INFO", "SUCCESS", "WARNING", "ERROR", "CRITICAL")

# Préfixes NAICS à 4 chiffres par catégorie (groupes d'industrie NAICS 2017)
DEFAULT_CATEGORY_PREFIXES: Dict[str, FrozenSet[str]] = {
    "Grocery": frozenset({"4451"}),
    "Pharmacy": frozenset({"4461"}),
    "GasStation": frozenset({"4471"}),
    "HomeImprovement": frozenset({"4441"}),
}


@dataclass
class PipelineConfig:
    # Entrées
    pings_path: str = "data/pings.csv"
    poi_path: str = "data/pois.csv"
    footprints_path: str = "data/footprints.geojson"
    cbg_path: str = "data/cbgs.geojson"
    income_path: Optional[str] = "data/income.csv"
    out_dir: str = "out"

    # Fenêtres d'étude (dates locales, bornes incluses)
    baseline_start: date = date(2017, 8, 1)
    baseline_end: date = date(2017, 8, 14)
    prep_start: date = date(2017, 8, 20)
    landfall_date: date = date(2017, 8, 25)
    evac_base_start: date = date(2017, 7, 9)
    evac_base_end: date = date(2017, 8, 5)
    evac_lookahead_h: int = 24

    # Seuils
    stop_radius_m: float = 100.0
    stop_max_gap_s: int = 1800
    stop_min_dwell_s: int = 300
    visit_min_dwell_s: int = 300
    poi_match_radius_m: float = 50.0
    point_poi_radius_m: float = 50.0
    min_daily_visits: int = 5
    income_groups: int = 3

    categories: Dict[str, FrozenSet[str]] = field(default_factory=lambda: dict(DEFAULT_CATEGORY_PREFIXES))

    # Exécution
    timezone: str = os.getenv("PREPTRACE_TIMEZONE", "America/Chicago")
    lenient: bool = False
    workers: int = int(os.getenv("PREPTRACE_WORKERS", "1"))
    progress_enabled: bool = os.getenv("PREPTRACE_PROGRESS", "0") == "1"
    log_level: str = os.getenv("PREPTRACE_LOG_LEVEL", "INFO")

    @property
    def baseline_range(self) -> DateRange:
        return DateRange(self.baseline_start, self.baseline_end)

    @property
    def prep_range(self) -> DateRange:
        return DateRange(self.prep_start, self.landfall_date)

    @property
    def evac_base_range(self) -> DateRange:
        return DateRange(self.evac_base_start, self.evac_base_end)

    def evac_prep_window(self) -> TimeWindow:
        """Période de préparation prolongée pour laisser une absence de plus de 24 h se terminer"""
        return self.prep_range.to_window(self.timezone, extra_hours=self.evac_lookahead_h)

    def evac_base_window(self) -> TimeWindow:
        return self.evac_base_range.to_window(self.timezone)

    def study_window(self) -> TimeWindow:
        """Enveloppe de toutes les fenêtres: filtre de chargement des pings"""
        first = min(self.baseline_start, self.evac_base_start, self.prep_start)
        prep = self.evac_prep_window()
        base = DateRange(first, self.landfall_date).to_window(self.timezone)
        return TimeWindow(base.start, max(base.end, prep.end))

    def validate(self) -> "PipelineConfig":
        """Vérifie la cohérence de la configuration; lève ConfigError"""
        if self.baseline_start > self.baseline_end:
            raise ConfigError("baseline_start doit précéder baseline_end")
        if self.baseline_end >= self.prep_start:
            raise ConfigError("La période de référence doit précéder la période de préparation")
        if self.landfall_date < self.prep_start:
            raise ConfigError("landfall_date doit être dans ou à la fin de la période de préparation")
        if self.evac_base_start > self.evac_base_end:
            raise ConfigError("evac_base_start doit précéder evac_base_end")
        if self.evac_base_end >= self.prep_start:
            raise ConfigError("La référence d'évacuation doit précéder la période de préparation")
        positives = {
            "stop_radius_m": self.stop_radius_m,
            "stop_max_gap_s": self.stop_max_gap_s,
            "stop_min_dwell_s": self.stop_min_dwell_s,
            "visit_min_dwell_s": self.visit_min_dwell_s,
            "poi_match_radius_m": self.poi_match_radius_m,
            "point_poi_radius_m": self.point_poi_radius_m,
            "min_daily_visits": self.min_daily_visits,
            "workers": self.workers,
        }
        for name, value in positives.items():
            if value is None or value <= 0:
                raise ConfigError(f"{name} doit être strictement positif (reçu {value})")
        if self.evac_lookahead_h < 0:
            raise ConfigError("evac_lookahead_h ne peut pas être négatif")
        if self.income_groups < 2:
            raise ConfigError("income_groups doit valoir au moins 2")
        if str(self.log_level).upper() not in LOG_LEVELS:
            raise ConfigError(f"Niveau de log inconnu: {self.log_level}")
        try:
            ZoneInfo(self.timezone)
        except (ZoneInfoNotFoundError, ValueError):
            raise ConfigError(f"Fuseau horaire inconnu: {self.timezone}")
        self._validate_categories()
        return self

    def _validate_categories(self):
        seen: Dict[str, str] = {}
        for category, prefixes in self.categories.items():
            if category not in DEFAULT_CATEGORY_PREFIXES:
                raise ConfigError(f"Catégorie inconnue: {category}")
            if not prefixes:
                raise ConfigError(f"Aucun préfixe NAICS pour {category}")
            for prefix in prefixes:
                if len(prefix) != 4 or not prefix.isdigit():
                    raise ConfigError(f"Préfixe NAICS invalide pour {category}: {prefix!r}")
                if prefix in seen:
                    raise ConfigError(f"Préfixe {prefix} partagé par {seen[prefix]} et {category}")
                seen[prefix] = category

    def to_dict(self) -> Dict:
        data = asdict(self)
        data["categories"] = {k: sorted(v) for k, v in sorted(self.categories.items())}
        for key, value in data.items():
            if isinstance(value, date):
                data[key] = value.isoformat()
        return data

    def config_hash(self) -> str:
        """Empreinte SHA-256 de la forme JSON canonique (hors paramètres d'exécution)"""
        data = self.to_dict()
        for volatile in ("workers", "progress_enabled", "log_level", "out_dir"):
            data.pop(volatile, None)
        payload = json.dumps(data, sort_keys=True, ensure_ascii=False)
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()


_SECTION_KEYS = {
    "paths": ("pings_path", "poi_path", "footprints_path", "cbg_path", "income_path", "out_dir"),
    "windows": ("baseline_start", "baseline_end", "prep_start", "landfall_date",
                "evac_base_start", "evac_base_end", "evac_lookahead_h"),
    "thresholds": ("stop_radius_m", "stop_max_gap_s", "stop_min_dwell_s", "visit_min_dwell_s",
                   "poi_match_radius_m", "point_poi_radius_m", "min_daily_visits", "income_groups"),
    "runtime": ("timezone", "lenient", "workers", "progress_enabled", "log_level"),
}

# Sections lues par modules.synth
SCENARIO_SECTIONS = ("scenario", "rates")
SCENARIO_GROUP_PREFIX = "group:"


def read_config_file(path: Union[str, Path]) -> configparser.ConfigParser:
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"Fichier de configuration introuvable: {path}")
    try:
        with open(path, "r", encoding="utf-8") as f:
            parser.read_file(f)
    except configparser.Error as e:
        raise ConfigError(f"Fichier de configuration illisible: {e}")
    return parser


def _coerce(name: str, raw: str, default):
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            if raw.lower() in ("1", "true", "yes", "on"):
                return True
            if raw.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if isinstance(default, date):
            return parse_date(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
    except ValueError:
        raise ConfigError(f"Valeur invalide pour {name}: {raw!r}")
    if name == "income_path" and raw == "":
        return None
    return raw


def load_config(path: Union[str, Path]) -> PipelineConfig:
    """Charge et valide un fichier INI de configuration du pipeline"""
    parser = read_config_file(path)
    cfg = PipelineConfig()
    base_dir = Path(path).resolve().parent

    for section, keys in _SECTION_KEYS.items():
        if not parser.has_section(section):
            continue
        for name, raw in parser.items(section):
            if name not in keys:
                raise ConfigError(f"Clé inconnue [{section}] {name}")
            value = _coerce(name, raw, getattr(cfg, name))
            if section == "paths" and value is not None and not Path(value).is_absolute():
                value = str(base_dir / value)
            setattr(cfg, name, value)

    if parser.has_section("categories"):
        categories = {}
        for name, raw in parser.items("categories"):
            categories[name] = frozenset(p.strip() for p in raw.split(",") if p.strip())
        cfg.categories = categories

    known = set(_SECTION_KEYS) | {"categories", *SCENARIO_SECTIONS}
    for section in parser.sections():
        if section not in known and not section.startswith(SCENARIO_GROUP_PREFIX):
            raise ConfigError(f"Section inconnue: [{section}]")

    return cfg.validate()


config = PipelineConfig()
