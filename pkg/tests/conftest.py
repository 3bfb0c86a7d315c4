# tests/conftest.py
from pathlib import Path
from typing import Dict, Iterable, Sequence, Tuple

import geopandas as gpd
import pandas as pd
import pytest
from shapely.geometry import box

from app import main
from core.geo import GeoPolygon
from core.ingest import CbgRecord

DEFAULT_PATHS = {
    "pings_path": "inputs/pings.csv",
    "poi_path": "inputs/pois.csv",
    "footprints_path": "inputs/footprints.geojson",
    "cbg_path": "inputs/cbgs.geojson",
    "income_path": "inputs/income.csv",
    "out_dir": "out",
}

SHORT_WINDOWS = {
    "baseline_start": "2017-08-08",
    "baseline_end": "2017-08-14",
    "prep_start": "2017-08-20",
    "landfall_date": "2017-08-25",
    "evac_base_start": "2017-08-10",
    "evac_base_end": "2017-08-14",
}


def square(x0: float, y0: float, size: float = 1.0) -> GeoPolygon:
    return GeoPolygon(((x0, y0), (x0 + size, y0), (x0 + size, y0 + size), (x0, y0 + size)))


def cbg(geoid: str, x0: float, y0: float, size: float = 1.0, income=None) -> CbgRecord:
    return CbgRecord(geoid=geoid, boundary=square(x0, y0, size), median_income=income)


def write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    lines = [",".join(header)] + [",".join(str(v) for v in row) for row in rows]
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def write_boxes(path: Path, boxes: Sequence[Tuple[float, float, float, float]], **properties) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    gdf = gpd.GeoDataFrame(dict(properties), geometry=[box(*b) for b in boxes], crs="EPSG:4326")
    gdf.to_file(path, driver="GeoJSON")
    return path


def write_config(path: Path, sections: Dict[str, Dict[str, object]]) -> Path:
    text = []
    for name, values in sections.items():
        text.append(f"[{name}]")
        text.extend(f"{key} = {value}" for key, value in values.items())
        text.append("")
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(text), encoding="utf-8")
    return path


def scenario_config(path: Path, scenario: Dict, rates: Dict, groups: Dict[str, Dict] = None,
                    windows: Dict = None, paths: Dict = None, runtime: Dict = None) -> Path:
    sections = {
        "paths": {**DEFAULT_PATHS, **(paths or {})},
        "windows": windows or SHORT_WINDOWS,
        "runtime": {"workers": 1, **(runtime or {})},
        "scenario": scenario,
        "rates": rates,
    }
    for name, values in (groups or {}).items():
        sections[f"group:{name}"] = values
    return write_config(path, sections)


def read_out(out_dir: Path, name: str, **kwargs) -> pd.DataFrame:
    return pd.read_csv(out_dir / name, dtype={"cbg": str, "tract": str, "device_id": str, "home_cbg": str,
                                              "geoid": str}, **kwargs)


@pytest.fixture
def unit_square() -> GeoPolygon:
    return square(0.0, 0.0)


@pytest.fixture(scope="session")
def tiny_run(tmp_path_factory):
    """Petit scénario complet: synth puis all, réutilisé par plusieurs tests"""
    root = tmp_path_factory.mktemp("tiny")
    config_path = scenario_config(
        root / "tiny.ini",
        scenario={"n_cbgs": 6, "agents_per_cbg": 20, "seed": 11, "cbgs_per_tract": 3,
                  "baseline_away_fraction": 0.2},
        rates={"Grocery": 0.6, "Pharmacy": 0.4, "GasStation": 0.5, "HomeImprovement": 0.3},
        groups={"coast": {"cells": "0-2", "evac_fraction": 0.5, "surge.Grocery": "2.0 2017-08-23"},
                "inland": {"evac_fraction": 0.25, "surge.GasStation": "1.5 2017-08-24"}},
    )
    assert main(["synth", "--config", str(config_path), "--out", str(root / "synth_out")]) == 0
    assert main(["all", "--config", str(config_path)]) == 0
    return config_path, root / "out"
