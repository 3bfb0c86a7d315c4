# tests/test_synth.py
import json
from dataclasses import replace
from datetime import date

import pandas as pd
import pytest

from config import PipelineConfig
from core.errors import ConfigError
from core.ingest import LoadReport, build_poi_registry, load_cbgs, load_pings
from modules.synth import DAY_END_S, DAY_START_S, CbgGroup, ScenarioConfig, generate, load_scenario
from conftest import SHORT_WINDOWS, scenario_config


def short_config(root, **overrides) -> PipelineConfig:
    windows = {key: date.fromisoformat(value) for key, value in SHORT_WINDOWS.items()}
    return replace(
        PipelineConfig(),
        pings_path=str(root / "pings.csv"),
        poi_path=str(root / "pois.csv"),
        footprints_path=str(root / "footprints.geojson"),
        cbg_path=str(root / "cbgs.geojson"),
        income_path=str(root / "income.csv"),
        out_dir=str(root / "out"),
        **windows,
        **overrides,
    ).validate()


def small_scenario(**overrides) -> ScenarioConfig:
    values = dict(
        n_cbgs=4, agents_per_cbg=5, seed=3, cbgs_per_tract=2, baseline_away_fraction=0.2,
        groups=[CbgGroup("coast", [0, 1], 0.4, {"Grocery": (2.0, date(2017, 8, 22))})],
    )
    values.update(overrides)
    return ScenarioConfig(**values)


GENERATED = ("pings.csv", "pois.csv", "footprints.geojson", "cbgs.geojson", "income.csv", "out/ground_truth.json")


def test_geoids_follow_tract_numbering():
    scenario = ScenarioConfig(n_cbgs=8, cbgs_per_tract=4)
    assert scenario.geoid(0) == "482010000011"
    assert scenario.geoid(5) == "482010000022"
    assert scenario.cols == 3


def test_group_of_assigns_remaining_cells_to_default_group():
    scenario = ScenarioConfig(n_cbgs=4, groups=[CbgGroup("a", [0, 2]), CbgGroup("rest")])
    assert [g.name for _, g in sorted(scenario.group_of().items())] == ["a", "rest", "a", "rest"]


@pytest.mark.parametrize("groups", [
    [CbgGroup("a", [0]), CbgGroup("b", [0])],
    [CbgGroup("a"), CbgGroup("b")],
    [CbgGroup("a", [7])],
])
def test_group_of_rejects_inconsistent_groups(groups):
    with pytest.raises(ConfigError):
        ScenarioConfig(n_cbgs=4, groups=groups).group_of()


@pytest.mark.parametrize("overrides", [
    {"groups": [CbgGroup("a", [0], 0.1, {"Grocery": (-1.0, date(2017, 8, 22))})]},
    {"groups": [CbgGroup("a", [0], 1.5)]},
    {"ping_interval_s": 3600},
    {"visit_duration_s": 120},
    {"base_visit_rate": {"Bakery": 1.0}},
    {"n_cbgs": 1},
])
def test_invalid_scenarios(tmp_path, overrides):
    with pytest.raises(ConfigError):
        small_scenario(**overrides).validate(short_config(tmp_path))


def test_load_scenario_reads_groups(tmp_path):
    path = scenario_config(
        tmp_path / "scenario.ini",
        scenario={"n_cbgs": 9, "agents_per_cbg": 10, "seed": 4},
        rates={"Grocery": 0.8},
        groups={"coast": {"cells": "0-2, 5", "evac_fraction": 0.3, "surge.Grocery": "2.0 2017-08-22"}},
    )
    scenario = load_scenario(path, seed=99)
    assert scenario.seed == 99
    assert scenario.base_visit_rate == {"Grocery": 0.8}
    group = scenario.groups[0]
    assert (group.name, group.cells, group.evac_fraction) == ("coast", [0, 1, 2, 5], 0.3)
    assert group.surge == {"Grocery": (2.0, date(2017, 8, 22))}


def test_load_scenario_rejects_unknown_key(tmp_path):
    path = scenario_config(tmp_path / "scenario.ini", scenario={"n_cbgs": 4, "colour": "blue"}, rates={})
    with pytest.raises(ConfigError):
        load_scenario(path)


def test_same_seed_gives_identical_files(tmp_path):
    first, second = tmp_path / "first", tmp_path / "second"
    generate(small_scenario(), short_config(first))
    generate(small_scenario(), short_config(second), workers=2)
    for name in GENERATED:
        assert (first / name).read_bytes() == (second / name).read_bytes(), name


def test_different_seed_changes_pings(tmp_path):
    generate(small_scenario(), short_config(tmp_path / "a"))
    generate(small_scenario(seed=4), short_config(tmp_path / "b"))
    assert (tmp_path / "a" / "pings.csv").read_bytes() != (tmp_path / "b" / "pings.csv").read_bytes()


def test_generated_files_load_cleanly(tmp_path):
    cfg = short_config(tmp_path)
    scenario = small_scenario()
    truth = generate(scenario, cfg)

    report = LoadReport()
    pings = load_pings(cfg.pings_path, cfg.study_window(), lenient=True, report=report)
    registry = build_poi_registry(cfg.poi_path, cfg.footprints_path, cfg.poi_match_radius_m, True, report)
    cbgs = load_cbgs(cfg.cbg_path, cfg.income_path, True, report)
    assert report.skipped_rows == 0
    assert report.skipped_features == 0
    assert report.dropped_outside_window == 0
    assert report.duplicate_pings == 0
    # seul le restaurant de chaque cellule n'a pas d'emprise
    assert report.unmatched_pois == scenario.n_cbgs
    assert len(registry) == 5 * scenario.n_cbgs
    assert all(c.median_income is not None for c in cbgs)
    assert set(pings["device_id"]) == set(truth.homes)


def test_ground_truth(tmp_path):
    cfg = short_config(tmp_path)
    truth = generate(small_scenario(), cfg)
    assert len(truth.homes) == 20
    assert truth.homes["d0002-00000"] == "482010000021"
    # round(0.4 × 5) = 2 évacués par cellule côtière
    assert truth.evac_fraction["482010000011"] == pytest.approx(0.4)
    assert truth.evac_fraction["482010000021"] == 0.0
    assert len(truth.evacuees) == 4
    assert len(truth.travellers) == 4
    coast = truth.expected["482010000011"]
    assert coast["Grocery"] == {"multiplier": 2.0, "surge_day": "2017-08-22", "expected_extent": 1.0}
    assert coast["Pharmacy"]["expected_extent"] == 0.0
    saved = json.loads((tmp_path / "out" / "ground_truth.json").read_text(encoding="utf-8"))
    assert saved["homes"] == truth.homes


def test_expected_extent_is_multiplier_minus_one_below_one(tmp_path):
    scenario = small_scenario(groups=[CbgGroup("coast", [0, 1], 0.0, {"Grocery": (0.5, date(2017, 8, 22))})])
    truth = generate(scenario, short_config(tmp_path))
    coast = truth.expected["482010000011"]["Grocery"]
    assert coast == {"multiplier": 0.5, "surge_day": "2017-08-22", "expected_extent": -0.5}


def test_visit_pings_follow_ping_interval(tmp_path):
    cfg = short_config(tmp_path)
    scenario = small_scenario()
    generate(scenario, cfg)
    pings = load_pings(cfg.pings_path, cfg.study_window())
    local = pd.to_datetime(pings["ts"], unit="s", utc=True).dt.tz_convert(cfg.timezone)
    seconds = local.dt.hour * 3600 + local.dt.minute * 60 + local.dt.second
    day = pings[(seconds >= DAY_START_S) & (seconds <= DAY_END_S)]
    assert not day.empty
    # 900 s de visite: pings à 0, 600 et 900 s
    assert (day.groupby("device_id").size() % 3 == 0).all()
    gaps = set(day.groupby("device_id")["ts"].diff().dropna().astype(int))
    assert scenario.ping_interval_s in gaps
    assert min(gaps) == 300
