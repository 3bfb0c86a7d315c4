# modules/pipeline.py
"""Orchestration des étapes: chaque étape relit les artefacts de la précédente."""
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import pandas as pd
from joblib import Parallel, delayed
from loguru import logger
from tqdm import tqdm

from config import PipelineConfig
from core.errors import InsufficientData, ValidationError
from core.ingest import CbgRecord, LoadReport, build_poi_registry, iter_device_pings, load_cbgs, load_pings
from core.output_writer import OutputWriter
from modules import evacuation, metrics, stats, synth
from modules.trajectory import (Stop, assign_stop_cbgs, cbg_index, detect_evacuation, detect_stops, infer_home,
                                observed_in, stops_from_frame, stops_to_frame)
from modules.visits import PoiMatcher, aggregate_daily, aggregate_visit_table, build_category_map, events_to_frame
from utils.time_windows import TimeWindow

STAGES = ("homes", "visits", "metrics", "evac", "classify", "correlate")
COMMANDS = ("synth",) + STAGES + ("all",)

# Appareils par lot envoyé à un worker
CHUNK_SIZE = 250

HOME_COLUMNS = ["device_id", "home_cbg", "home_dwell_s"]


def _process_devices(chunk: Sequence[Tuple[str, pd.DataFrame]], cbgs: Sequence[CbgRecord],
                     cfg: PipelineConfig, home_window: TimeWindow) -> List[Tuple[str, List[Stop], Optional[str], int]]:
    """Arrêts et résidence d'un lot d'appareils"""
    index = cbg_index(cbgs)
    results = []
    for device_id, pings in chunk:
        stops = detect_stops(pings, cfg.stop_radius_m, cfg.stop_max_gap_s, cfg.stop_min_dwell_s)
        stops = assign_stop_cbgs(stops, index)
        home = infer_home(stops, home_window, device_id)
        dwell = home.total_dwell_by_cbg.get(home.home_cbg, 0) if home.home_cbg else 0
        results.append((device_id, stops, home.home_cbg, dwell))
    return results


class PreparednessPipeline:
    """Pipeline de préparation: résidences → visites → indicateurs → évacuation → quadrants"""

    def __init__(self, cfg: PipelineConfig):
        self.cfg = cfg
        self.writer = OutputWriter(cfg.out_dir)
        self.report = LoadReport()
        self.counters: Dict[str, int] = {}
        self._cbgs: Optional[List[CbgRecord]] = None

    def run(self, command: str, config_path: Optional[str] = None, seed: Optional[int] = None):
        if command not in COMMANDS:
            raise ValueError(f"Commande inconnue: {command}")
        logger.info(f"Exécution '{command}' (configuration {self.cfg.config_hash()[:12]})")
        if command == "synth":
            self.synth(config_path, seed)
        else:
            for stage in (STAGES if command == "all" else (command,)):
                logger.info(f"Étape {stage}")
                getattr(self, f"stage_{stage}")()
        counters = {**self.report.as_dict(), **self.counters}
        self.writer.write_manifest(command, self.cfg.config_hash(), counters)
        return self.writer

    # Chargements

    def cbgs(self) -> List[CbgRecord]:
        if self._cbgs is None:
            self._cbgs = load_cbgs(self.cfg.cbg_path, self.cfg.income_path, self.cfg.lenient, self.report)
            self.writer.record_input("cbgs", self.cfg.cbg_path)
            self.writer.record_input("income", self.cfg.income_path)
        return self._cbgs

    def _read_dump(self, name: str, dtype: Dict[str, type]) -> pd.DataFrame:
        path = self.writer.path(name)
        if not path.exists():
            logger.error(f"Artefact manquant: {path} (exécuter l'étape précédente)")
            raise FileNotFoundError(path)
        return pd.read_csv(path, dtype=dtype, float_precision="round_trip")

    def _stops(self) -> Dict[str, List[Stop]]:
        return stops_from_frame(self._read_dump("stops.csv", {"device_id": str, "cbg_geoid": str}))

    def _homes(self) -> Dict[str, Optional[str]]:
        frame = self._read_dump("homes.csv", {"device_id": str, "home_cbg": str})
        return {d: (None if pd.isna(h) or h == "" else h) for d, h in zip(frame["device_id"], frame["home_cbg"])}

    def _daily(self) -> pd.DataFrame:
        frame = self._read_dump("daily_counts.csv", {"cbg": str, "category": str})
        frame["date"] = pd.to_datetime(frame["date"]).dt.date
        return frame

    def _records(self) -> List[metrics.PreparednessRecord]:
        return metrics.records_from_frame(self._read_dump("preparedness.csv", {"cbg": str, "category": str}))

    # Étapes

    def stage_homes(self):
        cfg = self.cfg
        pings = load_pings(cfg.pings_path, cfg.study_window(), cfg.lenient, self.report)
        self.writer.record_input("pings", cfg.pings_path)
        cbgs = self.cbgs()
        home_window = cfg.baseline_range.to_window(cfg.timezone)

        devices = list(iter_device_pings(pings))
        chunks = [devices[i:i + CHUNK_SIZE] for i in range(0, len(devices), CHUNK_SIZE)]
        if cfg.progress_enabled:
            chunks = tqdm(chunks, desc="Arrêts et résidences", unit="lot")
        results = Parallel(n_jobs=cfg.workers)(
            delayed(_process_devices)(chunk, cbgs, cfg, home_window) for chunk in chunks
        )

        all_stops: List[Stop] = []
        home_rows = []
        for batch in results:
            for device_id, stops, home, dwell in batch:
                all_stops.extend(stops)
                home_rows.append((device_id, home or "", dwell))
        homeless = sum(1 for _, home, _ in home_rows if not home)
        self.counters["devices"] = len(home_rows)
        self.counters["devices_without_home"] = homeless
        if homeless:
            logger.warning(f"{homeless} appareils sans CBG de résidence (moins d'un jour cumulé)")
        self.writer.write_csv("stops.csv", stops_to_frame(all_stops))
        self.writer.write_csv("homes.csv", pd.DataFrame(home_rows, columns=HOME_COLUMNS))

    def stage_visits(self):
        cfg = self.cfg
        by_device = self._stops()
        homes = self._homes()
        registry = build_poi_registry(cfg.poi_path, cfg.footprints_path, cfg.poi_match_radius_m,
                                      cfg.lenient, self.report)
        self.writer.record_input("pois", cfg.poi_path)
        self.writer.record_input("footprints", cfg.footprints_path)

        matcher = PoiMatcher(registry, cfg.visit_min_dwell_s, cfg.point_poi_radius_m,
                             build_category_map(cfg.categories))
        stops = [s for device_id in sorted(by_device) for s in by_device[device_id]]
        events = events_to_frame(matcher.events(stops))
        logger.info(f"{len(events)} visites attribuées sur {len(stops)} arrêts")

        dates = sorted(set(cfg.baseline_range.dates()) | set(cfg.prep_range.dates()))
        table, dropped = aggregate_visit_table(events, homes, cfg.timezone, dates)
        daily, _ = aggregate_daily(events, homes, cfg.timezone, dates)
        self.counters["visits_without_home"] = dropped
        self.writer.write_csv("visits.csv", table)
        self.writer.write_csv("daily_counts.csv", daily)

    def stage_metrics(self):
        cfg = self.cfg
        daily = self._daily()
        baselines = metrics.build_baseline(daily, cfg.min_daily_visits, cfg.baseline_range)
        series = metrics.change_series(daily, baselines, cfg.prep_range.dates())
        records = metrics.compute_preparedness(series, cfg.landfall_date)
        self.counters["preparedness_records"] = len(records)

        self.writer.write_csv("baselines.csv", metrics.baselines_to_frame(baselines))
        self.writer.write_csv("changes.csv", metrics.changes_to_frame(series))
        self.writer.write_csv("preparedness.csv", metrics.records_to_frame(records))
        self.writer.write_csv("extent_classes.csv", metrics.class_proportions(records))
        self.writer.write_csv("proactivity_distribution.csv",
                              metrics.proactivity_distribution(records, cfg.prep_range.n_days))
        self.writer.write_csv("proactivity_summary.csv", metrics.proactivity_summary(records))

    def stage_evac(self):
        cfg = self.cfg
        by_device = self._stops()
        homes = self._homes()
        tracts = sorted({evacuation.tract_of(c.geoid) for c in self.cbgs()})
        windows = {
            evacuation.BASE_WINDOW: cfg.evac_base_window(),
            evacuation.PREP_WINDOW: cfg.evac_prep_window(),
        }

        flags = {}
        rates = {}
        for label, window in windows.items():
            flags[label] = [
                detect_evacuation(stops, homes[device_id], window, device_id)
                for device_id, stops in sorted(by_device.items())
                if homes.get(device_id) is not None and observed_in(stops, window)
            ]
            rates[label] = evacuation.evac_rate(flags[label], homes, label, tracts)
            logger.info(f"[{label}] {sum(f.evacuated for f in flags[label])} évacués sur {len(flags[label])} appareils")
        changes = evacuation.evac_changes(rates[evacuation.PREP_WINDOW], rates[evacuation.BASE_WINDOW])
        self.counters["tracts_excluded"] = sum(1 for _, _, c in changes.values() if c is None)

        self.writer.write_csv("evac_flags.csv", evacuation.flags_to_frame(flags))
        self.writer.write_csv("evac_rates.csv", evacuation.rates_to_frame(rates[evacuation.BASE_WINDOW]
                                                                          + rates[evacuation.PREP_WINDOW]))
        self.writer.write_csv("evac_change.csv", evacuation.changes_to_frame(changes))

    def stage_classify(self):
        records = self._records()
        tract_changes = evacuation.tract_changes_from_frame(self._read_dump("evac_change.csv", {"tract": str}))
        assignments = evacuation.classify_quadrants(tract_changes, records)
        hot = evacuation.hotspots(assignments, self.cfg.categories.keys())
        logger.info(f"{len(hot)} CBG en zone de vulnérabilité (Low/Low dans toutes les catégories)")
        cbgs = self.cbgs()

        self.writer.write_csv("quadrants.csv", evacuation.assignments_to_frame(assignments))
        self.writer.write_csv("quadrant_counts.csv", evacuation.quadrant_counts(assignments))
        self.writer.write_csv("hotspots.csv", pd.DataFrame({"cbg": sorted(hot)}))
        self.writer.write_geojson("quadrants.geojson", evacuation.quadrant_features(cbgs, assignments, hot))

        incomes = {c.geoid: c.median_income for c in cbgs}
        if not any(v is not None for v in incomes.values()):
            logger.warning("Aucun revenu médian disponible: stratification par revenu ignorée")
            return
        try:
            strata = metrics.stratify_by_income(records, incomes, self.cfg.income_groups)
        except InsufficientData as e:
            logger.warning(f"Stratification par revenu ignorée: {e}")
            return
        self.writer.write_csv("income_strata.csv", strata)

    def stage_correlate(self):
        results = stats.correlate_extent_proactivity(self._records())
        self.writer.write_csv("correlation.csv", stats.correlations_to_frame(results))

    def synth(self, config_path: Optional[str], seed: Optional[int] = None):
        if config_path is None:
            raise ValidationError("La commande synth exige --config avec une section [scenario]")
        scenario = synth.load_scenario(config_path, seed)
        truth = synth.generate(scenario, self.cfg, self.cfg.workers, self.cfg.progress_enabled)
        self.counters["agents"] = len(truth.homes)
        for role, path in (("pings", self.cfg.pings_path), ("pois", self.cfg.poi_path),
                           ("footprints", self.cfg.footprints_path), ("cbgs", self.cfg.cbg_path),
                           ("income", self.cfg.income_path)):
            self.writer.record_file(role, path)
        self.writer.record_file("ground_truth.json", self.writer.path("ground_truth.json"), len(truth.homes))
