# modules/metrics.py
"""Références hebdomadaires, variations en pourcentage et indicateurs de préparation."""
from dataclasses import dataclass, field
from datetime import date
from enum import Enum
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from loguru import logger

from core.errors import InsufficientData
from utils.time_windows import DateRange, parse_date

Key = Tuple[str, str]

BASELINE_COLUMNS = ["cbg", "category", "weekday", "baseline"]
CHANGE_COLUMNS = ["cbg", "category", "date", "change"]
PREPAREDNESS_COLUMNS = ["cbg", "category", "extent", "peak_date", "proactivity", "class"]
STRATA_COLUMNS = ["group", "category", "count", "mean", "q1", "median", "q3", "min_income", "max_income"]


class PrepClass(str, Enum):
    UNDER = "UnderPrepared"
    MODERATE = "ModeratelyPrepared"
    HIGH = "HighlyPrepared"


@dataclass(frozen=True)
class BaselineProfile:
    cbg: str
    category: str
    # 0 = lundi ... 6 = dimanche; None = référence indéfinie
    weekday_baseline: Dict[int, Optional[float]] = field(default_factory=dict)

    def for_date(self, d: date) -> Optional[float]:
        return self.weekday_baseline.get(d.weekday())


@dataclass(frozen=True)
class VisitChangeSeries:
    cbg: str
    category: str
    changes: Dict[date, float] = field(default_factory=dict)


@dataclass(frozen=True)
class PreparednessRecord:
    cbg: str
    category: str
    extent: float
    peak_date: date
    proactivity: int
    prep_class: PrepClass


def _weekdays(dates: pd.Series) -> pd.Series:
    return dates.map(lambda d: d.weekday())


def build_baseline(daily: pd.DataFrame, min_daily_visits: int = 5,
                   window: Optional[DateRange] = None) -> Dict[Key, BaselineProfile]:
    """Référence par jour de semaine: moyenne des comptes ≥ min_daily_visits.

    Un jour sous le seuil est écarté individuellement; un jour de semaine sans
    aucun compte retenu reste indéfini.
    """
    frame = daily
    if window is not None:
        frame = frame[frame["date"].map(lambda d: d in window).astype(bool)]
    keys = sorted(set(zip(frame["cbg"], frame["category"])))
    kept = frame[frame["visits"] >= min_daily_visits]
    means = kept.groupby([kept["cbg"], kept["category"], _weekdays(kept["date"]).rename("weekday")])["visits"].mean()

    profiles: Dict[Key, BaselineProfile] = {key: BaselineProfile(key[0], key[1], {w: None for w in range(7)})
                                            for key in keys}
    for (cbg, category, weekday), value in means.items():
        profiles[(cbg, category)].weekday_baseline[int(weekday)] = float(value)
    undefined = sum(1 for p in profiles.values() for v in p.weekday_baseline.values() if v is None)
    if undefined:
        logger.info(f"{undefined} références (CBG, catégorie, jour) indéfinies sous le seuil de {min_daily_visits} visites")
    return profiles


def percentage_change(observed: int, baseline: float) -> float:
    """(E - B) / B"""
    if baseline is None or baseline <= 0:
        raise ValueError(f"Référence non positive: {baseline}")
    return (observed - baseline) / baseline


def change_series(daily: pd.DataFrame, baselines: Mapping[Key, BaselineProfile],
                  prep_dates: Iterable[date]) -> List[VisitChangeSeries]:
    """Variations quotidiennes sur la période de préparation; cellules sans référence omises"""
    prep_dates = set(prep_dates)
    frame = daily[daily["date"].isin(prep_dates)]
    keys = sorted(set(zip(frame["cbg"], frame["category"])))
    series = {key: VisitChangeSeries(key[0], key[1], {}) for key in keys}
    skipped = 0
    for cbg, category, d, visits in zip(frame["cbg"], frame["category"], frame["date"], frame["visits"]):
        profile = baselines.get((cbg, category))
        baseline = profile.for_date(d) if profile is not None else None
        if baseline is None:
            skipped += 1
            continue
        series[(cbg, category)].changes[d] = percentage_change(int(visits), baseline)
    if skipped:
        logger.warning(f"{skipped} cellules (CBG, catégorie, date) sans référence ignorées")
    return [series[key] for key in keys]


def classify_extent(extent: float) -> PrepClass:
    """< 0 sous-préparé; [0, 1] modérément; > 1 fortement"""
    if extent < 0:
        return PrepClass.UNDER
    if extent <= 1:
        return PrepClass.MODERATE
    return PrepClass.HIGH


def preparedness_metrics(series: VisitChangeSeries, landfall: date) -> Optional[PreparednessRecord]:
    """Ampleur (variation maximale), date du pic la plus précoce et proactivité en jours"""
    if not series.changes:
        return None
    extent = max(series.changes.values())
    peak = min(d for d, value in series.changes.items() if value == extent)
    return PreparednessRecord(
        cbg=series.cbg,
        category=series.category,
        extent=extent,
        peak_date=peak,
        proactivity=(landfall - peak).days,
        prep_class=classify_extent(extent),
    )


def compute_preparedness(series_list: Sequence[VisitChangeSeries], landfall: date) -> List[PreparednessRecord]:
    records = []
    excluded = 0
    for series in series_list:
        record = preparedness_metrics(series, landfall)
        if record is None:
            excluded += 1
        else:
            records.append(record)
    if excluded:
        logger.warning(f"{excluded} couples (CBG, catégorie) exclus faute de référence")
    logger.info(f"Indicateurs de préparation: {len(records)} couples (CBG, catégorie)")
    return records


def _income_labels(n_groups: int) -> List[str]:
    if n_groups == 3:
        return ["low", "medium", "high"]
    return [f"Q{i + 1}" for i in range(n_groups)]


def income_groups(incomes: Mapping[str, Optional[float]], n_groups: int = 3) -> Dict[str, str]:
    """Répartit les CBG renseignés en n_groups classes de quantiles (bord inférieur inclus à gauche)"""
    if n_groups < 2:
        raise ValueError("n_groups doit valoir au moins 2")
    known = sorted((g, float(v)) for g, v in incomes.items() if v is not None and not pd.isna(v))
    if len(known) < n_groups:
        raise InsufficientData(f"{len(known)} CBG avec revenu pour {n_groups} groupes")
    values = np.array([v for _, v in known])
    edges = np.quantile(values, np.linspace(0.0, 1.0, n_groups + 1))
    bins = np.searchsorted(edges[1:-1], values, side="left")
    labels = _income_labels(n_groups)
    groups = {g: labels[int(b)] for (g, _), b in zip(known, bins)}
    counts = pd.Series(list(groups.values())).value_counts()
    empty = [label for label in labels if counts.get(label, 0) == 0]
    if empty:
        logger.warning(f"Groupes de revenu vides (quantiles confondus): {', '.join(empty)}")
    return groups


def stratify_by_income(records: Sequence[PreparednessRecord], incomes: Mapping[str, Optional[float]],
                       n_groups: int = 3) -> pd.DataFrame:
    """Distribution de l'ampleur par groupe de revenu et catégorie"""
    groups = income_groups(incomes, n_groups)
    frame = records_to_frame(records)
    frame = frame[frame["cbg"].isin(groups)].copy()
    frame["group"] = frame["cbg"].map(groups)
    frame["income"] = frame["cbg"].map(lambda g: float(incomes[g]))

    categories = sorted(set(frame["category"]) | {r.category for r in records})
    rows = []
    for label in _income_labels(n_groups):
        for category in categories:
            part = frame[(frame["group"] == label) & (frame["category"] == category)]
            extents = part["extent"].astype(float)
            rows.append({
                "group": label,
                "category": category,
                "count": len(part),
                "mean": extents.mean() if len(part) else np.nan,
                "q1": extents.quantile(0.25) if len(part) else np.nan,
                "median": extents.median() if len(part) else np.nan,
                "q3": extents.quantile(0.75) if len(part) else np.nan,
                "min_income": part["income"].min() if len(part) else np.nan,
                "max_income": part["income"].max() if len(part) else np.nan,
            })
    return pd.DataFrame(rows, columns=STRATA_COLUMNS)


def class_proportions(records: Sequence[PreparednessRecord]) -> pd.DataFrame:
    frame = records_to_frame(records)
    rows = []
    for category in sorted(set(frame["category"])):
        part = frame[frame["category"] == category]
        for prep_class in PrepClass:
            count = int((part["class"] == prep_class.value).sum())
            rows.append({"category": category, "class": prep_class.value, "count": count,
                         "share": count / len(part)})
    return pd.DataFrame(rows, columns=["category", "class", "count", "share"])


def proactivity_distribution(records: Sequence[PreparednessRecord], prep_length: int) -> pd.DataFrame:
    """Part des CBG pour chaque valeur de proactivité 0 … prep_length - 1"""
    frame = records_to_frame(records)
    rows = []
    for category in sorted(set(frame["category"])):
        part = frame[frame["category"] == category]
        for days in range(prep_length):
            count = int((part["proactivity"] == days).sum())
            rows.append({"category": category, "proactivity": days, "count": count, "share": count / len(part)})
    return pd.DataFrame(rows, columns=["category", "proactivity", "count", "share"])


def proactivity_summary(records: Sequence[PreparednessRecord]) -> pd.DataFrame:
    frame = records_to_frame(records)
    rows = []
    for category in sorted(set(frame["category"])):
        values = frame.loc[frame["category"] == category, "proactivity"].astype(float)
        rows.append({
            "category": category,
            "n": len(values),
            "mean": values.mean(),
            "variance": values.var(),
            "min": values.min(),
            "q1": values.quantile(0.25),
            "median": values.median(),
            "q3": values.quantile(0.75),
            "max": values.max(),
        })
    return pd.DataFrame(rows, columns=["category", "n", "mean", "variance", "min", "q1", "median", "q3", "max"])


def baselines_to_frame(baselines: Mapping[Key, BaselineProfile]) -> pd.DataFrame:
    rows = [(p.cbg, p.category, w, p.weekday_baseline.get(w))
            for _, p in sorted(baselines.items()) for w in range(7)]
    return pd.DataFrame(rows, columns=BASELINE_COLUMNS)


def baselines_from_frame(frame: pd.DataFrame) -> Dict[Key, BaselineProfile]:
    profiles: Dict[Key, BaselineProfile] = {}
    for cbg, category, weekday, value in zip(frame["cbg"], frame["category"], frame["weekday"], frame["baseline"]):
        key = (str(cbg), str(category))
        if key not in profiles:
            profiles[key] = BaselineProfile(key[0], key[1], {w: None for w in range(7)})
        profiles[key].weekday_baseline[int(weekday)] = None if pd.isna(value) else float(value)
    return profiles


def changes_to_frame(series_list: Sequence[VisitChangeSeries]) -> pd.DataFrame:
    rows = [(s.cbg, s.category, d, v) for s in series_list for d, v in sorted(s.changes.items())]
    return pd.DataFrame(rows, columns=CHANGE_COLUMNS)


def records_to_frame(records: Sequence[PreparednessRecord]) -> pd.DataFrame:
    rows = [(r.cbg, r.category, r.extent, r.peak_date, r.proactivity, r.prep_class.value)
            for r in sorted(records, key=lambda r: (r.cbg, r.category))]
    frame = pd.DataFrame(rows, columns=PREPAREDNESS_COLUMNS)
    frame["proactivity"] = frame["proactivity"].astype(np.int64)
    return frame


def records_from_frame(frame: pd.DataFrame) -> List[PreparednessRecord]:
    return [
        PreparednessRecord(str(cbg), str(category), float(extent), parse_date(peak), int(days), PrepClass(cls))
        for cbg, category, extent, peak, days, cls in zip(frame["cbg"], frame["category"], frame["extent"],
                                                          frame["peak_date"], frame["proactivity"], frame["class"])
    ]

