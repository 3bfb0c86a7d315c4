# utils/time_windows.py
from dataclasses import dataclass
from datetime import date, timedelta
from typing import Iterable, List, Tuple, Union

import numpy as np
import pandas as pd

ISO_UTC_FORMAT = "%Y-%m-%dT%H:%M:%SZ"
_EPOCH = pd.Timestamp("1970-01-01", tz="UTC")


@dataclass(frozen=True)
class TimeWindow:
    """Fenêtre [start, end) en secondes epoch UTC"""
    start: int
    end: int

    def __post_init__(self):
        if self.end < self.start:
            raise ValueError(f"Fenêtre inversée: {self.start} > {self.end}")

    def overlaps(self, start: int, end: int) -> bool:
        """Vrai si l'intervalle fermé [start, end] touche la fenêtre"""
        return end >= self.start and start < self.end

    def clip(self, start: int, end: int) -> Tuple[int, int]:
        return max(start, self.start), min(end, self.end)


@dataclass(frozen=True)
class DateRange:
    """Plage de dates civiles locales, bornes incluses"""
    start: date
    end: date

    def __post_init__(self):
        if self.end < self.start:
            raise ValueError(f"Plage de dates inversée: {self.start} > {self.end}")

    @property
    def n_days(self) -> int:
        return (self.end - self.start).days + 1

    def dates(self) -> List[date]:
        return [self.start + timedelta(days=i) for i in range(self.n_days)]

    def __contains__(self, d: date) -> bool:
        return self.start <= d <= self.end

    def to_window(self, tz: str, extra_hours: int = 0) -> TimeWindow:
        """Convertit en fenêtre UTC: minuit local du début → minuit local après la fin (+ extra)"""
        start = local_midnight_epoch(self.start, tz)
        end = local_midnight_epoch(self.end + timedelta(days=1), tz) + extra_hours * 3600
        return TimeWindow(start, end)


def local_midnight_epoch(d: date, tz: str) -> int:
    return int(pd.Timestamp(d.isoformat()).tz_localize(tz).timestamp())


def parse_date(value: Union[str, date]) -> date:
    if isinstance(value, date):
        return value
    return date.fromisoformat(str(value).strip())


def epochs_to_iso(values: Iterable[int]) -> pd.Series:
    """Formate un vecteur d'epochs en ISO-8601 UTC"""
    stamps = pd.to_datetime(pd.Series(np.asarray(list(values), dtype="int64")), unit="s", utc=True)
    return stamps.dt.strftime(ISO_UTC_FORMAT)


def iso_to_epochs(values: pd.Series) -> pd.Series:
    """Parse des horodatages ISO-8601 UTC; les valeurs invalides deviennent NA"""
    stamps = pd.to_datetime(values, format=ISO_UTC_FORMAT, utc=True, errors="coerce")
    epochs = (stamps - _EPOCH) // pd.Timedelta(seconds=1)
    return epochs.astype("Int64")


def local_dates(epochs: pd.Series, tz: str) -> pd.Series:
    """Date civile locale de chaque epoch"""
    stamps = pd.to_datetime(epochs.astype("int64"), unit="s", utc=True).dt.tz_convert(tz)
    return stamps.dt.date
