# tests/test_trajectory.py
import numpy as np
import pandas as pd
import pytest

from core.errors import NoHome
from core.geo import distance_m
from modules.trajectory import (Stop, assign_stop_cbgs, detect_evacuation, detect_stops, infer_home,
                                stops_from_frame, stops_to_frame)
from utils.time_windows import TimeWindow
from conftest import cbg

H = 3600
T0 = 1_502_000_000
WINDOW = TimeWindow(T0, T0 + 10 * 24 * H)


def pings_frame(rows, device_id="d1"):
    return pd.DataFrame({
        "device_id": [device_id] * len(rows),
        "ts": [t for t, _, _ in rows],
        "lat": [lat for _, lat, _ in rows],
        "lon": [lon for _, _, lon in rows],
    })


def test_seven_pings_over_thirty_minutes_make_one_stop():
    rows = [(T0 + i * 300, 29.7, -95.4) for i in range(7)]
    stops = detect_stops(pings_frame(rows))
    assert len(stops) == 1
    assert stops[0].dwell == 1800
    assert (stops[0].lon, stops[0].lat) == pytest.approx((-95.4, 29.7))


def test_long_gap_splits_cluster():
    rows = [(T0 + i * 300, 29.7, -95.4) for i in range(3)]
    rows += [(T0 + 2 * H + 600 + i * 300, 29.7, -95.4) for i in range(3)]
    stops = detect_stops(pings_frame(rows))
    assert [s.dwell for s in stops] == [600, 600]


def test_scattered_pings_make_no_stop():
    # ~500 m entre deux pings consécutifs
    rows = [(T0 + i * 300, 29.7 + (i % 2) * 0.0045, -95.4) for i in range(8)]
    assert detect_stops(pings_frame(rows)) == []


def test_short_cluster_is_not_a_stop():
    rows = [(T0, 29.7, -95.4), (T0 + 120, 29.7, -95.4)]
    assert detect_stops(pings_frame(rows)) == []


def test_detect_stops_rejects_unsorted_or_mixed_input():
    rows = [(T0 + 300, 29.7, -95.4), (T0, 29.7, -95.4)]
    with pytest.raises(ValueError):
        detect_stops(pings_frame(rows))
    mixed = pd.concat([pings_frame([(T0, 29.7, -95.4)]), pings_frame([(T0, 29.7, -95.4)], "d2")])
    with pytest.raises(ValueError):
        detect_stops(mixed)


def sequential_stops(rows, radius_m=100.0, max_gap_s=1800, min_dwell_s=300):
    """Balayage ping par ping, sans coupure vectorisée"""
    groups = [[rows[0]]]
    for row in rows[1:]:
        current = groups[-1]
        c_lon = sum(r[2] for r in current) / len(current)
        c_lat = sum(r[1] for r in current) / len(current)
        if row[0] - current[-1][0] <= max_gap_s and distance_m(c_lon, c_lat, row[2], row[1]) <= radius_m:
            current.append(row)
        else:
            groups.append([row])
    return [(g[0][0], g[-1][0]) for g in groups if g[-1][0] - g[0][0] >= min_dwell_s]


def random_trace(rng, n_legs=60):
    """Alternance de séjours immobiles, de marches lentes et de sauts, avec des trous"""
    rows = []
    t, lat, lon = T0, 29.7, -95.4
    for _ in range(n_legs):
        kind = rng.choice(["stay", "walk", "jump"])
        if kind == "jump":
            lat += rng.uniform(-0.01, 0.01)
            lon += rng.uniform(-0.01, 0.01)
        for _ in range(int(rng.integers(1, 15))):
            t += int(rng.choice([60, 300, 600, 1800, 1801, 5000], p=[0.3, 0.3, 0.2, 0.1, 0.05, 0.05]))
            if kind == "walk":
                lat += rng.normal(0, 0.0004)
                lon += rng.normal(0, 0.0004)
            rows.append((t, lat + rng.normal(0, 0.00002), lon + rng.normal(0, 0.00002)))
    return rows


@pytest.mark.parametrize("seed", range(20))
def test_detect_stops_matches_sequential_scan(seed):
    rows = random_trace(np.random.default_rng(seed))
    stops = detect_stops(pings_frame(rows))
    assert [(s.start, s.end) for s in stops] == sequential_stops(rows)


def test_stop_centroid_is_mean_of_members():
    rows = [(T0 + i * 300, 29.7 + 0.0001 * (i % 3), -95.4 - 0.0001 * (i % 2)) for i in range(6)]
    stop = detect_stops(pings_frame(rows))[0]
    assert stop.lat == pytest.approx(np.mean([r[1] for r in rows]), rel=1e-12)
    assert stop.lon == pytest.approx(np.mean([r[2] for r in rows]), rel=1e-12)


def test_splitting_stream_at_a_cluster_boundary_changes_nothing():
    rows = random_trace(np.random.default_rng(99))
    whole = detect_stops(pings_frame(rows))
    # coupure certaine: trou temporel supérieur à max_gap_s
    cut = next(i for i in range(len(rows) // 2, len(rows)) if rows[i][0] - rows[i - 1][0] > 1800)
    parts = detect_stops(pings_frame(rows[:cut])) + detect_stops(pings_frame(rows[cut:]))
    assert [(s.start, s.end) for s in parts] == [(s.start, s.end) for s in whole]
    assert [(s.lon, s.lat) for s in parts] == pytest.approx([(s.lon, s.lat) for s in whole])


def test_assign_stop_cbgs():
    cbgs = [cbg("480010001002", 1.0, 0.0), cbg("480010001001", 0.0, 0.0)]
    stops = [Stop("d1", 0.5, 0.5, 0, 600), Stop("d1", 5.0, 5.0, 700, 1300), Stop("d1", 1.0, 0.5, 1400, 2000)]
    located = assign_stop_cbgs(stops, cbgs)
    assert [s.cbg_geoid for s in located] == ["480010001001", None, "480010001001"]


def test_infer_home_picks_longest_dwell():
    stops = [Stop("d1", 0, 0, T0, T0 + 25 * H, "A"), Stop("d1", 0, 0, T0 + 26 * H, T0 + 28 * H, "B")]
    home = infer_home(stops, WINDOW)
    assert home.home_cbg == "A"
    assert home.total_dwell_by_cbg == {"A": 25 * H, "B": 2 * H}


def test_infer_home_needs_more_than_a_day():
    stops = [Stop("d1", 0, 0, T0, T0 + 20 * H, "A")]
    assert infer_home(stops, WINDOW).home_cbg is None
    assert infer_home([], WINDOW, "d1").home_cbg is None


def test_infer_home_tie_goes_to_smaller_geoid():
    stops = [Stop("d1", 0, 0, T0, T0 + 30 * H, "B"), Stop("d1", 0, 0, T0 + 31 * H, T0 + 61 * H, "A")]
    assert infer_home(stops, WINDOW).home_cbg == "A"


def test_infer_home_ignores_order_of_simultaneous_stops():
    stops = [Stop("d1", 0, 0, T0, T0 + 30 * H, g) for g in ("C", "A", "B")]
    stops.append(Stop("d1", 0, 0, T0 + 31 * H, T0 + 40 * H, "C"))
    expected = infer_home(stops, WINDOW)
    assert expected.home_cbg == "C"
    for order in ([3, 2, 1, 0], [1, 3, 0, 2], [2, 0, 3, 1]):
        assert infer_home([stops[i] for i in order], WINDOW) == expected


def test_infer_home_clips_to_window():
    window = TimeWindow(T0 + 10 * H, T0 + 100 * H)
    stops = [Stop("d1", 0, 0, T0, T0 + 30 * H, "A")]
    home = infer_home(stops, window)
    assert home.total_dwell_by_cbg == {"A": 20 * H}
    assert home.home_cbg is None


def test_device_at_home_throughout_is_not_evacuated():
    stops = [Stop("d1", 0, 0, T0, T0 + 5 * 24 * H, "A")]
    flag = detect_evacuation(stops, "A", WINDOW)
    assert not flag.evacuated
    assert flag.longest_absence == 0


def test_thirty_hour_absence_is_an_evacuation():
    stops = [
        Stop("d1", 0, 0, T0, T0 + H, "A"),
        Stop("d1", 0, 0, T0 + 2 * H, T0 + 32 * H, "B"),
        Stop("d1", 0, 0, T0 + 33 * H, T0 + 40 * H, "A"),
    ]
    flag = detect_evacuation(stops, "A", WINDOW)
    assert flag.evacuated
    assert flag.longest_absence == 30 * H


def test_two_short_absences_are_not_merged():
    stops = [
        Stop("d1", 0, 0, T0, T0 + 15 * H, "B"),
        Stop("d1", 0, 0, T0 + 16 * H, T0 + 20 * H, "A"),
        Stop("d1", 0, 0, T0 + 21 * H, T0 + 36 * H, "C"),
    ]
    flag = detect_evacuation(stops, "A", WINDOW)
    assert not flag.evacuated
    assert flag.longest_absence == 15 * H


def test_consecutive_away_stops_form_one_absence():
    # arrêt hors de tout CBG compris
    stops = [
        Stop("d1", 0, 0, T0, T0 + 10 * H, "B"),
        Stop("d1", 0, 0, T0 + 12 * H, T0 + 20 * H, None),
        Stop("d1", 0, 0, T0 + 22 * H, T0 + 30 * H, "C"),
    ]
    flag = detect_evacuation(stops, "A", WINDOW)
    assert flag.evacuated
    assert flag.longest_absence == 30 * H


def test_evacuation_requires_home():
    with pytest.raises(NoHome):
        detect_evacuation([Stop("d1", 0, 0, T0, T0 + H, "A")], None, WINDOW)


def test_stops_frame_reload():
    stops = [Stop("d1", -95.4, 29.7, T0, T0 + 600, "480010001001"), Stop("d2", -95.5, 29.8, T0, T0 + 900)]
    reloaded = stops_from_frame(stops_to_frame(stops))
    assert reloaded == {"d1": [stops[0]], "d2": [stops[1]]}
