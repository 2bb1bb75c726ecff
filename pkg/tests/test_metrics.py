import pytest

from harlsim.metrics import RunMetrics, compute_metrics, metrics_csv_row


def ev(event, **kw):
    base = {"event": event, "step": 0, "time": 0.0}
    base.update(kw)
    return base


def test_crossing_time_is_departure_minus_zone_entry():
    events = [
        ev("metric_zone_entry", vehicle=1, time=10.0),
        ev("departure", vehicle=1, time=22.5, t_cross=12.5, fuel=8.0),
    ]
    m = compute_metrics(events, 1800.0)
    assert m.t_cross_mean == pytest.approx(12.5)
    assert m.vehicle_count == 1


def test_collision_rate_per_hour():
    events = [ev("collision", pair=[1, 2]), ev("collision", pair=[3, 4])]
    m = compute_metrics(events, 1800.0)
    assert m.collision_count == 2
    assert m.collisions_per_hour == pytest.approx(4.0)


def test_identical_crossings_have_zero_std():
    events = [
        ev("departure", vehicle=k, t_cross=20.0, fuel=10.0) for k in range(5)
    ]
    m = compute_metrics(events, 100.0)
    assert m.t_cross_std == pytest.approx(0.0)
    assert m.fuel_per_vehicle == pytest.approx(10.0)


def test_population_std():
    events = [
        ev("departure", vehicle=1, t_cross=10.0, fuel=1.0),
        ev("departure", vehicle=2, t_cross=20.0, fuel=1.0),
    ]
    m = compute_metrics(events, 100.0)
    assert m.t_cross_std == pytest.approx(5.0)  # population, not sample


def test_vehicles_still_inside_are_censored():
    events = [
        ev("spawn", vehicle=1),
        ev("metric_zone_entry", vehicle=1),
        ev("departure", vehicle=2, t_cross=30.0, fuel=12.0),
    ]
    m = compute_metrics(events, 100.0)
    assert m.vehicle_count == 1
    assert m.t_cross_mean == pytest.approx(30.0)


def test_empty_log_yields_explicit_marker():
    m = compute_metrics([], 100.0)
    assert m.empty
    assert m.t_cross_mean is None
    assert m.vehicle_count == 0


def test_csv_row_shape():
    m = compute_metrics([ev("departure", vehicle=1, t_cross=10.0, fuel=5.0)], 3600.0)
    row = metrics_csv_row(m, "lqf", 450.0, 0.8, 7)
    assert row[0] == "lqf"
    assert row[3] == "7"
    assert len(row) == 10
