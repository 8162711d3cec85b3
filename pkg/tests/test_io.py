import datetime as dt

import numpy as np
import pytest
from hypothesis import given, strategies as st

from latent_hawkes.io import (
    CaseFileError,
    RunConfig,
    emit_results,
    load_cases,
    load_config,
    load_state,
    parse_config_text,
    read_seeds,
    read_table,
    seed_history_daily,
    seed_history_weekly,
    write_cases,
    write_seeds,
)
from latent_hawkes.model import DomainError, ObservationSeries, TimeGrid
from latent_hawkes.scenarios import PRESETS, simulate_scenario
from latent_hawkes.smc import FilterOptions, run_kdpf


def case_file(tmp_path, rows, name="cases.csv"):
    path = tmp_path / name
    path.write_text("date,count\n" + "".join(f"{d},{c}\n" for d, c in rows))
    return path


def days(n, start=dt.date(2021, 3, 1)):
    return [(start + dt.timedelta(days=i)).isoformat() for i in range(n)]


def test_daily_rows_aggregate_to_a_week(tmp_path):
    path = case_file(tmp_path, zip(days(7), [1, 2, 3, 4, 5, 6, 7]))
    obs = load_cases(path, "weekly", t0=10.0)
    assert obs.counts.tolist() == [28]
    assert obs.grid.t0 == 10.0 and obs.grid.end == 17.0
    assert load_cases(path, "daily").counts.tolist() == [1, 2, 3, 4, 5, 6, 7]


@pytest.mark.parametrize(
    "rows,fragment",
    [
        ([], "no data rows"),
        ([("2021-03-01", 1), ("2021-03-01", 2)], "row 3"),
        ([("2021-03-02", 1), ("2021-03-01", 2)], "row 3"),
        ([("2021-03-01", 1), ("2021-03-02", 2), ("2021-03-04", 2)], "row 4"),
        ([("2021-03-01", 1), ("2021-03-02", -2)], "row 3"),
        ([("2021-03-01", 1), ("not-a-date", 2)], "row 3"),
        ([("2021-03-01", "x")], "row 2"),
    ],
)
def test_parse_errors_name_the_row(tmp_path, rows, fragment):
    path = case_file(tmp_path, rows)
    with pytest.raises(CaseFileError, match=fragment):
        load_cases(path, "daily")


def test_partial_week_and_missing_file(tmp_path):
    with pytest.raises(CaseFileError):
        load_cases(case_file(tmp_path, zip(days(9), range(9))), "weekly")
    with pytest.raises(CaseFileError):
        load_cases(tmp_path / "absent.csv")


@given(st.lists(st.integers(0, 10**6), min_size=1, max_size=30), st.sampled_from(["daily", "weekly"]))
def test_write_then_load_is_identity(tmp_path_factory, counts, cadence):
    path = tmp_path_factory.mktemp("cases") / "cases.csv"
    obs = ObservationSeries(TimeGrid.regular(42.0, len(counts), cadence), np.array(counts))
    write_cases(obs, path)
    back = load_cases(path, cadence, t0=42.0)
    assert back.grid == obs.grid
    np.testing.assert_array_equal(back.counts, obs.counts)


def test_daily_seeding(rng):
    counts = {d: 0 for d in range(-14, 7)}
    assert seed_history_daily(counts, 0.5, rng).size == 0
    counts[7 - 3] = 2
    seeds = seed_history_daily(counts, 0.5, rng, t0=100.0)
    assert seeds.size == 4 and np.all((seeds >= 97.0) & (seeds < 98.0))
    full = {d: d + 20 for d in range(-14, 7)}
    seeds = seed_history_daily(full, 1.0, rng)
    per_day = np.histogram(seeds, bins=np.arange(-21, 1))[0]
    assert per_day.tolist() == [full[7 - i] for i in range(21, 0, -1)]
    with pytest.raises(DomainError, match=r"\[6\]"):
        seed_history_daily({d: 1 for d in range(-14, 6)}, 0.5, rng)


def test_weekly_seeding(rng):
    assert seed_history_weekly([0, 0, 0], 0.5, 0.0, rng).size == 0
    seeds = seed_history_weekly([10, 0, 0], 0.5, 0.0, rng)
    assert seeds.size == 20 and np.all((seeds >= 0.0) & (seeds < 7.0))
    with pytest.raises(DomainError):
        seed_history_weekly([1, 2], 0.5, 0.0, rng)


def test_scenario_a_seed_estimate_is_comparable():
    data = simulate_scenario(PRESETS["A"], 1)
    observed = data.counts[3:].sum()
    assert abs(observed - 17540) <= 0.25 * 17540
    assert abs(data.estimated_seeds.size - 4228) <= 0.25 * 4228


def test_config_precedence_and_validation(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# comment\nparticles = 300\nbeta=0.4\ndata=cases.csv\nrecord_intensity=false\n")
    config = load_config(cfg, {"particles": 700, "seed": None})
    assert config.particles == 700
    assert config.beta == 0.4 and config.record_intensity is False
    assert config.data == str(tmp_path / "cases.csv")
    assert load_config(cfg).particles == 300
    assert RunConfig().particles == 1000
    with pytest.raises(DomainError, match="unknown key"):
        parse_config_text("particle=3\n")
    with pytest.raises(DomainError, match="bad value"):
        parse_config_text("particles=many\n")
    with pytest.raises(DomainError):
        RunConfig(command="filter").validate()
    with pytest.raises(DomainError):
        RunConfig(beta=0.5, delta=2.0).validate()
    with pytest.raises(DomainError):
        RunConfig(beta=0.5, particles=1).validate()


def test_seed_file_round_trip(tmp_path, rng):
    seeds = np.sort(rng.uniform(0, 21, 50))
    write_seeds(seeds, tmp_path / "seeds.csv")
    np.testing.assert_array_equal(read_seeds(tmp_path / "seeds.csv"), seeds)


@pytest.fixture(scope="module")
def small_run():
    data = simulate_scenario(PRESETS["C"], 1)
    out = run_kdpf(data.observations, PRESETS["C"].params(), data.estimated_seeds, 200, seed=2,
                   options=FilterOptions(intensity_draws=100))
    return out


def test_emitted_summary_round_trips(tmp_path, small_run):
    emit_results(small_run, tmp_path, RunConfig(beta=0.5, seed=2))
    table = read_table(tmp_path / "summary.csv")
    assert table["interval"].tolist() == list(range(1, small_run.k + 1))
    np.testing.assert_array_equal(table["observed"], small_run.observations)
    expected = np.median(small_run.r, axis=1)
    np.testing.assert_array_equal(table["r_median"], [float(f"{x:.6g}") for x in expected])
    for prefix in ("r", "latent"):
        lo, mid, hi = table[f"{prefix}_q005"], table[f"{prefix}_median"], table[f"{prefix}_q995"]
        assert np.all(lo <= mid) and np.all(mid <= hi)
    assert np.all(table["r_q025"] <= table["r_q975"])
    intensity = read_table(tmp_path / "intensity.csv")
    assert np.all(intensity["latent_q005"] <= intensity["latent_median"])
    assert np.all(intensity["latent_median"] <= intensity["latent_q995"])
    for name in ("parameters.csv", "diagnostics.csv", "plot_data.csv", "manifest.json", "state.npz"):
        assert (tmp_path / name).exists()


def test_saved_state_restores_the_population(tmp_path, small_run):
    emit_results(small_run, tmp_path)
    snap = load_state(tmp_path / "state.npz")
    final = small_run.final
    np.testing.assert_array_equal(snap.final.r, final.r)
    np.testing.assert_array_equal(snap.final.log_weights, final.log_weights)
    for j in (0, 57, 199):
        for back in range(3):
            np.testing.assert_array_equal(snap.final.window.particle_events(j, back),
                                          final.window.particle_events(j, back))
    assert snap.grid == small_run.grid


def test_empty_summary_is_header_only(tmp_path, small_run):
    from latent_hawkes.io import SUMMARY_HEADER, _summary_rows, _write_table

    _write_table(tmp_path / "empty.csv", SUMMARY_HEADER, _summary_rows(small_run.grid, [], np.empty((0, 5)), None,
                                                                       None))
    assert (tmp_path / "empty.csv").read_text().splitlines() == [",".join(SUMMARY_HEADER)]
