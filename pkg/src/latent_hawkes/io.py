"""Case-count ingestion, seed-history heuristics, run configuration and result files."""

from __future__ import annotations

import csv
import datetime as dt
import json
import math
import os
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path
from typing import Optional

import numpy as np

from .kernels import GammaKernel
from .model import CADENCE_DAYS, DomainError, ModelParams, ObservationSeries, TimeGrid


class CaseFileError(DomainError):
    """A case file could not be parsed; the message names the offending row."""


# --- case files --------------------------------------------------------------


def read_counts(path) -> tuple:
    """Parse ``date,count`` rows into ``(first_date, counts, spacing_days)``.

    Dates must be strictly increasing ISO-8601 days spaced either 1 or 7
    days apart throughout; the spacing is ``None`` for a single row.  Row
    numbers in error messages count the header as row 1.
    """
    path = Path(path)
    if not path.exists():
        raise CaseFileError(f"{path}: no such file")
    with path.open(newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    rows = [r for r in rows if any(cell.strip() for cell in r)]
    if len(rows) < 2:
        raise CaseFileError(f"{path}: no data rows")
    header = [c.strip().lower() for c in rows[0]]
    if header[:2] != ["date", "count"]:
        raise CaseFileError(f"{path}: row 1: expected header 'date,count', got {','.join(rows[0])}")
    dates = []
    counts = []
    spacing = None
    for number, row in enumerate(rows[1:], start=2):
        if len(row) < 2:
            raise CaseFileError(f"{path}: row {number}: expected two columns")
        try:
            day = dt.date.fromisoformat(row[0].strip())
        except ValueError:
            raise CaseFileError(f"{path}: row {number}: bad date {row[0]!r}") from None
        try:
            count = int(row[1].strip())
        except ValueError:
            raise CaseFileError(f"{path}: row {number}: bad count {row[1]!r}") from None
        if count < 0:
            raise CaseFileError(f"{path}: row {number}: negative count {count}")
        if dates:
            gap = (day - dates[-1]).days
            if gap <= 0:
                raise CaseFileError(f"{path}: row {number}: date {day} is not after {dates[-1]}")
            if spacing is None and gap in (1, 7):
                spacing = gap
            if gap != spacing:
                raise CaseFileError(f"{path}: row {number}: gap of {gap} days before {day} breaks the cadence")
        dates.append(day)
        counts.append(count)
    return dates[0], np.array(counts, dtype=np.int64), spacing


def load_cases(path, cadence: str = "daily", t0: float = 0.0) -> ObservationSeries:
    """Load a case file as an observation series starting at ``t0``.

    A daily file loaded at weekly cadence is summed in consecutive 7-day
    blocks (a trailing partial week is an error); a file whose rows are
    already a week apart is taken as weekly counts.
    """
    if cadence not in CADENCE_DAYS:
        raise CaseFileError(f"unknown cadence {cadence!r}")
    _, counts, spacing = read_counts(path)
    if spacing is None:
        spacing = int(CADENCE_DAYS[cadence])
    if spacing == 7 and cadence == "daily":
        raise CaseFileError(f"{path}: weekly rows cannot be loaded at daily cadence")
    if cadence == "weekly" and spacing == 1:
        if counts.size % 7:
            raise CaseFileError(f"{path}: {counts.size} days do not form whole weeks")
        counts = counts.reshape(-1, 7).sum(axis=1)
    return ObservationSeries(TimeGrid.regular(t0, counts.size, cadence), counts)


def write_cases(obs: ObservationSeries, path, start: dt.date = dt.date(2020, 1, 1)) -> None:
    """Write a series as a case file, one row per interval (the inverse of :func:`load_cases`)."""
    step = int(obs.grid.width)
    with _open_out(path) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["date", "count"])
        for i, c in enumerate(obs.counts):
            w.writerow([(start + dt.timedelta(days=step * i)).isoformat(), int(c)])


def _open_out(path):
    try:
        return Path(path).open("w", newline="", encoding="utf-8")
    except OSError as err:
        raise OSError(f"cannot write {path}: {err.strerror}") from err


# --- seed histories ----------------------------------------------------------


def seed_history_daily(counts_by_day: dict, beta: float, rng: np.random.Generator, t0: float = 0.0) -> np.ndarray:
    """Seed events for the 21 days before ``t0`` from reported daily counts.

    ``counts_by_day`` maps a day offset relative to ``t0`` to its reported
    count; days ``-14..6`` are needed.  Day ``-i`` receives
    ``round(count(7 - i) / beta)`` events placed uniformly within the day.
    """
    if not beta > 0:
        raise DomainError("beta must be positive")
    needed = list(range(-14, 7))
    missing = [d for d in needed if d not in counts_by_day]
    if missing:
        raise DomainError(f"seeding needs reported counts for day offsets {missing}")
    chunks = []
    for i in range(21, 0, -1):
        n_events = int(round(counts_by_day[7 - i] / beta))
        lo = t0 - i
        chunks.append(np.minimum(lo + rng.random(n_events), np.nextafter(lo + 1.0, -np.inf)))
    return np.sort(np.concatenate(chunks))


def seed_history_weekly(weekly_counts, beta: float, week_origin: float, rng: np.random.Generator) -> np.ndarray:
    """Seed events for weeks 1-3 from observed counts of weeks 2-4.

    Week ``i`` gets ``round(count(i + 1) / beta)`` events uniform on
    ``[week_origin + 7 (i - 1), week_origin + 7 i)``.
    """
    weekly_counts = np.asarray(weekly_counts)
    if weekly_counts.shape != (3,):
        raise DomainError("weekly seeding needs the observed counts of weeks 2, 3 and 4")
    if not beta > 0:
        raise DomainError("beta must be positive")
    chunks = []
    for i in range(1, 4):
        n_events = int(round(weekly_counts[i - 1] / beta))
        lo = week_origin + 7.0 * (i - 1)
        chunks.append(np.minimum(lo + 7.0 * rng.random(n_events), np.nextafter(lo + 7.0, -np.inf)))
    return np.sort(np.concatenate(chunks))


# --- run configuration -------------------------------------------------------


@dataclass
class RunConfig:
    """Every setting of a run; flat ``key=value`` files map one-to-one onto the fields."""

    command: str = "filter"
    method: str = "kdpf"
    data: str = ""
    seeds: str = ""
    scenario: str = ""
    cadence: str = "weekly"
    t0: float = 0.0
    beta: Optional[float] = None
    gi_mean: float = 6.7
    gi_sd: float = 1.8
    report_mean: float = 8.8
    report_sd: float = 4.1
    alpha: float = 0.5
    b: float = 2.0
    d_min: float = 10.0
    d_max: float = 20.0
    v_min: float = 1e-4
    v_max: float = 0.5
    d: float = 15.0
    v: float = 0.01
    delta: float = 0.99
    lag: int = 4
    eta_days: float = 21.0
    ess_threshold: float = 0.8
    liu_west: str = "standard"
    particles: int = 1000
    iterations: int = 10000
    burn_in: int = 5000
    smc_particles: int = 50
    thin: int = 10
    seed: int = 0
    workers: int = 1
    record_intensity: bool = True
    test_points: int = 200
    out: str = "results"

    COMMANDS = ("simulate", "filter", "pmmh", "predict")
    METHODS = ("kdpf", "apf", "bf")

    def validate(self) -> "RunConfig":
        if self.command not in self.COMMANDS:
            raise DomainError(f"unknown command {self.command!r}")
        if self.method not in self.METHODS:
            raise DomainError(f"unknown method {self.method!r}")
        if self.cadence not in CADENCE_DAYS:
            raise DomainError(f"unknown cadence {self.cadence!r}")
        for name in ("particles", "smc_particles"):
            if getattr(self, name) < 2:
                raise DomainError(f"{name} must be at least 2")
        if not self.iterations > self.burn_in >= 0:
            raise DomainError("need iterations > burn_in >= 0")
        if self.thin < 1 or self.workers < 1 or self.test_points < 0 or self.seed < 0:
            raise DomainError("thin and workers must be >= 1; test_points and seed must be >= 0")
        if self.command in ("filter", "pmmh") and self.beta is None:
            raise DomainError("beta must be given explicitly for inference on case data")
        self.params()
        return self

    def params(self) -> ModelParams:
        return ModelParams(
            beta=0.5 if self.beta is None else self.beta,
            d=self.d,
            v=self.v,
            r1_bounds=(self.alpha, self.b),
            d_bounds=(self.d_min, self.d_max),
            v_bounds=(self.v_min, self.v_max),
            eta_days=self.eta_days,
            delta=self.delta,
            lag=self.lag,
            kernel_h=GammaKernel(self.gi_mean, self.gi_sd),
            kernel_g=GammaKernel(self.report_mean, self.report_sd),
            ess_threshold=self.ess_threshold,
            liu_west=self.liu_west,
        )

    def as_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


SETTINGS = {f.name: f for f in fields(RunConfig)}


def convert_setting(key: str, raw: str):
    f = SETTINGS[key]
    kind = type(f.default) if f.default is not None else float
    text = raw.strip()
    try:
        if kind is bool:
            if text.lower() in ("1", "true", "yes", "on"):
                return True
            if text.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError
        return kind(text)
    except ValueError:
        raise DomainError(f"bad value {raw!r} for {key}") from None


def parse_config_text(text: str) -> dict:
    """``key=value`` lines; ``#`` starts a comment; unknown keys are rejected."""
    values = {}
    for number, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise DomainError(f"config line {number}: expected key=value")
        key, raw = (part.strip() for part in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in SETTINGS:
            raise DomainError(f"config line {number}: unknown key {key!r}")
        values[key] = convert_setting(key, raw)
    return values


def load_config(path=None, overrides: Optional[dict] = None) -> RunConfig:
    """Defaults, then the file, then ``overrides`` (already typed, ``None`` meaning unset).

    Relative ``data``/``seeds`` paths in a file are taken relative to the file.
    """
    values = {}
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise DomainError(f"{path}: no such config file")
        values = parse_config_text(path.read_text(encoding="utf-8"))
        for key in ("data", "seeds"):
            if values.get(key) and not os.path.isabs(values[key]):
                values[key] = str(path.parent / values[key])
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if key not in SETTINGS:
            raise DomainError(f"unknown setting {key!r}")
        values[key] = value
    return RunConfig(**values)


def write_config(config: RunConfig, path, keys=None) -> None:
    data = config.as_dict()
    with _open_out(path) as fh:
        for key in keys or data:
            if data[key] is not None:
                fh.write(f"{key}={data[key]}\n")


def params_to_dict(params: ModelParams) -> dict:
    out = asdict(params)
    out["kernel_h"] = [params.kernel_h.mean, params.kernel_h.sd]
    out["kernel_g"] = [params.kernel_g.mean, params.kernel_g.sd]
    return out


def params_from_dict(data: dict) -> ModelParams:
    data = dict(data)
    data["kernel_h"] = GammaKernel(*data["kernel_h"])
    data["kernel_g"] = GammaKernel(*data["kernel_g"])
    for key in ("r1_bounds", "d_bounds", "v_bounds"):
        data[key] = tuple(data[key])
    return ModelParams(**data)


# --- seed files --------------------------------------------------------------


def write_seeds(seeds, path) -> None:
    with _open_out(path) as fh:
        fh.write("time\n")
        for t in np.asarray(seeds, dtype=float):
            fh.write(f"{float(t)!r}\n")


def read_seeds(path) -> np.ndarray:
    path = Path(path)
    if not path.exists():
        raise CaseFileError(f"{path}: no such file")
    lines = [ln.strip() for ln in path.read_text(encoding="utf-8").splitlines() if ln.strip()]
    if not lines or lines[0].lower() != "time":
        raise CaseFileError(f"{path}: row 1: expected header 'time'")
    try:
        return np.array([float(x) for x in lines[1:]])
    except ValueError as err:
        raise CaseFileError(f"{path}: {err}") from None


# --- results -----------------------------------------------------------------


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return f"{float(x):.6g}"


def _write_table(path, header, rows) -> None:
    with _open_out(path) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(x) for x in row])


def read_table(path) -> dict:
    """Read a results table back as ``{column: float array}``."""
    with Path(path).open(newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    header = rows[0]
    body = np.array([[float(x) for x in r] for r in rows[1:]]).reshape(-1, len(header))
    return {name: body[:, i] for i, name in enumerate(header)}


SUMMARY_HEADER = [
    "interval", "start", "end", "observed",
    "r_median", "r_mean", "r_q025", "r_q975", "r_q005", "r_q995",
    "latent_median", "latent_q005", "latent_q995", "mu_median",
]


def _summary_rows(grid, observed, r, counts, mu):
    from .metrics import posterior_summary

    if r.shape[0] == 0:
        return []
    rs = posterior_summary(r)
    cs = posterior_summary(counts)
    ms = posterior_summary(mu)
    rows = []
    for n in range(r.shape[0]):
        rows.append([
            n + 1, grid.lower(n + 1), grid.upper(n + 1), int(observed[n]),
            rs.median[n], rs.mean[n], rs.q025[n], rs.q975[n], rs.q005[n], rs.q995[n],
            cs.median[n], cs.q005[n], cs.q995[n], ms.median[n],
        ])
    return rows


def _manifest(out_dir: Path, kind: str, config: Optional[RunConfig], seed: int, extra: dict) -> None:
    from . import __version__

    cfg = config.as_dict() if config is not None else {}
    cfg.pop("workers", None)
    cfg.pop("out", None)
    data = {"kind": kind, "seed": int(seed), "version": __version__, "config": cfg}
    data.update(extra)
    with _open_out(out_dir / "manifest.json") as fh:
        json.dump(data, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")


def _json_default(x):
    if isinstance(x, np.generic):
        return x.item()
    if isinstance(x, (tuple, np.ndarray)):
        return list(x)
    raise TypeError(f"cannot serialize {type(x).__name__}")


def emit_results(result, out_dir, config: Optional[RunConfig] = None) -> list:
    """Write the files describing ``result`` into ``out_dir``; returns their paths.

    Filter runs give ``summary.csv``, ``parameters.csv``, ``diagnostics.csv``,
    ``intensity.csv`` (when recorded), ``plot_data.csv``, ``state.npz`` and
    ``manifest.json``.  A forecast gives ``forecast.csv`` and
    ``forecast_samples.csv``; a PMMH chain gives ``chain.csv``,
    ``summary.csv`` and ``plot_data.csv``.
    """
    from .metrics import Forecast
    from .pmmh import PmmhChain, write_chain
    from .smc import FilterOutput

    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as err:
        raise OSError(f"cannot create {out_dir}: {err.strerror}") from err
    written = []

    def path(name):
        p = out_dir / name
        written.append(p)
        return p

    if isinstance(result, FilterOutput):
        grid = result.grid
        _write_table(path("summary.csv"), SUMMARY_HEADER,
                     _summary_rows(grid, result.observations, result.r, result.latent_counts, result.mu))
        _write_parameters(path("parameters.csv"), result)
        _write_table(
            path("diagnostics.csv"),
            ["interval", "ess", "resampled", "log_marginal_increment"],
            [[n + 1, result.ess[n], bool(result.resampled[n]), result.log_marginal_increments[n]]
             for n in range(result.k)],
        )
        if result.intensity_times.size:
            _write_intensity(path("intensity.csv"), result)
        _write_plot_data(path("plot_data.csv"), result.grid, result.observations, result.r, result.latent_counts,
                         result.intensity_times, result.latent_intensity, result.observed_intensity,
                         result.d, result.v)
        save_state(result.snapshot(), path("state.npz"))
        _manifest(out_dir, "filter", config, result.seed,
                  {"method": result.method, "particles": result.n_particles,
                   "log_marginal_likelihood": result.log_marginal_likelihood})
    elif isinstance(result, Forecast):
        _write_table(path("forecast.csv"), ["mean", "median", "lower", "upper", "d_hat", "v_hat"],
                     [[result.mean, result.median, result.lower, result.upper, result.d_hat, result.v_hat]])
        _write_table(path("forecast_samples.csv"), ["sample"], [[int(c)] for c in result.samples])
        _manifest(out_dir, "forecast", config, config.seed if config else 0, {})
    elif isinstance(result, PmmhChain):
        burn = result.post_burn_in
        write_chain(result, path("chain.csv"))
        if config is not None and config.data:
            obs = load_observations(config)[0]
            grid, observed = obs.grid, obs.counts
            _write_table(path("summary.csv"), SUMMARY_HEADER,
                         _summary_rows(grid, observed, result.r_paths[burn].T, result.latent_counts[burn].T,
                                       result.mu_paths[burn].T))
            _write_plot_data(path("plot_data.csv"), grid, observed, result.r_paths[burn].T,
                             result.latent_counts[burn].T, np.empty(0), None, None,
                             np.tile(result.d[burn], (grid.k, 1)), np.tile(result.v[burn], (grid.k, 1)))
        _manifest(out_dir, "pmmh", config, result.seed,
                  {"acceptance_rate": result.acceptance_rate, "iterations": result.n_iterations,
                   "burn_in": result.burn_in})
    else:
        raise DomainError(f"cannot emit results of type {type(result).__name__}")
    written.append(out_dir / "manifest.json")
    return written


def _write_parameters(path, result) -> None:
    from .metrics import posterior_summary

    ds = posterior_summary(result.d)
    vs = posterior_summary(result.v)
    _write_table(
        path,
        ["interval", "d_median", "d_q005", "d_q995", "v_median", "v_q005", "v_q995"],
        [[n + 1, ds.median[n], ds.q005[n], ds.q995[n], vs.median[n], vs.q005[n], vs.q995[n]]
         for n in range(result.k)],
    )


def _write_intensity(path, result) -> None:
    from .metrics import posterior_summary

    lat = posterior_summary(result.latent_intensity, axis=0)
    obs = posterior_summary(result.observed_intensity, axis=0)
    _write_table(
        path,
        ["time", "latent_median", "latent_q005", "latent_q995", "observed_median", "observed_q005",
         "observed_q995"],
        [[t, lat.median[i], lat.q005[i], lat.q995[i], obs.median[i], obs.q005[i], obs.q995[i]]
         for i, t in enumerate(result.intensity_times)],
    )


def _write_plot_data(path, grid, observed, r, counts, times, latent, reported, d, v) -> None:
    """Long format: panel, x, series, value."""
    from .metrics import posterior_summary

    rows = []
    mids = 0.5 * (grid.edges[:-1] + grid.edges[1:])
    for n, x in enumerate(mids):
        rows.append(["observed_cases", x, "observed", observed[n]])
    for panel, samples in (("reproduction_number", r), ("hidden_cases", counts), ("d", d), ("v", v)):
        if samples is None or samples.shape[0] == 0:
            continue
        s = posterior_summary(samples)
        for n, x in enumerate(mids):
            rows += [[panel, x, "median", s.median[n]], [panel, x, "q005", s.q005[n]], [panel, x, "q995", s.q995[n]]]
    if times is not None and times.size:
        for panel, samples in (("latent_intensity", latent), ("observed_intensity", reported)):
            s = posterior_summary(samples, axis=0)
            for i, x in enumerate(times):
                rows += [[panel, x, "median", s.median[i]], [panel, x, "q005", s.q005[i]],
                         [panel, x, "q995", s.q995[i]]]
    with _open_out(path) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["panel", "x", "series", "value"])
        for panel, x, series, value in rows:
            w.writerow([panel, _fmt(x), series, _fmt(value)])


# --- run state ---------------------------------------------------------------


def save_state(snapshot, path) -> None:
    """Store the final population (with its last ``eta`` intervals of events) for later prediction."""
    final = snapshot.final
    eta = snapshot.grid.eta_intervals(snapshot.params.eta_days)
    blocks, rows = final.window.latest(eta)
    arrays = {}
    for i, (block, row) in enumerate(zip(blocks, rows)):
        g = block.gather(row)
        arrays[f"block{i}_offsets"] = g.offsets
        arrays[f"block{i}_times"] = g.times
        arrays[f"block{i}_start"] = np.array(g.start)
    meta = {
        "params": params_to_dict(snapshot.params),
        "t0": snapshot.grid.t0,
        "boundaries": list(snapshot.grid.boundaries),
        "cadence": snapshot.grid.cadence,
        "n_blocks": len(blocks),
    }
    try:
        np.savez_compressed(
            path, meta=np.array(json.dumps(meta, default=_json_default)), seeds=snapshot.seeds,
            r=final.r, log_d=final.log_d, log_v=final.log_v, log_w=final.log_w, log_g=final.log_g,
            r_history=final.r_history, count_history=final.count_history, mu_history=final.mu_history,
            ancestors=final.ancestors, **arrays,
        )
    except OSError as err:
        raise OSError(f"cannot write {path}: {err.strerror}") from err


def load_state(path):
    from .engine import Block, Window
    from .smc import FinalPopulation, Snapshot

    path = Path(path)
    if not path.exists():
        raise DomainError(f"{path}: no saved run state")
    with np.load(path) as z:
        meta = json.loads(str(z["meta"]))
        n_part = z["r"].size
        window = Window(n_part, max(1, meta["n_blocks"]))
        for i in range(meta["n_blocks"]):
            window.push(Block(float(z[f"block{i}_start"]), z[f"block{i}_offsets"], z[f"block{i}_times"]))
        final = FinalPopulation(
            z["r"], z["log_d"], z["log_v"], z["log_w"], z["log_g"], window,
            z["r_history"], z["count_history"], z["mu_history"], z["ancestors"],
        )
        grid = TimeGrid(meta["t0"], tuple(meta["boundaries"]), meta["cadence"])
        return Snapshot(grid, params_from_dict(meta["params"]), z["seeds"], final)


# --- inputs for a run --------------------------------------------------------


def load_observations(config: RunConfig, rng: Optional[np.random.Generator] = None) -> tuple:
    """Observation series and seed set for a run.

    With a seed file, the whole case file is the analysis horizon starting
    at ``t0``.  Without one, the case file must be daily; its first 21 days
    precede the horizon and, with days 0-6 of the horizon, feed the daily
    seeding rule.
    """
    if not config.data:
        raise DomainError("no case file given")
    if config.seeds:
        obs = load_cases(config.data, config.cadence, config.t0)
        seeds = read_seeds(config.seeds)
        if seeds.size and seeds.max() >= config.t0:
            raise DomainError("seed times must precede t0")
        return obs, seeds
    _, daily, spacing = read_counts(config.data)
    if spacing not in (1, None):
        raise DomainError("seeding from case data needs a daily file")
    lead = 21
    if daily.size < lead + 7:
        raise DomainError("a daily file needs 21 days before the horizon plus at least one week")
    counts_by_day = {d - lead: int(c) for d, c in enumerate(daily)}
    rng = rng if rng is not None else np.random.default_rng([config.seed, 0x5EED])
    t0 = config.t0 + lead
    seeds = seed_history_daily(counts_by_day, 0.5 if config.beta is None else config.beta, rng, t0)
    horizon = daily[lead:]
    if config.cadence == "weekly":
        usable = horizon.size - horizon.size % 7
        horizon = horizon[:usable].reshape(-1, 7).sum(axis=1)
    return ObservationSeries(TimeGrid.regular(t0, horizon.size, config.cadence), horizon), seeds
