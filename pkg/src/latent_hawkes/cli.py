"""Command-line entry point: ``latent-hawkes simulate|filter|pmmh|predict``.

Exit status is 0 on success, 1 for invalid input or configuration and 2
when a run fails (filter degeneracy, I/O errors).
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .io import (
    RunConfig,
    emit_results,
    load_config,
    load_observations,
    load_state,
    write_cases,
    write_config,
    write_seeds,
)
from .model import DomainError, ObservationSeries, TimeGrid
from .smc import FILTERS, FilterDegeneracyError, FilterOptions

log = logging.getLogger("latent_hawkes")

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_FAILED = 2


class _Parser(argparse.ArgumentParser):
    """Usage errors exit with the validation status rather than argparse's 2."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        sys.exit(EXIT_INVALID)


def _common(p: argparse.ArgumentParser):
    p.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS)
    p.add_argument("--config", help="key=value settings file")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="output directory")
    p.add_argument("--workers", type=int)
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="any other setting, may be repeated")


def _model(p: argparse.ArgumentParser):
    p.add_argument("--data", help="case file (date,count)")
    p.add_argument("--seeds", help="seed event file (one time per line, header 'time')")
    p.add_argument("--cadence", choices=["daily", "weekly"])
    p.add_argument("--beta", type=float)
    p.add_argument("--particles", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="latent-hawkes", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    sim = sub.add_parser("simulate", help="simulate a synthetic epidemic")
    sim.add_argument("--scenario", choices=["A", "B", "C"])
    _common(sim)

    flt = sub.add_parser("filter", help="run a particle filter on case data")
    flt.add_argument("--method", choices=list(FILTERS))
    _model(flt)
    _common(flt)

    mh = sub.add_parser("pmmh", help="run particle marginal Metropolis-Hastings")
    mh.add_argument("--iters", dest="iterations", type=int)
    mh.add_argument("--burnin", dest="burn_in", type=int)
    mh.add_argument("--smc-particles", dest="smc_particles", type=int)
    mh.add_argument("--thin", type=int)
    _model(mh)
    _common(mh)

    pr = sub.add_parser("predict", help="forecast the next interval from a saved filter run")
    pr.add_argument("--from", dest="run_dir", required=True, help="directory written by 'filter'")
    _common(pr)
    return parser


def _overrides(args) -> dict:
    skip = {"config", "set", "verbose", "run_dir"}
    values = {k: v for k, v in vars(args).items() if k not in skip}
    from .io import SETTINGS, convert_setting

    for item in args.set:
        if "=" not in item:
            raise DomainError(f"--set expects KEY=VALUE, got {item!r}")
        key, raw = item.split("=", 1)
        key = key.strip().replace("-", "_")
        if key not in SETTINGS:
            raise DomainError(f"unknown setting {key!r}")
        values[key] = convert_setting(key, raw)
    return values


def _simulate(config: RunConfig) -> None:
    from .scenarios import FIRST_INFERRED, LAST_INFERRED, PRESETS, simulate_scenario

    if not config.scenario:
        raise DomainError("simulate needs --scenario A, B or C")
    if config.scenario not in PRESETS:
        raise DomainError(f"unknown scenario {config.scenario!r}")
    scenario = PRESETS[config.scenario]
    data = simulate_scenario(scenario, config.seed)
    out = Path(config.out)
    out.mkdir(parents=True, exist_ok=True)
    obs = data.observations
    write_cases(obs, out / "cases.csv")
    write_cases(ObservationSeries(TimeGrid.regular(21.0, data.counts.size), data.counts), out / "all_cases.csv")
    write_seeds(data.estimated_seeds, out / "seeds.csv")
    write_seeds(data.true_seeds, out / "true_seeds.csv")
    with (out / "truth.csv").open("w", encoding="utf-8") as fh:
        fh.write("interval,week,r,latent,observed\n")
        latent = data.history.counts()
        for n in range(FIRST_INFERRED, LAST_INFERRED + 1):
            fh.write(f"{n - FIRST_INFERRED + 1},{n},{data.r_path[n - 1]:.6g},{latent[n - 1]},{data.counts[n - 1]}\n")
        fh.write(f",{LAST_INFERRED + 1},{data.r_path[LAST_INFERRED]:.6g},{latent[LAST_INFERRED]},"
                 f"{data.counts[LAST_INFERRED]}\n")
    params = scenario.params()
    run = RunConfig(
        data="cases.csv", seeds="seeds.csv", cadence="weekly", t0=obs.grid.t0, beta=params.beta,
        alpha=params.r1_bounds[0], b=params.r1_bounds[1], d_min=params.d_bounds[0], d_max=params.d_bounds[1],
        v_min=params.v_bounds[0], v_max=params.v_bounds[1], d=params.d, v=params.v, delta=params.delta,
    )
    write_config(run, out / "run.cfg", keys=["data", "seeds", "cadence", "t0", "beta", "alpha", "b", "d_min",
                                             "d_max", "v_min", "v_max", "d", "v", "delta"])
    log.info("scenario %s (seed %d) written to %s after %d attempt(s)", scenario.name, config.seed, out, data.attempts)


def _filter(config: RunConfig) -> None:
    from .metrics import draw_test_points

    obs, seeds = load_observations(config)
    params = config.params()
    test_points = draw_test_points(obs.grid, config.test_points, config.seed) if config.test_points else None
    options = FilterOptions(workers=config.workers, record_intensity=config.record_intensity,
                            test_points=test_points)
    output = FILTERS[config.method](obs, params, seeds, config.particles, config.seed, options)
    emit_results(output, config.out, config)
    log.info("%s finished: log marginal likelihood %.6g", config.method, output.log_marginal_likelihood)


def _pmmh(config: RunConfig) -> None:
    from .pmmh import pmmh_run

    obs, seeds = load_observations(config)
    chain = pmmh_run(obs, config.params(), seeds, config.iterations, config.burn_in, config.smc_particles,
                     config.seed, thin=config.thin, workers=config.workers)
    emit_results(chain, config.out, config)
    log.info("pmmh finished: acceptance rate %.4f", chain.acceptance_rate)


def _predict(config: RunConfig, run_dir: str) -> None:
    from .metrics import predict_next_interval

    snapshot = load_state(Path(run_dir) / "state.npz")
    forecast = predict_next_interval(snapshot, seed=config.seed, workers=config.workers)
    emit_results(forecast, config.out, config)
    print(f"mean={forecast.mean:.6g} median={forecast.median:.6g} "
          f"80%=({forecast.lower:.6g}, {forecast.upper:.6g})")


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        overrides = _overrides(args)
        overrides["command"] = args.command
        if args.command == "predict" and not args.out:
            overrides["out"] = str(Path(args.run_dir) / "forecast")
        config = load_config(args.config, overrides).validate()
        if args.command == "simulate":
            _simulate(config)
        elif args.command == "filter":
            _filter(config)
        elif args.command == "pmmh":
            _pmmh(config)
        else:
            _predict(config, args.run_dir)
    except (DomainError, ValueError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_INVALID
    except (FilterDegeneracyError, RuntimeError, OSError) as err:
        print(f"run failed: {err}", file=sys.stderr)
        return EXIT_FAILED
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
