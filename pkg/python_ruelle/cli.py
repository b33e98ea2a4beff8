import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np
from loguru import logger

from .artifacts import (
    read_partition,
    read_resonances,
    read_series,
    read_spectral,
    read_transition,
    resonances_payload,
    write_json,
    write_partition,
    write_result,
    write_resonances,
    write_series,
    write_spectral,
    write_transition,
)
from .counting import TransitionCounter
from .exceptions import PipelineError, RuelleError
from .models import OuSpec, PipelineConfig, SimulationConfig
from .oracle import ou_resonances
from .partition import GridPartition
from .pipeline import CASES, SCALES, reproduce_config, run_pipeline
from .reconstruct import (
    compare,
    coordinate_observable,
    fold_psd,
    reconstruct_correlation,
    sample_acf,
    sample_psd,
    weights,
)
from .sde import build_model, euler_maruyama, observe
from .settings import default_log_level, default_output_dir
from .spectral import ResonanceSet, leading_eigenpairs, match_resonances, resonances
from .transfer import estimate_transition


def _params(pairs: List[str]) -> Dict[str, float]:
    params = {}
    for pair in pairs:
        key, sep, value = pair.partition("=")
        if not sep:
            raise ValueError(f"Expected key=value, got {pair!r}")
        params[key] = float(value)
    return params


def _configure_logging(args: argparse.Namespace) -> None:
    level = default_log_level()
    if args.verbose:
        level = "DEBUG"
    elif args.quiet:
        level = "WARNING"
    logger.remove()
    logger.add(sys.stderr, level=level)


def cmd_simulate(args: argparse.Namespace) -> None:
    model = build_model(args.model, **_params(args.param))
    config = SimulationConfig(
        dt=args.dt,
        n_steps=int(round(args.total_time / args.dt)),
        transient_steps=int(round(args.transient_time / args.dt)),
        stride=args.stride,
        seed=args.seed,
        x0=args.x0 if args.x0 else list(model.default_x0),
    )
    series = euler_maruyama(model, config)
    if args.observe:
        series = observe(series, args.observe)
    write_series(series, args.out)


def cmd_estimate(args: argparse.Namespace) -> None:
    series = read_series(args.series)
    if args.columns:
        series = observe(series, args.columns)
    partition = GridPartition.uniform(args.lows, args.highs, args.cells)
    ratio = args.lag_time / series.sample_dt
    if round(ratio) < 1 or abs(ratio - round(ratio)) > 1e-9 * max(1.0, ratio):
        raise ValueError(
            f"lag_time={args.lag_time} is not a positive integer multiple of "
            f"sample_dt={series.sample_dt}"
        )
    with TransitionCounter(args.threads) as counter:
        tm = estimate_transition(series, partition, int(round(ratio)), args.min_count, counter)
    out = Path(args.out)
    write_transition(tm, out)
    write_partition(partition, out / "partition.json")


def cmd_spectrum(args: argparse.Namespace) -> None:
    tm = read_transition(args.transition)
    spec = leading_eigenpairs(
        tm,
        k=min(args.k, tm.size),
        dense_threshold=args.dense_threshold,
        tol=args.tol,
        seed=args.seed,
        on_degenerate="exclude" if args.exclude_degenerate else "raise",
    )
    rs = resonances(spec, tm.lag_time)
    out = Path(args.out)
    write_resonances(rs, out / "resonances.json")
    write_spectral(spec, out / "spectral.npz")


def cmd_reconstruct(args: argparse.Namespace) -> None:
    tm = read_transition(args.transition)
    partition = read_partition(Path(args.transition) / "partition.json")
    spec = read_spectral(args.spectral)
    rs = resonances(spec, tm.lag_time)
    series = read_series(args.series)
    if args.columns:
        series = observe(series, args.columns)

    f = coordinate_observable(partition, tm, args.column)
    w = weights(spec, tm.measure, f, f)
    out = Path(args.out)
    label = series.labels[args.column]

    lags = np.arange(args.n_lags + 1) * tm.lag_time
    acf = reconstruct_correlation(rs, w, lags)
    sample = sample_acf(series, args.column, args.n_lags * tm.lag_steps).sample[:: tm.lag_steps]
    acf = replace(acf, sample=sample, metrics=compare(acf.reconstructed, sample))
    write_result(acf, out / f"acf_{label}.csv")

    welch = sample_psd(series, args.column, args.segment_len, args.overlap, angular=True)
    psd = fold_psd(rs, w, welch.abscissa)
    psd = replace(psd, sample=welch.sample, metrics=compare(psd.reconstructed, welch.sample))
    write_result(psd, out / f"psd_{label}.csv")


def _oracle_set(args: argparse.Namespace, lag_time: float) -> ResonanceSet:
    spec = OuSpec(a=args.ou_a, s=args.ou_s, omega=args.ou_omega)
    lambdas = np.array(ou_resonances(spec, args.n_max))
    zetas = np.exp(lambdas * lag_time)
    return ResonanceSet(
        lag_time=lag_time,
        zetas=zetas,
        lambdas=lambdas,
        indices=np.arange(1, len(lambdas) + 1),
        residuals=np.zeros(len(lambdas)),
    )


def cmd_compare(args: argparse.Namespace) -> None:
    a = read_resonances(args.resonances)
    if args.other:
        b = read_resonances(args.other)
    elif args.ou_a is not None:
        b = _oracle_set(args, a.lag_time)
    else:
        raise ValueError("compare needs a second resonance file or --ou-a")
    matched = match_resonances(a, b)
    rows = [
        {
            "k_a": m["k_a"],
            "k_b": m["k_b"],
            "lambda_a": [m["lambda_a"].real, m["lambda_a"].imag],
            "lambda_b": [m["lambda_b"].real, m["lambda_b"].imag],
            "distance": m["distance"],
        }
        for m in matched
    ]
    payload = {"a": resonances_payload(a), "matched": rows}
    if args.out:
        write_json(payload, args.out)
    print(json.dumps(rows, indent=2))


def cmd_reproduce(args: argparse.Namespace) -> None:
    config = reproduce_config(args.case, args.scale, seed=args.seed, output_dir=args.output_dir)
    if args.threads is not None:
        config = config.model_copy(update={"threads": args.threads})
    if args.scale == "full":
        logger.warning("Full-scale runs integrate billions of steps and take a long time")
    result = run_pipeline(config)
    print(result.directory)


def cmd_run(args: argparse.Namespace) -> None:
    config = PipelineConfig.model_validate_json(Path(args.config).read_text(encoding="utf-8"))
    if args.threads is not None:
        config = config.model_copy(update={"threads": args.threads})
    result = run_pipeline(config)
    print(result.directory)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ruelle", description="Reduced resonances of SDEs from observed trajectories."
    )
    parser.add_argument("--threads", type=int, default=None, help="Worker cap for counting.")
    verbosity = parser.add_mutually_exclusive_group()
    verbosity.add_argument("--verbose", action="store_true")
    verbosity.add_argument("--quiet", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="Integrate a built-in model to a trajectory CSV.")
    p.add_argument("--model", required=True)
    p.add_argument("--param", action="append", default=[], metavar="KEY=VALUE")
    p.add_argument("--dt", type=float, required=True)
    p.add_argument("--total-time", type=float, required=True)
    p.add_argument("--transient-time", type=float, default=0.0)
    p.add_argument("--stride", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--x0", type=float, nargs="+")
    p.add_argument("--observe", type=int, nargs="+", help="Keep only these coordinates.")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("estimate", help="Estimate the transition matrix of a trajectory.")
    p.add_argument("--series", required=True)
    p.add_argument("--columns", type=int, nargs="+")
    p.add_argument("--lows", type=float, nargs="+", required=True)
    p.add_argument("--highs", type=float, nargs="+", required=True)
    p.add_argument("--cells", type=int, nargs="+", required=True)
    p.add_argument("--lag-time", type=float, required=True)
    p.add_argument("--min-count", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("spectrum", help="Leading eigenpairs and resonances of a transition matrix.")
    p.add_argument("--transition", required=True, help="Directory written by estimate.")
    p.add_argument("--k", type=int, default=20)
    p.add_argument("--dense-threshold", type=int, default=2000)
    p.add_argument("--tol", type=float, default=1e-10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--exclude-degenerate", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_spectrum)

    p = sub.add_parser("reconstruct", help="Reconstruct ACF and PSD against sample estimates.")
    p.add_argument("--transition", required=True)
    p.add_argument("--spectral", required=True, help="spectral.npz written by spectrum.")
    p.add_argument("--series", required=True)
    p.add_argument("--columns", type=int, nargs="+")
    p.add_argument("--column", type=int, default=0)
    p.add_argument("--n-lags", type=int, default=100)
    p.add_argument("--segment-len", type=int, default=4096)
    p.add_argument("--overlap", type=float, default=0.5)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("compare", help="Match two resonance sets, or one against the OU oracle.")
    p.add_argument("resonances")
    p.add_argument("other", nargs="?")
    p.add_argument("--ou-a", type=float)
    p.add_argument("--ou-s", type=float, default=1.0)
    p.add_argument("--ou-omega", type=float)
    p.add_argument("--n-max", type=int, default=3)
    p.add_argument("--out")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("reproduce", help="Run a preset experiment.")
    p.add_argument("case", choices=CASES)
    p.add_argument("--scale", choices=SCALES, default="desk")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--output-dir", default=default_output_dir())
    p.set_defaults(func=cmd_reproduce)

    p = sub.add_parser("run", help="Run the full pipeline from a JSON config.")
    p.add_argument("--config", required=True)
    p.set_defaults(func=cmd_run)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    _configure_logging(args)
    try:
        args.func(args)
    except PipelineError as e:
        logger.error(str(e))
        print(f"error: {e}", file=sys.stderr)
        return 1
    except (RuelleError, ValueError, OSError) as e:
        message = f"[{args.command}] {e}"
        logger.error(message)
        print(f"error: {message}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
