import math
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Iterator, List, Optional, Tuple

import numpy as np
from loguru import logger
from scipy.integrate import trapezoid

from .artifacts import (
    resonances_payload,
    write_field,
    write_json,
    write_partition,
    write_result,
    write_resonances,
    write_series,
    write_spectral,
    write_transition,
)
from .conditional import estimate_conditional_field, simulate_reduced, slow_manifold_error
from .counting import TransitionCounter
from .exceptions import ConvergenceError, PipelineError, RuelleError
from .helpers import config_hash, run_slug
from .models import (
    EigenSection,
    ModelSection,
    PartitionSection,
    PipelineConfig,
    ReconstructionSection,
    SimulationConfig,
    SimulationSection,
)
from .partition import GridPartition, centers
from .reconstruct import (
    ReconstructionResult,
    compare,
    coordinate_observable,
    fold_psd,
    reconstruct_correlation,
    sample_acf,
    sample_psd,
    weights,
)
from .sde import SdeModel, TimeSeries, build_model, euler_maruyama, observe, benchmark_case
from .spectral import (
    ResonanceSet,
    SpectralData,
    leading_eigenpairs,
    match_resonances,
    nyquist_flags,
    resonances,
)
from .transfer import TransitionMatrix, estimate_transition, stationary_vector, total_variation

FAILED_MARKER = ".failed"
CASES = ("case1", "case2", "case3", "ou", "ou2d")
SCALES = ("desk", "full")


@dataclass
class RunArtifacts:
    directory: Path
    resonances: ResonanceSet
    manifest: Dict[str, Any] = field(default_factory=dict)


@contextmanager
def _stage(name: str, directory: Path) -> Iterator[None]:
    """Tag errors raised inside with the stage name and mark the run as failed."""
    try:
        yield
    except PipelineError:
        raise
    except (RuelleError, ValueError) as e:
        directory.mkdir(parents=True, exist_ok=True)
        (directory / FAILED_MARKER).write_text(f"{name}: {e}\n", encoding="utf-8")
        logger.error(f"Stage {name} failed: {e}")
        raise PipelineError(str(e), stage=name) from e


def run_directory(config: PipelineConfig) -> Path:
    digest = config_hash(config.model_dump(mode="json"))[:12]
    return Path(config.output_dir) / run_slug(config.model.name, "seed", config.simulation.seed, digest)


def _solve(tm: TransitionMatrix, eigen: EigenSection) -> Tuple[SpectralData, ResonanceSet]:
    spec = leading_eigenpairs(
        tm,
        k=min(eigen.k, tm.size),
        dense_threshold=eigen.dense_threshold,
        tol=eigen.tol,
        max_iter=eigen.max_iter,
        ncv=eigen.ncv,
        seed=eigen.seed,
        on_degenerate="exclude",
    )
    rs = resonances(spec, tm.lag_time)
    flagged = nyquist_flags(rs)
    if flagged.any():
        logger.warning(f"Resonances {list(rs.indices[flagged])} sit at the lag's Nyquist frequency")
    return spec, rs


def _estimate_resonances(
    observed: TimeSeries,
    partition: GridPartition,
    config: PipelineConfig,
    counter: TransitionCounter,
) -> ResonanceSet:
    tm = estimate_transition(observed, partition, config.lag_steps, config.min_count, counter)
    return _solve(tm, config.eigen)[1]


def _reconstruct_column(
    observed: TimeSeries,
    partition: GridPartition,
    tm: TransitionMatrix,
    spec,
    rs: ResonanceSet,
    column: int,
    section: ReconstructionSection,
):
    f = coordinate_observable(partition, tm, column)
    w = weights(spec, tm.measure, f, f)

    lags = np.arange(section.n_lags + 1) * tm.lag_time
    acf = reconstruct_correlation(rs, w, lags)
    max_steps = min(section.n_lags * tm.lag_steps, len(observed) - 1)
    sample = sample_acf(observed, column, max_steps).sample[:: tm.lag_steps]
    n = min(len(sample), len(lags))
    acf = ReconstructionResult(
        abscissa=lags[:n],
        reconstructed=acf.reconstructed[:n],
        sample=sample[:n],
        weights=w,
        metrics=compare(acf.reconstructed[:n], sample[:n]),
        metadata={**acf.metadata, "variance_box": float(np.dot(tm.measure, f.values**2))},
    )

    welch = sample_psd(
        observed,
        column,
        segment_len=min(section.segment_len, len(observed)),
        overlap=section.overlap,
        angular=section.angular,
    )
    freqs = welch.abscissa if section.angular else 2 * np.pi * welch.abscissa
    folded = fold_psd(rs, w, freqs)
    psd_values = folded.reconstructed if section.angular else 2 * np.pi * folded.reconstructed
    metrics = compare(psd_values, welch.sample)
    metrics["integral"] = float(trapezoid(folded.reconstructed, freqs))
    metrics["correlation_at_zero"] = float(acf.reconstructed[0])
    psd = ReconstructionResult(
        abscissa=welch.abscissa,
        reconstructed=psd_values,
        sample=welch.sample,
        weights=w,
        metrics=metrics,
        metadata={**folded.metadata, "angular": section.angular},
    )
    return acf, psd


def _slow_manifold_stage(
    model: SdeModel,
    sim: SimulationConfig,
    partition: GridPartition,
    config: PipelineConfig,
    rs: ResonanceSet,
    counter: TransitionCounter,
    directory: Path,
    observed: TimeSeries,
) -> Dict[str, Any]:
    """
    Integrate hopf2d with the same parameters, match its resonances against
    the observed ones and compare its ACF and PSD reconstructions with the
    sample estimates of the observed series.
    """
    params = {k: v for k, v in model.params.items() if k in ("lam", "f", "gamma", "sigma")}
    hopf = build_model("hopf2d", **params)
    x0 = [sim.x0[i] for i in config.projection]
    hopf_series = euler_maruyama(hopf, sim.model_copy(update={"x0": x0}))
    tm_hopf = estimate_transition(hopf_series, partition, config.lag_steps, config.min_count, counter)
    spec_hopf, rs_hopf = _solve(tm_hopf, config.eigen)
    write_resonances(rs_hopf, directory / "resonances_hopf2d.json")

    metrics: Dict[str, Any] = {}
    for column in config.reconstruction.columns:
        label = observed.labels[column]
        acf, psd = _reconstruct_column(
            observed, partition, tm_hopf, spec_hopf, rs_hopf, column, config.reconstruction
        )
        write_result(acf, directory / f"acf_hopf2d_{label}.csv")
        write_result(psd, directory / f"psd_hopf2d_{label}.csv")
        metrics[label] = {"acf": acf.metrics, "psd": psd.metrics}
    return {"matched": _jsonable(match_resonances(rs, rs_hopf)), "metrics": metrics}


def _conditional_stage(
    model: SdeModel,
    full: TimeSeries,
    partition: GridPartition,
    config: PipelineConfig,
    rs: ResonanceSet,
    counter: TransitionCounter,
    directory: Path,
) -> Dict[str, Any]:
    cond = estimate_conditional_field(
        full,
        model,
        partition,
        config.projection,
        min_count=max(config.min_count, 1),
        extra=config.extra_coordinates,
    )
    write_field(cond, directory / "conditional_field.csv")
    summary: Dict[str, Any] = {"usable_boxes": int(cond.usable.sum())}

    if cond.extra is not None and model.name == "slowfast3d":
        boxes, error, mass = slow_manifold_error(cond)
        good = error < 0.1
        summary["slow_manifold"] = {
            "boxes": int(len(boxes)),
            "mass_within_10pct": float(mass[good].sum()),
            "median_relative_error": float(np.median(error)) if len(boxes) else None,
        }

    start = centers(partition, [int(np.argmax(cond.counts))])[0]
    sample_dt = config.sample_dt
    reduced_config = SimulationConfig(
        dt=sample_dt,
        n_steps=int(round(config.simulation.total_time / sample_dt)),
        transient_steps=0,
        stride=1,
        seed=config.simulation.seed + 1,
        x0=[float(v) for v in start],
    )
    reduced = simulate_reduced(cond, reduced_config, policy="reflect")
    rs_reduced = _estimate_resonances(reduced, partition, config, counter)
    write_resonances(rs_reduced, directory / "resonances_conditional.json")
    summary["matched"] = _jsonable(match_resonances(rs, rs_reduced))
    return summary


def _jsonable(records: List[Dict[str, Any]]) -> List[Dict[str, Any]]:
    out = []
    for record in records:
        row = {}
        for key, value in record.items():
            if isinstance(value, complex):
                row[f"{key}_re"], row[f"{key}_im"] = value.real, value.imag
            else:
                row[key] = value
        out.append(row)
    return out


def run_pipeline(config: PipelineConfig, directory: Optional[Path] = None) -> RunArtifacts:
    """
    Simulate, observe, estimate the transition matrix, compute resonances and
    reconstruct the ACF and PSD of the requested columns, writing every
    artifact under ``directory`` (derived from the config by default).

    :raises PipelineError: Wrapping the first failing stage's error; a
        ``.failed`` marker is left in the run directory
    """
    directory = Path(directory) if directory is not None else run_directory(config)
    directory.mkdir(parents=True, exist_ok=True)
    (directory / FAILED_MARKER).unlink(missing_ok=True)
    write_json(config.model_dump(mode="json"), directory / "config.json")
    logger.info(f"Run directory {directory}")

    with _stage("config", directory):
        model = build_model(config.model.name, **config.model.params)
        sim = config.simulation.to_config(list(model.default_x0))
        partition = GridPartition.uniform(
            config.partition.lows, config.partition.highs, config.partition.cells
        )
        if partition.dim != len(config.projection):
            raise ValueError("The partition dimension must match the projection")
        for c in config.reconstruction.columns:
            if not 0 <= c < len(config.projection):
                raise ValueError(f"Reconstruction column {c} is not an observed coordinate")
        write_partition(partition, directory / "partition.json")

    with _stage("simulate", directory):
        full = euler_maruyama(model, sim)
        if config.write_trajectory:
            write_series(full, directory / "trajectory.csv")

    with _stage("observe", directory):
        observed = observe(full, config.projection)

    manifest: Dict[str, Any] = {
        "config_hash": config_hash(config.model_dump(mode="json")),
        "seed": config.simulation.seed,
        "sample_dt": config.sample_dt,
        "lag_steps": config.lag_steps,
        "n_samples": len(observed),
    }

    with _stage("transfer", directory):
        counter = TransitionCounter(config.threads)
    with counter:
        with _stage("transfer", directory):
            tm = estimate_transition(
                observed, partition, config.lag_steps, config.min_count, counter
            )
            write_transition(tm, directory)
            manifest["active_boxes"] = tm.size
            manifest["dropped_pair_fraction"] = tm.dropped_pair_fraction
            manifest["pruned_pair_fraction"] = tm.pruned_pair_fraction
            try:
                manifest["stationary_tv"] = total_variation(stationary_vector(tm), tm.measure)
            except ConvergenceError as e:
                logger.warning(f"Skipping the stationary-vector diagnostic: {e}")
                manifest["stationary_tv"] = None

        with _stage("spectral", directory):
            spec, rs = _solve(tm, config.eigen)
            write_resonances(rs, directory / "resonances.json")
            write_spectral(spec, directory / "spectral.npz")
            manifest["eigen_method"] = spec.method
            manifest["residuals"] = [float(r) for r in spec.residuals]
            manifest["excluded_clusters"] = [list(c) for c in spec.excluded]
            manifest["nyquist_items"] = [int(k) for k in rs.indices[nyquist_flags(rs)]]

        with _stage("reconstruct", directory):
            metrics: Dict[str, Any] = {}
            for column in config.reconstruction.columns:
                label = observed.labels[column]
                acf, psd = _reconstruct_column(
                    observed, partition, tm, spec, rs, column, config.reconstruction
                )
                write_result(acf, directory / f"acf_{label}.csv")
                write_result(psd, directory / f"psd_{label}.csv")
                metrics[label] = {"acf": acf.metrics, "psd": psd.metrics}
            write_json(metrics, directory / "metrics.json")
            manifest["metrics"] = metrics

        if config.slow_manifold_check:
            with _stage("slow_manifold", directory):
                if model.name != "slowfast3d":
                    raise ValueError("The slow-manifold comparison needs the slowfast3d model")
                manifest["slow_manifold"] = _slow_manifold_stage(
                    model, sim, partition, config, rs, counter, directory, observed
                )

        if config.conditional_check:
            with _stage("conditional", directory):
                manifest["conditional"] = _conditional_stage(
                    model, full, partition, config, rs, counter, directory
                )

    manifest["resonances"] = resonances_payload(rs)
    write_json(manifest, directory / "manifest.json")
    logger.info(f"Run complete: {len(rs)} resonances, gap {rs.gap}")
    return RunArtifacts(directory=directory, resonances=rs, manifest=manifest)


def reproduce_config(
    case: str, scale: str = "desk", seed: int = 0, output_dir: str = "runs"
) -> PipelineConfig:
    """
    Preset configurations: the three slow-fast regimes observed in (x, y),
    and the 1D and rotating 2D OU validation runs.

    :raises ValueError: If the case or scale is unknown
    """
    if case not in CASES:
        raise ValueError(f"Unknown case {case!r}; choose from {list(CASES)}")
    if scale not in SCALES:
        raise ValueError(f"Unknown scale {scale!r}; choose from {list(SCALES)}")

    if case == "ou":
        return PipelineConfig(
            model=ModelSection(name="ou1d", params={"a": 1.0, "s": math.sqrt(2.0)}),
            simulation=SimulationSection(dt=1e-3, total_time=5e3, transient_time=10.0, seed=seed),
            projection=[0],
            partition=PartitionSection(lows=[-4.0], highs=[4.0], cells=[64]),
            lag_time=0.2,
            eigen=EigenSection(k=6),
            reconstruction=ReconstructionSection(n_lags=15, segment_len=8192),
            output_dir=output_dir,
        )
    if case == "ou2d":
        return PipelineConfig(
            model=ModelSection(name="ou2d-rotating", params={"a": 0.5, "omega": 2.0, "s": 1.0}),
            simulation=SimulationSection(dt=1e-3, total_time=5e3, transient_time=10.0, seed=seed),
            projection=[0, 1],
            partition=PartitionSection(lows=[-4.0, -4.0], highs=[4.0, 4.0], cells=[50, 50]),
            lag_time=0.1,
            eigen=EigenSection(k=10),
            reconstruction=ReconstructionSection(columns=[0, 1], n_lags=50, segment_len=8192),
            output_dir=output_dir,
        )

    params = benchmark_case(case)
    tau = params.pop("tau")
    if scale == "desk":
        simulation = SimulationSection(
            dt=1e-4, total_time=4e3, transient_time=1e2, stride=10, seed=seed
        )
        cells = [100, 100]
    else:
        simulation = SimulationSection(
            dt=1e-5, total_time=8e4, transient_time=1e3, stride=100, seed=seed
        )
        cells = [300, 300]
    return PipelineConfig(
        model=ModelSection(name="slowfast3d", params=params),
        simulation=simulation,
        projection=[0, 1],
        partition=PartitionSection(lows=[-6.0, -6.0], highs=[6.0, 6.0], cells=cells),
        lag_time=tau,
        eigen=EigenSection(k=20),
        reconstruction=ReconstructionSection(columns=[0], n_lags=100),
        output_dir=output_dir,
        slow_manifold_check=True,
        conditional_check=case in ("case1", "case3"),
        extra_coordinates=[2] if case == "case1" else [],
    )
