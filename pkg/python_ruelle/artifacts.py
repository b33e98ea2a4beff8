import json
from pathlib import Path
from typing import Any, Dict, Union

import numpy as np
import pandas as pd
import scipy.sparse as sp
from loguru import logger

from .conditional import ConditionalField
from .partition import GridPartition, from_json, to_json
from .reconstruct import ReconstructionResult
from .sde import TimeSeries
from .spectral import ResonanceSet, SpectralData
from .transfer import TransitionMatrix

PathLike = Union[str, Path]

FLOAT_FORMAT = "%.17g"


def _write_csv(frame: pd.DataFrame, path: PathLike) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
    return path


def write_json(payload: Dict[str, Any], path: PathLike) -> Path:
    """Pretty JSON with sorted keys and a trailing newline."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(json.dumps(payload, sort_keys=True, indent=2) + "\n")
    return path


def read_json(path: PathLike) -> Dict[str, Any]:
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def write_series(series: TimeSeries, path: PathLike) -> Path:
    frame = pd.DataFrame(series.data, columns=list(series.labels))
    frame.insert(0, "t", series.times)
    path = _write_csv(frame, path)
    logger.info(f"Wrote {len(series)} samples to {path}")
    return path


def read_series(path: PathLike) -> TimeSeries:
    """
    Load a trajectory CSV with header ``t,<labels...>``.

    :raises ValueError: If the time column is missing or not uniformly spaced
    """
    frame = pd.read_csv(path, float_precision="round_trip")
    if frame.columns[0] != "t" or frame.shape[1] < 2:
        raise ValueError(f"{path} must start with a 't' column followed by data columns")
    t = frame["t"].to_numpy(dtype=float)
    if len(t) < 2:
        raise ValueError(f"{path} needs at least two samples to define sample_dt")
    steps = np.diff(t)
    sample_dt = float(steps.mean())
    if not np.allclose(steps, sample_dt, rtol=1e-6, atol=0.0):
        raise ValueError(f"{path} is not uniformly sampled")
    labels = tuple(frame.columns[1:])
    return TimeSeries(sample_dt=sample_dt, data=frame[list(labels)].to_numpy(dtype=float), labels=labels)


def write_partition(partition: GridPartition, path: PathLike) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(to_json(partition) + "\n", encoding="utf-8")
    return path


def read_partition(path: PathLike) -> GridPartition:
    return from_json(Path(path).read_text(encoding="utf-8"))


def write_transition(tm: TransitionMatrix, directory: PathLike, name: str = "transition") -> Path:
    """
    Export as ``<name>.json`` (header), ``<name>.csv`` (``i,j,count,prob``
    over compact indices) and ``<name>_measure.csv`` (``box,mass``).
    """
    directory = Path(directory)
    header = {
        "active_boxes": [int(b) for b in tm.active_boxes],
        "dropped_pair_fraction": tm.dropped_pair_fraction,
        "lag_steps": tm.lag_steps,
        "lag_time": tm.lag_time,
        "n_boxes": tm.n_boxes,
        "pruned_pair_fraction": tm.pruned_pair_fraction,
    }
    write_json(header, directory / f"{name}.json")

    gamma = tm.gamma.tocoo()
    order = np.lexsort((gamma.row, gamma.col))
    rows, cols = gamma.row[order], gamma.col[order]
    if tm.counts is not None:
        counts = np.asarray(tm.counts.tocsc()[rows, cols]).ravel()
    else:
        counts = np.zeros(len(rows), dtype=np.int64)
    _write_csv(
        pd.DataFrame({"i": rows, "j": cols, "count": counts, "prob": gamma.data[order]}),
        directory / f"{name}.csv",
    )
    _write_csv(
        pd.DataFrame({"box": tm.active_boxes, "mass": tm.measure}),
        directory / f"{name}_measure.csv",
    )
    logger.info(f"Wrote transition matrix of {tm.size} boxes to {directory}")
    return directory / f"{name}.json"


def read_transition(directory: PathLike, name: str = "transition") -> TransitionMatrix:
    directory = Path(directory)
    header = read_json(directory / f"{name}.json")
    entries = pd.read_csv(directory / f"{name}.csv", float_precision="round_trip")
    measure = pd.read_csv(directory / f"{name}_measure.csv", float_precision="round_trip")
    active = np.asarray(header["active_boxes"], dtype=np.int64)
    if not np.array_equal(measure["box"].to_numpy(), active):
        raise ValueError(f"Measure and header of {name} disagree on the active boxes")
    n = len(active)
    rows, cols = entries["i"].to_numpy(), entries["j"].to_numpy()
    counts = entries["count"].to_numpy(dtype=np.int64)
    return TransitionMatrix(
        active_boxes=active,
        counts=sp.csc_matrix((counts, (rows, cols)), shape=(n, n)) if counts.any() else None,
        gamma=sp.csc_matrix((entries["prob"].to_numpy(dtype=float), (rows, cols)), shape=(n, n)),
        lag_steps=int(header["lag_steps"]),
        lag_time=float(header["lag_time"]),
        measure=measure["mass"].to_numpy(dtype=float),
        n_boxes=int(header.get("n_boxes", n)),
        dropped_pair_fraction=float(header["dropped_pair_fraction"]),
        pruned_pair_fraction=float(header.get("pruned_pair_fraction", 0.0)),
    )


def write_spectral(spec: SpectralData, path: PathLike) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        np.savez(
            fh,
            zetas=spec.zetas,
            right_vecs=spec.right_vecs,
            left_vecs=spec.left_vecs,
            residuals=spec.residuals,
            method=np.array(spec.method),
        )
    return path


def read_spectral(path: PathLike) -> SpectralData:
    with np.load(path) as data:
        return SpectralData(
            zetas=data["zetas"],
            right_vecs=data["right_vecs"],
            left_vecs=data["left_vecs"],
            residuals=data["residuals"],
            method=str(data["method"]),
        )


def resonances_payload(rs: ResonanceSet) -> Dict[str, Any]:
    return {
        "gap": rs.gap,
        "items": [
            {
                "k": int(k),
                "lambda_im": float(lam.imag),
                "lambda_re": float(lam.real),
                "residual": float(res),
                "zeta_im": float(z.imag),
                "zeta_re": float(z.real),
            }
            for k, z, lam, res in zip(rs.indices, rs.zetas, rs.lambdas, rs.residuals)
        ],
        "tau": rs.lag_time,
    }


def write_resonances(rs: ResonanceSet, path: PathLike) -> Path:
    path = write_json(resonances_payload(rs), path)
    logger.info(f"Wrote {len(rs)} resonances to {path}")
    return path


def read_resonances(path: PathLike) -> ResonanceSet:
    payload = read_json(path)
    items = payload["items"]
    zetas = np.array([complex(i["zeta_re"], i["zeta_im"]) for i in items])
    return ResonanceSet(
        lag_time=float(payload["tau"]),
        zetas=zetas,
        lambdas=np.array([complex(i["lambda_re"], i["lambda_im"]) for i in items]),
        indices=np.array([int(i["k"]) for i in items], dtype=np.int64),
        residuals=np.array([float(i["residual"]) for i in items]),
        gap=payload.get("gap"),
    )


def write_result(result: ReconstructionResult, path: PathLike) -> Path:
    """
    CSV ``abscissa,reconstructed[,sample]`` plus a JSON sidecar with the
    metrics and metadata.
    """
    frame = pd.DataFrame({"abscissa": result.abscissa, "reconstructed": result.reconstructed})
    if result.sample is not None:
        frame["sample"] = result.sample
    path = _write_csv(frame, path)
    write_json(
        {"metadata": result.metadata, "metrics": result.metrics},
        path.with_suffix(".json"),
    )
    return path


def write_field(field: ConditionalField, path: PathLike) -> Path:
    """CSV ``box,count,Fbar_1..Fbar_p,Sigmabar_ab (a <= b)[,<extra>bar]`` over usable boxes."""
    boxes = np.flatnonzero(field.usable)
    p = field.partition.dim
    columns: Dict[str, Any] = {"box": boxes, "count": field.counts[boxes]}
    for a in range(p):
        columns[f"Fbar_{a + 1}"] = field.drift_bar[boxes, a]
    for a in range(p):
        for b in range(a, p):
            columns[f"Sigmabar_{a + 1}{b + 1}"] = field.sigma_bar[boxes, a, b]
    if field.extra is not None:
        for e, label in enumerate(field.extra_labels):
            columns[f"{label}bar"] = field.extra[boxes, e]
    path = _write_csv(pd.DataFrame(columns), path)
    logger.info(f"Wrote conditional field over {len(boxes)} boxes to {path}")
    return path
