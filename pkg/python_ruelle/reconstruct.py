from dataclasses import dataclass, field
from typing import Any, Dict, Optional

import numpy as np
from loguru import logger
from scipy import signal

from .exceptions import SingularLorentzianError
from .partition import GridPartition, centers, locate_many
from .sde import TimeSeries
from .spectral import ResonanceSet, SpectralData
from .transfer import TransitionMatrix

IMAG_TOL = 1e-8


@dataclass(frozen=True)
class Observable:
    values: np.ndarray
    centered: bool = False


@dataclass(frozen=True)
class ReconstructionResult:
    abscissa: np.ndarray
    reconstructed: np.ndarray
    sample: Optional[np.ndarray] = None
    weights: Optional[np.ndarray] = None
    metrics: Dict[str, float] = field(default_factory=dict)
    metadata: Dict[str, Any] = field(default_factory=dict)


def make_observable(values, measure: np.ndarray, center: bool = True) -> Observable:
    """Box values, optionally centered so that sum_j m_j values_j = 0."""
    values = np.asarray(values, dtype=float)
    measure = np.asarray(measure, dtype=float)
    if values.shape != measure.shape:
        raise ValueError("Observable needs one value per active box")
    if center:
        values = values - np.dot(measure, values)
    return Observable(values=values, centered=center)


def coordinate_observable(
    partition: GridPartition, tm: TransitionMatrix, component: int, center: bool = True
) -> Observable:
    """Coordinate function evaluated at the centers of the active boxes."""
    if not 0 <= component < partition.dim:
        raise ValueError(f"Component {component} out of range for dimension {partition.dim}")
    return make_observable(centers(partition, tm.active_boxes)[:, component], tm.measure, center)


def empirical_observable(
    series: TimeSeries,
    partition: GridPartition,
    tm: TransitionMatrix,
    column: int,
    center: bool = True,
) -> Observable:
    """Per-box average of a series column over the samples falling in each active box."""
    if not 0 <= column < series.dim:
        raise ValueError(f"Column {column} out of range for a {series.dim}-column series")
    boxes = locate_many(partition, series.data[:, : partition.dim])
    pos = np.searchsorted(tm.active_boxes, boxes)
    pos = np.clip(pos, 0, tm.size - 1)
    hit = (boxes >= 0) & (tm.active_boxes[pos] == boxes)
    sums = np.bincount(pos[hit], weights=series.data[hit, column], minlength=tm.size)
    counts = np.bincount(pos[hit], minlength=tm.size)
    values = np.divide(sums, counts, out=np.zeros(tm.size), where=counts > 0)
    return make_observable(values, tm.measure, center)


def weights(
    spec: SpectralData, m: np.ndarray, f: Observable, g: Observable
) -> np.ndarray:
    """
    Reconstruction weights w_k = <f, psi_k>_m * (phi_kᵀ g).

    The weight of the invariant-measure mode (zeta_1 = 1) is zero for
    centered observables and is set to exactly zero.

    :raises ValueError: If an observable is not centered against m
    """
    m = np.asarray(m, dtype=float)
    for name, obs in (("f", f), ("g", g)):
        scale = max(1.0, float(np.abs(obs.values).max(initial=0.0)))
        if not obs.centered or abs(np.dot(m, obs.values)) > 1e-10 * scale:
            raise ValueError(f"Observable {name} must be centered against the measure")
    if f.values.shape != m.shape or g.values.shape != m.shape:
        raise ValueError("Observables and measure must cover the same boxes")
    w = ((m * f.values) @ spec.right_vecs) * (spec.left_vecs.T @ g.values)
    if spec.k and abs(spec.zetas[0] - 1.0) <= 1e-8:
        w[0] = 0.0
    return w


def _check_aligned(rs: ResonanceSet, w: np.ndarray) -> np.ndarray:
    w = np.asarray(w, dtype=complex)
    if w.shape != rs.lambdas.shape:
        raise ValueError(
            f"{len(w)} weights do not match {len(rs.lambdas)} resonances"
        )
    return w


def reconstruct_correlation(rs: ResonanceSet, w: np.ndarray, lags) -> ReconstructionResult:
    """
    C(t) = sum_k w_k exp(lambda_k t), real part kept.

    :raises ValueError: If weights and resonances are misaligned or a lag is negative
    """
    w = _check_aligned(rs, w)
    lags = np.asarray(lags, dtype=float)
    if (lags < 0).any():
        raise ValueError("Lags must be nonnegative")
    total = np.exp(np.outer(lags, rs.lambdas)) @ w
    scale = max(float(np.abs(total.real).max(initial=0.0)), np.finfo(float).tiny)
    residue = float(np.abs(total.imag).max(initial=0.0)) / scale
    if residue > IMAG_TOL:
        logger.warning(f"Correlation reconstruction has imaginary residue {residue:.2e}")
    return ReconstructionResult(
        abscissa=lags,
        reconstructed=total.real,
        weights=w,
        metadata={"imag_residue": residue, "lag_time": rs.lag_time},
    )


def reconstruct_psd(
    rs: ResonanceSet, w: np.ndarray, freqs, weight_tol: float = 1e-12
) -> ReconstructionResult:
    """
    Lorentzian superposition
    S(f) = -(1/pi) sum_k w_k Re(lambda_k) / ((f - Im lambda_k)^2 + Re(lambda_k)^2).

    Frequencies are angular, in the units of Im lambda. Terms on the
    imaginary axis with zero weight are skipped and listed in the metadata.

    :raises SingularLorentzianError: If a weighted term has Re(lambda) = 0
    """
    w = _check_aligned(rs, w)
    freqs = np.asarray(freqs, dtype=float)
    re, im = rs.lambdas.real, rs.lambdas.imag
    negligible = np.abs(w) <= weight_tol * max(1.0, float(np.abs(w).max(initial=0.0)))
    on_axis = re >= -1e-12
    singular = on_axis & ~negligible
    if singular.any():
        raise SingularLorentzianError(
            f"Resonances {list(rs.indices[singular])} lie on the imaginary axis with nonzero weight"
        )
    use = ~on_axis & ~negligible
    excluded = [int(k) for k in rs.indices[on_axis]]
    if excluded:
        logger.debug(f"Skipping on-axis resonances {excluded} in the PSD")

    lorentz = re[use] / ((freqs[:, None] - im[use]) ** 2 + re[use] ** 2)
    total = -(lorentz @ w[use]) / np.pi
    return ReconstructionResult(
        abscissa=freqs,
        reconstructed=total.real,
        weights=w,
        metadata={
            "angular": True,
            "excluded": excluded,
            "imag_residue": float(np.abs(total.imag).max(initial=0.0)),
        },
    )


def fold_psd(rs: ResonanceSet, w: np.ndarray, freqs) -> ReconstructionResult:
    """One-sided density S(f) + S(-f), comparable with a one-sided sample estimate."""
    freqs = np.asarray(freqs, dtype=float)
    pos = reconstruct_psd(rs, w, freqs)
    neg = reconstruct_psd(rs, w, -freqs)
    return ReconstructionResult(
        abscissa=freqs,
        reconstructed=pos.reconstructed + neg.reconstructed,
        weights=pos.weights,
        metadata={**pos.metadata, "one_sided": True},
    )


def _column(series: TimeSeries, column: int) -> np.ndarray:
    if not 0 <= column < series.dim:
        raise ValueError(f"Column {column} out of range for a {series.dim}-column series")
    return series.data[:, column]


def sample_acf(series: TimeSeries, column: int, max_lag_steps: int) -> ReconstructionResult:
    """
    Mean-removed lag covariance C(l dt) = 1/(N-l) sum_n (y_n - ybar)(y_{n+l} - ybar)
    for l = 0..max_lag_steps.

    :raises ValueError: If max_lag_steps >= N
    """
    y = _column(series, column)
    n = len(y)
    if not 0 <= max_lag_steps < n:
        raise ValueError(f"max_lag_steps must lie in [0, {n}), got {max_lag_steps}")
    y = y - y.mean()
    full = signal.correlate(y, y, mode="full", method="fft")
    lags = np.arange(max_lag_steps + 1)
    acf = full[n - 1 : n + max_lag_steps] / (n - lags)
    return ReconstructionResult(
        abscissa=lags * series.sample_dt,
        reconstructed=acf,
        sample=acf,
        metadata={"estimator": "acf", "column": series.labels[column]},
    )


def sample_psd(
    series: TimeSeries,
    column: int,
    segment_len: int,
    overlap: float = 0.5,
    angular: bool = False,
) -> ReconstructionResult:
    """
    Welch estimate from Hann-windowed segments, one-sided, normalized so the
    integral over frequency approximates the variance.

    Frequencies are in cycles per unit time, or radians per unit time with
    ``angular=True`` (density rescaled accordingly).

    :raises ValueError: If the segmenting is invalid
    """
    y = _column(series, column)
    if not 2 <= segment_len <= len(y):
        raise ValueError(f"segment_len must lie in [2, {len(y)}], got {segment_len}")
    if not 0 <= overlap < 1:
        raise ValueError("overlap must lie in [0, 1)")
    freqs, psd = signal.welch(
        y,
        fs=1.0 / series.sample_dt,
        window="hann",
        nperseg=segment_len,
        noverlap=int(overlap * segment_len),
        detrend="constant",
        scaling="density",
        return_onesided=True,
    )
    if angular:
        freqs = 2 * np.pi * freqs
        psd = psd / (2 * np.pi)
    return ReconstructionResult(
        abscissa=freqs,
        reconstructed=psd,
        sample=psd,
        metadata={"estimator": "welch", "angular": angular, "one_sided": True},
    )


def compare(recon, sample) -> Dict[str, float]:
    """
    rmse, rmse divided by the standard deviation of the sample values, and
    the largest absolute error.

    :raises ValueError: If lengths differ
    """
    recon = np.asarray(recon, dtype=float)
    sample = np.asarray(sample, dtype=float)
    if recon.shape != sample.shape:
        raise ValueError(f"Length mismatch: {recon.shape} vs {sample.shape}")
    err = recon - sample
    rmse = float(np.sqrt(np.mean(err**2))) if err.size else 0.0
    spread = float(np.std(sample)) if sample.size else 0.0
    if spread > 0:
        normalized = rmse / spread
    else:
        normalized = 0.0 if rmse == 0 else float("inf")
    return {
        "rmse": rmse,
        "normalized_rmse": normalized,
        "max_abs_error": float(np.abs(err).max(initial=0.0)),
    }
