from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np
import pandas as pd
import scipy.sparse as sp
from loguru import logger

from .counting import TransitionCounter
from .exceptions import ConvergenceError, EmptyEstimateError, SeriesTooShortError
from .partition import GridPartition, locate_many
from .sde import TimeSeries


@dataclass(frozen=True)
class TransitionMatrix:
    """
    Maximum likelihood estimate of the reduced Markov operator at lag l.

    ``gamma`` is column-stochastic: gamma[i, j] estimates P(B_j -> B_i),
    with rows and columns indexed by position in ``active_boxes``.
    """

    active_boxes: np.ndarray
    counts: Optional[sp.csc_matrix]
    gamma: sp.csc_matrix
    lag_steps: int
    lag_time: float
    measure: np.ndarray
    n_boxes: int
    dropped_pair_fraction: float = 0.0
    pruned_pair_fraction: float = 0.0

    @property
    def size(self) -> int:
        return len(self.active_boxes)


def _pairs(boxes: Sequence[np.ndarray], lag_steps: int):
    src = [b[:-lag_steps] for b in boxes if len(b) > lag_steps]
    dst = [b[lag_steps:] for b in boxes if len(b) > lag_steps]
    return np.concatenate(src), np.concatenate(dst)


def _prune(counts: pd.DataFrame, threshold: int) -> pd.DataFrame:
    active = np.unique(counts["src"].to_numpy())
    while True:
        kept = counts[counts["src"].isin(active) & counts["dst"].isin(active)]
        totals = kept.groupby("src")["count"].sum()
        next_active = np.sort(totals.index[totals >= threshold].to_numpy())
        if np.array_equal(next_active, active):
            return kept
        active = next_active
        if active.size == 0:
            return kept.iloc[0:0]


def estimate_transition(
    series: Union[TimeSeries, Sequence[TimeSeries]],
    partition: GridPartition,
    lag_steps: int,
    min_count: int = 1,
    counter: Optional[TransitionCounter] = None,
) -> TransitionMatrix:
    """
    Estimate the transition matrix from one or several observed series.

    Pairs (Y_n, Y_{n+l}) with an endpoint outside the domain are dropped.
    Boxes whose outgoing count is below max(min_count, 1) are removed, as are
    transitions into them, until every remaining column meets the threshold.

    :param series: observed series, or independent series whose counts are merged
    :param partition: grid on the observed space
    :param lag_steps: lag l in samples
    :param min_count: minimum outgoing count of an active box
    :param counter: open counter to reuse; a private one is opened otherwise
    :raises ValueError: If the lag or dimensions are invalid
    :raises SeriesTooShortError: If no series is longer than the lag
    :raises EmptyEstimateError: If no pair lands inside the domain
    """
    runs = [series] if isinstance(series, TimeSeries) else list(series)
    if not runs:
        raise ValueError("No series given")
    if lag_steps < 1:
        raise ValueError("lag_steps must be at least 1")
    if min_count < 0:
        raise ValueError("min_count must be nonnegative")
    sample_dt = runs[0].sample_dt
    for run in runs:
        if run.dim != partition.dim:
            raise ValueError(
                f"Series has {run.dim} columns but the partition has dimension {partition.dim}"
            )
        if not np.isclose(run.sample_dt, sample_dt, rtol=1e-12, atol=0.0):
            raise ValueError("All series must share the same sample_dt")
    if all(len(run) <= lag_steps for run in runs):
        raise SeriesTooShortError(
            f"Series of length {max(len(r) for r in runs)} is too short for lag {lag_steps}"
        )

    boxes = [locate_many(partition, run.data) for run in runs]
    src, dst = _pairs(boxes, lag_steps)

    own_counter = counter is None
    counter = counter or TransitionCounter()
    try:
        counts, dropped = counter.count_pairs(src, dst)
        occupancy = counter.count_occupancy(np.concatenate(boxes))
    finally:
        if own_counter:
            counter.close()

    total_pairs = len(src)
    if counts.empty:
        raise EmptyEstimateError("No transition pair lies inside the partition domain")

    kept = _prune(counts, max(min_count, 1))
    if kept.empty:
        raise EmptyEstimateError(f"No box reaches min_count={min_count}")

    active = np.unique(kept["src"].to_numpy())
    n = active.size
    rows = np.searchsorted(active, kept["dst"].to_numpy())
    cols = np.searchsorted(active, kept["src"].to_numpy())
    values = kept["count"].to_numpy()
    count_matrix = sp.csc_matrix((values, (rows, cols)), shape=(n, n), dtype=np.int64)

    col_totals = np.bincount(cols, weights=values, minlength=n)
    gamma = sp.csc_matrix(
        (values / col_totals[cols], (rows, cols)), shape=(n, n), dtype=float
    )

    visits = occupancy.set_index("box")["count"].reindex(active, fill_value=0).to_numpy()
    measure = visits / visits.sum()

    in_domain = int(counts["count"].sum())
    retained = int(values.sum())
    tm = TransitionMatrix(
        active_boxes=active,
        counts=count_matrix,
        gamma=gamma,
        lag_steps=lag_steps,
        lag_time=lag_steps * sample_dt,
        measure=measure,
        n_boxes=partition.n_boxes,
        dropped_pair_fraction=dropped / total_pairs,
        pruned_pair_fraction=(in_domain - retained) / total_pairs,
    )
    logger.info(
        f"Transition matrix: {n}/{partition.n_boxes} active boxes, lag {lag_steps} "
        f"(tau={tm.lag_time}), dropped {tm.dropped_pair_fraction:.3%} of pairs"
    )
    return tm


def stationary_vector(
    tm: TransitionMatrix, tol: float = 1e-13, max_iter: int = 200000
) -> np.ndarray:
    """
    Probability vector fixed by gamma, by lazy power iteration from uniform.

    The lazy step (I + gamma) / 2 has the same fixed points as gamma and also
    converges on periodic chains; a chain with several fixed points keeps
    the uniform start, so the identity returns the uniform vector.

    :raises ConvergenceError: If the iteration cap is reached
    """
    n = tm.size
    if n == 0:
        raise ValueError("Empty transition matrix")
    pi = np.full(n, 1.0 / n)
    for _ in range(max_iter):
        nxt = 0.5 * (pi + tm.gamma @ pi)
        nxt /= nxt.sum()
        if np.abs(nxt - pi).sum() < tol:
            return np.clip(nxt, 0.0, None) / np.clip(nxt, 0.0, None).sum()
        pi = nxt
    raise ConvergenceError(
        f"Stationary vector did not converge in {max_iter} iterations",
        residuals=[float(np.abs(tm.gamma @ pi - pi).sum())],
    )


def total_variation(p: np.ndarray, q: np.ndarray) -> float:
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if p.shape != q.shape:
        raise ValueError("Distributions must have the same shape")
    return 0.5 * float(np.abs(p - q).sum())


def transition_from_matrix(
    gamma, lag_time: float = 1.0, measure: Optional[np.ndarray] = None
) -> TransitionMatrix:
    """
    Wrap a known column-stochastic matrix, e.g. an exact chain.

    :param gamma: dense or sparse column-stochastic matrix
    :param lag_time: tau the matrix represents
    :param measure: box masses; the stationary vector of gamma by default
    :raises ValueError: If gamma is not square and column-stochastic
    """
    gamma = sp.csc_matrix(gamma, dtype=float)
    n = gamma.shape[0]
    if gamma.shape != (n, n) or n == 0:
        raise ValueError("gamma must be a non-empty square matrix")
    if gamma.min() < 0 or not np.allclose(np.asarray(gamma.sum(axis=0)).ravel(), 1.0, atol=1e-12):
        raise ValueError("gamma must be column-stochastic")
    tm = TransitionMatrix(
        active_boxes=np.arange(n),
        counts=None,
        gamma=gamma,
        lag_steps=1,
        lag_time=lag_time,
        measure=np.full(n, 1.0 / n),
        n_boxes=n,
    )
    measure = stationary_vector(tm) if measure is None else np.asarray(measure, dtype=float)
    if measure.shape != (n,) or measure.min() < 0 or not np.isclose(measure.sum(), 1.0):
        raise ValueError("measure must be a probability vector over the boxes")
    return TransitionMatrix(
        active_boxes=tm.active_boxes,
        counts=None,
        gamma=gamma,
        lag_steps=1,
        lag_time=lag_time,
        measure=measure,
        n_boxes=n,
    )
