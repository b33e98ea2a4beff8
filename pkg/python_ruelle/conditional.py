import math
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
from loguru import logger

from .exceptions import DomainExitError, InsufficientDataError
from .helpers import make_rng
from .models import SimulationConfig
from .partition import GridPartition, centers, locate_many
from .sde import SdeModel, TimeSeries


@dataclass(frozen=True)
class ConditionalField:
    """
    Per-box averages of the projected drift and diffusion tensor over the
    samples whose observation falls in the box. Arrays are indexed by flat
    box index over the whole partition; boxes with ``usable == False`` hold
    zeros.
    """

    partition: GridPartition
    projection: Tuple[int, ...]
    drift_bar: np.ndarray
    sigma_bar: np.ndarray
    counts: np.ndarray
    usable: np.ndarray
    sq_norm_mean: np.ndarray
    extra: Optional[np.ndarray] = None
    extra_labels: Tuple[str, ...] = ()
    min_count: int = 1


def estimate_conditional_field(
    full_series: TimeSeries,
    model: SdeModel,
    partition: GridPartition,
    projection: Sequence[int],
    min_count: int = 1,
    extra: Sequence[int] = (),
    chunk_size: int = 1_000_000,
) -> ConditionalField:
    """
    Average F and D Dᵀ, projected on the observed coordinates, over every
    sample of the full-state series, box by box in the observed space.

    :param full_series: trajectory of the full state, one column per model coordinate
    :param model: model that generated the series
    :param partition: grid on the observed space
    :param projection: observed coordinates
    :param min_count: boxes with fewer samples are flagged unusable
    :param extra: unobserved coordinates whose per-box mean is also returned
    :raises ValueError: If indices or dimensions are inconsistent
    :raises InsufficientDataError: If no box reaches min_count
    """
    projection = tuple(int(i) for i in projection)
    extra = tuple(int(i) for i in extra)
    if full_series.dim != model.dim_state:
        raise ValueError(
            f"Series has {full_series.dim} columns but {model.name} has {model.dim_state} coordinates"
        )
    for i in projection + extra:
        if not 0 <= i < model.dim_state:
            raise ValueError(f"Coordinate {i} out of range for {model.name}")
    if len(projection) != partition.dim:
        raise ValueError("The projection must match the partition dimension")

    M, p = partition.n_boxes, len(projection)
    counts = np.zeros(M, dtype=np.int64)
    drift_sum = np.zeros((M, p))
    sigma_sum = np.zeros((M, p, p))
    sq_sum = np.zeros(M)
    extra_sum = np.zeros((M, len(extra)))
    proj = np.asarray(projection)

    constant_sigma = None
    if model.additive:
        d = model.diffusion(full_series.data[0])
        constant_sigma = (d @ d.T)[np.ix_(proj, proj)]

    for start in range(0, len(full_series), chunk_size):
        x = full_series.data[start : start + chunk_size]
        boxes = locate_many(partition, x[:, proj])
        inside = boxes >= 0
        x, boxes = x[inside], boxes[inside]
        if not len(boxes):
            continue
        counts += np.bincount(boxes, minlength=M)
        drift = model.drift(x)[:, proj]
        for a in range(p):
            drift_sum[:, a] += np.bincount(boxes, weights=drift[:, a], minlength=M)
        if constant_sigma is None:
            d = model.diffusion(x)
            sigma = np.einsum("nik,njk->nij", d, d)[:, proj][:, :, proj]
            for a in range(p):
                for b in range(p):
                    sigma_sum[:, a, b] += np.bincount(boxes, weights=sigma[:, a, b], minlength=M)
        sq_sum += np.bincount(boxes, weights=(x[:, proj] ** 2).sum(axis=1), minlength=M)
        for e, col in enumerate(extra):
            extra_sum[:, e] += np.bincount(boxes, weights=x[:, col], minlength=M)

    usable = counts >= max(min_count, 1)
    if not usable.any():
        raise InsufficientDataError(f"No box collects {max(min_count, 1)} samples")

    safe = np.where(counts > 0, counts, 1)
    drift_bar = np.where(usable[:, None], drift_sum / safe[:, None], 0.0)
    if constant_sigma is None:
        sigma_bar = sigma_sum / safe[:, None, None]
        sigma_bar = 0.5 * (sigma_bar + sigma_bar.transpose(0, 2, 1))
    else:
        sigma_bar = np.broadcast_to(constant_sigma, (M, p, p)).copy()
    sigma_bar[~usable] = 0.0

    logger.info(
        f"Conditional field: {int(usable.sum())}/{M} usable boxes from {int(counts.sum())} samples"
    )
    return ConditionalField(
        partition=partition,
        projection=projection,
        drift_bar=drift_bar,
        sigma_bar=sigma_bar,
        counts=counts,
        usable=usable,
        sq_norm_mean=np.where(usable, sq_sum / safe, 0.0),
        extra=np.where(usable[:, None], extra_sum / safe[:, None], 0.0) if extra else None,
        extra_labels=tuple(full_series.labels[i] for i in extra),
        min_count=min_count,
    )


def noise_factors(field: ConditionalField) -> Tuple[np.ndarray, int]:
    """
    Symmetric square roots sigma(v) with sigma sigmaᵀ = Sigma_bar(v).

    Negative eigenvalues from sampling noise are clipped at zero.

    :return: factors of shape (M, p, p) and the number of clipped eigenvalues
    """
    vals, vecs = np.linalg.eigh(field.sigma_bar)
    clipped = int((vals[field.usable] < 0).sum())
    if clipped:
        logger.warning(f"Clipped {clipped} negative eigenvalues of the averaged diffusion")
    root = np.sqrt(np.clip(vals, 0.0, None))
    return np.einsum("mij,mj,mkj->mik", vecs, root, vecs), clipped


class _BoxLookup:
    """Scalar point-to-box lookup for the stepping loop."""

    def __init__(self, partition: GridPartition):
        self.lows = list(partition.lows)
        self.highs = list(partition.highs)
        self.cells = list(partition.cells)
        self.strides = [int(np.prod(partition.cells[i + 1 :])) for i in range(partition.dim)]

    def __call__(self, x) -> int:
        flat = 0
        for xi, lo, hi, n, stride in zip(x, self.lows, self.highs, self.cells, self.strides):
            if not lo <= xi <= hi:
                return -1
            flat += min(int(math.floor((xi - lo) / (hi - lo) * n)), n - 1) * stride
        return flat


def simulate_reduced(
    field: ConditionalField,
    config: SimulationConfig,
    policy: str = "error",
    chunk_size: int = 65536,
) -> TimeSeries:
    """
    Euler-Maruyama for dv = F_bar(v) dt + sigma(v) dW with coefficients
    constant on each box.

    With ``policy="reflect"`` a step landing outside the usable boxes is
    replaced by the reversed increment, or by no move if that also leaves
    them.

    :raises ValueError: If the initial state is not in a usable box
    :raises DomainExitError: If the trajectory leaves the usable boxes and policy="error"
    """
    if policy not in ("error", "reflect"):
        raise ValueError("policy must be 'error' or 'reflect'")
    p = field.partition.dim
    x = np.asarray(config.x0, dtype=float)
    if x.shape != (p,):
        raise ValueError(f"x0 must have length {p}")
    lookup = _BoxLookup(field.partition)
    box = lookup(x)
    if box < 0 or not field.usable[box]:
        raise ValueError("The initial state must lie in a usable box")

    factors, _ = noise_factors(field)
    usable = field.usable
    rng = make_rng(config.seed)
    sqrt_dt = math.sqrt(config.dt)
    total = config.transient_steps + config.n_steps

    kept: List[np.ndarray] = [x.copy()] if config.transient_steps == 0 else []
    reflections = 0
    step = 0
    while step < total:
        n = min(chunk_size, total - step)
        dw = rng.standard_normal((n, p)) * sqrt_dt
        for j in range(n):
            step += 1
            inc = field.drift_bar[box] * config.dt + factors[box] @ dw[j]
            proposal = x + inc
            nxt = lookup(proposal)
            if nxt < 0 or not usable[nxt]:
                if policy == "error":
                    logger.error(f"Reduced trajectory left the usable boxes at step {step}")
                    raise DomainExitError(
                        f"Reduced trajectory left the usable boxes at step {step}", step=step
                    )
                reflections += 1
                proposal = x - inc
                nxt = lookup(proposal)
                if nxt < 0 or not usable[nxt]:
                    proposal, nxt = x, box
            x, box = proposal, nxt
            offset = step - config.transient_steps
            if offset >= 0 and offset % config.stride == 0:
                kept.append(x.copy())

    if reflections:
        logger.info(f"Reduced simulation reflected {reflections} steps")
    labels = tuple(f"v{i}" for i in field.projection)
    return TimeSeries(sample_dt=config.sample_dt, data=np.array(kept), labels=labels)


def slow_manifold_error(
    field: ConditionalField, extra_index: int = 0, min_samples: int = 100, reference: str = "sample"
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Relative error of the per-box unobserved mean against |v|^2.

    The reference |v|^2 is the per-box sample mean ("sample") or the value at
    the box center ("center"). Where the reference is zero the absolute
    error is returned instead.

    :return: box indices, relative errors and box masses for boxes with at
        least ``min_samples`` samples
    """
    if field.extra is None:
        raise ValueError("The field carries no unobserved-coordinate averages")
    if reference not in ("sample", "center"):
        raise ValueError("reference must be 'sample' or 'center'")
    boxes = np.flatnonzero(field.counts >= min_samples)
    if reference == "sample":
        target = field.sq_norm_mean[boxes]
    else:
        target = (centers(field.partition, boxes) ** 2).sum(axis=1)
    zbar = field.extra[boxes, extra_index]
    gap = np.abs(zbar - target)
    error = np.divide(gap, target, out=gap.copy(), where=target > 0)
    mass = field.counts[boxes] / field.counts.sum()
    return boxes, error, mass
