from dataclasses import dataclass, field
from typing import Callable, Dict, List, Sequence, Tuple

import numpy as np
import sdeint
from loguru import logger

from .exceptions import SimulationDivergedError
from .helpers import make_rng, spawn_seeds
from .models import SimulationConfig

VectorField = Callable[[np.ndarray], np.ndarray]

# Parameter regimes of the slow-fast benchmark, with the lag used for each.
BENCHMARK_CASES: Dict[str, Dict[str, float]] = {
    "case1": {"lam": 1e-3, "f": 100.0, "gamma": 5.6e-2, "eps": 1e-2, "sigma": 0.55, "tau": 1e-3},
    "case2": {"lam": 1e-3, "f": 10.0, "gamma": 1.0, "eps": 1e-2, "sigma": 0.2, "tau": 1e-2},
    "case3": {"lam": 1e-3, "f": 10.0, "gamma": 1.0, "eps": 10.0, "sigma": 0.3, "tau": 1e-2},
}


@dataclass(frozen=True)
class SdeModel:
    """
    Itô SDE dX = F(X) dt + D(X) dW with X in R^d and W in R^q.

    ``drift`` and ``diffusion`` accept batches: an array of shape (..., d)
    maps to (..., d) and (..., d, q) respectively.
    """

    name: str
    dim_state: int
    dim_noise: int
    params: Dict[str, float]
    drift: VectorField
    diffusion: VectorField
    labels: Tuple[str, ...]
    default_x0: Tuple[float, ...]
    additive: bool = False


@dataclass(frozen=True)
class TimeSeries:
    sample_dt: float
    data: np.ndarray
    labels: Tuple[str, ...] = field(default=())

    def __post_init__(self):
        data = np.array(self.data, dtype=float, copy=True)
        if data.ndim == 1:
            data = data[:, None]
        if data.ndim != 2 or data.shape[0] < 1:
            raise ValueError("A series needs at least one sample")
        if not np.isfinite(data).all():
            raise ValueError("Series entries must be finite")
        if not self.sample_dt > 0:
            raise ValueError("sample_dt must be positive")
        labels = tuple(self.labels) or tuple(f"y{i}" for i in range(data.shape[1]))
        if len(labels) != data.shape[1]:
            raise ValueError("One label per column is required")
        data.setflags(write=False)
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "labels", labels)

    def __len__(self) -> int:
        return self.data.shape[0]

    @property
    def dim(self) -> int:
        return self.data.shape[1]

    @property
    def times(self) -> np.ndarray:
        return np.arange(len(self)) * self.sample_dt


def _check_point(model: SdeModel, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape != (model.dim_state,):
        raise ValueError(
            f"Model {model.name} expects a state of length {model.dim_state}, got shape {x.shape}"
        )
    if not np.isfinite(x).all():
        raise ValueError("State must be finite")
    return x


def drift_eval(model: SdeModel, x) -> np.ndarray:
    return model.drift(_check_point(model, x))


def diffusion_eval(model: SdeModel, x) -> np.ndarray:
    return model.diffusion(_check_point(model, x))


def covariance_eval(model: SdeModel, x) -> np.ndarray:
    """Σ(x) = D(x) D(x)ᵀ."""
    d = diffusion_eval(model, x)
    return d @ d.T


def euler_maruyama(
    model: SdeModel, config: SimulationConfig, chunk_size: int = 65536
) -> TimeSeries:
    """
    Integrate the model with the Euler-Maruyama scheme.

    The first ``transient_steps`` steps are discarded, then every
    ``stride``-th state is kept, starting with the state reached at the end
    of the transient. Output depends on (model, config) only, not on
    ``chunk_size``.

    The kernel steps in a Python loop, roughly 25 µs per step for the 3D
    slow-fast model, so a desk-scale benchmark case (4.1e7 steps) takes
    about a quarter of an hour.

    :param model: SDE to integrate
    :param config: step size, step counts, stride, seed and initial state
    :param chunk_size: number of steps handed to the stepping kernel at once
    :return: TimeSeries with sample_dt = dt * stride
    :raises ValueError: If x0 does not match the model dimension
    :raises SimulationDivergedError: If the state stops being finite
    """
    x = _check_point(model, config.x0)
    rng = make_rng(config.seed)
    total = config.transient_steps + config.n_steps
    sqrt_dt = np.sqrt(config.dt)
    dt = config.dt

    def f(y, t):
        return model.drift(y) * dt

    def g(y, t):
        return model.diffusion(y)

    kept: List[np.ndarray] = []
    if config.transient_steps == 0:
        kept.append(x[None, :])

    done = 0
    while done < total:
        n = min(chunk_size, total - done)
        dw = rng.standard_normal((n, model.dim_noise)) * sqrt_dt
        # time in units of dt, so the kernel step is exactly 1 for any chunk length
        tspan = np.arange(n + 1, dtype=float)
        with np.errstate(all="ignore"):
            try:
                path = sdeint.itoEuler(f, g, x, tspan, dW=dw)[1:]
            except sdeint.SDEValueError as e:
                logger.error(f"Invalid model for integration: {e}")
                raise ValueError(f"Invalid model for integration: {e}")

        finite = np.isfinite(path).all(axis=1)
        if not finite.all():
            step = done + int(np.argmin(finite)) + 1
            logger.error(f"Simulation of {model.name} diverged at step {step}")
            raise SimulationDivergedError(
                f"Simulation of {model.name} diverged at step {step}", step=step
            )

        steps = np.arange(done + 1, done + n + 1)
        offset = steps - config.transient_steps
        keep = (offset >= 0) & (offset % config.stride == 0)
        if keep.any():
            kept.append(path[keep])

        x = path[-1]
        done += n
        logger.debug(f"{model.name}: integrated {done}/{total} steps")

    data = np.concatenate(kept, axis=0)
    logger.info(
        f"Simulated {model.name}: {total} steps, {data.shape[0]} samples at dt={config.sample_dt}"
    )
    return TimeSeries(sample_dt=config.sample_dt, data=data, labels=model.labels)


def simulate_ensemble(
    model: SdeModel, config: SimulationConfig, n_runs: int
) -> List[TimeSeries]:
    """Independent trajectories with seeds spawned from ``config.seed``."""
    if n_runs < 1:
        raise ValueError("n_runs must be positive")
    return [
        euler_maruyama(model, config.model_copy(update={"seed": seed}))
        for seed in spawn_seeds(config.seed, n_runs)
    ]


def observe(series: TimeSeries, components: Sequence[int]) -> TimeSeries:
    components = list(components)
    if not components:
        raise ValueError("At least one component must be observed")
    for c in components:
        if not 0 <= c < series.dim:
            raise ValueError(f"Component {c} out of range for a {series.dim}-column series")
    return TimeSeries(
        sample_dt=series.sample_dt,
        data=series.data[:, components],
        labels=tuple(series.labels[c] for c in components),
    )


def _slowfast3d(lam: float = 1e-3, f: float = 10.0, gamma: float = 1.0, eps: float = 10.0, sigma: float = 0.3) -> SdeModel:
    noise = np.diag([sigma, sigma, sigma / np.sqrt(eps)])

    def drift(x):
        u, v, z = x[..., 0], x[..., 1], x[..., 2]
        return np.stack(
            [
                lam * u - f * v - gamma * u * z,
                f * u + lam * v - gamma * v * z,
                -(z - u**2 - v**2) / eps,
            ],
            axis=-1,
        )

    def diffusion(x):
        return np.broadcast_to(noise, x.shape[:-1] + noise.shape)

    return SdeModel(
        name="slowfast3d",
        dim_state=3,
        dim_noise=3,
        params={"lam": lam, "f": f, "gamma": gamma, "eps": eps, "sigma": sigma},
        drift=drift,
        diffusion=diffusion,
        labels=("x", "y", "z"),
        default_x0=(1.0, 0.0, 1.0),
        additive=True,
    )


def _hopf2d(lam: float = 1e-3, f: float = 10.0, gamma: float = 1.0, sigma: float = 0.3) -> SdeModel:
    noise = sigma * np.eye(2)

    def drift(x):
        u, v = x[..., 0], x[..., 1]
        r2 = u**2 + v**2
        return np.stack(
            [lam * u - f * v - gamma * u * r2, f * u + lam * v - gamma * v * r2],
            axis=-1,
        )

    def diffusion(x):
        return np.broadcast_to(noise, x.shape[:-1] + noise.shape)

    return SdeModel(
        name="hopf2d",
        dim_state=2,
        dim_noise=2,
        params={"lam": lam, "f": f, "gamma": gamma, "sigma": sigma},
        drift=drift,
        diffusion=diffusion,
        labels=("u", "v"),
        default_x0=(1.0, 0.0),
        additive=True,
    )


def _ou1d(a: float = 1.0, s: float = float(np.sqrt(2.0))) -> SdeModel:
    noise = np.array([[s]])

    def drift(x):
        return -a * x

    def diffusion(x):
        return np.broadcast_to(noise, x.shape[:-1] + noise.shape)

    return SdeModel(
        name="ou1d",
        dim_state=1,
        dim_noise=1,
        params={"a": a, "s": s},
        drift=drift,
        diffusion=diffusion,
        labels=("x",),
        default_x0=(0.0,),
        additive=True,
    )


def _ou2d_rotating(a: float = 0.5, omega: float = 2.0, s: float = 1.0) -> SdeModel:
    A = np.array([[-a, -omega], [omega, -a]])
    noise = s * np.eye(2)

    def drift(x):
        return x @ A.T

    def diffusion(x):
        return np.broadcast_to(noise, x.shape[:-1] + noise.shape)

    return SdeModel(
        name="ou2d-rotating",
        dim_state=2,
        dim_noise=2,
        params={"a": a, "omega": omega, "s": s},
        drift=drift,
        diffusion=diffusion,
        labels=("x", "y"),
        default_x0=(0.0, 0.0),
        additive=True,
    )


BUILTIN_MODELS: Dict[str, Callable[..., SdeModel]] = {
    "slowfast3d": _slowfast3d,
    "hopf2d": _hopf2d,
    "ou1d": _ou1d,
    "ou2d-rotating": _ou2d_rotating,
}


def build_model(name: str, **params: float) -> SdeModel:
    """
    Instantiate a built-in model, overriding its default parameters.

    :param name: one of BUILTIN_MODELS
    :raises ValueError: If the name or a parameter is unknown
    """
    if name not in BUILTIN_MODELS:
        raise ValueError(f"Unknown model {name!r}; choose from {sorted(BUILTIN_MODELS)}")
    try:
        return BUILTIN_MODELS[name](**{k: float(v) for k, v in params.items()})
    except TypeError as e:
        raise ValueError(f"Invalid parameters for {name}: {e}")


def benchmark_case(name: str) -> Dict[str, float]:
    if name not in BENCHMARK_CASES:
        raise ValueError(f"Unknown case {name!r}; choose from {sorted(BENCHMARK_CASES)}")
    return dict(BENCHMARK_CASES[name])
