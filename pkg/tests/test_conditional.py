import numpy as np
import pytest

from python_ruelle.conditional import (
    ConditionalField,
    estimate_conditional_field,
    noise_factors,
    simulate_reduced,
    slow_manifold_error,
)
from python_ruelle.exceptions import DomainExitError, InsufficientDataError
from python_ruelle.models import SimulationConfig
from python_ruelle.partition import GridPartition, centers
from python_ruelle.sde import SdeModel, TimeSeries, build_model, euler_maruyama


def constant_drift_model(c):
    c = np.asarray(c, dtype=float)
    return SdeModel(
        name="constant",
        dim_state=len(c),
        dim_noise=1,
        params={},
        drift=lambda x: np.broadcast_to(c, np.shape(x)).copy(),
        diffusion=lambda x: np.zeros(np.shape(x) + (1,)),
        labels=tuple(f"x{i}" for i in range(len(c))),
        default_x0=tuple(0.0 for _ in c),
    )


def uniform_field(partition, drift, sigma, usable=None, extra=None, counts=None, sq_norm_mean=None):
    M, p = partition.n_boxes, partition.dim
    usable = np.ones(M, dtype=bool) if usable is None else np.asarray(usable)
    return ConditionalField(
        partition=partition,
        projection=tuple(range(p)),
        drift_bar=np.tile(np.asarray(drift, dtype=float), (M, 1)),
        sigma_bar=np.tile(np.asarray(sigma, dtype=float).reshape(p, p), (M, 1, 1)),
        counts=np.full(M, 10) if counts is None else np.asarray(counts),
        usable=usable,
        sq_norm_mean=np.zeros(M) if sq_norm_mean is None else np.asarray(sq_norm_mean, dtype=float),
        extra=extra,
    )


def test_constant_drift_is_recovered():
    rng = np.random.default_rng(0)
    series = TimeSeries(sample_dt=0.1, data=rng.uniform(-1, 1, size=(500, 2)))
    grid = GridPartition.uniform([-1.0, -1.0], [1.0, 1.0], [4, 4])
    field = estimate_conditional_field(series, constant_drift_model([1.0, -2.0]), grid, [0, 1])
    np.testing.assert_allclose(field.drift_bar[field.usable], np.tile([1.0, -2.0], (field.usable.sum(), 1)))
    np.testing.assert_array_equal(field.sigma_bar, 0.0)
    assert field.counts.sum() == 500


def test_linear_drift_at_box_centers():
    grid = GridPartition.uniform([0.0], [1.0], [10])
    series = TimeSeries(sample_dt=0.1, data=np.repeat(centers(grid), 3, axis=0))
    field = estimate_conditional_field(series, build_model("ou1d", a=1.0, s=0.5), grid, [0])
    np.testing.assert_allclose(field.drift_bar[:, 0], -centers(grid)[:, 0])
    np.testing.assert_allclose(field.sigma_bar[:, 0, 0], 0.25)
    assert field.counts.tolist() == [3] * 10


def test_unobserved_mean_and_slow_manifold():
    rng = np.random.default_rng(1)
    uv = rng.uniform(-1, 1, size=(2000, 2))
    data = np.column_stack([uv, (uv**2).sum(axis=1)])
    series = TimeSeries(sample_dt=0.1, data=data, labels=("x", "y", "z"))
    grid = GridPartition.uniform([-1.0, -1.0], [1.0, 1.0], [4, 4])
    field = estimate_conditional_field(series, build_model("slowfast3d"), grid, [0, 1], extra=[2])
    assert field.extra_labels == ("z",)
    boxes, error, mass = slow_manifold_error(field, min_samples=1)
    assert len(boxes) == 16
    np.testing.assert_allclose(error, 0.0, atol=1e-12)
    assert mass.sum() == pytest.approx(1.0)


def test_field_argument_errors():
    series = TimeSeries(sample_dt=0.1, data=np.zeros((10, 1)))
    grid = GridPartition.uniform([-1.0], [1.0], [2])
    model = build_model("ou1d")
    with pytest.raises(ValueError):
        estimate_conditional_field(series, build_model("hopf2d"), grid, [0])
    with pytest.raises(ValueError):
        estimate_conditional_field(series, model, grid, [1])
    with pytest.raises(InsufficientDataError):
        estimate_conditional_field(series, model, grid, [0], min_count=11)
    outside = TimeSeries(sample_dt=0.1, data=np.full((10, 1), 5.0))
    with pytest.raises(InsufficientDataError):
        estimate_conditional_field(outside, model, grid, [0])


def test_zero_field_keeps_the_initial_state():
    grid = GridPartition.uniform([-1.0, -1.0], [1.0, 1.0], [3, 3])
    field = uniform_field(grid, [0.0, 0.0], np.zeros((2, 2)))
    series = simulate_reduced(field, SimulationConfig(dt=0.1, n_steps=50, x0=[0.2, -0.3]))
    assert len(series) == 51
    np.testing.assert_array_equal(series.data, np.tile([0.2, -0.3], (51, 1)))
    assert series.labels == ("v0", "v1")


def test_constant_drift_moves_in_a_straight_line():
    grid = GridPartition.uniform([0.0], [10.0], [10])
    field = uniform_field(grid, [1.0], [[0.0]])
    series = simulate_reduced(field, SimulationConfig(dt=0.1, n_steps=20, x0=[1.0]))
    assert series.data[-1, 0] == pytest.approx(3.0)
    np.testing.assert_allclose(np.diff(series.data[:, 0]), 0.1)


def test_leaving_the_domain():
    grid = GridPartition.uniform([0.0], [10.0], [10])
    field = uniform_field(grid, [1.0], [[0.0]])
    config = SimulationConfig(dt=0.1, n_steps=200, x0=[1.0])
    with pytest.raises(DomainExitError) as e:
        simulate_reduced(field, config)
    assert 90 <= e.value.step <= 92

    reflected = simulate_reduced(field, config, policy="reflect")
    assert reflected.data.max() <= 10.0
    assert reflected.data.min() >= 0.0


def test_reflection_keeps_diffusion_inside():
    grid = GridPartition.uniform([0.0], [1.0], [4])
    field = uniform_field(grid, [0.0], [[1.0]])
    config = SimulationConfig(dt=0.01, n_steps=5000, seed=3, x0=[0.5])
    series = simulate_reduced(field, config, policy="reflect", chunk_size=512)
    assert series.data.min() >= 0.0
    assert series.data.max() <= 1.0
    assert series.data.std() > 0


def test_reduced_run_is_deterministic():
    grid = GridPartition.uniform([-1.0], [1.0], [5])
    field = uniform_field(grid, [0.0], [[0.1]])
    config = SimulationConfig(dt=0.01, n_steps=300, seed=9, x0=[0.0])
    a = simulate_reduced(field, config, policy="reflect")
    b = simulate_reduced(field, config, policy="reflect")
    assert a.data.tobytes() == b.data.tobytes()


def test_initial_state_and_policy_checks():
    grid = GridPartition.uniform([0.0], [1.0], [2])
    field = uniform_field(grid, [0.0], [[1.0]], usable=[True, False])
    with pytest.raises(ValueError):
        simulate_reduced(field, SimulationConfig(dt=0.1, n_steps=1, x0=[2.0]))
    with pytest.raises(ValueError):
        simulate_reduced(field, SimulationConfig(dt=0.1, n_steps=1, x0=[0.75]))
    with pytest.raises(ValueError):
        simulate_reduced(field, SimulationConfig(dt=0.1, n_steps=1, x0=[0.25]), policy="wrap")


def test_noise_factors():
    grid = GridPartition.uniform([0.0, 0.0], [1.0, 1.0], [1, 2])
    field = uniform_field(grid, [0.0, 0.0], [[2.0, 1.0], [1.0, 2.0]])
    factors, clipped = noise_factors(field)
    assert clipped == 0
    np.testing.assert_allclose(factors[0] @ factors[0].T, [[2.0, 1.0], [1.0, 2.0]])
    np.testing.assert_allclose(factors[0], factors[0].T)

    negative = uniform_field(grid, [0.0, 0.0], np.diag([4.0, -1.0]))
    factors, clipped = noise_factors(negative)
    assert clipped == 2
    np.testing.assert_allclose(factors[1], np.diag([2.0, 0.0]), atol=1e-12)


def test_slow_manifold_error_on_a_built_field():
    grid = GridPartition.uniform([0.0], [3.0], [3])
    field = uniform_field(
        grid,
        [0.0],
        [[0.0]],
        counts=[200, 50, 300],
        sq_norm_mean=[1.0, 2.0, 4.0],
        extra=np.array([[1.1], [0.0], [4.0]]),
    )
    boxes, error, mass = slow_manifold_error(field)
    assert boxes.tolist() == [0, 2]
    np.testing.assert_allclose(error, [0.1, 0.0], atol=1e-12)
    np.testing.assert_allclose(mass, [200 / 550, 300 / 550])

    _, error, _ = slow_manifold_error(field, reference="center")
    np.testing.assert_allclose(error, [abs(1.1 - 0.25) / 0.25, abs(4.0 - 6.25) / 6.25])

    with pytest.raises(ValueError):
        slow_manifold_error(field, reference="mean")
    with pytest.raises(ValueError):
        slow_manifold_error(uniform_field(grid, [0.0], [[0.0]]))


def test_slow_manifold_error_at_a_zero_reference():
    grid = GridPartition.uniform([0.0], [2.0], [2])
    field = uniform_field(
        grid,
        [0.0],
        [[0.0]],
        counts=[200, 200],
        sq_norm_mean=[0.0, 1.0],
        extra=np.array([[0.2], [1.0]]),
    )
    boxes, error, _ = slow_manifold_error(field)
    assert boxes.tolist() == [0, 1]
    np.testing.assert_allclose(error, [0.2, 0.0], atol=1e-12)


@pytest.mark.slow
def test_reduced_ou_keeps_the_stationary_variance():
    model = build_model("ou2d-rotating", a=1.0, omega=1.0, s=np.sqrt(2.0))
    full = euler_maruyama(
        model, SimulationConfig(dt=1e-2, n_steps=500_000, transient_steps=1000, seed=2, x0=[0.0, 0.0])
    )
    grid = GridPartition.uniform([-4.0, -4.0], [4.0, 4.0], [30, 30])
    field = estimate_conditional_field(full, model, grid, [0, 1], min_count=5)
    reduced = simulate_reduced(
        field,
        SimulationConfig(dt=1e-2, n_steps=500_000, transient_steps=1000, seed=3, x0=[0.1, 0.1]),
        policy="reflect",
    )
    assert reduced.data[:, 0].var() == pytest.approx(1.0, rel=0.1)
    assert reduced.data[:, 1].var() == pytest.approx(1.0, rel=0.1)
