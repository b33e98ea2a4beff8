import numpy as np
import pytest
from scipy.integrate import trapezoid

from python_ruelle.exceptions import SingularLorentzianError
from python_ruelle.partition import GridPartition
from python_ruelle.reconstruct import (
    Observable,
    compare,
    coordinate_observable,
    empirical_observable,
    fold_psd,
    make_observable,
    reconstruct_correlation,
    reconstruct_psd,
    sample_acf,
    sample_psd,
    weights,
)
from python_ruelle.sde import TimeSeries
from python_ruelle.spectral import ResonanceSet, leading_eigenpairs, resonances
from python_ruelle.transfer import estimate_transition


def resonance_set(lambdas, lag_time=1.0):
    lambdas = np.asarray(lambdas, dtype=complex)
    return ResonanceSet(
        lag_time=lag_time,
        zetas=np.exp(lambdas * lag_time),
        lambdas=lambdas,
        indices=np.arange(1, len(lambdas) + 1),
        residuals=np.zeros(len(lambdas)),
    )


def alternating(n=200):
    return TimeSeries(sample_dt=1.0, data=np.where(np.arange(n) % 2 == 0, 1.0, -1.0))


def test_flip_chain_weights(flip_chain):
    spec = leading_eigenpairs(flip_chain, k=2)
    f = make_observable([1.0, -1.0], flip_chain.measure)
    w = weights(spec, flip_chain.measure, f, f)
    np.testing.assert_allclose(w, [0.0, 1.0], atol=1e-12)


def test_weights_of_an_eigenfunction(random_chain):
    tm = random_chain(8, seed=3)
    spec = leading_eigenpairs(tm, k=8)
    real = np.flatnonzero(np.abs(spec.zetas.imag) < 1e-12)
    k = int(real[1])
    psi = spec.right_vecs[:, k].real
    f = make_observable(psi, tm.measure)
    w = weights(spec, tm.measure, f, f)
    expected = np.zeros(spec.k)
    expected[k] = np.sum(tm.measure * psi**2)
    np.testing.assert_allclose(w, expected, atol=1e-10)


def test_zero_observable_and_centering(flip_chain):
    spec = leading_eigenpairs(flip_chain, k=2)
    zero = make_observable([0.0, 0.0], flip_chain.measure)
    assert np.all(weights(spec, flip_chain.measure, zero, zero) == 0)
    raw = Observable(values=np.array([1.0, 2.0]), centered=False)
    with pytest.raises(ValueError):
        weights(spec, flip_chain.measure, raw, raw)
    with pytest.raises(ValueError):
        make_observable([1.0, 2.0, 3.0], flip_chain.measure)


def test_single_term_correlation():
    result = reconstruct_correlation(resonance_set([-1.0]), [2.0], [0.0, 1.0])
    np.testing.assert_allclose(result.reconstructed, [2.0, 2.0 / np.e])


def test_correlation_argument_errors():
    rs = resonance_set([0.0, -1.0])
    with pytest.raises(ValueError):
        reconstruct_correlation(rs, [1.0], [0.0])
    with pytest.raises(ValueError):
        reconstruct_correlation(rs, [0.0, 1.0], [-1.0])
    np.testing.assert_array_equal(reconstruct_correlation(rs, [0.0, 0.0], [0.0, 2.0]).reconstructed, 0.0)


def test_flip_chain_correlation_is_exact(flip_chain):
    spec = leading_eigenpairs(flip_chain, k=2)
    rs = resonances(spec, 1.0)
    f = make_observable([1.0, -1.0], flip_chain.measure)
    result = reconstruct_correlation(rs, weights(spec, flip_chain.measure, f, f), np.arange(6))
    np.testing.assert_allclose(result.reconstructed, (-1.0) ** np.arange(6), atol=1e-12)


def test_consistency_triangle(counter):
    series = alternating()
    grid = GridPartition.uniform([-2.0], [2.0], [2])
    tm = estimate_transition(series, grid, lag_steps=1, counter=counter)
    spec = leading_eigenpairs(tm, k=2)
    f = coordinate_observable(grid, tm, 0)
    recon = reconstruct_correlation(resonances(spec, tm.lag_time), weights(spec, tm.measure, f, f), np.arange(8))
    sample = sample_acf(series, 0, 7)
    np.testing.assert_allclose(recon.reconstructed, sample.sample, atol=1e-10)


def test_full_spectrum_identity(random_chain):
    tm = random_chain(40, seed=11, lag_time=0.3)
    spec = leading_eigenpairs(tm, k=40)
    rng = np.random.default_rng(0)
    f = make_observable(rng.normal(size=40), tm.measure)
    g = make_observable(rng.normal(size=40), tm.measure)
    w = weights(spec, tm.measure, f, g)
    recon = reconstruct_correlation(resonances(spec, tm.lag_time), w, [0.0])
    assert recon.reconstructed[0] == pytest.approx(np.sum(tm.measure * f.values * g.values), abs=1e-8)


def test_single_lorentzian_peak():
    a, alpha = 2.0, 3.0
    result = reconstruct_psd(resonance_set([-a]), [alpha], [0.0])
    assert result.reconstructed[0] == pytest.approx(alpha / (np.pi * a))
    assert result.metadata["angular"] is True


def test_pair_peaks_at_rotation_rate():
    freqs = np.linspace(-5, 5, 1001)
    result = reconstruct_psd(resonance_set([-0.5 + 2j, -0.5 - 2j]), [1.0, 1.0], freqs)
    positive = freqs > 0
    assert freqs[positive][np.argmax(result.reconstructed[positive])] == pytest.approx(2.0, abs=0.02)
    assert freqs[~positive][np.argmax(result.reconstructed[~positive])] == pytest.approx(-2.0, abs=0.02)


def test_on_axis_terms():
    rs = resonance_set([0.0, -1.0])
    with pytest.raises(SingularLorentzianError):
        reconstruct_psd(rs, [1.0, 1.0], [0.0])
    result = reconstruct_psd(rs, [0.0, 1.0], [0.0])
    assert result.metadata["excluded"] == [1]
    assert result.reconstructed[0] == pytest.approx(1 / np.pi)


def test_fold_psd_integrates_to_variance():
    rs = resonance_set([0.0, -1.0, -0.3 + 4j, -0.3 - 4j])
    w = [0.0, 1.0, 0.25, 0.25]
    freqs = np.linspace(0, 5000, 500001)
    folded = fold_psd(rs, w, freqs)
    two_sided = reconstruct_psd(rs, w, freqs).reconstructed + reconstruct_psd(rs, w, -freqs).reconstructed
    np.testing.assert_allclose(folded.reconstructed, two_sided)
    assert trapezoid(folded.reconstructed, freqs) == pytest.approx(1.5, rel=1e-3)


def test_sample_acf_examples():
    constant = TimeSeries(sample_dt=0.1, data=np.full(50, 3.0))
    np.testing.assert_allclose(sample_acf(constant, 0, 10).sample, 0.0, atol=1e-12)
    noise = TimeSeries(sample_dt=0.1, data=np.random.default_rng(1).normal(size=500))
    assert sample_acf(noise, 0, 5).sample[0] == pytest.approx(noise.data[:, 0].var())
    np.testing.assert_allclose(sample_acf(alternating(), 0, 4).sample, [1, -1, 1, -1, 1], atol=1e-10)
    with pytest.raises(ValueError):
        sample_acf(constant, 0, 50)
    assert sample_acf(constant, 0, 2).abscissa == pytest.approx([0.0, 0.1, 0.2])


def test_sample_psd_examples():
    dt = 0.01
    t = np.arange(2**14) * dt
    sine = TimeSeries(sample_dt=dt, data=np.sin(2 * np.pi * 5.0 * t))
    result = sample_psd(sine, 0, segment_len=1024)
    assert result.abscissa[np.argmax(result.sample)] == pytest.approx(5.0, abs=0.1)

    zero = TimeSeries(sample_dt=dt, data=np.zeros(4096))
    np.testing.assert_array_equal(sample_psd(zero, 0, segment_len=256).sample, 0.0)

    white = TimeSeries(sample_dt=dt, data=np.random.default_rng(2).normal(size=2**16))
    hz = sample_psd(white, 0, segment_len=256)
    assert trapezoid(hz.sample, hz.abscissa) == pytest.approx(1.0, rel=0.1)
    angular = sample_psd(white, 0, segment_len=256, angular=True)
    np.testing.assert_allclose(angular.abscissa, 2 * np.pi * hz.abscissa)
    assert trapezoid(angular.sample, angular.abscissa) == pytest.approx(
        trapezoid(hz.sample, hz.abscissa)
    )

    with pytest.raises(ValueError):
        sample_psd(zero, 0, segment_len=1)
    with pytest.raises(ValueError):
        sample_psd(zero, 0, segment_len=256, overlap=1.0)


def test_compare_examples():
    x = np.array([0.3, -0.2, 0.5])
    assert compare(x, x) == {"rmse": 0.0, "normalized_rmse": 0.0, "max_abs_error": 0.0}
    assert compare(x + 0.7, x)["max_abs_error"] == pytest.approx(0.7)
    assert compare(np.zeros(2), np.array([1.0, -1.0]))["normalized_rmse"] == pytest.approx(1.0)
    with pytest.raises(ValueError):
        compare(x, x[:2])


def test_empirical_observable(counter):
    series = TimeSeries(sample_dt=1.0, data=[0.1, 0.3, 0.7, 0.9, 0.2, 0.8])
    grid = GridPartition.uniform([0.0], [1.0], [2])
    tm = estimate_transition(series, grid, lag_steps=1, counter=counter)
    raw = empirical_observable(series, grid, tm, 0, center=False)
    np.testing.assert_allclose(raw.values, [0.2, 0.8])
    centered = empirical_observable(series, grid, tm, 0)
    assert np.dot(tm.measure, centered.values) == pytest.approx(0.0, abs=1e-15)
    with pytest.raises(ValueError):
        coordinate_observable(grid, tm, 1)
