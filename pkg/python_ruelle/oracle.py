from typing import List

import numpy as np

from .models import OuSpec


def ou_resonances(spec: OuSpec, n_max: int) -> List[complex]:
    """
    Generator eigenvalues of the Ornstein-Uhlenbeck process up to order n_max.

    1D: -n a for n = 0..n_max. Rotating 2D (``omega`` set):
    -(n + m) a + i (n - m) omega for n + m <= n_max. Sorted by descending
    real part, then descending imaginary part.

    :raises ValueError: If n_max is negative
    """
    if n_max < 0:
        raise ValueError("n_max must be nonnegative")
    if spec.omega is None:
        values = [complex(-n * spec.a) for n in range(n_max + 1)]
    else:
        values = [
            complex(-(n + m) * spec.a, (n - m) * spec.omega)
            for n in range(n_max + 1)
            for m in range(n_max + 1 - n)
        ]
    return sorted(values, key=lambda z: (-z.real, -z.imag))


def ou_variance(spec: OuSpec) -> float:
    return spec.s**2 / (2 * spec.a)


def ou_acf(spec: OuSpec, lags) -> np.ndarray:
    """
    Stationary autocovariance of one coordinate,
    (s^2 / 2a) exp(-a|t|), times cos(omega t) for the rotating 2D process.
    """
    lags = np.asarray(lags, dtype=float)
    if not np.isfinite(lags).all():
        raise ValueError("Lags must be finite")
    acf = ou_variance(spec) * np.exp(-spec.a * np.abs(lags))
    if spec.omega is not None:
        acf = acf * np.cos(spec.omega * lags)
    return acf


def ou_psd(spec: OuSpec, freqs) -> np.ndarray:
    """
    Two-sided spectral density of one coordinate at angular frequencies,
    the Fourier transform of ``ou_acf`` divided by 2 pi.
    """
    freqs = np.asarray(freqs, dtype=float)
    var, a = ou_variance(spec), spec.a

    def lorentz(center):
        return a / ((freqs - center) ** 2 + a**2) / np.pi

    if spec.omega is None:
        return var * lorentz(0.0)
    return 0.5 * var * (lorentz(spec.omega) + lorentz(-spec.omega))
