from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np
import scipy.linalg
import scipy.sparse.linalg as spla
from loguru import logger
from scipy.optimize import linear_sum_assignment

from .exceptions import (
    ConvergenceError,
    DegenerateSpectrumError,
    InsufficientSpectrumError,
    LogSingularityError,
)
from .helpers import make_rng
from .transfer import TransitionMatrix

CONJUGATE_TOL = 1e-8
PIVOT_TOL = 1e-12


@dataclass(frozen=True)
class SpectralData:
    """
    Leading eigentriples of P = gammaᵀ, the operator acting on box functions.

    Column k of ``right_vecs`` is psi_k with P psi_k = zeta_k psi_k,
    normalized in L²(m); column k of ``left_vecs`` is phi_k with
    phi_kᵀ P = zeta_k phi_kᵀ and phi_jᵀ psi_k = delta_jk.
    """

    zetas: np.ndarray
    right_vecs: np.ndarray
    left_vecs: np.ndarray
    residuals: np.ndarray
    method: str = "dense"
    excluded: List[Tuple[int, ...]] = field(default_factory=list)

    @property
    def k(self) -> int:
        return len(self.zetas)


@dataclass(frozen=True)
class ResonanceSet:
    lag_time: float
    zetas: np.ndarray
    lambdas: np.ndarray
    indices: np.ndarray
    residuals: np.ndarray
    gap: Optional[float] = None

    def __len__(self) -> int:
        return len(self.lambdas)


def _order(zetas: np.ndarray) -> np.ndarray:
    """
    Descending modulus; among equal moduli the smallest |arg| first (so
    zeta = 1 leads), then positive imaginary part before its conjugate,
    then original position.
    """
    keys = [
        (-round(abs(z), 9), round(abs(np.angle(z)), 9), -z.imag, i)
        for i, z in enumerate(zetas)
    ]
    return np.array([key[-1] for key in sorted(keys)], dtype=np.int64)


def _close_conjugates(zetas: np.ndarray, k: int) -> int:
    """Number of leading entries to keep so no conjugate pair is split."""
    k = min(k, len(zetas))
    last = zetas[k - 1]
    if abs(last.imag) <= CONJUGATE_TOL * max(1.0, abs(last)):
        return k
    partner = np.conj(last)
    if np.min(np.abs(zetas[: k - 1] - partner), initial=np.inf) <= CONJUGATE_TOL:
        return k
    if k < len(zetas) and abs(zetas[k] - partner) <= CONJUGATE_TOL:
        return k + 1
    return k - 1


def _clusters(zetas: np.ndarray, tol: float) -> List[List[int]]:
    groups: List[List[int]] = []
    for i, z in enumerate(zetas):
        for group in groups:
            if any(abs(z - zetas[j]) <= tol * max(1.0, abs(z)) for j in group):
                group.append(i)
                break
        else:
            groups.append([i])
    return groups


def _normalize(
    zetas: np.ndarray, right: np.ndarray, left: np.ndarray, measure: np.ndarray, tol: float
) -> Tuple[np.ndarray, np.ndarray, List[List[int]]]:
    right = right.astype(complex)
    left = left.astype(complex)
    for k in range(right.shape[1]):
        psi = right[:, k]
        j = int(np.argmax(np.abs(psi)))
        psi = psi * np.conj(psi[j]) / abs(psi[j])
        right[:, k] = psi / np.sqrt(np.sum(measure * np.abs(psi) ** 2))
        left[:, k] = left[:, k] / np.linalg.norm(left[:, k])

    defective = []
    for group in _clusters(zetas, tol):
        psi = right[:, group]
        phi = left[:, group]
        gram = phi.T @ psi
        scale = np.linalg.norm(psi, axis=0)
        pivot = np.linalg.svd(gram / scale, compute_uv=False).min()
        if pivot < PIVOT_TOL:
            defective.append(group)
            continue
        left[:, group] = phi @ np.linalg.inv(gram).T
    return right, left, defective


def _residuals(P, zetas: np.ndarray, right: np.ndarray, left: np.ndarray) -> np.ndarray:
    r = P @ right - right * zetas
    lft = (P.T @ left) - left * zetas
    res_r = np.linalg.norm(r, axis=0) / np.linalg.norm(right, axis=0)
    res_l = np.linalg.norm(lft, axis=0) / np.linalg.norm(left, axis=0)
    return np.maximum(res_r, res_l)


def _dense_pairs(P) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    dense = P.toarray() if hasattr(P, "toarray") else np.asarray(P)
    w, vl, vr = scipy.linalg.eig(dense, left=True, right=True)
    return w, vr, np.conj(vl)


def _arnoldi_pairs(
    P, k: int, tol: float, max_iter: Optional[int], ncv: Optional[int], seed: int
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    n = P.shape[0]
    k_req = min(k + 1, n - 2)
    ncv = min(n, ncv or max(4 * k + 20, 2 * k_req + 1))
    v0 = make_rng(seed).random(n) + 0.5
    try:
        w_r, v_r = spla.eigs(P, k=k_req, which="LM", v0=v0, ncv=ncv, tol=tol, maxiter=max_iter)
        w_l, v_l = spla.eigs(
            P.T.tocsc(), k=k_req, which="LM", v0=v0, ncv=ncv, tol=tol, maxiter=max_iter
        )
    except spla.ArpackNoConvergence as e:
        residuals = []
        if len(e.eigenvalues):
            residuals = list(
                np.linalg.norm(P @ e.eigenvectors - e.eigenvectors * e.eigenvalues, axis=0)
            )
        logger.error(f"Arnoldi iteration did not converge: {e}")
        raise ConvergenceError(f"Arnoldi iteration did not converge: {e}", residuals=residuals)
    except spla.ArpackError as e:
        logger.error(f"Arnoldi iteration failed: {e}")
        raise ConvergenceError(f"Arnoldi iteration failed: {e}")

    rows, cols = linear_sum_assignment(np.abs(w_r[:, None] - w_l[None, :]))
    mismatch = np.abs(w_r[rows] - w_l[cols])
    if mismatch.max(initial=0.0) > 1e-6:
        logger.warning(f"Left and right Arnoldi spectra differ by up to {mismatch.max():.2e}")
    return w_r[rows], v_r[:, rows], v_l[:, cols]


def leading_eigenpairs(
    tm: TransitionMatrix,
    k: int,
    dense_threshold: int = 2000,
    tol: float = 1e-10,
    max_iter: Optional[int] = None,
    ncv: Optional[int] = None,
    seed: int = 0,
    degeneracy_tol: float = 1e-8,
    residual_tol: float = 1e-8,
    on_degenerate: str = "raise",
) -> SpectralData:
    """
    Compute the k largest-modulus eigenvalues of P = gammaᵀ with biorthonormal
    left and right eigenvectors.

    Matrices with at most ``dense_threshold`` active boxes are solved densely;
    larger ones with implicitly restarted Arnoldi from a seeded start vector.
    A conjugate pair cut by the k-th position is completed (or dropped when
    its partner was not computed).

    :param tm: estimated transition matrix
    :param k: number of eigenpairs
    :param on_degenerate: "raise" or "exclude" for clusters that cannot be
        biorthonormalized
    :raises ValueError: If k is out of range
    :raises ConvergenceError: If Arnoldi stops early or residuals exceed residual_tol
    :raises DegenerateSpectrumError: If a cluster is defective and on_degenerate="raise"
    """
    n = tm.size
    if not 1 <= k <= n:
        raise ValueError(f"k must lie in [1, {n}], got {k}")
    if on_degenerate not in ("raise", "exclude"):
        raise ValueError("on_degenerate must be 'raise' or 'exclude'")
    P = tm.gamma.T.tocsc()

    if n <= dense_threshold or k >= n - 2:
        method = "dense"
        zetas, right, left = _dense_pairs(P)
    else:
        method = "arnoldi"
        zetas, right, left = _arnoldi_pairs(P, k, tol, max_iter, ncv, seed)

    order = _order(zetas)
    zetas, right, left = zetas[order], right[:, order], left[:, order]
    keep = _close_conjugates(zetas, k)
    zetas, right, left = zetas[:keep], right[:, :keep], left[:, :keep]

    right, left, defective = _normalize(zetas, right, left, tm.measure, degeneracy_tol)
    excluded: List[Tuple[int, ...]] = []
    if defective:
        if on_degenerate == "raise":
            values = [[complex(zetas[i]) for i in group] for group in defective]
            logger.error(f"Defective eigenvalue clusters: {values}")
            raise DegenerateSpectrumError(
                f"Eigenvalue clusters {values} cannot be biorthonormalized",
                cluster=defective,
            )
        drop = sorted(i for group in defective for i in group)
        excluded = [tuple(group) for group in defective]
        logger.warning(f"Excluding defective eigenvalue clusters at positions {excluded}")
        mask = np.ones(len(zetas), dtype=bool)
        mask[drop] = False
        zetas, right, left = zetas[mask], right[:, mask], left[:, mask]

    residuals = _residuals(P, zetas, right, left)
    if residuals.max(initial=0.0) > residual_tol:
        if method == "arnoldi":
            logger.error(f"Eigen residuals up to {residuals.max():.2e}")
            raise ConvergenceError(
                f"Eigen residuals up to {residuals.max():.2e} exceed {residual_tol}",
                residuals=list(residuals),
            )
        logger.warning(f"Dense eigen residuals up to {residuals.max():.2e}")

    if np.abs(zetas).max(initial=0.0) > 1 + 1e-10:
        logger.warning(f"Eigenvalue modulus {np.abs(zetas).max()} exceeds 1")
    logger.info(f"Computed {len(zetas)} eigenpairs ({method}) of a {n}-box matrix")
    return SpectralData(
        zetas=zetas,
        right_vecs=right,
        left_vecs=left,
        residuals=residuals,
        method=method,
        excluded=excluded,
    )


def resonances(spec: SpectralData, lag_time: float) -> ResonanceSet:
    """
    Map eigenvalues to resonances, lambda = (log|zeta| + i arg zeta) / tau,
    with arg taken in [-pi, pi).

    :raises ValueError: If lag_time is not positive
    :raises LogSingularityError: If an eigenvalue is zero
    """
    if not lag_time > 0:
        raise ValueError("lag_time must be positive")
    zetas = np.asarray(spec.zetas, dtype=complex)
    modulus = np.abs(zetas)
    if (modulus <= np.finfo(float).tiny).any():
        raise LogSingularityError(
            f"Eigenvalue zero at positions {np.flatnonzero(modulus <= np.finfo(float).tiny) + 1}"
        )
    arg = np.angle(zetas)
    arg = np.where(arg >= np.pi, arg - 2 * np.pi, arg)
    lambdas = (np.log(modulus) + 1j * arg) / lag_time
    gap = float(-lambdas.real[1:].max()) if len(lambdas) >= 2 else None
    return ResonanceSet(
        lag_time=lag_time,
        zetas=zetas,
        lambdas=lambdas,
        indices=np.arange(1, len(zetas) + 1),
        residuals=np.asarray(spec.residuals, dtype=float),
        gap=gap,
    )


def spectral_gap(rs: ResonanceSet) -> float:
    if len(rs) < 2:
        raise InsufficientSpectrumError("The spectral gap needs at least two resonances")
    return float(-np.max(rs.lambdas.real[1:]))


def nyquist_flags(rs: ResonanceSet) -> np.ndarray:
    """Items whose frequency sits at the aliasing limit pi / tau."""
    return np.abs(rs.lambdas.imag) >= (np.pi / rs.lag_time) * (1 - 1e-9)


def match_resonances(a: ResonanceSet, b: ResonanceSet) -> List[Dict[str, object]]:
    """
    Pair the resonances of two sets by minimal total distance |lambda_a - lambda_b|.

    Returns one record per matched pair, ordered by position in ``a``.
    """
    cost = np.abs(a.lambdas[:, None] - b.lambdas[None, :])
    rows, cols = linear_sum_assignment(cost)
    return [
        {
            "k_a": int(a.indices[i]),
            "k_b": int(b.indices[j]),
            "lambda_a": complex(a.lambdas[i]),
            "lambda_b": complex(b.lambdas[j]),
            "distance": float(cost[i, j]),
        }
        for i, j in sorted(zip(rows, cols))
    ]
