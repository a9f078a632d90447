"""Diffusion geometry: adaptive alpha-decay kernel, Markov operator,
von Neumann entropy based choice of diffusion time, potential distances.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable, Dict, List

import numpy as np

from .numerics import NumericsError, as_matrix, pairwise_distances, pairwise_sq_distances, symmetric_eigenvalues

DEFAULT_KNN = 5
DEFAULT_DECAY = 40.0
DEFAULT_T_MAX = 100
DEFAULT_LOG_FLOOR = 1e-7


class DiffusionError(ValueError):
    pass


@dataclass
class DiffusionModel:
    kernel: np.ndarray
    operator: np.ndarray
    knn_k: int
    decay_alpha: float
    t: int
    vne_curve: np.ndarray
    potential: np.ndarray
    sigmas: np.ndarray = field(default=None, repr=False)
    spectrum: np.ndarray = field(default=None, repr=False)


def knn_bandwidths(sq_dists, k: int) -> np.ndarray:
    """Distance from each point to its k-th nearest neighbour (self excluded)."""
    d2 = as_matrix(sq_dists)
    n = d2.shape[0]
    if not 1 <= k < n:
        raise DiffusionError(f"k must satisfy 1 <= k < n (k={k}, n={n})")
    work = d2.copy()
    np.fill_diagonal(work, np.inf)
    kth = np.partition(work, k - 1, axis=1)[:, k - 1]
    sigmas = np.sqrt(kth)
    if np.any(sigmas == 0.0):
        positive = sigmas[sigmas > 0.0]
        if positive.size == 0:
            raise DiffusionError("all points coincide; bandwidths are zero")
        warnings.warn(
            f"{int(np.sum(sigmas == 0.0))} zero bandwidth(s) from duplicate points; "
            "replaced by the smallest positive bandwidth",
            RuntimeWarning,
            stacklevel=2,
        )
        sigmas = np.where(sigmas == 0.0, positive.min(), sigmas)
    return sigmas


def alpha_decay_kernel(sq_dists, sigmas, decay_alpha: float) -> np.ndarray:
    """K_ij = (exp(-(d_ij/s_i)^a) + exp(-(d_ij/s_j)^a)) / 2."""
    d2 = as_matrix(sq_dists)
    sigmas = np.asarray(sigmas, dtype=np.float64)
    if decay_alpha <= 0:
        raise DiffusionError("decay_alpha must be positive")
    if np.any(sigmas <= 0):
        raise DiffusionError("bandwidths must be positive")
    d = np.sqrt(d2)
    # work in log space: (d/s)^a overflows long before exp underflows
    with np.errstate(divide="ignore"):
        logd = np.log(d)
    logs = np.log(sigmas)
    row = np.exp(-np.exp(decay_alpha * (logd - logs[:, None])))
    k = 0.5 * (row + row.T)
    np.fill_diagonal(k, 1.0)
    return k


def row_normalize(kernel) -> np.ndarray:
    k = as_matrix(kernel)
    if np.any(k < 0):
        raise DiffusionError("kernel must be nonnegative")
    sums = k.sum(axis=1)
    if np.any(sums <= 0):
        raise DiffusionError("isolated point")
    return k / sums[:, None]


def conjugate_spectrum(kernel) -> np.ndarray:
    """Eigenvalues of D^-1/2 K D^-1/2, which equal those of the row-normalised kernel."""
    k = as_matrix(kernel)
    dinv = 1.0 / np.sqrt(k.sum(axis=1))
    s = k * dinv[:, None] * dinv[None, :]
    return symmetric_eigenvalues(0.5 * (s + s.T))


def _clip_spectrum(p_spectrum) -> np.ndarray:
    lam = np.clip(np.asarray(p_spectrum, dtype=np.float64), 0.0, 1.0)
    lam = lam[lam > 0.0]
    if lam.size == 0:
        raise DiffusionError("spectrum is zero after clipping")
    return lam


def _entropy_of_powers(lam: np.ndarray, t: int) -> float:
    # normalise in log space so tiny eigenvalues raised to large t stay finite
    logw = t * np.log(lam)
    logw -= logw.max()
    w = np.exp(logw)
    mu = w / w.sum()
    mu = mu[mu > 0.0]
    return float(-np.sum(mu * np.log(mu)))


def von_neumann_entropy(p_spectrum, t: int) -> float:
    """Shannon entropy of the eigenvalue distribution lambda^t / sum(lambda^t)."""
    return _entropy_of_powers(_clip_spectrum(p_spectrum), t)


def vne_curve(p_spectrum, t_max: int) -> np.ndarray:
    """Entropy for t = 1..t_max (index 0 holds t = 1)."""
    lam = _clip_spectrum(p_spectrum)
    return np.array([_entropy_of_powers(lam, t) for t in range(1, t_max + 1)])


def knee_second_difference(curve: np.ndarray) -> int:
    """t (1-based) maximising curve[t] - 2 curve[t+1] + curve[t+2]."""
    second = curve[:-2] - 2.0 * curve[1:-1] + curve[2:]
    return int(np.argmax(second)) + 1


def knee_two_segment(curve: np.ndarray) -> int:
    """t at which a two-piece linear fit to the curve has least squared error."""
    t = np.arange(1, curve.size + 1, dtype=np.float64)
    best, best_err = 1, np.inf
    for k in range(2, curve.size - 1):
        err = 0.0
        for sl in (slice(0, k), slice(k - 1, None)):
            coef = np.polyfit(t[sl], curve[sl], 1)
            err += float(np.sum((np.polyval(coef, t[sl]) - curve[sl]) ** 2))
        if err < best_err:
            best, best_err = k, err
    return best


KNEE_STRATEGIES: Dict[str, Callable[[np.ndarray], int]] = {
    "second_difference": knee_second_difference,
    "two_segment": knee_two_segment,
}


def select_t(p_spectrum, t_max: int, strategy: str = "second_difference"):
    """Pick the diffusion time at the knee of the entropy curve.

    Returns ``(t, curve)`` where ``curve[i]`` is the entropy at ``t = i + 1``.
    """
    if t_max < 3:
        raise DiffusionError("t_max must be at least 3")
    curve = vne_curve(p_spectrum, t_max)
    if curve.max() - curve.min() < 1e-12:
        warnings.warn("entropy curve is flat; using t = 1", RuntimeWarning, stacklevel=2)
        return 1, curve
    try:
        knee = KNEE_STRATEGIES[strategy]
    except KeyError:
        raise DiffusionError(f"unknown knee strategy {strategy!r}") from None
    return knee(curve), curve


def matrix_power(p: np.ndarray, t: int) -> np.ndarray:
    """P^t by binary exponentiation (repeated squaring and multiplication)."""
    result = None
    base = p
    while t > 0:
        if t & 1:
            result = base.copy() if result is None else result @ base
        t >>= 1
        if t:
            base = base @ base
    return result


def potential_distances(operator, t: int, log_floor: float = DEFAULT_LOG_FLOOR) -> np.ndarray:
    """Euclidean distances between rows of -log(max(P^t, floor))."""
    p = as_matrix(operator)
    if t < 1:
        raise DiffusionError("t must be >= 1")
    if log_floor <= 0:
        raise DiffusionError("log_floor must be positive")
    pt = matrix_power(p, t)
    potential = -np.log(np.maximum(pt, log_floor))
    return pairwise_distances(potential)


def build_diffusion_model(
    features,
    knn_k: int = DEFAULT_KNN,
    decay_alpha: float = DEFAULT_DECAY,
    t_max: int = DEFAULT_T_MAX,
    log_floor: float = DEFAULT_LOG_FLOOR,
    t: int | None = None,
    knee: str = "two_segment",
) -> DiffusionModel:
    """Run the whole geometry pipeline on a feature matrix.

    ``t`` may be fixed by the caller; otherwise it is chosen from the
    entropy curve with the given ``knee`` strategy.
    """
    x = as_matrix(features, "features")
    if x.shape[0] < knn_k + 1:
        raise DiffusionError(f"need at least knn_k + 1 = {knn_k + 1} points")
    try:
        d2 = pairwise_sq_distances(x)
    except NumericsError as exc:
        raise DiffusionError(str(exc)) from exc
    sigmas = knn_bandwidths(d2, knn_k)
    kernel = alpha_decay_kernel(d2, sigmas, decay_alpha)
    operator = row_normalize(kernel)
    spectrum = conjugate_spectrum(kernel)
    chosen, curve = select_t(spectrum, t_max, knee)
    if t is not None:
        chosen = int(t)
    potential = potential_distances(operator, chosen, log_floor)
    return DiffusionModel(
        kernel=kernel,
        operator=operator,
        knn_k=knn_k,
        decay_alpha=decay_alpha,
        t=chosen,
        vne_curve=curve,
        potential=potential,
        sigmas=sigmas,
        spectrum=spectrum,
    )
