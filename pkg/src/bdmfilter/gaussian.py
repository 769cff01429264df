"""Sigma-point machinery and general Gaussian filtering primitives.

All functions are pure: beliefs are immutable value objects and every
returned covariance is symmetrized as ``(P + P.T) / 2``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from ._backend import kernels

__all__ = [
    "DegenerateCovarianceError",
    "SingularInnovationError",
    "GaussianBelief",
    "SigmaPointConfig",
    "SigmaPointSet",
    "StateSpaceModel",
    "UpdateStats",
    "make_sigma_points",
    "unscented_transform",
    "gaussian_filter_predict",
    "measurement_stats",
    "ukf_update",
    "ukf_step",
    "gaussian_product",
    "finite_difference_jacobian",
    "symmetrize",
]


class DegenerateCovarianceError(np.linalg.LinAlgError):
    """Covariance has no square root even after diagonal jitter."""


class SingularInnovationError(np.linalg.LinAlgError):
    """An innovation (or other inverted) covariance is singular."""


def symmetrize(P):
    P = np.asarray(P, dtype=float)
    return 0.5 * (P + P.T)


def _vec(x):
    return np.ascontiguousarray(np.atleast_1d(np.asarray(x, dtype=float)))


def _mat(P):
    return np.ascontiguousarray(np.atleast_2d(np.asarray(P, dtype=float)))


@dataclass(frozen=True)
class GaussianBelief:
    """Mean vector and covariance matrix of a Gaussian density."""

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = _vec(self.mean)
        cov = _mat(self.cov)
        if cov.shape != (mean.size, mean.size):
            raise ValueError(f"covariance shape {cov.shape} does not match mean of size {mean.size}")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    @property
    def dim(self) -> int:
        return self.mean.size


@dataclass(frozen=True)
class SigmaPointConfig:
    """Scaled unscented transform parameters.

    The composite spread is ``lam = alpha**2 * (d + kappa) - d``.
    """

    alpha: float = 1.0
    beta: float = 2.0
    kappa: float = 0.0

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")

    def lam(self, d: int) -> float:
        lam = self.alpha**2 * (d + self.kappa) - d
        if d + lam == 0:
            raise ValueError("d + lambda must be non-zero")
        return lam

    def weights(self, d: int) -> tuple[np.ndarray, np.ndarray]:
        lam = self.lam(d)
        wm = np.full(2 * d + 1, 0.5 / (d + lam))
        wc = wm.copy()
        wm[0] = lam / (d + lam)
        wc[0] = lam / (d + lam) + (1.0 - self.alpha**2 + self.beta)
        return wm, wc


@dataclass(frozen=True)
class SigmaPointSet:
    points: np.ndarray
    mean_weights: np.ndarray
    cov_weights: np.ndarray


def _apply(g, X, vectorized):
    if vectorized:
        return np.ascontiguousarray(np.asarray(g(X), dtype=float).reshape(X.shape[0], -1))
    return np.ascontiguousarray(np.array([np.atleast_1d(g(x)) for x in X], dtype=float))


def finite_difference_jacobian(fun: Callable, x, vectorized: bool = False) -> np.ndarray:
    """Central-difference Jacobian with step ``1e-6 * (1 + |x_i|)``."""
    x = _vec(x)
    steps = 1e-6 * (1.0 + np.abs(x))
    E = np.diag(steps)
    X = np.vstack([x + E, x - E])
    Y = _apply(fun, X, vectorized)
    n = x.size
    return ((Y[:n] - Y[n:]) / (2.0 * steps[:, None])).T


@dataclass
class StateSpaceModel:
    """Additive-noise state-space model ``x' = f(x) + q``, ``y = h(x) + r``.

    ``f`` and ``h`` act on a single state vector unless ``vectorized`` is set,
    in which case they must map an (N, n) array row-wise. Jacobians default to
    central finite differences.
    """

    n: int
    m: int
    f: Callable
    h: Callable
    Q: np.ndarray
    R: np.ndarray
    f_jacobian: Optional[Callable] = None
    h_jacobian: Optional[Callable] = None
    vectorized: bool = False
    name: str = field(default="model", compare=False)

    def __post_init__(self):
        self.Q = _mat(self.Q)
        self.R = _mat(self.R)
        if self.Q.shape != (self.n, self.n) or self.R.shape != (self.m, self.m):
            raise ValueError("Q must be n x n and R must be m x m")
        if np.any(self.R - np.diag(np.diag(self.R))):
            raise ValueError("R must be diagonal")
        if np.any(np.diag(self.R) <= 0):
            raise ValueError("R must be positive definite")

    def propagate(self, X) -> np.ndarray:
        return _apply(self.f, np.atleast_2d(X), self.vectorized)

    def measure(self, X) -> np.ndarray:
        return _apply(self.h, np.atleast_2d(X), self.vectorized)

    def F(self, x) -> np.ndarray:
        if self.f_jacobian is not None:
            return _mat(self.f_jacobian(_vec(x)))
        return finite_difference_jacobian(self.f, x, self.vectorized)

    def H(self, x) -> np.ndarray:
        if self.h_jacobian is not None:
            return _mat(self.h_jacobian(_vec(x)))
        return finite_difference_jacobian(self.h, x, self.vectorized)

    def F_batch(self, X) -> np.ndarray:
        return np.stack([self.F(x) for x in np.atleast_2d(X)])

    def H_batch(self, X) -> np.ndarray:
        return np.stack([self.H(x) for x in np.atleast_2d(X)])


def make_sigma_points(belief: GaussianBelief, cfg: SigmaPointConfig = SigmaPointConfig()) -> SigmaPointSet:
    d = belief.dim
    lam = cfg.lam(d)
    try:
        X = kernels.sigma_points(belief.mean, belief.cov, lam)
    except np.linalg.LinAlgError as exc:
        raise DegenerateCovarianceError("degenerate covariance") from exc
    wm, wc = cfg.weights(d)
    return SigmaPointSet(X, wm, wc)


def unscented_transform(g: Callable, belief: GaussianBelief, additive_cov=None,
                        cfg: SigmaPointConfig = SigmaPointConfig(), vectorized: bool = False):
    """Propagate ``belief`` through ``g``.

    Returns
    -------
    mu : ndarray
        Approximation of ``E[g(x)]``.
    S : ndarray
        ``Cov[g(x)] + additive_cov``.
    C : ndarray
        Cross-covariance ``E[(x - mean)(g(x) - mu)^T]``, shape (d, p).
    """
    sp = make_sigma_points(belief, cfg)
    Y = _apply(g, sp.points, vectorized)
    mu, S, C = kernels.weighted_moments(sp.points, Y, belief.mean, sp.mean_weights, sp.cov_weights)
    if additive_cov is not None:
        S = S + _mat(additive_cov)
    return mu, symmetrize(S), C


def gaussian_filter_predict(model: StateSpaceModel, posterior: GaussianBelief,
                            cfg: SigmaPointConfig = SigmaPointConfig()) -> GaussianBelief:
    mean, cov, _ = unscented_transform(model.f, posterior, model.Q, cfg, model.vectorized)
    return GaussianBelief(mean, cov)


@dataclass(frozen=True)
class UpdateStats:
    """Measurement-update quantities computed under a predictive density.

    ``mu``, ``S``, ``C`` and the gain ``K`` depend only on the prediction, so
    a VB loop that only changes the innovation offset can reuse them.
    """

    mu: np.ndarray
    S: np.ndarray
    C: np.ndarray
    K: np.ndarray
    cov: np.ndarray


def measurement_stats(model: StateSpaceModel, pred: GaussianBelief,
                      cfg: SigmaPointConfig = SigmaPointConfig()) -> UpdateStats:
    mu, S, C = unscented_transform(model.h, pred, model.R, cfg, model.vectorized)
    try:
        K = np.linalg.solve(S, C.T).T
    except np.linalg.LinAlgError as exc:
        raise SingularInnovationError("innovation covariance S is singular") from exc
    if not np.all(np.isfinite(K)):
        raise SingularInnovationError("innovation covariance S is singular")
    cov = symmetrize(pred.cov - C @ K.T)
    return UpdateStats(mu, S, C, K, cov)


def ukf_update(model: StateSpaceModel, pred: GaussianBelief, y,
               cfg: SigmaPointConfig = SigmaPointConfig(), offset=None) -> GaussianBelief:
    """Unscented measurement update; ``offset`` is subtracted from ``y``."""
    stats = measurement_stats(model, pred, cfg)
    innov = _vec(y) - stats.mu if offset is None else _vec(y) - offset - stats.mu
    return GaussianBelief(pred.mean + stats.K @ innov, stats.cov)


def ukf_step(model: StateSpaceModel, posterior: GaussianBelief, y,
             cfg: SigmaPointConfig = SigmaPointConfig()) -> GaussianBelief:
    y = _vec(y)
    if y.size != model.m:
        raise ValueError(f"measurement has size {y.size}, expected {model.m}")
    return ukf_update(model, gaussian_filter_predict(model, posterior, cfg), y, cfg)


def gaussian_product(m1, S1, m2, S2):
    """Mean and covariance of the normalized product of two Gaussians."""
    m1, m2 = _vec(m1), _vec(m2)
    S1, S2 = _mat(S1), _mat(S2)
    try:
        P1 = np.linalg.inv(S1)
        P2 = np.linalg.inv(S2)
        Sc = np.linalg.inv(P1 + P2)
    except np.linalg.LinAlgError as exc:
        raise SingularInnovationError("singular covariance in Gaussian product") from exc
    Sc = symmetrize(Sc)
    return Sc @ (P1 @ m1 + P2 @ m2), Sc
