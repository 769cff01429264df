"""Measurement-bias belief and its moment-matched prediction.

The bias in each measurement dimension either persists (with Gaussian drift)
or is replaced by a fresh, wide zero-mean Gaussian draw, selected by an
independent Bernoulli indicator::

    theta_k = (1 - I) * fresh + I * (theta_{k-1} + drift)

Propagating a Gaussian bias belief through this transition gives a 2**m
component mixture; :func:`predict_bias` collapses it to its exact first two
moments.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .gaussian import symmetrize

OMEGA_EPS = 1e-12


def clamp_omega(omega):
    """Keep occurrence probabilities away from exact 0/1 for precision products."""
    return np.clip(omega, OMEGA_EPS, 1.0 - OMEGA_EPS)


@dataclass(frozen=True)
class BiasBelief:
    """Bias mean, covariance and per-dimension occurrence probabilities."""

    theta_hat: np.ndarray
    sigma: np.ndarray
    omega: np.ndarray

    def __post_init__(self):
        theta = np.atleast_1d(np.asarray(self.theta_hat, dtype=float))
        sigma = np.atleast_2d(np.asarray(self.sigma, dtype=float))
        omega = np.atleast_1d(np.asarray(self.omega, dtype=float))
        m = theta.size
        if sigma.shape != (m, m) or omega.shape != (m,):
            raise ValueError("inconsistent bias belief dimensions")
        if np.any(omega < 0.0) or np.any(omega > 1.0):
            raise ValueError("omega entries must lie in [0, 1]")
        object.__setattr__(self, "theta_hat", theta)
        object.__setattr__(self, "sigma", sigma)
        object.__setattr__(self, "omega", omega)

    @property
    def dim(self) -> int:
        return self.theta_hat.size

    @classmethod
    def initial(cls, m: int, sigma0: float = 1e-3, omega0: float = 0.5) -> "BiasBelief":
        return cls(np.zeros(m), sigma0 * np.eye(m), np.full(m, omega0))


@dataclass(frozen=True)
class BiasHyperParams:
    """Fresh-bias variances, drift variances and prior occurrence probabilities.

    ``sigma_tilde`` and ``sigma_breve`` are diagonal m x m matrices.
    """

    sigma_tilde: np.ndarray
    sigma_breve: np.ndarray
    theta_prior: np.ndarray

    def __post_init__(self):
        st = np.atleast_2d(np.asarray(self.sigma_tilde, dtype=float))
        sb = np.atleast_2d(np.asarray(self.sigma_breve, dtype=float))
        tp = np.atleast_1d(np.asarray(self.theta_prior, dtype=float))
        m = tp.size
        if st.shape != (m, m) or sb.shape != (m, m):
            raise ValueError("inconsistent hyper-parameter dimensions")
        for M in (st, sb):
            if np.any(M - np.diag(np.diag(M))):
                raise ValueError("sigma_tilde and sigma_breve must be diagonal")
        if np.any(np.diag(st) <= 0) or np.any(np.diag(sb) < 0):
            raise ValueError("fresh-bias variances must be positive, drift variances non-negative")
        if np.any(tp < 0.0) or np.any(tp > 1.0):
            raise ValueError("theta_prior entries must lie in [0, 1]")
        object.__setattr__(self, "sigma_tilde", st)
        object.__setattr__(self, "sigma_breve", sb)
        object.__setattr__(self, "theta_prior", tp)

    @property
    def dim(self) -> int:
        return self.theta_prior.size

    @classmethod
    def from_noise(cls, R, tilde_scale: float = 1000.0, breve_scale: float = 0.1,
                   theta: float = 0.5) -> "BiasHyperParams":
        """Hyper-parameters scaled from a diagonal measurement noise covariance."""
        R = np.atleast_2d(np.asarray(R, dtype=float))
        return cls(tilde_scale * R, breve_scale * R, np.full(R.shape[0], theta))


def predict_bias(prev: BiasBelief, hp: BiasHyperParams):
    """Moment-matched bias prediction.

    Returns ``(theta_minus, sigma_minus)``.
    """
    w = prev.omega
    theta = prev.theta_hat
    theta_minus = w * theta
    # Hadamard weight: w_i w_j off the diagonal, w_i on it
    weight = np.outer(w, w) + np.diag(w * (1.0 - w))
    sigma_minus = (
        np.diag((1.0 - w) * np.diag(hp.sigma_tilde))
        + np.diag(w * np.diag(hp.sigma_breve))
        + prev.sigma * weight
        + np.diag(w * (1.0 - w) * theta**2)
    )
    return theta_minus, symmetrize(sigma_minus)


def bias_transition_sample(prev_sample, indicator, hp: BiasHyperParams, rng: np.random.Generator):
    """Draw the next bias vector given the previous one and the indicator.

    Both noise vectors are always drawn so the stream position does not
    depend on the indicator values.
    """
    prev_sample = np.asarray(prev_sample, dtype=float)
    ind = np.asarray(indicator, dtype=float)
    if np.any((ind != 0.0) & (ind != 1.0)):
        raise ValueError("indicator entries must be 0 or 1")
    fresh = rng.normal(size=ind.shape) * np.sqrt(np.diag(hp.sigma_tilde))
    drift = rng.normal(size=ind.shape) * np.sqrt(np.diag(hp.sigma_breve))
    return (1.0 - ind) * fresh + ind * (prev_sample + drift)
