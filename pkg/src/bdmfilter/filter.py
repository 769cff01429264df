"""Bias detecting and mitigating (BDM) filter.

One filter step predicts the state with the unscented transform and the bias
with :func:`bdmfilter.bias.predict_bias`, then alternates mean-field updates
of three factors until the relative change of the state mean drops below
``tau``:

* ``q(I)``: per-dimension posterior bias-occurrence probabilities ``omega``;
* ``q(theta)``: Gaussian bias belief;
* ``q(x)``: Gaussian state belief, a standard unscented update whose
  innovation is debiased by ``omega * theta_hat``.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Literal

import numpy as np
from scipy.special import expit

from ._backend import kernels
from .bias import BiasBelief, BiasHyperParams, clamp_omega, predict_bias
from .gaussian import (
    GaussianBelief,
    SigmaPointConfig,
    SingularInnovationError,
    StateSpaceModel,
    UpdateStats,
    _apply,
    gaussian_filter_predict,
    make_sigma_points,
    measurement_stats,
    symmetrize,
    ukf_step,
)

__all__ = [
    "VbSettings",
    "BdmState",
    "update_state",
    "measurement_moments",
    "indicator_probabilities",
    "predictive_indicator",
    "update_indicator",
    "update_bias",
    "step",
    "run_bdm",
    "run_ukf",
]


@dataclass(frozen=True)
class VbSettings:
    """Variational loop controls.

    ``bias_init`` selects how the loop is seeded before the first indicator
    update:

    * ``"evidence"``: ``omega`` starts at the posterior occurrence probability
      under the predictive densities (bias integrated out, see
      :func:`predictive_indicator`) and the bias factor at one bias update
      with that ``omega``;
    * ``"update"``: ``omega`` starts at the prior and the bias factor at one
      bias update with it;
    * ``"predict"``: ``omega`` starts at the prior and the bias factor at the
      predicted bias belief.
    """

    tau: float = 1e-4
    max_iters: int = 50
    bias_init: Literal["evidence", "update", "predict"] = "evidence"

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError("tau must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")
        if self.bias_init not in ("evidence", "update", "predict"):
            raise ValueError("bias_init must be 'evidence', 'update' or 'predict'")


@dataclass(frozen=True)
class BdmState:
    state: GaussianBelief
    bias: BiasBelief
    iterations: int = 0
    gamma: float = 0.0
    capped: bool = False

    @classmethod
    def initial(cls, x0, P0, m: int, sigma0: float = 1e-3, omega0: float = 0.5) -> "BdmState":
        return cls(GaussianBelief(x0, P0), BiasBelief.initial(m, sigma0, omega0))


def update_state(pred: GaussianBelief, y, omega, theta_hat, model: StateSpaceModel,
                 cfg: SigmaPointConfig = SigmaPointConfig(), stats: UpdateStats | None = None) -> GaussianBelief:
    """State factor update with the bias-compensated innovation.

    ``stats`` (from :func:`measurement_stats` under ``pred``) is reused when
    given; it does not depend on ``omega`` or ``theta_hat``.
    """
    if stats is None:
        stats = measurement_stats(model, pred, cfg)
    offset = np.asarray(omega, dtype=float) * np.asarray(theta_hat, dtype=float)
    innov = np.asarray(y, dtype=float) - offset - stats.mu
    return GaussianBelief(pred.mean + stats.K @ innov, stats.cov)


def measurement_moments(model: StateSpaceModel, belief: GaussianBelief,
                        cfg: SigmaPointConfig = SigmaPointConfig()):
    """Mean of h(x) and per-dimension variance of h(x) under ``belief``."""
    sp = make_sigma_points(belief, cfg)
    Y = _apply(model.h, sp.points, model.vectorized)
    nu, S, _ = kernels.weighted_moments(sp.points, Y, belief.mean, sp.mean_weights, sp.cov_weights)
    return nu, np.diag(S).copy()


def indicator_probabilities(y, nu, hbar2, theta_hat, theta_var, r, prior):
    """Posterior occurrence probabilities, evaluated in the log domain.

    All arguments are per-dimension vectors; ``r`` is the diagonal of R.
    """
    y = np.asarray(y, dtype=float)
    with np.errstate(divide="ignore"):
        log_p1 = np.log(prior) - 0.5 * (hbar2 + theta_var + (nu + theta_hat - y) ** 2) / r
        log_p0 = np.log1p(-np.asarray(prior, dtype=float)) - 0.5 * (hbar2 + (y - nu) ** 2) / r
    return expit(log_p1 - log_p0)


def predictive_indicator(y, mu, s_diag, theta_minus, sigma_minus_diag, prior):
    """Occurrence probabilities with state and bias integrated out.

    Compares ``y ~ N(mu + theta_minus, s + sigma_minus)`` (biased) against
    ``y ~ N(mu, s)`` per dimension, where ``s`` is the diagonal of the
    predicted innovation covariance (it already contains ``r``). Unlike the
    variational update this charges a wide bias prior for its volume, so
    nominal residuals are not explained away as fresh biases.
    """
    y = np.asarray(y, dtype=float)
    v1 = s_diag + sigma_minus_diag
    prior = np.asarray(prior, dtype=float)
    with np.errstate(divide="ignore"):
        log_p1 = np.log(prior) - 0.5 * np.log(v1) - 0.5 * (y - mu - theta_minus) ** 2 / v1
        log_p0 = np.log1p(-prior) - 0.5 * np.log(s_diag) - 0.5 * (y - mu) ** 2 / s_diag
    return expit(log_p1 - log_p0)


def update_indicator(y, state_belief: GaussianBelief, bias: BiasBelief, model: StateSpaceModel,
                     hp: BiasHyperParams, cfg: SigmaPointConfig = SigmaPointConfig()):
    nu, hbar2 = measurement_moments(model, state_belief, cfg)
    return indicator_probabilities(y, nu, hbar2, bias.theta_hat, np.diag(bias.sigma),
                                   np.diag(model.R), hp.theta_prior)


def update_bias(y, omega, state_nu, bias_pred, model: StateSpaceModel):
    """Bias factor update.

    A Kalman update of the predicted bias against ``y - nu`` through the
    diagonal "measurement matrix" ``omega``, followed by the product with the
    zero-mean factor of precision ``omega (1 - omega) / r``.

    Returns ``(theta_star, sigma_star, theta_plus, sigma_plus)``.
    """
    theta_minus, sigma_minus = bias_pred
    y = np.asarray(y, dtype=float)
    omega = np.asarray(omega, dtype=float)
    r = np.diag(model.R)
    C = sigma_minus * omega[None, :]
    S = omega[:, None] * sigma_minus * omega[None, :] + model.R
    try:
        K = np.linalg.solve(S, C.T).T
    except np.linalg.LinAlgError as exc:
        raise SingularInnovationError("bias innovation covariance is singular") from exc
    theta_star = theta_minus + K @ (y - (state_nu + omega * theta_minus))
    sigma_star = symmetrize(sigma_minus - C @ K.T)
    w = clamp_omega(omega)
    try:
        info_star = np.linalg.inv(sigma_star)
        sigma_plus = symmetrize(np.linalg.inv(np.diag(w * (1.0 - w) / r) + info_star))
    except np.linalg.LinAlgError as exc:
        raise SingularInnovationError("singular bias covariance") from exc
    theta_plus = sigma_plus @ (info_star @ theta_star)
    return theta_star, sigma_star, theta_plus, sigma_plus


def _rel_change(new, old):
    den = np.linalg.norm(old)
    num = np.linalg.norm(new - old)
    return num / den if den >= 1e-12 else num


def step(prev: BdmState, y, model: StateSpaceModel, hp: BiasHyperParams,
         vb: VbSettings = VbSettings(), cfg: SigmaPointConfig = SigmaPointConfig()) -> BdmState:
    """Advance the filter by one measurement."""
    y = np.asarray(y, dtype=float)
    if y.shape != (model.m,):
        raise ValueError(f"measurement has shape {y.shape}, expected ({model.m},)")
    pred = gaussian_filter_predict(model, prev.state, cfg)
    theta_minus, sigma_minus = predict_bias(prev.bias, hp)
    stats = measurement_stats(model, pred, cfg)

    if vb.bias_init == "evidence":
        omega = predictive_indicator(y, stats.mu, np.diag(stats.S), theta_minus,
                                     np.diag(sigma_minus), hp.theta_prior)
    else:
        omega = hp.theta_prior.copy()
    if vb.bias_init != "predict":
        _, _, theta_plus, sigma_plus = update_bias(y, omega, stats.mu, (theta_minus, sigma_minus), model)
    else:
        theta_plus, sigma_plus = theta_minus, sigma_minus
    x = update_state(pred, y, omega, theta_plus, model, cfg, stats).mean

    # q(x) keeps the covariance stats.cov across iterations: factor it once
    sp = make_sigma_points(GaussianBelief(x, stats.cov), cfg)
    offsets = sp.points - x
    r = np.diag(model.R)

    gamma = np.inf
    it = 0
    for it in range(1, vb.max_iters + 1):
        X = np.ascontiguousarray(x + offsets)
        Y = _apply(model.h, X, model.vectorized)
        nu, Sh, _ = kernels.weighted_moments(X, Y, x, sp.mean_weights, sp.cov_weights)
        omega = indicator_probabilities(y, nu, np.diag(Sh), theta_plus, np.diag(sigma_plus), r, hp.theta_prior)
        _, _, theta_plus, sigma_plus = update_bias(y, omega, nu, (theta_minus, sigma_minus), model)
        x_new = pred.mean + stats.K @ (y - omega * theta_plus - stats.mu)
        gamma = _rel_change(x_new, x)
        x = x_new
        if gamma <= vb.tau:
            break

    return BdmState(
        GaussianBelief(x, stats.cov),
        BiasBelief(theta_plus, sigma_plus, omega),
        iterations=it,
        gamma=float(gamma),
        capped=bool(gamma > vb.tau),
    )


def run_bdm(model: StateSpaceModel, init: BdmState, ys, hp: BiasHyperParams,
            vb: VbSettings = VbSettings(), cfg: SigmaPointConfig = SigmaPointConfig()):
    """Filter a measurement sequence.

    Returns ``(means, omegas, iterations, capped)`` with one row per measurement.
    """
    ys = np.atleast_2d(np.asarray(ys, dtype=float))
    T = ys.shape[0]
    means = np.empty((T, model.n))
    omegas = np.empty((T, model.m))
    iters = np.empty(T, dtype=int)
    capped = np.empty(T, dtype=bool)
    st = init
    for k in range(T):
        st = step(st, ys[k], model, hp, vb, cfg)
        means[k] = st.state.mean
        omegas[k] = st.bias.omega
        iters[k] = st.iterations
        capped[k] = st.capped
    return means, omegas, iters, capped


def run_ukf(model: StateSpaceModel, init: GaussianBelief, ys, cfg: SigmaPointConfig = SigmaPointConfig()):
    ys = np.atleast_2d(np.asarray(ys, dtype=float))
    means = np.empty((ys.shape[0], model.n))
    b = init
    for k in range(ys.shape[0]):
        b = ukf_step(model, b, ys[k], cfg)
        means[k] = b.mean
    return means
