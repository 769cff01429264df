"""Posterior Cramér-Rao bound (PCRB) for additive-noise models with biased readings.

The Fisher information ``J_k`` of the state follows the standard recursion

    J_{k+1} = D22 - D21 (J_k + D11)^{-1} D12

with ``D11 = E[F^T Q^-1 F]``, ``D12 = -E[F]^T Q^-1`` and
``D22 = Q^-1 + I_meas``. The measurement information ``I_meas`` depends on
the regime of the measurement at ``k + 1``:

* ``nominal``: ``E[H^T R^-1 H]``;
* ``onset``: the bias is a fresh draw, so ``p(y | x)`` is a mixture over bias
  samples ``b_i``;
* ``persist``: the bias carries over from the previous step, so
  ``p(y_{k+1} | x_{k+1}, y_k, x_k)`` is a mixture over indicator samples
  ``J_i`` with means ``h(x_{k+1}) + J_i (y_k - h(x_k))`` and covariances
  ``R + J_i (R + 2 Sigma_o)``.

The mixture informations are Monte-Carlo estimates of ``E[s s^T]`` where
``s`` is the gradient of the log mixture density with respect to
``x_{k+1}`` (log-sum-exp weighted). All expectations over states use an
ensemble forward-simulated from ``N(x0, P0)`` through the process model.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Optional

import numpy as np

from ._backend import kernels
from .gaussian import SingularInnovationError, StateSpaceModel, symmetrize
from .tracking import BiasScenario

__all__ = [
    "FisherRecursionState",
    "PcrbConfig",
    "recursion_step",
    "d_terms_process",
    "measurement_info_nominal",
    "d22_meas_nominal",
    "d22_meas_onset",
    "d22_meas_persist",
    "regime_schedule",
    "pcrb_series",
    "save_pcrb_csv",
]

REGIMES = ("nominal", "onset", "persist")


@dataclass(frozen=True)
class FisherRecursionState:
    """Information matrix ``J`` at time index ``k``."""

    J: np.ndarray
    k: int = 0

    def bound(self) -> np.ndarray:
        """The PCRB matrix ``J^-1``."""
        return symmetrize(np.linalg.inv(self.J))


@dataclass(frozen=True)
class PcrbConfig:
    """Monte-Carlo sample counts and an optional regime schedule.

    ``n_mc1``: bias samples in the onset mixture; ``n_mc2``: joint samples
    for the onset estimator; ``n_mc3``: indicator samples in the persistence
    mixture; ``n_mc4``: joint samples for the persistence estimator. The
    state ensemble has ``max`` of the four counts members (see
    :func:`pcrb_series`).

    ``schedule`` maps measurement time ``k`` (1-based) to a regime; missing
    entries are nominal. When ``None`` it is derived from the scenario with
    :func:`regime_schedule`.
    """

    n_mc1: int = 100
    n_mc2: int = 100
    n_mc3: int = 100
    n_mc4: int = 100
    schedule: Optional[Mapping[int, str]] = field(default=None, compare=False)

    def __post_init__(self):
        if min(self.n_mc1, self.n_mc2, self.n_mc3, self.n_mc4) < 1:
            raise ValueError("Monte-Carlo sample counts must be at least 1")
        if self.schedule is not None:
            bad = {v for v in self.schedule.values() if v not in REGIMES}
            if bad:
                raise ValueError(f"unknown regime(s) {sorted(bad)}")

    @property
    def ensemble_size(self) -> int:
        return max(self.n_mc1, self.n_mc2, self.n_mc3, self.n_mc4)


def recursion_step(J, D11, D12, D22) -> np.ndarray:
    """One step of the information recursion (``D21 = D12^T``)."""
    J, D11, D12, D22 = (np.atleast_2d(np.asarray(a, dtype=float)) for a in (J, D11, D12, D22))
    try:
        tmp = np.linalg.solve(J + D11, D12)
    except np.linalg.LinAlgError as exc:
        raise SingularInnovationError("J + D11 is singular") from exc
    return symmetrize(D22 - D12.T @ tmp)


def _Q_inv(model: StateSpaceModel) -> np.ndarray:
    try:
        return symmetrize(np.linalg.inv(model.Q))
    except np.linalg.LinAlgError as exc:
        raise SingularInnovationError("process noise covariance Q must be invertible") from exc


def d_terms_process(states_mc, model: StateSpaceModel):
    """Process-model terms ``(D11, D12, D22_part1)`` as sample means over ``states_mc``."""
    X = np.atleast_2d(np.asarray(states_mc, dtype=float))
    Qi = _Q_inv(model)
    F = model.F_batch(X)
    D11 = symmetrize(np.einsum("kji,jl,klm->im", F, Qi, F) / X.shape[0])
    D12 = -F.mean(axis=0).T @ Qi
    return D11, D12, Qi


def measurement_info_nominal(states_mc, model: StateSpaceModel) -> np.ndarray:
    """``E[H^T R^-1 H]`` over ``states_mc``."""
    X = np.atleast_2d(np.asarray(states_mc, dtype=float))
    H = model.H_batch(X)
    r_inv = 1.0 / np.diag(model.R)
    return symmetrize(np.einsum("kai,a,kaj->ij", H, r_inv, H) / X.shape[0])


def d22_meas_nominal(states_k, states_k1, model: StateSpaceModel, J_k) -> np.ndarray:
    """Nominal-period correction added to ``Q^-1``.

    ``-Q^-1 E[F] (J_k + E[F^T Q^-1 F])^-1 E[F]^T Q^-1 + E[H^T R^-1 H]`` with
    ``F`` averaged over ``states_k`` and ``H`` over ``states_k1``. Adding
    ``Q^-1`` gives the next information matrix in one go, i.e. the same result
    as :func:`recursion_step` with ``D22 = Q^-1 + E[H^T R^-1 H]``.
    """
    D11, D12, Qi = d_terms_process(states_k, model)
    J_k = np.atleast_2d(np.asarray(J_k, dtype=float))
    try:
        tmp = np.linalg.solve(J_k + D11, D12)
    except np.linalg.LinAlgError as exc:
        raise SingularInnovationError("J + E[F^T Q^-1 F] is singular") from exc
    return symmetrize(measurement_info_nominal(states_k1, model) - D12.T @ tmp)


def _mixture_info(logw, resid, H):
    info = kernels.mixture_score_info(
        np.ascontiguousarray(logw), np.ascontiguousarray(resid), np.ascontiguousarray(H)
    )
    if not np.all(np.isfinite(info)):
        raise FloatingPointError("non-finite mixture information estimate")
    return symmetrize(info)


def d22_meas_onset(y, x, bias_samples, model: StateSpaceModel) -> np.ndarray:
    """Measurement information at a bias onset.

    Parameters
    ----------
    y, x : ndarray, shape (N2, m) and (N2, n)
        Joint samples of the measurement and state.
    bias_samples : ndarray, shape (N1, m)
        Samples of the bias prior defining the likelihood mixture.
    """
    y = np.atleast_2d(np.asarray(y, dtype=float))
    x = np.atleast_2d(np.asarray(x, dtype=float))
    b = np.atleast_2d(np.asarray(bias_samples, dtype=float))
    r = np.diag(model.R)
    d = (y - model.measure(x))[:, None, :] - b[None, :, :]
    logw = -0.5 * np.sum(d * d / r, axis=2)
    return _mixture_info(logw, d / r, model.H_batch(x))


def d22_meas_persist(y_next, x_next, y_prev, x_prev, indicator_samples, model: StateSpaceModel,
                     sigma_o) -> np.ndarray:
    """Measurement information while a bias persists.

    ``indicator_samples`` is an (N3, m) 0/1 array; ``sigma_o`` the per-step
    bias jitter variance (scalar or m-vector). Component weights include the
    ``log det`` of the component covariances since these differ.
    """
    y1 = np.atleast_2d(np.asarray(y_next, dtype=float))
    x1 = np.atleast_2d(np.asarray(x_next, dtype=float))
    y0 = np.atleast_2d(np.asarray(y_prev, dtype=float))
    x0 = np.atleast_2d(np.asarray(x_prev, dtype=float))
    ind = np.atleast_2d(np.asarray(indicator_samples, dtype=float))
    if np.any((ind != 0.0) & (ind != 1.0)):
        raise ValueError("indicator samples must be 0 or 1")
    r = np.diag(model.R)
    so = np.broadcast_to(np.asarray(sigma_o, dtype=float), r.shape)
    c = r + ind * (r + 2.0 * so)                      # (N3, m) diagonal covariances
    carried = y0 - model.measure(x0)                  # (N4, m)
    d = (y1 - model.measure(x1))[:, None, :] - ind[None, :, :] * carried[:, None, :]
    logw = -0.5 * np.sum(d * d / c, axis=2) - 0.5 * np.sum(np.log(c), axis=1)
    return _mixture_info(logw, d / c, model.H_batch(x1))


def regime_schedule(scenario: BiasScenario, T: int) -> dict:
    """Regime per measurement time ``k = 1..T`` for a bias scenario.

    Persistent: onset at ``k = 1`` then persistence. Momentary: onset at
    ``scenario.onset``, persistence through ``scenario.offset``. ``none``:
    nominal throughout.
    """
    sched = {k: "nominal" for k in range(1, T + 1)}
    if scenario.kind == "persistent":
        sched.update({k: "persist" for k in range(2, T + 1)})
        sched[1] = "onset"
    elif scenario.kind == "momentary":
        for k in range(scenario.onset, min(scenario.offset, T) + 1):
            sched[k] = "persist"
        if scenario.onset <= T:
            sched[scenario.onset] = "onset"
    return sched


def pcrb_series(model: StateSpaceModel, scenario: BiasScenario, T: int,
                cfg: PcrbConfig = PcrbConfig(), seed=0, x0=None, P0=None) -> np.ndarray:
    """Diagonal of the PCRB for ``k = 0..T`` (shape ``(T + 1, n)``).

    ``x0``/``P0`` describe the initial state distribution (default zero mean
    and ``model.Q``); row 0 is ``diag(P0)``.

    Every ensemble member carries its own bias indicator and magnitude, drawn
    from the scenario's bias prior. The likelihood mixtures use the first
    ``n_mc1`` (onset biases) and ``n_mc3`` (indicators) members' draws as
    their samples, so the joint samples come from the same Monte-Carlo
    likelihood that is differentiated.

    Random numbers are drawn in a fixed order that does not depend on
    ``scenario.lam``; bounds for different occurrence probabilities share
    their samples and indicators are nested (on at ``lam`` implies on at any
    larger ``lam``).
    """
    if T < 1:
        raise ValueError("T must be at least 1")
    n, m = model.n, model.m
    rng = np.random.default_rng(seed)
    x0 = np.zeros(n) if x0 is None else np.asarray(x0, dtype=float)
    P0 = model.Q if P0 is None else np.atleast_2d(np.asarray(P0, dtype=float))
    sched = regime_schedule(scenario, T) if cfg.schedule is None else dict(cfg.schedule)
    lam = 0.0 if scenario.kind == "none" else scenario.lam
    r_std = np.sqrt(np.diag(model.R))
    LQ = np.linalg.cholesky(model.Q)
    N = cfg.ensemble_size

    X = x0 + rng.standard_normal((N, n)) @ np.linalg.cholesky(P0).T
    ens_on = (rng.random((N, m)) < lam).astype(float)
    ens_mag = rng.random((N, m)) * scenario.Lambda
    J = symmetrize(np.linalg.inv(P0))
    out = np.empty((T + 1, n))
    out[0] = np.diag(FisherRecursionState(J).bound())

    active = False
    X_prev = Y_prev = None
    for k in range(1, T + 1):
        q = rng.standard_normal((N, n))
        rn = rng.standard_normal((N, m))
        jit = rng.standard_normal((N, m))

        regime = sched.get(k, "nominal")
        if regime == "onset":
            active = True
        elif regime == "nominal":
            active = False
        X_new = model.propagate(X) + q @ LQ.T
        bias = ens_on * (ens_mag + np.sqrt(scenario.sigma_o) * jit) if active else np.zeros((N, m))
        Y_new = model.measure(X_new) + rn * r_std + bias

        D11, D12, Qi = d_terms_process(X, model)
        if regime == "nominal":
            info = measurement_info_nominal(X_new, model)
        elif regime == "onset":
            s = slice(0, cfg.n_mc2)
            info = d22_meas_onset(Y_new[s], X_new[s], bias[:cfg.n_mc1], model)
        else:
            if Y_prev is None:
                raise ValueError(f"persistence regime at k={k} needs a preceding step")
            s = slice(0, cfg.n_mc4)
            info = d22_meas_persist(Y_new[s], X_new[s], Y_prev[s], X_prev[s], ens_on[:cfg.n_mc3],
                                    model, scenario.sigma_o)
        J = recursion_step(J, D11, D12, Qi + info)
        out[k] = np.diag(FisherRecursionState(J, k).bound())
        X_prev, Y_prev = X_new, Y_new
        X = X_new
    return out


def save_pcrb_csv(bounds, path, position_index=(0, 2)) -> None:
    """Write ``k``, the bound per state dimension, and root-sum bounds.

    ``pos_bound`` is ``sqrt`` of the summed bounds over ``position_index``
    and ``state_bound`` over all dimensions; both are directly comparable to
    position and full-state RMSE.
    """
    bounds = np.atleast_2d(np.asarray(bounds, dtype=float))
    n = bounds.shape[1]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["k"] + [f"x{i}" for i in range(n)] + ["pos_bound", "state_bound"])
    pos = np.sqrt(bounds[:, list(position_index)].sum(axis=1)) if position_index else np.full(len(bounds), np.nan)
    tot = np.sqrt(bounds.sum(axis=1))
    for k, row in enumerate(bounds):
        w.writerow([k] + [repr(float(v)) for v in row] + [repr(float(pos[k])), repr(float(tot[k]))])
    Path(path).write_text(buf.getvalue())
