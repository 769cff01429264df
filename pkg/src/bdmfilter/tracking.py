"""Coordinated-turn target observed by range sensors, with biased readings.

State layout is ``[a, a_dot, b, b_dot, omega]``: planar position, velocity
and turn rate. Sensor ``i`` (0-based) sits at ``(350 i, 350 (i mod 2))``.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal

import numpy as np

from ._backend import kernels
from .gaussian import StateSpaceModel

__all__ = [
    "TurnModelParams",
    "SensorArray",
    "BiasScenario",
    "Trajectory",
    "turn_process",
    "turn_jacobian",
    "turn_noise_cov",
    "range_measure",
    "range_jacobian",
    "tracking_model",
    "simulate",
    "save_trajectory_csv",
    "load_trajectory_csv",
]

DEFAULT_X0 = (0.0, 10.0, 0.0, -5.0, 3.0 * np.pi / 180.0)


@dataclass(frozen=True)
class TurnModelParams:
    zeta_t: float = 1.0
    eta1: float = 0.1
    eta2: float = 1.75e-4
    x0: tuple = DEFAULT_X0

    def __post_init__(self):
        if not self.zeta_t > 0 or not self.eta1 > 0 or not self.eta2 > 0:
            raise ValueError("zeta_t, eta1 and eta2 must be positive")
        if len(self.x0) != 5:
            raise ValueError("x0 must have 5 entries")


@dataclass(frozen=True)
class SensorArray:
    positions: np.ndarray
    R: np.ndarray

    def __post_init__(self):
        pos = np.ascontiguousarray(np.atleast_2d(np.asarray(self.positions, dtype=float)))
        R = np.atleast_2d(np.asarray(self.R, dtype=float))
        if pos.shape[1] != 2 or pos.shape[0] < 1:
            raise ValueError("positions must be an (m, 2) array with m >= 1")
        if R.shape != (pos.shape[0],) * 2 or np.any(R - np.diag(np.diag(R))) or np.any(np.diag(R) <= 0):
            raise ValueError("R must be a positive diagonal m x m matrix")
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "R", R)

    @property
    def m(self) -> int:
        return self.positions.shape[0]

    @classmethod
    def rectangle(cls, m: int = 4, spacing: float = 350.0, r_var: float = 4.0) -> "SensorArray":
        i = np.arange(m)
        return cls(np.column_stack([spacing * i, spacing * (i % 2)]), r_var * np.eye(m))


@dataclass(frozen=True)
class BiasScenario:
    """How measurement biases contaminate a run.

    ``persistent``: the affected dimensions are drawn once and stay biased for
    the whole run. ``momentary``: drawn at ``onset`` and biased for time steps
    ``onset..offset`` inclusive. Bias magnitude is ``U(0, Lambda)`` drawn once
    per affected dimension, plus fresh ``N(0, sigma_o)`` jitter each step.
    """

    kind: Literal["persistent", "momentary", "none"] = "persistent"
    lam: float = 0.5
    Lambda: float = 90.0
    sigma_o: float = 0.4
    onset: int = 100
    offset: int = 130

    def __post_init__(self):
        if self.kind not in ("persistent", "momentary", "none"):
            raise ValueError(f"unknown bias scenario {self.kind!r}")
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError("lambda must lie in [0, 1]")
        if self.Lambda == 0 or self.sigma_o < 0:
            raise ValueError("Lambda must be non-zero and sigma_o non-negative")
        if self.onset >= self.offset:
            raise ValueError("onset must precede offset")

    def active(self, T: int) -> np.ndarray:
        """Boolean mask over time steps k = 1..T where biases may be present."""
        k = np.arange(1, T + 1)
        if self.kind == "persistent":
            return np.ones(T, dtype=bool)
        if self.kind == "momentary":
            return (k >= self.onset) & (k <= self.offset)
        return np.zeros(T, dtype=bool)


@dataclass
class Trajectory:
    """Simulated run; row ``k - 1`` holds time step ``k``.

    ``x_init`` is the true state at k = 0 (before the first measurement).
    """

    states: np.ndarray
    clean_measurements: np.ndarray
    biased_measurements: np.ndarray
    bias_truth: np.ndarray
    indicator_truth: np.ndarray
    x_init: np.ndarray = field(default_factory=lambda: np.zeros(5))

    @property
    def T(self) -> int:
        return self.states.shape[0]


def turn_noise_cov(params: TurnModelParams) -> np.ndarray:
    z = params.zeta_t
    M = np.array([[z**3 / 3.0, z**2 / 2.0], [z**2 / 2.0, z]])
    Q = np.zeros((5, 5))
    Q[:2, :2] = params.eta1 * M
    Q[2:4, 2:4] = params.eta1 * M
    Q[4, 4] = params.eta2
    return Q


def _rows(x):
    x = np.asarray(x, dtype=float)
    return np.ascontiguousarray(np.atleast_2d(x)), x.ndim == 1


def turn_process(x, params: TurnModelParams) -> np.ndarray:
    """Noise-free coordinated-turn transition for one state or a batch of rows."""
    X, single = _rows(x)
    out = kernels.coord_turn(X, float(params.zeta_t))
    return out[0] if single else out


def turn_jacobian(x, params: TurnModelParams) -> np.ndarray:
    X, single = _rows(x)
    out = kernels.coord_turn_jacobian(X, float(params.zeta_t))
    return out[0] if single else out


def range_measure(x, sensors: SensorArray) -> np.ndarray:
    X, single = _rows(x)
    out = kernels.ranges(X, sensors.positions)
    return out[0] if single else out


def range_jacobian(x, sensors: SensorArray) -> np.ndarray:
    X, single = _rows(x)
    out = kernels.range_jacobian(X, sensors.positions)
    return out[0] if single else out


def tracking_model(params: TurnModelParams = TurnModelParams(),
                   sensors: SensorArray | None = None) -> StateSpaceModel:
    """The tracking problem as a vectorized :class:`StateSpaceModel` with analytic Jacobians."""
    sensors = SensorArray.rectangle() if sensors is None else sensors
    model = StateSpaceModel(
        n=5,
        m=sensors.m,
        f=lambda X: turn_process(X, params),
        h=lambda X: range_measure(X, sensors),
        Q=turn_noise_cov(params),
        R=sensors.R,
        f_jacobian=lambda x: turn_jacobian(x, params),
        h_jacobian=lambda x: range_jacobian(x, sensors),
        vectorized=True,
        name="coordinated-turn/range",
    )
    model.F_batch = lambda X: turn_jacobian(np.atleast_2d(X), params)
    model.H_batch = lambda X: range_jacobian(np.atleast_2d(X), sensors)
    return model


def simulate(params: TurnModelParams, sensors: SensorArray, scenario: BiasScenario, T: int,
             rng_seed, random_init: bool = True) -> Trajectory:
    """Generate a ground-truth run of ``T`` steps.

    ``rng_seed`` is anything :func:`numpy.random.default_rng` accepts (an int,
    a ``SeedSequence`` or a ``Generator``). With ``random_init`` the initial
    state is drawn from ``N(x0, Q)``, matching the filters' initial belief.

    All random numbers are drawn in a fixed order regardless of the scenario,
    so runs that differ only in ``lam`` share their noise (common random
    numbers).
    """
    if T < 1:
        raise ValueError("T must be at least 1")
    rng = np.random.default_rng(rng_seed)
    m = sensors.m
    Q = turn_noise_cov(params)
    LQ = np.linalg.cholesky(Q)
    r_std = np.sqrt(np.diag(sensors.R))

    init_noise = rng.standard_normal(5)
    u_ind = rng.random(m)
    u_mag = rng.random(m)
    q_noise = rng.standard_normal((T, 5))
    r_noise = rng.standard_normal((T, m))
    jitter = rng.standard_normal((T, m))

    x = np.asarray(params.x0, dtype=float)
    if random_init:
        x = x + LQ @ init_noise
    x_init = x.copy()
    states = np.empty((T, 5))
    for k in range(T):
        x = turn_process(x, params) + LQ @ q_noise[k]
        states[k] = x
    clean = range_measure(states, sensors) + r_noise * r_std

    indicator = np.zeros((T, m), dtype=np.int64)
    if scenario.kind != "none":
        drawn = (u_ind < scenario.lam).astype(np.int64)
        indicator[scenario.active(T)] = drawn
    magnitude = u_mag * scenario.Lambda
    bias = indicator * (magnitude + np.sqrt(scenario.sigma_o) * jitter)
    return Trajectory(states, clean, clean + bias, bias, indicator, x_init)


def _header(m):
    cols = ["k"] + [f"x{i}" for i in range(5)]
    cols += [f"y_clean{i}" for i in range(m)] + [f"y_biased{i}" for i in range(m)]
    cols += [f"bias{i}" for i in range(m)] + [f"indicator{i}" for i in range(m)]
    return cols


def save_trajectory_csv(traj: Trajectory, path) -> None:
    """Write ``traj`` as CSV; the initial state goes in a leading comment line."""
    m = traj.clean_measurements.shape[1]
    buf = io.StringIO()
    buf.write("# x_init=" + ",".join(repr(float(v)) for v in traj.x_init) + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(_header(m))
    for k in range(traj.T):
        row = [k + 1] + [repr(float(v)) for v in traj.states[k]]
        for arr in (traj.clean_measurements, traj.biased_measurements, traj.bias_truth):
            row += [repr(float(v)) for v in arr[k]]
        row += [int(v) for v in traj.indicator_truth[k]]
        w.writerow(row)
    Path(path).write_text(buf.getvalue())


def load_trajectory_csv(path) -> Trajectory:
    lines = Path(path).read_text().splitlines()
    x_init = np.zeros(5)
    if lines and lines[0].startswith("# x_init="):
        x_init = np.array([float(v) for v in lines[0][len("# x_init="):].split(",")])
        lines = lines[1:]
    reader = csv.reader(lines)
    header = next(reader)
    m = (len(header) - 6) // 4
    if header != _header(m):
        raise ValueError(f"unexpected trajectory header in {path}")
    data = np.array([[float(v) for v in row] for row in reader])
    return Trajectory(
        states=data[:, 1:6],
        clean_measurements=data[:, 6:6 + m],
        biased_measurements=data[:, 6 + m:6 + 2 * m],
        bias_truth=data[:, 6 + 2 * m:6 + 3 * m],
        indicator_truth=data[:, 6 + 3 * m:].astype(np.int64),
        x_init=x_init,
    )
