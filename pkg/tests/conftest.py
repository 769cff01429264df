import numpy as np
import pytest

from bdmfilter.gaussian import StateSpaceModel

# Lines collected by the acceptance suite, echoed in the terminal summary so
# they show up even when pytest captures stdout.
ACCEPTANCE_LINES: dict = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for key in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[key])


def linear_model(F, H, Q, R) -> StateSpaceModel:
    F, H = np.atleast_2d(F).astype(float), np.atleast_2d(H).astype(float)
    return StateSpaceModel(
        n=F.shape[0],
        m=H.shape[0],
        f=lambda X: X @ F.T,
        h=lambda X: X @ H.T,
        Q=np.atleast_2d(Q),
        R=np.atleast_2d(R),
        f_jacobian=lambda x: F,
        h_jacobian=lambda x: H,
        vectorized=True,
        name="linear",
    )


def kalman_filter(F, H, Q, R, m0, P0, ys):
    """Textbook Kalman filter; returns the posterior means and covariances."""
    m, P = np.asarray(m0, float), np.asarray(P0, float)
    means, covs = [], []
    for y in ys:
        m = F @ m
        P = F @ P @ F.T + Q
        S = H @ P @ H.T + R
        K = P @ H.T @ np.linalg.inv(S)
        m = m + K @ (y - H @ m)
        P = P - K @ S @ K.T
        means.append(m)
        covs.append(P)
    return np.array(means), np.array(covs)


def random_spd(rng, d, scale=1.0):
    A = rng.standard_normal((d, d))
    return scale * (A @ A.T + d * np.eye(d))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def cv_model():
    """Constant-velocity 2-state model observed through three linear channels."""
    F = np.array([[1.0, 1.0], [0.0, 1.0]])
    H = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])
    return linear_model(F, H, 0.1 * np.eye(2), np.eye(3)), F, H


def simulate_linear(F, H, Q, R, x0, T, seed):
    rng = np.random.default_rng(seed)
    LQ, LR = np.linalg.cholesky(Q), np.linalg.cholesky(R)
    x = np.asarray(x0, float)
    xs, ys = [], []
    for _ in range(T):
        x = F @ x + LQ @ rng.standard_normal(F.shape[0])
        xs.append(x)
        ys.append(H @ x + LR @ rng.standard_normal(H.shape[0]))
    return np.array(xs), np.array(ys)
