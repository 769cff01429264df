"""Pure numpy implementations of the kernels in ``_core.pyx``.

Used when the extension is not built, or when ``BDMFILTER_BACKEND=python``.
"""
import numpy as np

TAYLOR_OMEGA = 1e-6


def cholesky_jitter(cov):
    cov = np.asarray(cov, dtype=float)
    d = cov.shape[0]
    if not np.any(cov):
        return np.zeros((d, d))
    base = 1e-9 * np.trace(cov) / d
    for attempt in range(4):
        jit = 0.0 if attempt == 0 else base * 10.0 ** (attempt - 1)
        if jit < 0.0:
            break
        try:
            return np.linalg.cholesky(cov + jit * np.eye(d))
        except np.linalg.LinAlgError:
            continue
    raise np.linalg.LinAlgError("degenerate covariance")


def sigma_points(mean, cov, lam):
    d = mean.shape[0]
    spread = np.sqrt(d + lam) * cholesky_jitter(cov).T
    return np.vstack([mean, mean + spread, mean - spread])


def weighted_moments(X, Y, xmean, wm, wc):
    mu = wm @ Y
    dy = Y - mu
    dx = X - xmean
    S = (dy * wc[:, None]).T @ dy
    C = (dx * wc[:, None]).T @ dy
    return mu, 0.5 * (S + S.T), C


def _turn_coeffs(w, zeta):
    s = np.sin(w * zeta)
    c = np.cos(w * zeta)
    small = np.abs(w) < TAYLOR_OMEGA
    safe = np.where(small, 1.0, w)
    sw = np.where(small, zeta - w * w * zeta**3 / 6.0, s / safe)
    cw = np.where(small, -w * zeta**2 / 2.0, -2.0 * np.sin(0.5 * w * zeta) ** 2 / safe)
    return sw, cw, s, c, small, safe


def coord_turn(X, zeta):
    a, ad, b, bd, w = X.T
    sw, cw, s, c, _, _ = _turn_coeffs(w, zeta)
    return np.column_stack([
        a + sw * ad + cw * bd,
        c * ad - s * bd,
        -cw * ad + b + sw * bd,
        s * ad + c * bd,
        w,
    ])


def coord_turn_jacobian(X, zeta):
    ad, bd, w = X[:, 1], X[:, 3], X[:, 4]
    sw, cw, s, c, small, safe = _turn_coeffs(w, zeta)
    z2 = zeta * zeta
    dsw = np.where(small, -w * z2 * zeta / 3.0, (zeta * c * w - s) / safe**2)
    dcw = np.where(small, -z2 / 2.0 + w * w * z2 * z2 / 24.0,
                   (-zeta * s * w - c + 1.0) / safe**2)
    J = np.zeros((X.shape[0], 5, 5))
    J[:, 0, 0] = 1.0
    J[:, 0, 1] = sw
    J[:, 0, 3] = cw
    J[:, 0, 4] = dsw * ad + dcw * bd
    J[:, 1, 1] = c
    J[:, 1, 3] = -s
    J[:, 1, 4] = -zeta * s * ad - zeta * c * bd
    J[:, 2, 1] = -cw
    J[:, 2, 2] = 1.0
    J[:, 2, 3] = sw
    J[:, 2, 4] = -dcw * ad + dsw * bd
    J[:, 3, 1] = s
    J[:, 3, 3] = c
    J[:, 3, 4] = zeta * c * ad - zeta * s * bd
    J[:, 4, 4] = 1.0
    return J


def ranges(X, sensors):
    da = X[:, 0, None] - sensors[None, :, 0]
    db = X[:, 2, None] - sensors[None, :, 1]
    return np.sqrt(da * da + db * db)


def range_jacobian(X, sensors):
    da = X[:, 0, None] - sensors[None, :, 0]
    db = X[:, 2, None] - sensors[None, :, 1]
    rho = np.sqrt(da * da + db * db)
    safe = np.where(rho > 0.0, rho, 1.0)
    J = np.zeros((X.shape[0], sensors.shape[0], 5))
    J[:, :, 0] = np.where(rho > 0.0, da / safe, 0.0)
    J[:, :, 2] = np.where(rho > 0.0, db / safe, 0.0)
    return J


def mixture_score_info(logw, resid, H):
    w = np.exp(logw - logw.max(axis=1, keepdims=True))
    w /= w.sum(axis=1, keepdims=True)
    v = np.einsum("ji,jia->ja", w, resid)
    s = np.einsum("jab,ja->jb", H, v)
    info = s.T @ s / logw.shape[0]
    return 0.5 * (info + info.T)
