"""Pure numpy versions of the compiled kernels in ``_kernels.pyx``."""
import numpy as np
from scipy.linalg import solve_triangular

LOG_2PI = np.log(2 * np.pi)
JITTER = (0.0, 1e-10, 1e-8, 1e-6)


def _series_lml(t, y, amp2, alpha, tau, noise2):
    r2 = (t[:, None] - t[None, :]) ** 2
    K = amp2 * (1.0 + r2 / (2.0 * alpha * tau * tau)) ** (-alpha)
    n = t.size
    for jitter in JITTER:
        try:
            L = np.linalg.cholesky(K + (noise2 + jitter * amp2) * np.eye(n))
            break
        except np.linalg.LinAlgError:
            continue
    else:
        return np.nan
    z = solve_triangular(L, y, lower=True)
    return -0.5 * z @ z - np.log(np.diag(L)).sum() - 0.5 * n * LOG_2PI


def rq_lml_grid(t, y, offsets, grid):
    """Summed RQ log marginal likelihood of every series at every grid row."""
    t = np.asarray(t, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    grid = np.asarray(grid, dtype=np.float64)
    series = [(t[a:b], y[a:b]) for a, b in zip(offsets[:-1], offsets[1:])]
    out = np.empty(len(grid))
    for g, (amp2, alpha, tau, noise2) in enumerate(grid):
        total = 0.0
        for ts, ys in series:
            v = _series_lml(ts, ys, amp2, alpha, tau, noise2)
            if np.isnan(v):
                total = np.nan
                break
            total += v
        out[g] = total
    return out


def tsne_gradient(P, Y):
    """Exact t-SNE gradient of KL(P || Q) and the KL value itself."""
    sq = np.sum(Y * Y, axis=1)
    dist = np.maximum(sq[:, None] + sq[None, :] - 2.0 * Y @ Y.T, 0.0)
    num = 1.0 / (1.0 + dist)
    np.fill_diagonal(num, 0.0)
    Q = np.maximum(num / num.sum(), 1e-12)
    np.fill_diagonal(Q, 0.0)
    coef = 4.0 * (P - Q) * num
    grad = coef.sum(axis=1)[:, None] * Y - coef @ Y
    mask = P > 0
    kl = float(np.sum(P[mask] * np.log(P[mask] / np.maximum(Q[mask], 1e-12))))
    return grad, kl
