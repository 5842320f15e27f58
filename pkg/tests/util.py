"""Shared helpers for the test suite: model randomizers and slow oracles."""

import numpy as np

import acflow as af


def randomize_block(block, rng, scale=0.5, gamma=None):
    """Fill the zero-initialized final linear so the block is no longer the
    identity, optionally set attention gammas, and converge power states."""
    for name, t in block.named_params().items():
        if t is not None and t.data.ndim == 2 and not t.data.any():
            t.data = rng.standard_normal(t.data.shape) * scale
        if name.endswith("gamma") and gamma is not None:
            t.data = np.asarray(gamma(rng) if callable(gamma) else gamma)
    # keep requested gammas inside each stage's contraction allowance
    for stage in block.attention_stages():
        if stage.variant == "l2" and stage.gamma_cap is not None:
            stage.params.gamma.data = np.asarray(np.clip(
                stage.params.gamma.data, -stage.gamma_cap, stage.gamma_cap))
    block.refresh_states(100)
    return block


def randomize_model(model, rng, scale=0.5, gamma=None):
    for block in model.blocks:
        randomize_block(block, rng, scale=scale, gamma=gamma)
    return model


def numeric_jacobian(fn, x, eps=1e-6):
    """Dense Jacobian by central finite differences, column by column."""
    x = np.asarray(x, dtype=np.float64)
    y0 = np.asarray(fn(x))
    J = np.empty((y0.size, x.size))
    flat = x.reshape(-1)
    for j in range(flat.size):
        orig = flat[j]
        flat[j] = orig + eps
        yp = np.asarray(fn(x)).reshape(-1)
        flat[j] = orig - eps
        ym = np.asarray(fn(x)).reshape(-1)
        flat[j] = orig
        J[:, j] = (yp - ym) / (2.0 * eps)
    return J


def jacobi_svd_sigma_max(M, sweeps=60):
    """Largest singular value by one-sided Jacobi rotations (independent of
    numpy's SVD path)."""
    A = np.array(M, dtype=np.float64)
    if A.shape[0] < A.shape[1]:
        A = A.T
    m, n = A.shape
    for _ in range(sweeps):
        off = 0.0
        for p in range(n - 1):
            for q in range(p + 1, n):
                alpha = A[:, p] @ A[:, p]
                beta = A[:, q] @ A[:, q]
                g = A[:, p] @ A[:, q]
                off = max(off, abs(g))
                if abs(g) < 1e-15:
                    continue
                zeta = (beta - alpha) / (2.0 * g)
                t = np.sign(zeta) / (abs(zeta) + np.sqrt(1.0 + zeta * zeta))
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = c * t
                Ap = c * A[:, p] - s * A[:, q]
                Aq = s * A[:, p] + c * A[:, q]
                A[:, p], A[:, q] = Ap, Aq
        if off < 1e-14:
            break
    return float(np.sqrt(max((A * A).sum(axis=0).max(), 0.0)))


def schoolbook_matmul(a, b):
    a = np.asarray(a)
    b = np.asarray(b)
    out = np.zeros((a.shape[0], b.shape[1]))
    for i in range(a.shape[0]):
        for j in range(b.shape[1]):
            acc = 0.0
            for k in range(a.shape[1]):
                acc += a[i, k] * b[k, j]
            out[i, j] = acc
    return out


def lambert_bisect(y, lo=0.0, hi=None):
    """Bisection root of w*exp(w) - y on the nonnegative axis."""
    if hi is None:
        hi = max(1.0, np.log(y + 1.0) + 1.0)
    while hi * np.exp(hi) < y:
        hi *= 2.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if mid * np.exp(mid) < y:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def energy_distance(a, b):
    """Two-sample energy distance 2 E|X-Y| - E|X-X'| - E|Y-Y'|."""
    def mean_dist(x, y):
        d = np.sqrt(((x[:, None, :] - y[None, :, :]) ** 2).sum(-1))
        return d.mean()

    return 2.0 * mean_dist(a, b) - mean_dist(a, a) - mean_dist(b, b)


def empirical_lip(fn, shape, n_pairs, rng, scale=2.0):
    return af.empirical_lipschitz(fn, shape, n_pairs, rng, scale=scale)
