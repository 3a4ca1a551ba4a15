"""Vectorised numpy versions of the compiled kernels."""

import numpy as np


def corrector_partial(k, dirs, amp, phase, x, r):
    kx = k @ x
    kr = k @ r
    g = np.where(phase == 0, -amp * kr * np.sin(kx), amp * kr * np.cos(kx))
    v = g[:, None] * dirs
    return v.T @ v


def _diffusion_apply(R, xi, b):
    s = np.sum(R * R, axis=1)
    nr = np.sqrt(s)
    safe = np.where(nr > 0, nr, 1.0)
    u = R / safe[:, None]
    p = np.sum(u * xi, axis=1)
    a = np.sqrt(1.0 + 0.5 * s)
    c = np.sqrt(1.0 + 0.5 * (b + 1.0) * s)
    out = a[:, None] * p[:, None] * u + c[:, None] * (xi - p[:, None] * u)
    return np.where((s == 0.0)[:, None], xi, out)


def limit_sde_update(R, xi, M, dt, inv_beta, noise, b):
    drift = R @ M.T - inv_beta * R
    return R + dt * drift + noise * np.sqrt(dt) * _diffusion_apply(R, xi, b)


def _fene_radius(rs, c, bf):
    root = np.sqrt(bf)
    hi = np.full_like(rs, root)
    lo = np.zeros_like(rs)
    rho = np.where(rs < root, rs, 0.5 * np.minimum(rs, 2.0 * root))
    rho = np.where(rho >= root, 0.5 * (lo + hi), rho)
    active = np.ones(rs.shape, dtype=bool)
    for _ in range(200):
        q = bf - rho * rho
        g = rho - rs + c * rho ** 3 / q
        active &= g != 0.0
        hi = np.where(active & (g > 0.0), rho, hi)
        lo = np.where(active & (g <= 0.0), rho, lo)
        dg = 1.0 + c * rho * rho * (3.0 * bf - rho * rho) / (q * q)
        nxt = rho - g / dg
        done = np.abs(nxt - rho) <= 1e-15 * root
        bad = ~((nxt > lo) & (nxt < hi)) & ~done
        nxt = np.where(bad, 0.5 * (lo + hi), nxt)
        rho = np.where(active, nxt, rho)
        active &= ~done
        if not active.any():
            break
    return rho


def _fene_sub(R, dw, M, h, inv_beta, noise, b, bf):
    tmp = R + h * (R @ M.T - inv_beta * R) + noise * _diffusion_apply(R, dw, b)
    rs = np.sqrt(np.sum(tmp * tmp, axis=1))
    ok = np.isfinite(rs)
    rs_safe = np.where(ok & (rs > 0), rs, 1.0)
    rho = _fene_radius(rs_safe, h * inv_beta, bf)
    ok &= rho * rho < bf * (1.0 - 1e-14)
    new = np.where((rs > 0)[:, None], tmp * (rho / rs_safe)[:, None], 0.0)
    return new, ok


def fene_update(R, xi, M, dt, inv_beta, noise, b, bf, max_retry):
    out = np.empty_like(R)
    todo = np.arange(R.shape[0])
    retries = 0
    level = 0
    while todo.size:
        nsub = 1 << level
        h = dt / nsub
        rv = R[todo].copy()
        dw = xi[todo] * np.sqrt(dt) / nsub
        ok = np.ones(todo.size, dtype=bool)
        for _ in range(nsub):
            rv_new, ok_s = _fene_sub(rv, dw, M, h, inv_beta, noise, b, bf)
            ok &= ok_s
            rv = np.where(ok[:, None], rv_new, rv)
        out[todo[ok]] = rv[ok]
        todo = todo[~ok]
        if todo.size:
            level += 1
            retries += todo.size
            if level > max_retry:
                return None, retries
    return out, retries


def _cubic_weights(t):
    return np.stack([
        -t * (t - 1.0) * (t - 2.0) / 6.0,
        (t + 1.0) * (t - 1.0) * (t - 2.0) / 2.0,
        -(t + 1.0) * t * (t - 2.0) / 2.0,
        (t + 1.0) * t * (t - 1.0) / 6.0,
    ], axis=1)


def interp_periodic(f, q1, q2, clip):
    n1, n2, nc = f.shape
    i0 = np.floor(q1).astype(np.int64)
    j0 = np.floor(q2).astype(np.int64)
    w1 = _cubic_weights(q1 - i0)
    w2 = _cubic_weights(q2 - j0)
    off = np.arange(-1, 3)
    idx1 = (i0[:, None] + off) % n1
    idx2 = (j0[:, None] + off) % n2
    block = f[idx1[:, :, None], idx2[:, None, :], :]
    out = np.einsum("ma,mb,mabc->mc", w1, w2, block)
    if clip:
        inner = block[:, 1:3, 1:3, :].reshape(len(q1), 4, nc)
        out = np.clip(out, inner.min(axis=1), inner.max(axis=1))
    return out
