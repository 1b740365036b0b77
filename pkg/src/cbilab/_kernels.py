"""Euler step kernels: a numba version and a pure-numpy twin.

Both consume the same pre-drawn noise and the same counter-hash uniforms, so a
given seed yields the same paths whichever backend runs. Set
CBILAB_DISABLE_NUMBA=1 to make the numpy twin the default.
"""
from __future__ import annotations

import math
import os

import numpy as np

try:
    import numba
except ImportError:  # pragma: no cover
    numba = None

NUMBA_AVAILABLE = numba is not None
USE_NUMBA = NUMBA_AVAILABLE and os.environ.get("CBILAB_DISABLE_NUMBA", "").strip().lower() not in ("1", "true", "yes")

# Poisson inversion is done in pieces of at most this rate
POISSON_PIECE = 30.0
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_S30, _S27, _S31, _S11 = np.uint64(30), np.uint64(27), np.uint64(31), np.uint64(11)
_SALT = np.uint64(0xD1B54A32D192ED03)
_TWO_M53 = 2.0**-53


def splitmix64(x):
    z = x + _GOLDEN
    z = (z ^ (z >> _S30)) * _M1
    z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


def hash_uniform(key, path, step, k):
    """Uniform on (0, 1) from the counter (key, path, step, k)."""
    h = splitmix64(key ^ splitmix64(np.uint64(path)))
    h = splitmix64(h ^ np.uint64(step))
    h = splitmix64(h ^ np.uint64(k))
    return (float(h >> _S11) + 0.5) * _TWO_M53


def poisson_inversion(rate, u):
    p = math.exp(-rate)
    s = p
    k = 0
    while u > s and k < 100000:
        k += 1
        p *= rate / k
        s += p
    return k


def poisson_count(rate, u, key, path, step):
    """Poisson(rate) from u, splitting large rates into hash-driven pieces."""
    if rate <= POISSON_PIECE:
        return poisson_inversion(rate, u)
    pieces = int(math.ceil(rate / POISSON_PIECE))
    r = rate / pieces
    n = poisson_inversion(r, u)
    salted = key ^ _SALT
    for j in range(1, pieces):
        n += poisson_inversion(r, hash_uniform(salted, path, step, j))
    return n


def quantile(u, cdf, zs):
    """Piecewise-linear inverse of a tabulated cdf; flat z runs encode atoms."""
    i = np.searchsorted(cdf, u)
    if i <= 0:
        return zs[0]
    if i >= cdf.shape[0]:
        return zs[-1]
    c0, c1 = cdf[i - 1], cdf[i]
    if c1 <= c0:
        return zs[i]
    return zs[i - 1] + (zs[i] - zs[i - 1]) * (u - c0) / (c1 - c0)


def quantile_vec(u, cdf, zs):
    u = np.asarray(u, dtype=float)
    i = np.clip(np.searchsorted(cdf, u), 1, len(cdf) - 1)
    c0, c1 = cdf[i - 1], cdf[i]
    z0, z1 = zs[i - 1], zs[i]
    with np.errstate(invalid="ignore", divide="ignore"):
        z = np.where(c1 > c0, z0 + (z1 - z0) * (u - c0) / (c1 - c0), z1)
    z = np.where(u <= cdf[0], zs[0], z)
    return np.where(u > cdf[-1], zs[-1], z)


def mu_jumps(xp, rate_per_x, dt, u, key, path, step, cdf, zs):
    """(sum z, sum z^2) of the branching jumps in one step."""
    n = poisson_count(xp * rate_per_x * dt, u, key ^ _GOLDEN, path, step)
    js = 0.0
    jq = 0.0
    for k in range(n):
        z = quantile(hash_uniform(key, path, step, k), cdf, zs)
        js += z
        jq += z * z
    return js, jq


def _euler_chunk_scalar(
    x, integ, qv_d, qv_mu, qv_nu, ntrunc,
    dt, b_eff, beta_t, sigma, mu_rate_t, mu_comp, mu_small_var, nu_qv_small,
    ZB, ZS, UM, NU1, NU2, cdf, zs, key, path0, step0, has_mu, has_nu,
):  # fmt: skip
    n_paths, n_steps = ZB.shape
    s2 = sigma * sigma
    for p in range(n_paths):
        xv = x[p]
        ig = integ[p]
        qd = qv_d[p]
        qm = qv_mu[p]
        qn = qv_nu[p]
        tr = ntrunc[p]
        for j in range(n_steps):
            xp = xv if xv > 0.0 else 0.0
            xn = xv + (b_eff + beta_t[j] * xv) * dt
            if sigma > 0.0:
                xn += sigma * math.sqrt(xp * dt) * ZB[p, j]
            if has_mu:
                if mu_small_var > 0.0:
                    xn += math.sqrt(xp * dt * mu_small_var) * ZS[p, j]
                js, jq = mu_jumps(xp, mu_rate_t[j], dt, UM[p, j], key, path0 + p, step0 + j, cdf, zs)
                xn += js
                xn -= xp * mu_comp * dt
                qm += jq + xp * dt * mu_small_var
            if has_nu:
                xn += NU1[p, j]
                qn += NU2[p, j] + nu_qv_small * dt
            qd += s2 * xp * dt
            if xn < 0.0:
                xn = 0.0
                tr += 1
            ig += 0.5 * (xv + xn) * dt
            xv = xn
        x[p] = xv
        integ[p] = ig
        qv_d[p] = qd
        qv_mu[p] = qm
        qv_nu[p] = qn
        ntrunc[p] = tr


def euler_chunk_numpy(
    x, integ, qv_d, qv_mu, qv_nu, ntrunc,
    dt, b_eff, beta_t, sigma, mu_rate_t, mu_comp, mu_small_var, nu_qv_small,
    ZB, ZS, UM, NU1, NU2, cdf, zs, key, path0, step0, has_mu, has_nu,
):  # fmt: skip
    """Vectorised over paths, one step at a time; same arithmetic order as the scalar kernel."""
    with np.errstate(over="ignore"):  # uint64 hashing wraps by design
        _euler_steps_numpy(
            x, integ, qv_d, qv_mu, qv_nu, ntrunc, dt, b_eff, beta_t, sigma, mu_rate_t, mu_comp,
            mu_small_var, nu_qv_small, ZB, ZS, UM, NU1, NU2, cdf, zs, key, path0, step0, has_mu, has_nu,
        )


def _euler_steps_numpy(
    x, integ, qv_d, qv_mu, qv_nu, ntrunc,
    dt, b_eff, beta_t, sigma, mu_rate_t, mu_comp, mu_small_var, nu_qv_small,
    ZB, ZS, UM, NU1, NU2, cdf, zs, key, path0, step0, has_mu, has_nu,
):  # fmt: skip
    n_steps = ZB.shape[1]
    s2 = sigma * sigma
    for j in range(n_steps):
        xp = np.maximum(x, 0.0)
        xn = x + (b_eff + beta_t[j] * x) * dt
        if sigma > 0.0:
            xn += sigma * np.sqrt(xp * dt) * ZB[:, j]
        if has_mu:
            if mu_small_var > 0.0:
                xn += np.sqrt(xp * dt * mu_small_var) * ZS[:, j]
            rate = xp * mu_rate_t[j] * dt
            u = UM[:, j]
            # most steps carry no jump: u <= exp(-rate) means count zero unless split
            cand = np.nonzero((u > np.exp(-rate)) | (rate > POISSON_PIECE))[0]
            js = np.zeros_like(x)
            jq = np.zeros_like(x)
            for p in cand:
                js[p], jq[p] = mu_jumps(xp[p], mu_rate_t[j], dt, u[p], key, path0 + p, step0 + j, cdf, zs)
            xn += js
            xn -= xp * mu_comp * dt
            qv_mu += jq + xp * dt * mu_small_var
        if has_nu:
            xn += NU1[:, j]
            qv_nu += NU2[:, j] + nu_qv_small * dt
        qv_d += s2 * xp * dt
        neg = xn < 0.0
        xn[neg] = 0.0
        ntrunc += neg
        integ += 0.5 * (x + xn) * dt
        x[:] = xn


euler_chunk_numba = None
if NUMBA_AVAILABLE:
    _jit = numba.njit(cache=True)
    if USE_NUMBA:
        # helpers are rebound so both kernels share the compiled scalar code
        splitmix64 = _jit(splitmix64)
        hash_uniform = _jit(hash_uniform)
        poisson_inversion = _jit(poisson_inversion)
        poisson_count = _jit(poisson_count)
        quantile = _jit(quantile)
        mu_jumps = _jit(mu_jumps)
        euler_chunk_numba = _jit(_euler_chunk_scalar)

euler_chunk = euler_chunk_numba if USE_NUMBA else euler_chunk_numpy
