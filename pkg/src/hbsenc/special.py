"""Hankel function of the first kind, order zero, for real non-negative arguments.

Three regimes, each accurate to roughly machine precision on its range:

* ``x < 8``: ascending power series for ``J0`` and ``Y0``;
* ``8 <= x < 25``: Miller backward recurrence for ``J_n`` normalised by
  ``J0 + 2 sum J_2k = 1``, then the Neumann series for ``Y0``;
* ``x >= 25``: Hankel asymptotic expansion, truncated at its smallest term.

The asymptotic series alone is only good to about ``exp(-2x)`` at the
truncation point, hence the middle regime.
"""

from __future__ import annotations

import numpy as np

__all__ = ["hankel0", "bessel_j0_y0", "SERIES_SWITCH", "ASYMPTOTIC_SWITCH"]

SERIES_SWITCH = 8.0
ASYMPTOTIC_SWITCH = 25.0

_EULER_GAMMA = 0.57721566490153286061


def _series(x):
    q = 0.25 * x * x
    term = np.ones_like(x)
    j0 = np.ones_like(x)
    ysum = np.zeros_like(x)
    harmonic = 0.0
    for k in range(1, 48):
        term = -term * q / (k * k)
        harmonic += 1.0 / k
        j0 = j0 + term
        ysum = ysum - harmonic * term
    y0 = (2.0 / np.pi) * ((np.log(0.5 * x) + _EULER_GAMMA) * j0 + ysum)
    return j0, y0


def _miller(x):
    nstart = int(np.max(x) + 20.0 + 10.0 * np.cbrt(np.max(x)))
    nstart += nstart % 2
    jp1 = np.zeros_like(x)
    jn = np.full_like(x, 1e-30)
    norm = np.zeros_like(x)
    neumann = np.zeros_like(x)
    for n in range(nstart, 0, -1):
        jm1 = (2.0 * n / x) * jn - jp1
        jp1, jn = jn, jm1
        m = n - 1
        if m > 0 and m % 2 == 0:
            norm += 2.0 * jn
            neumann += (-1.0) ** (m // 2) * jn / (m // 2)
        big = np.abs(jn) > 1e250
        if np.any(big):
            s = np.where(big, 1e-250, 1.0)
            jn, jp1, norm, neumann = jn * s, jp1 * s, norm * s, neumann * s
    norm += jn
    j0 = jn / norm
    neumann = neumann / norm
    y0 = (2.0 / np.pi) * (np.log(0.5 * x) + _EULER_GAMMA) * j0 - (4.0 / np.pi) * neumann
    return j0, y0


def _asymptotic(x):
    # H0(x) ~ sqrt(2/(pi x)) e^{i(x - pi/4)} sum_k i^k a_k / x^k
    acc = np.ones_like(x, dtype=complex)
    coef = np.ones_like(x)
    last = np.full_like(x, np.inf)
    live = np.ones(x.shape, dtype=bool)
    for k in range(1, 80):
        coef = coef * (-(2 * k - 1) ** 2) / (k * 8.0 * x)
        mag = np.abs(coef)
        live &= mag < last
        if not np.any(live):
            break
        acc = acc + np.where(live, coef * (1j ** k), 0.0)
        last = np.where(live, mag, last)
        if np.all(mag < 1e-18):
            break
    phase = np.exp(1j * (x - 0.25 * np.pi))
    return np.sqrt(2.0 / (np.pi * x)) * phase * acc


def bessel_j0_y0(x):
    """Return ``(J0(x), Y0(x))`` for positive real ``x`` (array or scalar)."""
    h = hankel0(x)
    return h.real, h.imag


def hankel0(x):
    """``H0^(1)(x) = J0(x) + i Y0(x)`` for real ``x > 0``."""
    x = np.asarray(x, dtype=float)
    scalar = x.ndim == 0
    x = np.atleast_1d(x)
    if np.any(x <= 0) or not np.all(np.isfinite(x)):
        raise ValueError("hankel0 needs finite positive arguments")
    out = np.empty(x.shape, dtype=complex)
    small = x < SERIES_SWITCH
    large = x >= ASYMPTOTIC_SWITCH
    mid = ~(small | large)
    if np.any(small):
        j, y = _series(x[small])
        out[small] = j + 1j * y
    if np.any(mid):
        j, y = _miller(x[mid])
        out[mid] = j + 1j * y
    if np.any(large):
        out[large] = _asymptotic(x[large])
    return out[0] if scalar else out
