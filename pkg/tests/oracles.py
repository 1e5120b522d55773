"""Independent oracles used by the tests.

These deliberately avoid the package's solver machinery: fixed-step
classical RK4, plain bisection, trapezoid quadrature.
"""

from __future__ import annotations

import numpy as np


def _rk4_step(r, y, h, rhs):
    k1 = rhs(r, y)
    k2 = rhs(r + 0.5 * h, y + 0.5 * h * k1)
    k3 = rhs(r + 0.5 * h, y + 0.5 * h * k2)
    k4 = rhs(r + h, y + h * k3)
    return y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _ground_rhs(r, y):
    q, p = y
    return np.array([p, -p / r + q - q**3])


def _shoot_classify(s: float, h: float, r_max: float) -> int:
    """+1 if Q crosses zero (s too big), -1 if Q' turns positive (s too small)."""
    r = 1e-3
    a2 = (s - s**3) / 4.0
    y = np.array([s + a2 * r * r, 2.0 * a2 * r])
    while r < r_max:
        y = _rk4_step(r, y, h, _ground_rhs)
        r += h
        if y[0] < 0.0:
            return +1
        if y[1] > 0.0 and y[0] < 1.5:
            return -1
    return +1 if y[0] < 0 else -1


def shoot_ground_state(h: float = 2e-3, r_max: float = 15.0, iters: int = 60):
    """Bisection on Q(0) with fixed-step RK4; returns (q0, mass_sq).

    mass_sq is the 2D mass 2*pi*int Q^2 r dr by trapezoid on the RK4 samples.
    """
    lo, hi = 1.8, 2.6
    assert _shoot_classify(lo, h, r_max) == -1
    assert _shoot_classify(hi, h, r_max) == +1
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if _shoot_classify(mid, h, r_max) == +1:
            hi = mid
        else:
            lo = mid
    q0 = 0.5 * (lo + hi)

    r = 1e-3
    a2 = (q0 - q0**3) / 4.0
    y = np.array([q0 + a2 * r * r, 2.0 * a2 * r])
    rs, qs = [0.0, r], [q0, y[0]]
    while r < 12.0 and y[0] > 0:
        y = _rk4_step(r, y, 0.5 * h, _ground_rhs)
        r += 0.5 * h
        rs.append(r)
        qs.append(max(y[0], 0.0))
    rs = np.asarray(rs)
    qs = np.asarray(qs)
    mass_sq = 2.0 * np.pi * np.trapezoid(qs**2 * rs, rs)
    return q0, mass_sq


def disc_sum_direct(nodal_density: np.ndarray, h: float, radius: float) -> tuple[float, tuple[int, int]]:
    """Brute-force concentration: max over all centers of the weighted disc sum."""
    n = nodal_density.shape[0]
    off = np.minimum(np.arange(n), n - np.arange(n)) * h
    d1, d2 = np.meshgrid(off, off, indexing="ij")
    kern = np.clip((radius - np.hypot(d1, d2)) / h + 0.5, 0.0, 1.0)
    best, best_idx = -np.inf, (0, 0)
    for i in range(n):
        rolled = np.roll(kern, i, axis=0)
        for j in range(n):
            val = float(np.sum(nodal_density * np.roll(rolled, j, axis=1)) * h * h)
            if val > best:
                best, best_idx = val, (i, j)
    return best, best_idx
