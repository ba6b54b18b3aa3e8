"""Independent oracles shared by the test modules.

Everything here is deliberately implemented through a different route
than the library code it checks: quadrature instead of closed forms,
dense-grid propagation instead of sampling, brute-force enumeration
instead of hull walks.
"""

import numpy as np
from scipy.integrate import quad


def fbm_cov_spectral(t, s, hurst):
    """Fractional noise covariance via the harmonizable representation.

    cov(t, s) proportional to I(t) + I(s) - I(|t-s|) with
    I(a) = integral of (1 - cos(a x)) x^(-1-2H) dx over (0, inf),
    normalized so that cov(1, 1) = 1.
    """
    def intensity(a):
        if a == 0:
            return 0.0
        def head(x):
            return (1.0 - np.cos(a * x)) * x ** (-1.0 - 2.0 * hurst)
        val_head, _ = quad(head, 0.0, 1.0, limit=400)
        # Tail: constant part in closed form, oscillatory part with the
        # cosine-weighted rule.
        tail_const = 1.0 / (2.0 * hurst)
        val_osc, _ = quad(lambda x: x ** (-1.0 - 2.0 * hurst), 1.0, np.inf,
                          weight="cos", wvar=a, limit=400)
        return val_head + tail_const - val_osc
    norm = 2.0 * intensity(1.0)
    return (intensity(t) + intensity(s) - intensity(abs(t - s))) / norm


def band_stay_probability(lo, hi, horizon, n_space=400, n_time=400):
    """P(Brownian motion started at 0 stays in (lo, hi) up to the horizon).

    Dense-grid transition propagation: the surviving density is pushed
    through the Gaussian kernel restricted to the band, trapezoid rule in
    space. Independent of any sampling code.
    """
    assert lo < 0 < hi
    xs = np.linspace(lo, hi, n_space)
    dx = xs[1] - xs[0]
    dt = horizon / n_time
    dens = np.zeros(n_space)
    dens[np.argmin(np.abs(xs))] = 1.0 / dx
    kernel = np.exp(-((xs[:, None] - xs[None, :]) ** 2) / (2.0 * dt))
    kernel /= np.sqrt(2.0 * np.pi * dt)
    weights = np.full(n_space, dx)
    weights[0] = weights[-1] = dx / 2.0
    for _ in range(n_time):
        dens = kernel @ (dens * weights)
        dens[0] = dens[-1] = 0.0
    return float(np.sum(dens * weights))


def chord_sup_envelope(xs, ys, left_limit, right_slope, query):
    """Brute-force concave envelope value: max over all chords through the
    extended graph (samples plus the 0+ sentinel) and over the slope rays
    emanating rightward from every point."""
    px = np.concatenate([[0.0], xs])
    py = np.concatenate([[left_limit], ys])
    best = -np.inf
    for i in range(len(px)):
        if px[i] <= query:
            best = max(best, py[i] + right_slope * (query - px[i]))
        for j in range(len(px)):
            if px[i] < query < px[j] or px[i] == query or px[j] == query:
                if px[i] == px[j]:
                    if px[i] == query:
                        best = max(best, py[i])
                    continue
                frac = (query - px[i]) / (px[j] - px[i])
                if 0.0 <= frac <= 1.0:
                    best = max(best, py[i] + frac * (py[j] - py[i]))
    return best


def grid_search_theta(points, weights, lo=-24.0, hi=24.0):
    """Staged 1e-6-resolution grid minimizer of the tilt objective."""
    points = np.asarray(points, dtype=float).ravel()
    weights = np.asarray(weights, dtype=float)

    def phi(thetas):
        return np.exp(np.outer(thetas, points)) @ weights

    step = 1e-2
    center = 0.5 * (lo + hi)
    half = 0.5 * (hi - lo)
    while step >= 1e-6:
        grid = np.arange(center - half, center + half + step, step)
        vals = phi(grid)
        center = float(grid[np.argmin(vals)])
        half = 2.0 * step
        step /= 100.0
    return center


def facet_distance_2d(points):
    """Distance from the origin to the hull boundary by brute-force edge
    enumeration; returns 0 when the origin is not strictly inside."""
    pts = np.asarray(points, dtype=float)
    n = len(pts)
    best = np.inf
    for i in range(n):
        for j in range(i + 1, n):
            edge = pts[j] - pts[i]
            norm = np.hypot(*edge)
            if norm == 0:
                continue
            normal = np.array([-edge[1], edge[0]]) / norm
            offsets = (pts - pts[i]) @ normal
            origin_offset = float(-(pts[i] @ normal))
            for sign in (1.0, -1.0):
                if np.all(sign * offsets <= 1e-12):
                    # Hull edge with the cloud on the -sign side; the
                    # origin must sit strictly on the cloud side too.
                    if sign * origin_offset > -1e-12:
                        return 0.0
                    best = min(best, abs(origin_offset))
    return 0.0 if not np.isfinite(best) else float(best)
