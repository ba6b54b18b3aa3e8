"""Conditional Esscher tilting of finite increment clouds.

Given price-increment samples with reference weights, the tilt
exp(theta . x) with theta at the minimum of the moment generating
function phi(theta) = sum w_i exp(theta . x_i) annihilates the weighted
mean. A subsequent rescaling between the zero and nonzero increments
caps the weighted second moment and the off-zero mass at a target eta,
yielding strictly positive martingale weights.
"""

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import (ConvergenceError, DegenerateCloudError, InteriorError,
                     InvariantViolation, ValidationError)

__all__ = ["IncrementCloud", "EsscherResult", "check_interior",
           "esscher_minimize", "esscher_weights"]

INTERIOR_RTOL = 1e-9


@dataclass
class IncrementCloud:
    """Finite conditional law of a d-dimensional price increment."""

    points: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        self.points = pts
        w = np.asarray(self.weights, dtype=float)
        if w.shape != (pts.shape[0],):
            raise ValidationError("one weight per point required")
        if np.any(w <= 0):
            raise ValidationError("reference weights must be strictly positive")
        if abs(w.sum() - 1.0) > 1e-12:
            raise ValidationError("reference weights must sum to 1")
        self.weights = w

    @classmethod
    def from_samples(cls, points):
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        n = pts.shape[0]
        return cls(pts, np.full(n, 1.0 / n))

    @property
    def d(self):
        return self.points.shape[1]

    @property
    def zero_mask(self):
        return np.all(self.points == 0.0, axis=1)

    @property
    def zero_mass(self):
        return float(self.weights[self.zero_mask].sum())

    @property
    def scale(self):
        norms = np.linalg.norm(self.points, axis=1)
        return float(norms.max()) if len(norms) else 0.0


@dataclass
class EsscherResult:
    """Tilted weights together with the achieved moment diagnostics."""

    theta_star: np.ndarray
    z_weights: np.ndarray
    eta: float
    lam: float
    mu: float
    diagnostics: dict = field(default_factory=dict)

    def to_json(self):
        return json.dumps({"lam": self.lam, "mu": self.mu, "eta": self.eta,
                           "theta": list(map(float, np.atleast_1d(self.theta_star))),
                           **self.diagnostics}, sort_keys=True)


def check_interior(cloud, rtol=INTERIOR_RTOL):
    """Whether the origin lies in the interior of the cloud's convex hull.

    Returns (ok, delta) with delta the radius of the largest origin-
    centered ball inside the hull (0 when the check fails). Dimensions
    up to three use the exact hull facets; higher dimensions fall back
    to a sampled support-function minimax.
    """
    pts = cloud.points
    scale = cloud.scale
    if scale == 0.0:
        return False, 0.0
    tol = rtol * scale
    d = cloud.d
    if d == 1:
        x = pts[:, 0]
        delta = min(float(x.max()), float(-x.min()))
        return (delta > tol, max(delta, 0.0) if delta > tol else 0.0)
    if pts.shape[0] < d + 1:
        return False, 0.0
    if d <= 3:
        from scipy.spatial import ConvexHull, QhullError

        try:
            hull = ConvexHull(pts)
        except QhullError:
            return False, 0.0
        offsets = hull.equations[:, -1]
        delta = float(-offsets.max())
        return (delta > tol, delta if delta > tol else 0.0)
    rng = np.random.default_rng(0)
    dirs = rng.standard_normal((4096, d))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    dirs = np.concatenate([dirs, np.eye(d), -np.eye(d)])
    support = (dirs @ pts.T).max(axis=1)
    delta = float(support.min())
    return (delta > tol, delta if delta > tol else 0.0)


def esscher_minimize(cloud, tol=None, full_output=False):
    """Minimizer of the moment generating function of the cloud.

    Damped Newton from theta = 0 with Armijo backtracking; the objective
    phi(theta) = sum w_i exp(theta . x_i) is strictly convex and coercive
    once the origin is interior to the hull, so the minimum is the unique
    root of the gradient. The returned theta satisfies
    ||grad phi(theta)|| <= tol (default 1e-12 * max(1, cloud scale)).
    """
    ok, _ = check_interior(cloud)
    if not ok:
        raise InteriorError("no Esscher solution: origin not interior to the increment hull")
    scale = cloud.scale
    if tol is None:
        tol = 1e-9 * max(1.0, scale)
    # Work on unit-scaled points; the tilt weights depend only on theta . x,
    # so theta in original coordinates is the scaled solution / scale.
    y = cloud.points / scale
    w = cloud.weights
    d = cloud.d
    tol_y = tol / scale
    theta = np.zeros(d)

    def parts(th):
        with np.errstate(over="ignore"):
            e = np.exp(y @ th)
        return e, float(w @ e), (w * e) @ y

    e, phi, grad = parts(theta)
    best_theta, best_gnorm = theta, float(np.linalg.norm(grad))
    iterations = 0
    for iteration in range(200):
        iterations = iteration
        gnorm = float(np.linalg.norm(grad))
        if gnorm < best_gnorm:
            best_theta, best_gnorm = theta, gnorm
        if gnorm <= tol_y:
            break
        hess = (y * (w * e)[:, None]).T @ y
        try:
            direction = -np.linalg.solve(hess, grad)
        except np.linalg.LinAlgError:
            ridge = 1e-14 * max(np.trace(hess), 1.0)
            direction = -np.linalg.solve(hess + ridge * np.eye(d), grad)
        slope = float(grad @ direction)
        if slope >= 0:
            direction = -grad
            slope = -gnorm * gnorm
        if -0.5 * slope <= 8.0 * np.finfo(float).eps * phi:
            # Objective changes are below float resolution; polish the
            # gradient with unguarded Newton steps until it stops
            # contracting (the representable floor).
            cand = theta + direction
            e_c, phi_c, grad_c = parts(cand)
            if np.isfinite(phi_c) and np.linalg.norm(grad_c) < gnorm:
                theta, e, phi, grad = cand, e_c, phi_c, grad_c
                continue
            break
        t = 1.0
        cand, e_c, phi_c, grad_c = theta, e, phi, grad
        for _ in range(60):
            cand = theta + t * direction
            e_c, phi_c, grad_c = parts(cand)
            if np.isfinite(phi_c) and phi_c <= phi + 1e-4 * t * slope:
                break
            t *= 0.5
        theta, e, phi, grad = cand, e_c, phi_c, grad_c
    gnorm = float(np.linalg.norm(grad))
    if gnorm < best_gnorm:
        best_theta, best_gnorm = theta, gnorm
    if best_gnorm > tol_y:
        raise ConvergenceError(
            f"Esscher Newton did not converge; final gradient norm {best_gnorm * scale:.3e}")
    if full_output:
        return best_theta / scale, {"iterations": iterations,
                                    "grad_norm": best_gnorm * scale}
    return best_theta / scale


def esscher_weights(cloud, theta_star, eta):
    """Tilt, then rescale zero/nonzero mass to meet the eta caps.

    lam is taken maximal in (0, 1] subject to the weighted second moment
    and off-zero mass staying below eta; mu = (1 - lam)/P(x = 0) keeps
    the weights normalized, so all four martingale-weight identities
    hold by construction.
    """
    if eta <= 0:
        raise ValidationError("eta must be > 0")
    theta = np.atleast_1d(np.asarray(theta_star, dtype=float))
    pts = cloud.points
    w = cloud.weights
    zero = cloud.zero_mask
    y = cloud.zero_mass
    if y <= 0.0:
        raise DegenerateCloudError("zero increment mass required for the rescaling step")

    expo = pts @ theta
    shift = expo.max()
    e = np.exp(expo - shift)
    zprime = e / float(w @ e)
    m2 = float(w @ (zprime * np.einsum("ij,ij->i", pts, pts)))
    offmass = float(w[~zero] @ zprime[~zero])
    lam = 1.0
    if m2 > 0:
        lam = min(lam, eta / m2)
    if offmass > 0:
        lam = min(lam, eta / offmass)
    mu = (1.0 - lam) / y
    z = lam * zprime + mu * zero

    mean_resid = np.abs(w @ (z[:, None] * pts)).max()
    scale = max(1.0, cloud.scale)
    checks = {
        "normalization": abs(float(w @ z) - 1.0),
        "mean_residual": float(mean_resid),
        "second_moment": lam * m2,
        "off_zero_mass": lam * offmass,
    }
    if checks["normalization"] > 1e-10:
        raise InvariantViolation(f"tilted weights fail normalization: {checks}")
    if checks["mean_residual"] > 1e-10 * scale:
        raise InvariantViolation(f"tilted weights fail the zero-mean identity: {checks}")
    if checks["second_moment"] > eta * (1 + 1e-9) or checks["off_zero_mass"] > eta * (1 + 1e-9):
        raise InvariantViolation(f"eta caps violated: {checks}")
    if np.any(z <= 0):
        raise InvariantViolation("tilted weights must be strictly positive")
    return EsscherResult(theta_star=theta, z_weights=z, eta=eta, lam=lam, mu=mu,
                         diagnostics=checks)
