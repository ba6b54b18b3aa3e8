"""Simulation of strictly positive continuous price paths.

Three model families are supported: geometric Brownian motion, geometric
fractional Brownian motion (exact simulation through a dense covariance
factorization), and integrated-noise models with smooth trajectories.
Fractional paths can be extended conditionally on an observed prefix by
standard multivariate Gaussian conditioning.
"""

import csv
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .errors import FactorizationError, ValidationError
from .seeding import path_normals

__all__ = [
    "TimeGrid",
    "SamplePath",
    "FbmSpec",
    "GaussianConditioning",
    "fbm_covariance",
    "fbm_covariance_matrix",
    "sample_gfbm",
    "extend_gfbm",
    "condition_gaussian",
    "integrate_path",
    "sample_gbm",
    "sample_integrated",
    "write_paths_csv",
    "read_paths_csv",
]


@dataclass(frozen=True)
class TimeGrid:
    """Strictly increasing time instants, first 0, last the horizon T."""

    times: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        object.__setattr__(self, "times", t)
        if t.ndim != 1 or t.size < 1:
            raise ValidationError("time grid needs at least one instant")
        if t[0] != 0.0:
            raise ValidationError("time grid must start at 0")
        if not np.all(np.diff(t) > 0):
            raise ValidationError("time grid must be strictly increasing")

    @classmethod
    def uniform(cls, horizon, n_steps):
        if horizon <= 0 or n_steps < 1:
            raise ValidationError("horizon must be > 0 and n_steps >= 1")
        return cls(np.linspace(0.0, float(horizon), int(n_steps) + 1))

    @property
    def horizon(self):
        return float(self.times[-1])

    @property
    def n_steps(self):
        return len(self.times) - 1

    def __len__(self):
        return len(self.times)


@dataclass
class SamplePath:
    """Positive d-dimensional price path sampled on a grid.

    values has shape (len(grid), d); every coordinate must be > 0.
    """

    grid: TimeGrid
    values: np.ndarray
    path_id: int = 0

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim == 1:
            v = v[:, None]
        self.values = v
        if v.shape[0] != len(self.grid):
            raise ValidationError("values length must match the grid")
        if not np.all(v > 0):
            raise ValidationError("price paths must be strictly positive")

    @property
    def d(self):
        return self.values.shape[1]

    @property
    def terminal(self):
        return self.values[-1]


@dataclass(frozen=True)
class FbmSpec:
    """Parameters of a geometric fractional Brownian price model.

    The log price is sigma * X + drift with X fractional noise of the
    given Hurst index; drift is a deterministic curve vanishing at 0 so
    the path starts exactly at s0. drift may be None (zero), a callable
    of time, or an array aligned with the grid it is used on.
    """

    hurst: float
    sigma: float
    s0: float
    drift: object = None

    def __post_init__(self):
        if not 0.0 < self.hurst < 1.0:
            raise ValidationError("hurst must lie in (0, 1)")
        if self.sigma < 0:
            raise ValidationError("sigma must be >= 0")
        if self.s0 <= 0:
            raise ValidationError("s0 must be > 0")

    def drift_on(self, times):
        times = np.asarray(times, dtype=float)
        if self.drift is None:
            return np.zeros_like(times)
        f = self.drift(times) if callable(self.drift) else np.asarray(self.drift, dtype=float)
        f = np.broadcast_to(f, times.shape).astype(float)
        if times[0] == 0.0 and abs(f[0]) > 1e-12:
            raise ValidationError("drift curve must vanish at t=0 (s0 is the initial price)")
        return f


@dataclass
class GaussianConditioning:
    """Conditional law of the remaining log path given an observed prefix."""

    times: np.ndarray
    mean_curve: np.ndarray
    cov_matrix: np.ndarray
    jitter_used: float = 0.0
    _factor: np.ndarray = field(default=None, repr=False)

    def sample(self, n, seed):
        """Draw n remaining log-path segments from the conditional law."""
        if self._factor is None:
            self._factor, _ = _chol_psd(self.cov_matrix)
        z = path_normals(seed, n, (len(self.times),))
        return self.mean_curve[None, :] + z @ self._factor.T


def fbm_covariance(t, s, hurst):
    """Covariance of fractional noise at times t and s.

    Evaluates (t^{2H} + s^{2H} - |t-s|^{2H}) / 2; symmetric in (t, s) and
    equal to min(t, s) at H = 1/2.
    """
    if not 0.0 < hurst < 1.0:
        raise ValidationError("hurst must lie in (0, 1)")
    t = np.asarray(t, dtype=float)
    s = np.asarray(s, dtype=float)
    if np.any(t < 0) or np.any(s < 0):
        raise ValidationError("times must be nonnegative")
    h2 = 2.0 * hurst
    return 0.5 * (t**h2 + s**h2 - np.abs(t - s) ** h2)


def fbm_covariance_matrix(times, hurst):
    times = np.asarray(times, dtype=float)
    return fbm_covariance(times[:, None], times[None, :], hurst)


def _chol_psd(mat, max_retries=3):
    """Lower Cholesky factor with escalating jitter on failure.

    The initial jitter is 1e-12 * trace / n, escalated tenfold at most
    max_retries times; the failing leading minor index is reported when
    everything fails.
    """
    mat = np.asarray(mat, dtype=float)
    n = mat.shape[0]
    jitter = 0.0
    base = 1e-12 * max(np.trace(mat), 1e-300) / n
    last = None
    for attempt in range(max_retries + 1):
        try:
            lower = scipy.linalg.cholesky(mat + jitter * np.eye(n), lower=True)
            return lower, jitter
        except scipy.linalg.LinAlgError as exc:  # pragma: no branch
            last = exc
            jitter = base * 10.0**attempt
    minor = None
    msg = str(last)
    for token in msg.split():
        head = token.split("-")[0]
        if head.isdigit():
            minor = int(head)
            break
    raise FactorizationError(
        f"covariance factorization failed after jitter escalation: {msg}",
        leading_minor=minor,
    )


def _wrap_paths(grid, values, d=1):
    return [SamplePath(grid, values[p].reshape(len(grid), d), path_id=p) for p in range(values.shape[0])]


def sample_gfbm(spec, grid, n_paths, seed, return_log=False):
    """Exact geometric fractional Brownian paths on the grid.

    The log noise X is sampled through a Cholesky factor of the full
    covariance matrix built from fbm_covariance; the price path is
    s0 * exp(sigma * X + drift). Deterministic given the seed.
    """
    if n_paths < 1:
        raise ValidationError("n_paths must be >= 1")
    times = grid.times
    x = np.zeros((n_paths, len(times)))
    if spec.sigma > 0:
        cov = fbm_covariance_matrix(times[1:], spec.hurst)
        lower, _ = _chol_psd(cov)
        z = path_normals(seed, n_paths, (len(times) - 1,))
        x[:, 1:] = z @ lower.T
    f = spec.drift_on(times)
    values = spec.s0 * np.exp(spec.sigma * x + f[None, :])
    paths = _wrap_paths(grid, values)
    if return_log:
        return paths, x
    return paths


def condition_gaussian(history, spec, remaining_times):
    """Conditional mean and covariance of the log noise after a prefix.

    history is a SamplePath prefix observed up to its last time v; the
    returned law describes X on remaining_times (> v) given the prefix,
    obtained by conditioning the joint Gaussian vector. The covariance
    does not depend on the observed values.
    """
    remaining = np.asarray(remaining_times, dtype=float)
    obs_times = history.grid.times
    v = obs_times[-1]
    if np.any(remaining <= v):
        raise ValidationError("remaining times must exceed the prefix horizon")
    f_obs = spec.drift_on(obs_times)
    if spec.sigma == 0:
        raise ValidationError("conditioning requires sigma > 0")
    x_obs = (np.log(history.values[:, 0] / spec.s0) - f_obs) / spec.sigma

    # X_0 = 0 carries no information; condition on the later prefix points.
    t_obs = obs_times[obs_times > 0]
    x_obs = x_obs[obs_times > 0]
    cov_rr = fbm_covariance_matrix(remaining, spec.hurst)
    if len(t_obs) == 0:
        return GaussianConditioning(remaining, np.zeros(len(remaining)), cov_rr)

    cov_oo = fbm_covariance_matrix(t_obs, spec.hurst)
    cov_ro = fbm_covariance(remaining[:, None], t_obs[None, :], spec.hurst)
    jitter = 0.0
    try:
        factor = scipy.linalg.cho_factor(cov_oo, lower=True)
    except scipy.linalg.LinAlgError:
        jitter = 1e-12 * max(np.trace(cov_oo), 1e-300) / len(t_obs)
        warnings.warn(
            f"singular prefix covariance, regularized with jitter {jitter:.3e}",
            RuntimeWarning,
        )
        factor = scipy.linalg.cho_factor(cov_oo + jitter * np.eye(len(t_obs)), lower=True)
    gain = scipy.linalg.cho_solve(factor, cov_ro.T).T
    mean = gain @ x_obs
    cov = cov_rr - gain @ cov_ro.T
    cov = 0.5 * (cov + cov.T)
    return GaussianConditioning(remaining, mean, cov, jitter_used=jitter)


def extend_gfbm(history, spec, grid, n_paths, seed):
    """Full-grid paths agreeing with the observed prefix.

    The suffix beyond the prefix horizon is drawn from the exact
    conditional law; the prefix values are copied verbatim.
    """
    times = grid.times
    v = history.grid.times[-1]
    n_obs = len(history.grid.times)
    if not np.allclose(times[:n_obs], history.grid.times):
        raise ValidationError("history grid must be a prefix of the target grid")
    remaining = times[times > v]
    law = condition_gaussian(history, spec, remaining)
    x_suffix = law.sample(n_paths, seed)
    f_rem = spec.drift_on(times)[len(times) - len(remaining):]
    values = np.empty((n_paths, len(times)))
    values[:, :n_obs] = history.values[:, 0][None, :]
    values[:, n_obs:] = spec.s0 * np.exp(spec.sigma * x_suffix + f_rem[None, :])
    return _wrap_paths(grid, values)


def integrate_path(grid, values):
    """Exponential of the running trapezoid integral of a noise path.

    values holds the (sign-unrestricted) integrand X on the grid; the
    result is the positive path exp(Y) with Y_t the cumulative integral,
    which has continuously differentiable limiting trajectories.
    """
    x = np.asarray(values, dtype=float)
    if x.shape[-1] != len(grid) and x.shape[0] == len(grid):
        x = x.T
    x = np.atleast_2d(x)
    if x.shape[1] != len(grid):
        raise ValidationError("integrand length must match the grid")
    dt = np.diff(grid.times)
    y = np.zeros_like(x)
    y[:, 1:] = np.cumsum(0.5 * (x[:, 1:] + x[:, :-1]) * dt[None, :], axis=1)
    out = np.exp(y)
    return [SamplePath(grid, out[p], path_id=p) for p in range(out.shape[0])]


def sample_gbm(mu, sigma, s0, grid, n_paths, seed):
    """Exact log-scheme geometric Brownian motion paths.

    mu is the arithmetic drift: E[S_T] = s0 * exp(mu * T).
    """
    if sigma < 0:
        raise ValidationError("sigma must be >= 0")
    if s0 <= 0:
        raise ValidationError("s0 must be > 0")
    if n_paths < 1:
        raise ValidationError("n_paths must be >= 1")
    dt = np.diff(grid.times)
    z = path_normals(seed, n_paths, (len(dt),)) if sigma > 0 else np.zeros((n_paths, len(dt)))
    log_inc = (mu - 0.5 * sigma**2) * dt[None, :] + sigma * np.sqrt(dt)[None, :] * z
    log_paths = np.concatenate([np.zeros((n_paths, 1)), np.cumsum(log_inc, axis=1)], axis=1)
    return _wrap_paths(grid, s0 * np.exp(log_paths))


def sample_integrated(spec, grid, n_paths, seed):
    """Smooth positive paths s0 * exp(sigma * integral of fractional noise)."""
    unit = FbmSpec(hurst=spec.hurst, sigma=1.0, s0=1.0)
    _, x = sample_gfbm(unit, grid, n_paths, seed, return_log=True)
    dt = np.diff(grid.times)
    y = np.zeros_like(x)
    y[:, 1:] = np.cumsum(0.5 * (x[:, 1:] + x[:, :-1]) * dt[None, :], axis=1)
    values = spec.s0 * np.exp(spec.sigma * y)
    return _wrap_paths(grid, values)


def write_paths_csv(paths, out_path, long_format=True):
    """Serialize paths: long format with a path_id column, or one file per
    path when long_format is False (out_path is then a directory)."""
    d = paths[0].d
    header = ["t"] + [f"asset_{i}" for i in range(d)]
    if long_format:
        with open(out_path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["path_id"] + header)
            for p in paths:
                for row_t, row_v in zip(p.grid.times, p.values):
                    writer.writerow([p.path_id, repr(float(row_t))] + [repr(float(x)) for x in row_v])
    else:
        import os

        os.makedirs(out_path, exist_ok=True)
        for p in paths:
            with open(os.path.join(out_path, f"path_{p.path_id:06d}.csv"), "w", newline="") as fh:
                writer = csv.writer(fh)
                writer.writerow(header)
                for row_t, row_v in zip(p.grid.times, p.values):
                    writer.writerow([repr(float(row_t))] + [repr(float(x)) for x in row_v])


def read_paths_csv(in_path):
    """Read a long-format paths CSV back into SamplePath objects."""
    with open(in_path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header[0] != "path_id":
            raise ValidationError("expected long-format paths CSV with a path_id column")
        rows = [(int(r[0]), float(r[1]), [float(x) for x in r[2:]]) for r in reader]
    paths = []
    ids = sorted({r[0] for r in rows})
    for pid in ids:
        mine = [r for r in rows if r[0] == pid]
        times = np.array([r[1] for r in mine])
        values = np.array([r[2] for r in mine])
        paths.append(SamplePath(TimeGrid(times), values, path_id=pid))
    return paths
