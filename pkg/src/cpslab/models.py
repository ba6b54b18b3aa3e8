"""Price model wrappers shared by the audits and the batch runner."""

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .paths import (FbmSpec, SamplePath, TimeGrid, extend_gfbm, sample_gbm,
                    sample_gfbm, sample_integrated)
from .seeding import path_normals

__all__ = ["GbmModel", "GfbmModel", "IntegratedModel", "model_from_config"]


@dataclass
class GbmModel:
    """Geometric Brownian motion, one asset or several independent ones."""

    mu: object
    sigma: object
    s0: object

    def __post_init__(self):
        self.mu = np.atleast_1d(np.asarray(self.mu, dtype=float))
        self.sigma = np.atleast_1d(np.asarray(self.sigma, dtype=float))
        self.s0 = np.atleast_1d(np.asarray(self.s0, dtype=float))
        d = max(len(self.mu), len(self.sigma), len(self.s0))
        self.mu, self.sigma, self.s0 = (np.broadcast_to(a, (d,)).astype(float)
                                        for a in (self.mu, self.sigma, self.s0))
        if np.any(self.sigma < 0) or np.any(self.s0 <= 0):
            raise ValidationError("need sigma >= 0 and s0 > 0")

    @property
    def d(self):
        return len(self.s0)

    def sample(self, grid, n_paths, seed):
        if self.d == 1:
            return sample_gbm(self.mu[0], self.sigma[0], self.s0[0], grid, n_paths, seed)
        dt = np.diff(grid.times)
        z = path_normals(seed, n_paths, (len(dt), self.d))
        log_inc = ((self.mu - 0.5 * self.sigma**2)[None, None, :] * dt[None, :, None]
                   + self.sigma[None, None, :] * np.sqrt(dt)[None, :, None] * z)
        logs = np.concatenate([np.zeros((n_paths, 1, self.d)), np.cumsum(log_inc, axis=1)], axis=1)
        values = self.s0[None, None, :] * np.exp(logs)
        return [SamplePath(grid, values[p], path_id=p) for p in range(n_paths)]

    def extend(self, history, grid, n_paths, seed):
        """Markov restart: fresh increments from the observed endpoint."""
        if self.d != 1:
            raise ValidationError("conditional continuation implemented for one asset")
        times = grid.times
        n_obs = len(history.grid.times)
        if not np.allclose(times[:n_obs], history.grid.times):
            raise ValidationError("history grid must be a prefix of the target grid")
        s_v = float(history.values[-1, 0])
        dt = np.diff(times[n_obs - 1:])
        z = path_normals(seed, n_paths, (len(dt),))
        log_inc = (self.mu[0] - 0.5 * self.sigma[0] ** 2) * dt[None, :] \
            + self.sigma[0] * np.sqrt(dt)[None, :] * z
        suffix = s_v * np.exp(np.cumsum(log_inc, axis=1))
        values = np.empty((n_paths, len(times)))
        values[:, :n_obs] = history.values[:, 0][None, :]
        values[:, n_obs:] = suffix
        return [SamplePath(grid, values[p][:, None], path_id=p) for p in range(n_paths)]


@dataclass
class GfbmModel:
    """Geometric fractional Brownian motion (one asset)."""

    spec: FbmSpec

    @property
    def d(self):
        return 1

    @property
    def s0(self):
        return np.array([self.spec.s0])

    def sample(self, grid, n_paths, seed):
        return sample_gfbm(self.spec, grid, n_paths, seed)

    def extend(self, history, grid, n_paths, seed):
        return extend_gfbm(history, self.spec, grid, n_paths, seed)


@dataclass
class IntegratedModel:
    """Smooth positive paths driven by integrated fractional noise."""

    hurst: float
    sigma: float
    s0: float

    @property
    def d(self):
        return 1

    def sample(self, grid, n_paths, seed):
        spec = FbmSpec(hurst=self.hurst, sigma=self.sigma, s0=self.s0)
        return sample_integrated(spec, grid, n_paths, seed)


def model_from_config(cfg):
    kind = cfg.get("kind")
    if kind == "gbm":
        return GbmModel(mu=cfg["mu"], sigma=cfg["sigma"], s0=cfg["s0"])
    if kind == "gfbm":
        return GfbmModel(FbmSpec(hurst=cfg["hurst"], sigma=cfg["sigma"], s0=cfg["s0"]))
    if kind == "integrated":
        return IntegratedModel(hurst=cfg["hurst"], sigma=cfg["sigma"], s0=cfg["s0"])
    raise ValidationError(f"model.kind must be gbm, gfbm or integrated, got {kind!r}")
