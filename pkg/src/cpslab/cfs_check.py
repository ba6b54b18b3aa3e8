"""Statistical audits of the conditional-support properties.

None of these prove anything: they report positive-probability evidence
with confidence bounds. Tube probabilities estimate the conditional mass
of a uniform neighborhood of a target continuation; the mark table checks
that every populated (stop, level) bucket exhibits down, retire and up
moves; the hull audit checks that multi-asset increment clouds surround
the origin and keep retired mass.
"""

import csv
import json
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import norm

from .cps import _multi_buckets
from .errors import ValidationError
from .esscher import IncrementCloud, check_interior
from .skeleton import extract_ladder

__all__ = ["TubeQuery", "TubeEstimate", "tube_probability", "MarkTable",
           "mark_positivity", "HullAuditReport", "interior_hull_audit"]


@dataclass
class TubeQuery:
    """Uniform neighborhood query for a conditional continuation.

    target is the continuation path (callable of time or array on the
    remaining grid, starting at the conditioned value), eta the tube
    radius, n_samples the conditional Monte Carlo size.
    """

    target: object
    eta: float
    n_samples: int = 10_000

    def target_on(self, times, s_v):
        f = self.target(times) if callable(self.target) else np.asarray(self.target, dtype=float)
        f = np.broadcast_to(f, times.shape).astype(float)
        if abs(f[0] - s_v) > 1e-9 * max(1.0, abs(s_v)):
            raise ValidationError("target continuation must start at the conditioned value")
        if self.eta <= 0:
            raise ValidationError("tube radius must be > 0")
        return f


@dataclass
class TubeEstimate:
    estimate: float
    stderr: float
    n_samples: int
    hits: int

    def lower_confidence(self, level=0.99):
        z = float(norm.ppf(level))
        return max(self.estimate - z * self.stderr, 0.0)


def tube_probability(model, history, grid, query, seed=0):
    """Conditional probability that the path stays in the eta-tube.

    Continuations are drawn from the model's exact conditional law given
    the history prefix (Gaussian conditioning for fractional models,
    Markov restart for GBM); the estimate is the fraction staying within
    eta of the target at every remaining grid time.
    """
    n_obs = len(history.grid.times)
    paths = model.extend(history, grid, query.n_samples, seed)
    times = grid.times[n_obs - 1:]
    s_v = float(history.values[-1, 0])
    f = query.target_on(times, s_v)
    hits = 0
    for p in paths:
        seg = p.values[n_obs - 1:, 0]
        if np.max(np.abs(seg - f)) < query.eta:
            hits += 1
    n = query.n_samples
    est = hits / n
    se = float(np.sqrt(est * (1.0 - est) / n))
    return TubeEstimate(estimate=est, stderr=se, n_samples=n, hits=hits)


@dataclass
class MarkTable:
    """Counts of ladder marks per (stop, level) bucket with flags for
    populated buckets that miss a mark."""

    rows: list
    min_count: int
    flagged: list = field(default_factory=list)

    @property
    def passed(self):
        return len(self.flagged) == 0

    def to_csv(self, out_path):
        with open(out_path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["stop", "level", "count_down", "count_retire", "count_up"])
            for stop, level, c in self.rows:
                writer.writerow([stop, level, int(c[0]), int(c[1]), int(c[2])])

    def to_json(self, out_path):
        payload = {
            "min_count": self.min_count,
            "passed": self.passed,
            "flagged": [{"stop": s, "level": l, "missing": m} for s, l, m in self.flagged],
            "rows": [{"stop": s, "level": l, "counts": [int(x) for x in c]}
                     for s, l, c in self.rows],
        }
        with open(out_path, "w") as fh:
            json.dump(payload, fh, sort_keys=True, indent=2)
            fh.write("\n")


def mark_positivity(paths_or_model, eps, n_stops, n_paths=None, grid=None,
                    seed=0, min_count=200):
    """Empirical mark table of the band-exit ladder.

    Accepts either a list of sampled paths or a model (then grid, n_paths
    and seed drive the simulation). Every bucket with at least min_count
    observations must show all three marks; missing ones are flagged
    (a deterministic or absorbed model fails here).
    """
    if isinstance(paths_or_model, list):
        paths = paths_or_model
    else:
        if grid is None or n_paths is None:
            raise ValidationError("model input needs grid and n_paths")
        paths = paths_or_model.sample(grid, n_paths, seed)
    counts = {}
    for p in paths:
        sk = extract_ladder(p, eps)
        for n, mark in enumerate(sk.marks, start=1):
            if n > n_stops:
                break
            key = (n, int(sk.levels[n - 1]))
            c = counts.setdefault(key, np.zeros(3, dtype=int))
            c[int(mark) + 1] += 1
    rows = [(n, level, c) for (n, level), c in sorted(counts.items())]
    flagged = []
    names = ("down", "retire", "up")
    for n, level, c in rows:
        if c.sum() >= min_count:
            missing = [names[i] for i in range(3) if c[i] == 0]
            if missing:
                flagged.append((n, level, missing))
    return MarkTable(rows=rows, min_count=min_count, flagged=flagged)


@dataclass
class HullAuditReport:
    """Per-bucket interior and retired-mass audit of increment clouds."""

    rows: list
    passed: bool

    def to_json(self, out_path):
        payload = {"passed": self.passed,
                   "rows": [{"stop": n, "bucket": str(key), "count": cnt,
                             "interior_ok": ok, "delta": delta,
                             "zero_mass": zm}
                            for n, key, cnt, ok, delta, zm in self.rows]}
        with open(out_path, "w") as fh:
            json.dump(payload, fh, sort_keys=True, indent=2)
            fh.write("\n")


def interior_hull_audit(skels, min_bucket=16):
    """Interior-hull and retired-mass check per conditioning bucket.

    Delegates to the tilting module's interior check on every bucket of
    the multi-asset chain; a bucket passes when the origin is interior
    to its increment hull and some member retires. All-retired buckets
    pass trivially.
    """
    buckets = _multi_buckets(skels, min_bucket=min_bucket)
    rows = []
    passed = True
    for (n, key), members in sorted(buckets.items(), key=lambda kv: (kv[0][0], str(kv[0][1]))):
        pts = np.array([row for _, row in members])
        cloud = IncrementCloud.from_samples(pts)
        zm = cloud.zero_mass
        if cloud.scale == 0.0:
            rows.append((n, key, len(members), True, 0.0, zm))
            continue
        ok, delta = check_interior(cloud)
        ok = bool(ok and zm > 0.0)
        rows.append((n, key, len(members), ok, float(delta), zm))
        passed = passed and ok
    return HullAuditReport(rows=rows, passed=passed)
