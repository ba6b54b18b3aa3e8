"""Assembly of consistent price systems from ladders plus measures.

One-asset ladders feed the retired-walk measure change: the shadow price
at each stop is the walk value and the per-path likelihood is the product
of step ratios. Multi-asset ladders feed a per-stop Esscher chain with
geometric eta caps, giving a square-integrable shadow martingale. Both
routes certify the bid-ask sandwich: exact band at stops, and the
two-step excursion band in between, whose product bounds the shadow
ratio by (1+eps)^3 at every grid time.
"""

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from . import esscher as ess
from .errors import (DegenerateCloudError, InteriorError, InvariantViolation,
                     SandwichViolation, ValidationError)
from .skeleton import ladder_increments
from .walk import empirical_mark_weights, verify_density_normalizes

__all__ = ["ConsistentPriceSystem", "MartingaleCertificate", "SandwichReport",
           "build_cps_1d", "build_cps_multi", "verify_sandwich",
           "input_eps_for_target", "write_cps_csv", "write_cps_summary"]


def input_eps_for_target(eps_target):
    """Spread to run the construction at so the certified (1+eps)^3 band
    meets a requested target spread."""
    if eps_target <= 0:
        raise ValidationError("target spread must be > 0")
    return (1.0 + eps_target) ** (1.0 / 3.0) - 1.0


@dataclass
class ConsistentPriceSystem:
    """Shadow values at the stops of one path, with its likelihood."""

    eps_in: float
    stop_grid_indices: np.ndarray
    stop_times: np.ndarray
    shadow_values: np.ndarray
    likelihood: float
    likelihood_prefix: np.ndarray
    path_id: int = 0
    grid_shadow: np.ndarray = None

    @property
    def eps_effective(self):
        return (1.0 + self.eps_in) ** 3 - 1.0

    @property
    def terminal_shadow(self):
        return self.shadow_values[-1]


@dataclass
class MartingaleCertificate:
    """Statistical evidence that the weighted stop increments center at 0.

    residuals[n] is the likelihood-weighted mean increment at stop n+1,
    compared against z_crit weighted standard errors; likelihood_mean
    checks the density normalization E[L] = 1.
    """

    stop_residuals: np.ndarray
    stop_stderrs: np.ndarray
    sample_sizes: np.ndarray
    z_crit: float
    likelihood_mean: float
    likelihood_se: float
    extras: dict = field(default_factory=dict)

    @property
    def stops_passed(self):
        tiny = 1e-12 * max(1.0, abs(self.likelihood_mean))
        return np.abs(self.stop_residuals) <= self.z_crit * self.stop_stderrs + tiny

    @property
    def likelihood_ok(self):
        return abs(self.likelihood_mean - 1.0) <= self.z_crit * self.likelihood_se + 1e-12

    @property
    def passed(self):
        return bool(np.all(self.stops_passed) and self.likelihood_ok)


def _weighted_residual(weights, deltas):
    total = weights.sum()
    if total <= 0:
        return 0.0, 0.0
    mean = float(weights @ deltas) / total
    se = float(np.sqrt(np.sum((weights * (deltas - mean)) ** 2))) / total
    return mean, se


def _stop_table(skels):
    """Pad per-path stop data to a rectangular (n_paths, max_stops) layout."""
    n_stops = np.array([sk.n_stops for sk in skels])
    return n_stops, int(n_stops.max())


def build_cps_1d(skels, schedule, smoothing=1.0, ref_probs_fn=None,
                 path_weights=None, check_normalization=True,
                 interpolate=False, z_crit=3.0):
    """Shadow martingales for a batch of snapped one-asset ladders.

    The shadow at stop n is the retired-walk value there; the likelihood
    is the product of target/reference mark ratios. Reference mark
    probabilities are bucket estimates unless ref_probs_fn supplies the
    exact ones; path_weights (reference probabilities of enumerated mark
    sequences) turn the batch into an exact tree evaluation. The stop
    sandwich is asserted here; run verify_sandwich with the paths for
    the grid-time band.
    """
    if not skels:
        raise ValidationError("empty skeleton batch")
    eps = skels[0].eps
    for sk in skels:
        if sk.mode != "multiplicative" or not sk.snap or sk.d != 1:
            raise ValidationError("one-asset builds need snapped multiplicative ladders")
        if abs(sk.eps - eps) > 1e-15:
            raise ValidationError("skeleton batch must share eps")
    x0 = float(skels[0].anchor0[0])

    if check_normalization:
        report = verify_density_normalizes(schedule, eps)
        if not report.passed:
            raise ValidationError(
                f"schedule fails density normalization: residual {report.final_residual:.3e} "
                f"after {report.horizon} steps")

    weights = empirical_mark_weights(skels, schedule, smoothing=smoothing,
                                     ref_probs_fn=ref_probs_fn)
    n_paths = len(skels)
    pw = np.ones(n_paths) / n_paths if path_weights is None else np.asarray(path_weights, dtype=float)

    cps_list = []
    for p, sk in enumerate(skels):
        levels = sk.levels
        shadow = x0 * (1.0 + eps) ** levels.astype(float)
        lp = weights.l_prefix[p]
        cps = ConsistentPriceSystem(
            eps_in=eps, stop_grid_indices=sk.grid_indices, stop_times=sk.times,
            shadow_values=shadow[:, None], likelihood=float(weights.likelihood[p]),
            likelihood_prefix=lp, path_id=sk.path_id)
        # Stop-level sandwich: exact at snapped stops, one-grid-step
        # tolerance against the raw terminal at retirement.
        s_term = float(sk.anchors[-1, 0])
        ratio = shadow[-1] / s_term
        tol = np.exp(sk.max_step_log)
        if not (1.0 / ((1.0 + eps) * tol) <= ratio <= (1.0 + eps) * tol):
            raise SandwichViolation(
                f"retirement stop ratio {ratio:.6f} outside band for path {sk.path_id}",
                path_id=sk.path_id, grid_index=int(sk.grid_indices[-1]))
        cps_list.append(cps)

    n_stops, max_stop = _stop_table(skels)
    residuals = np.zeros(max_stop)
    stderrs = np.zeros(max_stop)
    sizes = np.zeros(max_stop, dtype=int)
    for n in range(1, max_stop + 1):
        w = np.empty(n_paths)
        delta = np.zeros(n_paths)
        for p, sk in enumerate(skels):
            lp = weights.l_prefix[p]
            if n <= n_stops[p]:
                w[p] = lp[n - 1]
                lv_prev = sk.levels[n - 1]
                lv = sk.levels[n]
                delta[p] = x0 * ((1.0 + eps) ** float(lv) - (1.0 + eps) ** float(lv_prev))
            else:
                w[p] = lp[-1]
                delta[p] = 0.0
        w = w * pw * n_paths
        residuals[n - 1], stderrs[n - 1] = _weighted_residual(w, delta)
        sizes[n - 1] = int(np.sum(n <= n_stops))

    like = weights.likelihood * pw * n_paths
    l_mean = float(np.mean(like))
    l_se = float(np.std(like) / np.sqrt(n_paths))
    cert = MartingaleCertificate(stop_residuals=residuals, stop_stderrs=stderrs,
                                 sample_sizes=sizes, z_crit=z_crit,
                                 likelihood_mean=l_mean, likelihood_se=l_se)

    if interpolate:
        _interpolate_shadow(cps_list, skels, weights, eps, x0)
    return cps_list, cert


def _interpolate_shadow(cps_list, skels, weights, eps, x0):
    """Between-stop shadow estimates by bucket-weighted terminal means.

    The conditioning is the (stop count, level) bucket, coarser than the
    true filtration; retained behind this flag for diagnostics only.
    """
    buckets = {}
    for p, sk in enumerate(skels):
        term = x0 * (1.0 + eps) ** float(sk.levels[-1])
        lw = weights.likelihood[p]
        for n in range(sk.n_stops):
            key = (n, int(sk.levels[n]))
            num, den = buckets.get(key, (0.0, 0.0))
            buckets[key] = (num + lw * term, den + lw)
    for p, (cps, sk) in enumerate(zip(cps_list, skels)):
        n_grid = int(sk.grid_indices[-1]) + 1
        grid_shadow = np.empty(n_grid)
        for n in range(sk.n_stops):
            lo, hi = int(sk.grid_indices[n]), int(sk.grid_indices[n + 1])
            num, den = buckets[(n, int(sk.levels[n]))]
            est = num / den if den > 0 else cps.shadow_values[n, 0]
            grid_shadow[lo:hi] = est
            grid_shadow[lo] = cps.shadow_values[n, 0]
        grid_shadow[-1] = cps.shadow_values[-1, 0]
        cps.grid_shadow = grid_shadow[:, None]


def _multi_buckets(skels, min_bucket=16, quantize=True):
    """Conditioning buckets for the per-stop tilting chain.

    Key is (stop, quantized previous-anchor levels). A bucket stands on
    its own only when it carries at least min_bucket members of which at
    least min_bucket cross (nonzero increments drive the interior check);
    everything thinner merges into a pooled per-stop bucket. Returns
    {(n, key): [(path index, increment row)]}.
    """
    eps = skels[0].eps
    s0 = skels[0].anchor0
    incs = [ladder_increments(sk) for sk in skels]
    raw = {}
    for p, sk in enumerate(skels):
        for n in range(1, sk.n_stops + 1):
            if quantize:
                prev = sk.anchors[n - 1]
                key = tuple(int(k) for k in np.round(np.log(prev / s0) / np.log1p(eps)))
            else:
                key = ()
            raw.setdefault((n, key), []).append((p, incs[p][n - 1]))
    merged = {}
    for (n, key), members in raw.items():
        nonzero = sum(1 for _, row in members if np.any(row != 0.0))
        if len(members) < min_bucket or 0 < nonzero < min_bucket:
            merged.setdefault((n, "pooled"), []).extend(members)
        else:
            merged[(n, key)] = members
    return merged


def build_cps_multi(skels, min_bucket=16, quantize=True, newton_tol=None,
                    z_crit=3.0, diagnostics_path=None):
    """Per-stop Esscher chain for multi-asset (unsnapped) ladders.

    Buckets of conditional increments are tilted to zero mean with the
    geometric cap eta_n = 2^-n on the weighted second moment and the
    off-zero mass; the shadow at stop n is the accumulated increment sum,
    which freezes at retirement. All-retired buckets take unit weights
    (the already-retired branch); a bucket whose nonzero increments fail
    the interior check, or lacks retired mass, is a hard error naming
    (stop, bucket).
    """
    if not skels:
        raise ValidationError("empty skeleton batch")
    eps = skels[0].eps
    d = skels[0].d
    n_paths = len(skels)
    n_stops = np.array([sk.n_stops for sk in skels])
    max_stop = int(n_stops.max())
    incs = [ladder_increments(sk) for sk in skels]

    z_steps = [np.ones(sk.n_stops) for sk in skels]
    diagnostics = []
    buckets = _multi_buckets(skels, min_bucket=min_bucket, quantize=quantize)
    for (n, key), members in sorted(buckets.items(), key=lambda kv: (kv[0][0], str(kv[0][1]))):
        pts = np.array([row for _, row in members])
        cloud = ess.IncrementCloud.from_samples(pts)
        eta = 2.0 ** (-n)
        if cloud.scale == 0.0:
            # Every member retires here: the trivial already-retired branch.
            diagnostics.append({"stop": n, "bucket": str(key), "count": len(members),
                                "trivial": True, "lam": 1.0})
            continue
        ok, delta = ess.check_interior(cloud)
        if not ok:
            raise InteriorError(
                f"increment cloud at stop {n}, bucket {key} fails the interior check "
                f"({len(members)} members)", stop_index=n, bucket=key)
        if cloud.zero_mass <= 0.0:
            raise DegenerateCloudError(
                f"no retired mass at stop {n}, bucket {key}")
        theta, info = ess.esscher_minimize(cloud, tol=newton_tol, full_output=True)
        result = ess.esscher_weights(cloud, theta, eta)
        for (p, _), z in zip(members, result.z_weights):
            z_steps[p][n - 1] = z
        diagnostics.append({"stop": n, "bucket": str(key), "count": len(members),
                            "trivial": False, "lam": result.lam, "eta": eta,
                            "delta": delta, **info, **result.diagnostics})

    cps_list = []
    l_prefix_all = []
    for p, sk in enumerate(skels):
        lp = np.cumprod(z_steps[p])
        l_prefix_all.append(lp)
        shadow = sk.anchor0[None, :] + np.vstack([np.zeros(d), np.cumsum(incs[p], axis=0)])
        s_term = sk.anchors[-1]
        tol = np.exp(sk.max_step_log)
        ratio = shadow[-1] / s_term
        if np.any(ratio < 1.0 / ((1.0 + eps) * tol)) or np.any(ratio > (1.0 + eps) * tol):
            raise SandwichViolation(
                f"retirement stop ratio outside band for path {sk.path_id}",
                path_id=sk.path_id, grid_index=int(sk.grid_indices[-1]))
        cps_list.append(ConsistentPriceSystem(
            eps_in=eps, stop_grid_indices=sk.grid_indices, stop_times=sk.times,
            shadow_values=shadow, likelihood=float(lp[-1]) if len(lp) else 1.0,
            likelihood_prefix=lp, path_id=sk.path_id))

    residuals = np.zeros(max_stop)
    stderrs = np.zeros(max_stop)
    sizes = np.zeros(max_stop, dtype=int)
    l2_per_stop = np.zeros(max_stop)
    t_per_path = np.zeros(n_paths)
    for n in range(1, max_stop + 1):
        w = np.empty(n_paths)
        delta = np.zeros((n_paths, d))
        for p, sk in enumerate(skels):
            lp = l_prefix_all[p]
            if n <= n_stops[p]:
                w[p] = lp[n - 1]
                delta[p] = incs[p][n - 1]
            else:
                w[p] = lp[-1] if len(lp) else 1.0
        sizes[n - 1] = int(np.sum(n <= n_stops))
        worst_r, worst_se = 0.0, 0.0
        for i in range(d):
            r, se = _weighted_residual(w, delta[:, i])
            if abs(r) - z_crit * se > abs(worst_r) - z_crit * worst_se:
                worst_r, worst_se = r, se
        residuals[n - 1], stderrs[n - 1] = worst_r, worst_se
        sq = np.einsum("ij,ij->i", delta, delta)
        l2_per_stop[n - 1] = float(np.mean(w * sq))
        t_per_path += w * sq

    likelihood = np.array([c.likelihood for c in cps_list])
    cert = MartingaleCertificate(
        stop_residuals=residuals, stop_stderrs=stderrs, sample_sizes=sizes,
        z_crit=z_crit, likelihood_mean=float(likelihood.mean()),
        likelihood_se=float(likelihood.std() / np.sqrt(n_paths)),
        extras={"l2_per_stop": l2_per_stop,
                "l2_total": float(np.mean(t_per_path)),
                "l2_total_se": float(np.std(t_per_path) / np.sqrt(n_paths)),
                "l2_bound": 2.0})

    if diagnostics_path is not None:
        with open(diagnostics_path, "w") as fh:
            for row in diagnostics:
                fh.write(json.dumps(row, sort_keys=True, default=float) + "\n")
    cert.extras["esscher_solves"] = diagnostics
    return cps_list, cert


@dataclass
class SandwichReport:
    """Audit of the bid-ask band containment, pure report."""

    eps: float
    worst_stop_ratio: float
    worst_grid_ratio: float
    stop_band: tuple
    grid_band: tuple
    passed: bool
    violations: list

    def summary(self):
        return {
            "eps": self.eps,
            "worst_stop_ratio": self.worst_stop_ratio,
            "worst_grid_ratio": self.worst_grid_ratio,
            "passed": self.passed,
            "n_violations": len(self.violations),
        }


def verify_sandwich(cps_list, paths, eps=None):
    """Worst-case band audit of a CPS batch against its price paths.

    At stops the shadow/price ratio must lie inside the (1+eps) band; in
    between, the next-stop price excursion must stay inside the two-step
    (1+eps)^2 band, so the implied shadow ratio at every grid time is
    certified inside (1+eps)^3. One grid step of price motion is allowed
    as crossing tolerance. Pure report; never raises.
    """
    if eps is None:
        eps = cps_list[0].eps_in
    lo1, hi1 = 1.0 / (1.0 + eps), 1.0 + eps
    lo3, hi3 = lo1**3, hi1**3
    worst_stop = 1.0
    worst_grid = 1.0
    violations = []
    for cps, path in zip(cps_list, paths):
        values = path.values
        tol = float(np.exp(np.max(np.abs(np.diff(np.log(values), axis=0)))))
        idx = cps.stop_grid_indices
        for n in range(len(idx)):
            ratio = cps.shadow_values[n] / values[idx[n]]
            dev = float(max(ratio.max(), 1.0 / ratio.min()))
            worst_stop = max(worst_stop, dev)
            if np.any(ratio > hi1 * tol) or np.any(ratio < lo1 / tol):
                violations.append((path.path_id, int(idx[n]), "stop", dev))
        for n in range(len(idx) - 1):
            lo_i, hi_i = int(idx[n]), int(idx[n + 1])
            seg = values[lo_i:hi_i]
            stop_ratio = cps.shadow_values[n + 1] / values[hi_i]
            excursion = values[hi_i][None, :] / seg
            implied = excursion * stop_ratio[None, :]
            dev = float(max(implied.max(), 1.0 / implied.min()))
            worst_grid = max(worst_grid, dev)
            if np.any(implied > hi3 * tol**2) or np.any(implied < lo3 / tol**2):
                t_bad = lo_i + int(np.argmax(np.maximum(implied, 1.0 / implied).max(axis=1)))
                violations.append((path.path_id, t_bad, "grid", dev))
        if cps.grid_shadow is not None:
            ratio = cps.grid_shadow / values[: len(cps.grid_shadow)]
            dev = float(max(ratio.max(), 1.0 / ratio.min()))
            worst_grid = max(worst_grid, dev)
    return SandwichReport(
        eps=eps, worst_stop_ratio=worst_stop, worst_grid_ratio=worst_grid,
        stop_band=(lo1, hi1), grid_band=(lo3, hi3),
        passed=len(violations) == 0, violations=violations)


def write_cps_csv(cps_list, paths, out_path):
    """Per-stop dump `path_id,n,tau,S_*,Stilde_*,L` with prefix likelihoods."""
    d = cps_list[0].shadow_values.shape[1]
    with open(out_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["path_id", "n", "tau"] + [f"S_{i}" for i in range(d)]
                        + [f"Stilde_{i}" for i in range(d)] + ["L"])
        for cps, path in zip(cps_list, paths):
            for n in range(len(cps.stop_times)):
                s = path.values[int(cps.stop_grid_indices[n])]
                l_val = 1.0 if n == 0 else float(cps.likelihood_prefix[n - 1])
                writer.writerow([cps.path_id, n, repr(float(cps.stop_times[n]))]
                                + [repr(float(x)) for x in s]
                                + [repr(float(x)) for x in cps.shadow_values[n]]
                                + [repr(l_val)])


def write_cps_summary(report, cert, out_path):
    """Summary JSON: worst ratios, certificate residuals, L2 totals."""
    payload = {
        "sandwich": report.summary(),
        "certificate": {
            "stop_residuals": [float(x) for x in cert.stop_residuals],
            "stop_stderrs": [float(x) for x in cert.stop_stderrs],
            "sample_sizes": [int(x) for x in cert.sample_sizes],
            "likelihood_mean": cert.likelihood_mean,
            "likelihood_se": cert.likelihood_se,
            "passed": cert.passed,
        },
    }
    for key in ("l2_total", "l2_total_se", "l2_bound"):
        if key in cert.extras:
            payload["certificate"][key] = float(cert.extras[key])
    with open(out_path, "w") as fh:
        json.dump(payload, fh, sort_keys=True, indent=2)
        fh.write("\n")
