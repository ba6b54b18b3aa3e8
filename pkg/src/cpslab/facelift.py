"""Concave envelopes and superreplication price bounds.

The envelope of a sampled payoff is the upper concave hull of its samples
augmented by two declared boundary sentinels: the limit value at 0+ and
the asymptotic slope at infinity. The static upper price follows from the
tangent hedge at the spot; the dual lower price runs a two-point
martingale measure through the grid fit and reports the weighted payoff
expectation with Monte Carlo error bars. Sweeping the spread downward
produces the squeeze table pinching both bounds onto the envelope value.
"""

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvariantViolation, ValidationError
from .seeding import spawn_seeds
from .walk import step_measure, two_point_measure

__all__ = ["PayoffCurve", "EnvelopeResult", "Strategy", "concave_envelope",
           "wealth", "StaticUpperBound", "static_upper_price",
           "DualLowerBound", "dual_lower_price", "PriceReport",
           "SqueezeReport", "squeeze_report", "write_squeeze_csv"]


@dataclass
class PayoffCurve:
    """Sampled payoff with declared boundary behavior.

    Between samples the payoff is the linear interpolant; left of the
    first sample it interpolates toward (0, left_limit) and right of the
    last it extrapolates with right_slope. Both boundary fields are
    mandatory: the envelope is dominated by them.
    """

    xs: np.ndarray
    ys: np.ndarray
    left_limit: float
    right_slope: float
    lower_bound: float = None

    def __post_init__(self):
        xs = np.asarray(self.xs, dtype=float)
        ys = np.asarray(self.ys, dtype=float)
        order = np.argsort(xs)
        self.xs, self.ys = xs[order], ys[order]
        if len(self.xs) == 0:
            raise ValidationError("payoff needs at least one sample")
        if np.any(self.xs <= 0):
            raise ValidationError("payoff abscissae must be strictly positive")
        if np.any(np.diff(self.xs) == 0):
            raise ValidationError("payoff abscissae must be distinct")
        if self.left_limit is None or self.right_slope is None:
            raise ValidationError("left_limit and right_slope must be declared")
        if self.lower_bound is not None and np.any(self.ys < self.lower_bound - 1e-12):
            raise ValidationError("samples fall below the declared lower bound")

    def value(self, x):
        x = np.asarray(x, dtype=float)
        scalar = x.ndim == 0
        x = np.atleast_1d(x)
        if np.any(x <= 0):
            raise ValidationError("payoff evaluated at a nonpositive price")
        out = np.interp(x, self.xs, self.ys)
        left = x < self.xs[0]
        if np.any(left):
            if math.isinf(self.left_limit):
                out[left] = self.left_limit
            else:
                frac = x[left] / self.xs[0]
                out[left] = self.left_limit + (self.ys[0] - self.left_limit) * frac
        right = x > self.xs[-1]
        if np.any(right):
            out[right] = self.ys[-1] + self.right_slope * (x[right] - self.xs[-1])
        return float(out[0]) if scalar else out

    def min_on(self, lo, hi):
        """Minimum of the curve on [lo, hi] (attained at a knot or endpoint)."""
        cand = [self.value(lo), self.value(hi)]
        inside = (self.xs >= lo) & (self.xs <= hi)
        if np.any(inside):
            cand.append(float(self.ys[inside].min()))
        return min(cand)

    @classmethod
    def from_file(cls, path):
        with open(path) as fh:
            raw = json.load(fh)
        for key in ("samples", "left_limit", "right_slope"):
            if key not in raw:
                raise ValidationError(
                    f"payoff file {path} lacks required field {key!r}; boundary "
                    "behavior must be declared, it determines the envelope")
        samples = np.asarray(raw["samples"], dtype=float)
        return cls(xs=samples[:, 0], ys=samples[:, 1],
                   left_limit=float(raw["left_limit"]),
                   right_slope=float(raw["right_slope"]),
                   lower_bound=raw.get("lower_bound"))

    def to_file(self, path):
        payload = {"samples": [[float(a), float(b)] for a, b in zip(self.xs, self.ys)],
                   "left_limit": float(self.left_limit),
                   "right_slope": float(self.right_slope)}
        if self.lower_bound is not None:
            payload["lower_bound"] = float(self.lower_bound)
        with open(path, "w") as fh:
            json.dump(payload, fh, sort_keys=True)
            fh.write("\n")


def _upper_hull(xs, ys):
    """Vertices of the upper concave hull (monotone chain)."""
    pts = sorted(zip(xs, ys))
    dedup = {}
    for x, y in pts:
        dedup[x] = max(dedup.get(x, -np.inf), y)
    pts = sorted(dedup.items())
    hull = []
    for x, y in pts:
        while len(hull) >= 2:
            (x1, y1), (x2, y2) = hull[-2], hull[-1]
            if (y2 - y1) * (x - x1) <= (y - y1) * (x2 - x1):
                hull.pop()
            else:
                break
        hull.append((x, y))
    return hull


@dataclass
class EnvelopeResult:
    """Concave envelope: hull vertices plus a recession slope.

    Finite values are piecewise linear between vertices and follow the
    declared asymptotic slope beyond the last; is_infinite flags payoffs
    with no finite concave majorant.
    """

    vertices: np.ndarray
    recession_slope: float
    is_infinite: bool
    sample_xs: np.ndarray
    sample_envelope: np.ndarray = None
    contact_flags: np.ndarray = None
    query: float = None
    query_value: float = None
    query_chord: tuple = None

    def value(self, x):
        x = np.asarray(x, dtype=float)
        scalar = x.ndim == 0
        x = np.atleast_1d(x)
        if np.any(x <= 0):
            raise ValidationError("envelope evaluated at a nonpositive price")
        if self.is_infinite:
            out = np.full(x.shape, np.inf)
            return float(out[0]) if scalar else out
        vx, vy = self.vertices[:, 0], self.vertices[:, 1]
        out = np.interp(x, vx, vy)
        right = x > vx[-1]
        out[right] = vy[-1] + self.recession_slope * (x[right] - vx[-1])
        return float(out[0]) if scalar else out

    def right_derivative(self, x):
        """Slope of the hull segment immediately to the right of x."""
        if self.is_infinite:
            raise InvariantViolation("infinite envelope has no derivative")
        vx, vy = self.vertices[:, 0], self.vertices[:, 1]
        if x >= vx[-1]:
            return self.recession_slope
        i = int(np.searchsorted(vx, x, side="right"))
        return (vy[i] - vy[i - 1]) / (vx[i] - vx[i - 1])

    def chord_at(self, x):
        """Endpoints (u, v) of the hull segment containing x.

        u may be 0.0 (the left sentinel) and v may be None when x sits on
        the recession ray; when x coincides with a vertex the flanking
        vertices are returned.
        """
        vx = self.vertices[:, 0]
        if x >= vx[-1]:
            return (float(vx[-1]), None)
        i = int(np.searchsorted(vx, x, side="right"))
        u = float(vx[i - 1])
        v = float(vx[i])
        if u == x:
            u = float(vx[i - 2]) if i >= 2 else u
        return (u, v)


def concave_envelope(curve, query=None, contact_tol=1e-9):
    """Upper concave hull of the samples plus boundary sentinels.

    The left sentinel is (0, left_limit); the asymptotic slope enters as
    a recession direction: vertices after the maximizer of y - slope * x
    are absorbed by the outgoing ray. An infinite left limit or slope
    means no finite concave majorant exists anywhere.
    """
    if math.isinf(curve.left_limit) or math.isinf(curve.right_slope):
        env = EnvelopeResult(vertices=np.zeros((0, 2)), recession_slope=np.inf,
                             is_infinite=True, sample_xs=curve.xs)
        if query is not None:
            env.query = query
            env.query_value = np.inf
        return env
    xs = np.concatenate([[0.0], curve.xs])
    ys = np.concatenate([[curve.left_limit], curve.ys])
    hull = _upper_hull(xs, ys)
    a = curve.right_slope
    scores = [y - a * x for x, y in hull]
    cut = int(np.argmax(scores))
    for i in range(cut + 1, len(hull)):
        if scores[i] >= scores[cut]:
            cut = i
    vertices = np.array(hull[: cut + 1])
    env = EnvelopeResult(vertices=vertices, recession_slope=a, is_infinite=False,
                         sample_xs=curve.xs)
    env.sample_envelope = env.value(curve.xs)
    env.contact_flags = np.abs(env.sample_envelope - curve.ys) <= contact_tol * (
        1.0 + np.abs(curve.ys))
    if query is not None:
        env.query = float(query)
        env.query_value = env.value(query)
        env.query_chord = env.chord_at(query)
    return env


@dataclass
class Strategy:
    """Piecewise-constant position: holdings[j] is held on
    (knot_times[j], knot_times[j+1]] and zero before the first knot.
    The final knot must flatten the position."""

    knot_times: np.ndarray
    positions: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.knot_times, dtype=float)
        p = np.asarray(self.positions, dtype=float)
        if t.shape != p.shape or t.ndim != 1 or len(t) == 0:
            raise ValidationError("knot times and positions must align")
        if not np.all(np.diff(t) > 0):
            raise ValidationError("knot times must be strictly increasing")
        if p[-1] != 0.0:
            raise ValidationError("the position must be flat at the end")
        self.knot_times, self.positions = t, p

    @classmethod
    def buy_and_hold(cls, size, horizon):
        return cls(np.array([0.0, horizon]), np.array([float(size), 0.0]))


def wealth(strategy, path, eps):
    """Final wealth and running liquidation-adjusted minimum of a strategy.

    Gains accrue as position times price increments; every position
    change pays eps * price * |change|. The running value at t liquidates
    the position held at t (its closing cost replaces any trade at t), so
    the minimum is the admissibility floor.
    """
    if path.d != 1:
        raise ValidationError("wealth is defined for one risky asset")
    times = path.grid.times
    prices = path.values[:, 0]
    knot_idx = np.searchsorted(times, strategy.knot_times)
    if np.any(knot_idx >= len(times)) or np.any(times[knot_idx] != strategy.knot_times):
        raise ValidationError("strategy knots must sit on the path grid")

    position = np.zeros(len(times))
    prev = 0.0
    trade_cost = np.zeros(len(times))
    for j, (gi, pos) in enumerate(zip(knot_idx, strategy.positions)):
        position[gi:] = pos
        trade_cost[gi] += eps * prices[gi] * abs(pos - prev)
        prev = pos
    gains = np.concatenate([[0.0], np.cumsum(position[:-1] * np.diff(prices))])
    costs_before = np.concatenate([[0.0], np.cumsum(trade_cost[:-1])])
    held_at = np.concatenate([[0.0], position[:-1]])
    running = gains - costs_before - eps * prices * np.abs(held_at)
    final = float(gains[-1] - costs_before[-1] - trade_cost[-1])
    return final, running


@dataclass
class StaticUpperBound:
    price: float
    beta: float
    envelope_value: float
    j_constant: float
    certified_paths: int = 0
    worst_margin: float = np.inf


def static_upper_price(curve, s0, eps, paths=None, envelope=None):
    """Static hedge price from the envelope tangent at the spot.

    beta solves beta - eps|beta| = right derivative of the envelope, so
    the buy-and-hold of beta shares superreplicates from
    envelope(s0) + 2 eps |beta| s0. When paths are supplied every one is
    certified pathwise; a failure is a hard error.
    """
    if not 0 <= eps < 1:
        raise ValidationError("eps must lie in [0, 1)")
    env = envelope if envelope is not None else concave_envelope(curve)
    if env.is_infinite:
        return StaticUpperBound(price=np.inf, beta=np.nan, envelope_value=np.inf,
                                j_constant=np.inf)
    ghat = env.value(s0)
    d = env.right_derivative(s0)
    beta = d / (1.0 - eps) if d >= 0 else d / (1.0 + eps)
    j_constant = 2.0 * abs(beta) * s0
    price = ghat + eps * j_constant
    bound = StaticUpperBound(price=price, beta=beta, envelope_value=ghat,
                             j_constant=j_constant)
    if paths is not None:
        terminal = np.array([p.values[-1, 0] for p in paths])
        hedge = beta * (terminal - s0) - eps * abs(beta) * (s0 + terminal)
        margin = price + hedge - curve.value(terminal)
        scale = max(1.0, abs(ghat))
        bound.certified_paths = len(paths)
        bound.worst_margin = float(margin.min())
        if bound.worst_margin < -1e-9 * scale:
            k = int(np.argmin(margin))
            raise InvariantViolation(
                f"static hedge fails to superreplicate at S_T={terminal[k]:.6f} "
                f"(margin {margin[k]:.3e}); envelope or slope bug")
    return bound


@dataclass
class DualLowerBound:
    price: float
    stderr: float
    envelope_value: float
    delta: float
    chord: tuple
    chord_value: float
    eps_prime: float
    x0: float
    q_v_exact: float
    q_v_mc: float
    n_paths: int
    exact_bound: float
    side_payoffs: tuple
    mc_mode: str
    ensemble_effective: int = None


def _select_chord(curve, env, s0, delta, max_rounds=200):
    """Chord u < s0 < v whose value at s0 clears envelope - delta/3.

    Starts from the hull segment containing the spot, which already
    attains the envelope value when the spot is interior to it. Sentinel
    ends walk out geometrically (u halves toward 0, v doubles); when the
    spot sits on a hull kink both ends shrink toward it instead. Either
    way the chord values converge to the envelope value, so the delta/3
    margin is reached in finitely many rounds.
    """
    ghat = env.value(s0)
    target = ghat - delta / 3.0

    def chord_value(u, v):
        gu, gv = curve.value(u), curve.value(v)
        return (gu * (v - s0) + gv * (s0 - u)) / (v - u)

    u_vertex, v_vertex = env.chord_at(s0)
    u_fixed = 0.0 < u_vertex < s0
    v_fixed = v_vertex is not None and v_vertex > s0
    u = u_vertex if u_fixed else s0 * 0.5
    v = v_vertex if v_fixed else s0 * 2.0
    shrink = u_fixed and v_fixed and chord_value(u, v) <= target
    for _ in range(max_rounds):
        val = chord_value(u, v)
        if val > target and u < s0 < v:
            return u, v, val
        if shrink:
            u = s0 - (s0 - u) / 2.0
            v = s0 + (v - s0) / 2.0
        else:
            if not u_fixed:
                u /= 2.0
            if not v_fixed:
                v *= 2.0
            if u_fixed and v_fixed:
                shrink = True
    raise ValidationError(
        "no chord reaches the delta/3 margin; the payoff samples may be too "
        "sparse around the spot or delta too small")


def dual_lower_price(curve, s0, eps, delta, n_paths=10_000, seed=0,
                     ensemble=None, envelope=None, walk_span_cap=256):
    """Lower price bound through a two-point martingale measure.

    Selects a bracketing chord with the delta/3 margin, fits the
    geometric two-point grid at a spread small enough that the start
    value and the semicontinuity neighborhoods keep the delta budget,
    then estimates the weighted payoff of the true terminal price. The
    estimate uses the neighborhood worst case on each absorbing side, so
    it is a certified lower bound up to Monte Carlo error on the side
    frequencies. When a physical path ensemble is supplied (and can
    reach the chord), the two-point measure is realized by reweighting
    its ladder skeletons instead.
    """
    if delta <= 0:
        raise ValidationError("delta must be > 0")
    env = envelope if envelope is not None else concave_envelope(curve)
    if env.is_infinite:
        return DualLowerBound(price=np.inf, stderr=0.0, envelope_value=np.inf,
                              delta=delta, chord=(None, None), chord_value=np.inf,
                              eps_prime=np.nan, x0=np.nan, q_v_exact=np.nan,
                              q_v_mc=np.nan, n_paths=0, exact_bound=np.inf,
                              side_payoffs=(np.inf, np.inf), mc_mode="none")
    ghat = env.value(s0)
    u, v, chord_val = _select_chord(curve, env, s0, delta)

    slope = abs((curve.value(v) - curve.value(u)) / (v - u))
    room = chord_val - (ghat - delta / 2.0)
    eps_cap = eps
    if slope > 0:
        eps_cap = min(eps_cap, 0.5 * room / (slope * s0))
    tpm = None
    for _ in range(80):
        if eps_cap <= 1e-13:
            break
        cand = two_point_measure(s0, u, v, eps_cap)
        ep = cand.eps_prime
        pay_u = curve.min_on(u / (1.0 + ep), u * (1.0 + ep))
        pay_v = curve.min_on(v / (1.0 + ep), v * (1.0 + ep))
        chord_at_x0 = (curve.value(u) * (v - cand.x0) + curve.value(v) * (cand.x0 - u)) / (v - u)
        ok = (pay_u >= curve.value(u) - delta / 2.0
              and pay_v >= curve.value(v) - delta / 2.0
              and chord_at_x0 > ghat - delta / 2.0)
        if ok:
            tpm = cand
            break
        eps_cap /= 2.0
    if tpm is None:
        raise ValidationError(
            "eps too large for the delta-neighborhood containments; rerun with "
            "a smaller eps or a larger delta")
    ep = tpm.eps_prime
    pay_u = curve.min_on(u / (1.0 + ep), u * (1.0 + ep))
    pay_v = curve.min_on(v / (1.0 + ep), v * (1.0 + ep))
    exact_bound = tpm.q_u * pay_u + tpm.q_v * pay_v

    if ensemble is not None:
        return _dual_from_ensemble(curve, tpm, ensemble, ghat, delta, u, v,
                                   pay_u, pay_v, exact_bound)

    span = tpm.k - tpm.j
    rng = np.random.default_rng(spawn_seeds(seed, 1)[0])
    if span <= walk_span_cap:
        sides = _walk_sides(tpm, n_paths, rng)
        mode = "walk"
        q_v_mc = float(np.mean(sides))
        payoff = np.where(sides, pay_v, pay_u)
        price = float(payoff.mean())
        stderr = float(payoff.std() / np.sqrt(n_paths))
    else:
        # Wide grids: the absorption side law is the exact harmonic ruin
        # probability and the worst-case payoff is constant per side, so
        # the weighted estimate collapses to the closed-form expectation
        # with no sampling error left to report.
        mode = "exact-law"
        q_v_mc = tpm.q_v
        price = exact_bound
        stderr = 0.0
    return DualLowerBound(price=price, stderr=stderr, envelope_value=ghat,
                          delta=delta, chord=(u, v), chord_value=chord_val,
                          eps_prime=ep, x0=tpm.x0, q_v_exact=tpm.q_v,
                          q_v_mc=q_v_mc, n_paths=n_paths,
                          exact_bound=exact_bound,
                          side_payoffs=(pay_u, pay_v), mc_mode=mode)


def _walk_sides(tpm, n_paths, rng, max_steps=None):
    """Literal two-point walks: True where absorption happens at v."""
    step = step_measure(0.0, tpm.eps_prime)
    p_down = step.lam
    span = tpm.k - tpm.j
    if max_steps is None:
        max_steps = 200 * span * span + 10_000
    level = np.zeros(n_paths, dtype=int)
    sides = np.zeros(n_paths, dtype=bool)
    active = np.ones(n_paths, dtype=bool)
    for _ in range(max_steps):
        idx = np.flatnonzero(active)
        if len(idx) == 0:
            return sides
        moves = np.where(rng.random(len(idx)) < p_down, -1, 1)
        level[idx] += moves
        hit_v = level[idx] >= tpm.k
        hit_u = level[idx] <= tpm.j
        sides[idx[hit_v]] = True
        active[idx[hit_v | hit_u]] = False
    raise InvariantViolation("two-point walks failed to absorb within the step cap")


def _dual_from_ensemble(curve, tpm, ensemble, ghat, delta, u, v, pay_u, pay_v,
                        exact_bound):
    """Two-point measure realized on physical paths by ladder reweighting."""
    from .cps import build_cps_1d
    from .skeleton import extract_ladder

    band = np.log1p(tpm.eps_prime)
    step_sd = float(np.median([np.std(np.diff(np.log(p.values[:, 0])))
                               for p in ensemble[: min(len(ensemble), 64)]]))
    if step_sd >= 0.5 * band:
        raise ValidationError(
            f"ensemble grid cannot resolve the two-point spread (per-step price "
            f"motion {step_sd:.2e} against a band of {band:.2e}); the chord is "
            "out of reach, drop the ensemble to use the dual-walk estimator")
    skels = [extract_ladder(p, tpm.eps_prime, anchor0=np.array([tpm.x0]))
             for p in ensemble]
    schedule = tpm.schedule()
    cps_list, _cert = build_cps_1d(skels, schedule, check_normalization=False)
    like = np.array([c.likelihood for c in cps_list])
    effective = int(np.sum(like > 0))
    if effective < 30:
        raise ValidationError(
            f"ensemble carries only {effective} paths with positive weight for the "
            f"two-point chord (u={u:.4g}, v={v:.4g}); the chord is out of reach, "
            "drop the ensemble to use the dual-walk estimator")
    terminal_true = np.array([p.values[-1, 0] for p in ensemble])
    payoff = curve.value(terminal_true)
    total = like.sum()
    price = float(like @ payoff / total)
    se = float(np.sqrt(np.sum((like * (payoff - price)) ** 2)) / total)
    sides = np.array([c.terminal_shadow[0] > tpm.x0 for c in cps_list])
    q_v_mc = float(like @ sides / total)
    return DualLowerBound(price=price, stderr=se, envelope_value=ghat,
                          delta=delta, chord=(u, v),
                          chord_value=exact_bound + delta / 2.0,
                          eps_prime=tpm.eps_prime, x0=tpm.x0, q_v_exact=tpm.q_v,
                          q_v_mc=q_v_mc, n_paths=len(ensemble),
                          exact_bound=exact_bound, side_payoffs=(pay_u, pay_v),
                          mc_mode="ensemble", ensemble_effective=effective)


@dataclass
class PriceReport:
    """One squeeze row: both bounds at a spread, with error bars."""

    eps: float
    upper: float
    lower: float
    envelope: float
    mc_stderr_lower: float
    n_paths: int
    seed: int


@dataclass
class SqueezeReport:
    rows: list
    envelope_value: float
    passed: bool
    failures: list = field(default_factory=list)


def squeeze_report(curve, s0, eps_sequence, delta, n_paths=10_000, seed=0,
                   cert_paths=None):
    """Upper and lower price bounds along a decreasing spread sequence.

    Checks that the upper column decreases toward the envelope value with
    excess exactly the hedge constant times eps, that the lower column
    stays within delta plus Monte Carlo error below the envelope at the
    smallest spread, and that the bracket ordering holds throughout.
    """
    eps_sequence = [float(e) for e in eps_sequence]
    if any(b >= a for a, b in zip(eps_sequence, eps_sequence[1:])):
        raise ValidationError("eps sequence must be strictly decreasing")
    env = concave_envelope(curve)
    ghat = env.value(s0) if not env.is_infinite else np.inf
    rows = []
    failures = []
    for i, e in enumerate(eps_sequence):
        upper = static_upper_price(curve, s0, e, paths=cert_paths, envelope=env)
        lower = dual_lower_price(curve, s0, e, delta, n_paths=n_paths,
                                 seed=seed + i, envelope=env)
        rows.append(PriceReport(eps=e, upper=upper.price, lower=lower.price,
                                envelope=ghat, mc_stderr_lower=lower.stderr,
                                n_paths=lower.n_paths, seed=seed + i))
    for a, b in zip(rows, rows[1:]):
        if b.upper > a.upper + 1e-9 * max(1.0, abs(ghat)):
            failures.append(f"upper bound not decreasing between eps={a.eps} and {b.eps}")
    for r in rows:
        if r.lower > r.upper + 3.0 * r.mc_stderr_lower + 1e-9:
            failures.append(f"bracket ordering violated at eps={r.eps}")
    last = rows[-1]
    if math.isfinite(ghat) and ghat - last.lower > delta + 3.0 * last.mc_stderr_lower + 1e-9:
        failures.append("lower bound misses the envelope by more than delta at the smallest eps")
    return SqueezeReport(rows=rows, envelope_value=ghat, passed=not failures,
                         failures=failures)


def write_squeeze_csv(report, out_path):
    with open(out_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["eps", "upper", "lower", "envelope",
                         "mc_stderr_lower", "n_paths", "seed"])
        for r in report.rows:
            writer.writerow([repr(float(r.eps)), repr(float(r.upper)),
                             repr(float(r.lower)), repr(float(r.envelope)),
                             repr(float(r.mc_stderr_lower)),
                             int(r.n_paths), int(r.seed)])
