"""Random walk with retirement and its explicit martingale measures.

The walk lives on the geometric grid x0 * (1+eps)^k and absorbs ("retires")
at an almost surely finite step. A martingale measure is pinned down by a
schedule of per-step retirement probabilities alpha; the down/up weights
are then the unique nonnegative solution of the normalization and
martingale conditions. Schedules may be constant, record-indexed (to force
any integrability target on sup f(X)), or two-point absorbing (exact
terminal law on a pair of grid levels bracketing the start).
"""

import csv
from dataclasses import dataclass

import numpy as np

from .errors import ConvergenceError, NumericalError, ValidationError
from .seeding import path_rngs

__all__ = [
    "StepMeasure", "step_measure", "density_increment", "RetiredWalk",
    "RetirementSchedule", "ConstantSchedule", "IntegrabilitySchedule",
    "TwoPointSchedule", "integrability_schedule", "TwoPointMeasure",
    "two_point_measure", "two_point_terminal_law", "NormalizationReport",
    "verify_density_normalizes", "ExactTree", "enumerate_tree",
    "simulate_walk", "empirical_mark_weights", "MarkWeights",
]


@dataclass(frozen=True)
class StepMeasure:
    """One-step mark probabilities (retire, down, up) under the target
    measure; normalization and the one-step martingale identity hold by
    construction."""

    alpha: float
    lam: float
    mu: float
    eps: float

    def prob(self, mark):
        return (self.lam, self.alpha, self.mu)[mark + 1]

    def residuals(self):
        total = self.alpha + self.lam + self.mu - 1.0
        mart = self.alpha + self.lam / (1.0 + self.eps) + self.mu * (1.0 + self.eps) - 1.0
        return total, mart


def step_measure(alpha, eps):
    """Unique nonnegative (retire, down, up) probabilities at a step.

    Solves alpha + lam + mu = 1 together with the martingale condition
    alpha + lam/(1+eps) + mu*(1+eps) = 1 in closed form.
    """
    if not 0.0 <= alpha <= 1.0:
        raise ValidationError("alpha must lie in [0, 1]")
    if eps <= 0:
        raise ValidationError("eps must be > 0")
    lam = (1.0 - alpha) * (1.0 + eps) / (2.0 + eps)
    mu = (1.0 - alpha) / (2.0 + eps)
    return StepMeasure(alpha=alpha, lam=lam, mu=mu, eps=eps)


def density_increment(mark, step, ref_probs, already_retired=False):
    """One-step likelihood ratio target/reference for the realized mark.

    ref_probs is (p_down, p_retire, p_up) under the reference measure and
    must be strictly positive; after retirement the ratio is 1.
    """
    if already_retired:
        return 1.0
    if mark not in (-1, 0, 1):
        raise ValidationError("marks take values in {-1, 0, +1}")
    ref = float(ref_probs[mark + 1])
    if ref <= 0:
        raise ValidationError("reference mark probabilities must be strictly positive")
    return step.prob(mark) / ref


@dataclass
class RetiredWalk:
    """Realized retired-walk trajectory on the geometric grid."""

    x0: float
    eps: float
    marks: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.marks, dtype=int)
        if not np.all(np.isin(m, (-1, 0, 1))):
            raise ValidationError("marks take values in {-1, 0, +1}")
        zero = np.flatnonzero(m == 0)
        if len(zero) and np.any(m[zero[0]:] != 0):
            raise ValidationError("a retired walk never moves again")
        if len(m) and m[-1] != 0:
            raise ValidationError("the walk must end retired")
        self.marks = m

    @property
    def values(self):
        levels = np.concatenate([[0], np.cumsum(self.marks)])
        return self.x0 * (1.0 + self.eps) ** levels


class RetirementSchedule:
    """Base class: a schedule maps (step index, walk state) to alpha.

    The state is a tuple whose first entry is the current grid level;
    subclasses append whatever bookkeeping their alpha depends on, so
    states recombine maximally in tree enumerations.
    """

    equivalent = True

    def initial_state(self):
        return (0,)

    def advance(self, state, mark):
        return (state[0] + mark,) + state[1:]

    def alpha(self, n, state):
        raise NotImplementedError


class ConstantSchedule(RetirementSchedule):
    def __init__(self, alpha):
        if not 0.0 <= alpha <= 1.0:
            raise ValidationError("alpha must lie in [0, 1]")
        self._alpha = float(alpha)

    @property
    def equivalent(self):
        return 0.0 < self._alpha < 1.0

    def alpha(self, n, state):
        return self._alpha


class IntegrabilitySchedule(RetirementSchedule):
    """Retire aggressively at fresh level records, base alpha elsewhere.

    State is (level, record, fresh) where record is the running maximum
    of |level| and fresh flags whether it was just attained; delta(m)
    gives the survival probability granted at the step following the
    record m-1, chosen so that the record-m reach probabilities make
    sup f(X) integrable.
    """

    def __init__(self, delta_fn, base_alpha=0.5):
        if not 0.0 < base_alpha < 1.0:
            raise ValidationError("base alpha must lie in (0, 1)")
        self._delta = delta_fn
        self._base = float(base_alpha)

    def initial_state(self):
        return (0, 0, True)

    def advance(self, state, mark):
        level = state[0] + mark
        record = max(state[1], abs(level))
        return (level, record, record > state[1])

    def alpha(self, n, state):
        if state[2]:
            return 1.0 - self._delta(state[1] + 1)
        return self._base

    def delta(self, m):
        return self._delta(m)


class TwoPointSchedule(RetirementSchedule):
    """No retirement until the walk reaches level j or k, then certain
    retirement; the terminal value concentrates on the two grid points."""

    equivalent = False

    def __init__(self, j, k):
        if not j < 0 < k:
            raise ValidationError("need j < 0 < k")
        self.j = int(j)
        self.k = int(k)

    def initial_state(self):
        return (0, False)

    def advance(self, state, mark):
        level = state[0] + mark
        return (level, state[1] or level in (self.j, self.k))

    def alpha(self, n, state):
        return 1.0 if state[1] else 0.0


def integrability_schedule(f, x0, eps, budget=None, base_alpha=0.5, delta_cap=0.5):
    """Schedule making sup over the walk of f(X) integrable.

    f is evaluated on the geometric grid levels; the symmetrized running
    maxima s(m) determine survival probabilities delta(m) small enough
    that reach(m) * (s(m) - s(m-1)) stays below the summable budget. Any
    summable budget closes the integrability argument; the default
    2^-m * max(1, |f(x0)|) keeps the budget at the payoff's own scale,
    so the measure change stays statistically balanced at large price
    levels while reducing to the plain geometric series at unit scale.
    """
    if budget is None:
        scale = max(1.0, abs(float(f(x0))))
        budget = lambda m: scale * 2.0 ** (-m)
    s_cache = {}
    delta_cache = {}
    eta_cache = {0: 1.0}

    def s_bar(m):
        if m not in s_cache:
            prev = -np.inf if m == 0 else s_bar(m - 1)
            lo = f(x0 * (1.0 + eps) ** (-m))
            hi = f(x0 * (1.0 + eps) ** m)
            s_cache[m] = max(prev, lo, hi)
        return s_cache[m]

    def delta(m):
        if m not in delta_cache:
            eta_prev = eta(m - 1)
            gap = s_bar(m) - s_bar(m - 1)
            if gap <= 0 or eta_prev == 0.0:
                d = delta_cap
            else:
                d = min(delta_cap, 0.5 * budget(m) / (gap * eta_prev))
            delta_cache[m] = max(d, 1e-15)
        return delta_cache[m]

    def eta(m):
        if m not in eta_cache:
            eta_cache[m] = eta(m - 1) * delta(m)
        return eta_cache[m]

    return IntegrabilitySchedule(delta, base_alpha=base_alpha)


@dataclass(frozen=True)
class TwoPointMeasure:
    """Grid fit and exact terminal law for a two-point absorbing walk."""

    eps_prime: float
    x0: float
    j: int
    k: int
    u: float
    v: float
    q_u: float
    q_v: float

    def schedule(self):
        return TwoPointSchedule(self.j, self.k)


def two_point_measure(s0, u, v, eps):
    """Fit a geometric grid through u and v bracketing s0.

    Searches the smallest number of grid steps m spanning v/u whose
    implied spread eps' stays below eps, then places the start x0 on the
    grid strictly inside the band around s0. The terminal probabilities
    follow from optional sampling: q_v = (x0 - u)/(v - u).
    """
    if not 0 < u < s0 < v:
        raise ValidationError("need 0 < u < s0 < v")
    if eps <= 0:
        raise ValidationError("eps must be > 0")
    span = np.log(v / u)
    m = max(1, int(np.ceil(span / np.log1p(eps))))
    for _ in range(10_000_000):
        eps_prime = (v / u) ** (1.0 / m) - 1.0
        if eps_prime < eps:
            i = int(round(np.log(s0 / u) / np.log1p(eps_prime)))
            i = min(max(i, 1), m - 1) if m > 1 else 0
            x0 = u * (1.0 + eps_prime) ** i
            if s0 / (1.0 + eps_prime) < x0 < s0 * (1.0 + eps_prime) and 0 < i < m:
                q_v = (x0 - u) / (v - u)
                return TwoPointMeasure(eps_prime=eps_prime, x0=x0, j=-i, k=m - i,
                                       u=u, v=v, q_u=1.0 - q_v, q_v=q_v)
        m += 1
    raise NumericalError("two-point grid fit did not terminate")


def two_point_terminal_law(eps_prime, j, k, x0=None, tol=1e-12, max_steps=None):
    """Absorption law of the two-point walk by exact mass propagation.

    Returns (q_u, q_v, interior_residual) after pushing the start mass
    through the no-retirement interior transitions until the interior
    holds less than tol.
    """
    step = step_measure(0.0, eps_prime)
    span = k - j
    mass = np.zeros(span + 1)
    mass[-j] = 1.0
    absorbed_u = 0.0
    absorbed_v = 0.0
    if max_steps is None:
        max_steps = max(10_000, 200 * span * span)
    for _ in range(max_steps):
        absorbed_u += mass[0]
        absorbed_v += mass[-1]
        mass[0] = mass[-1] = 0.0
        if mass.sum() < tol:
            break
        new = np.zeros_like(mass)
        new[:-2] += step.lam * mass[1:-1]
        new[2:] += step.mu * mass[1:-1]
        mass = new
    return absorbed_u, absorbed_v, float(mass.sum())


@dataclass
class NormalizationReport:
    """Decay curve of the non-retired target-measure mass."""

    residuals: np.ndarray
    horizon: int
    tol: float
    passed: bool

    @property
    def final_residual(self):
        return float(self.residuals[-1]) if len(self.residuals) else 1.0


def verify_density_normalizes(schedule, eps, max_horizon=10_000, tol=1e-6):
    """Check that the surviving (non-retired) mass under the schedule's
    measure decays below tol, which closes the density normalization.

    Constant schedules use the closed-form product; general schedules
    propagate the exact state-space chain.
    """
    if isinstance(schedule, ConstantSchedule):
        a = schedule.alpha(1, schedule.initial_state())
        res = []
        r = 1.0
        for n in range(1, max_horizon + 1):
            r *= 1.0 - a
            res.append(r)
            if r < tol:
                break
        res = np.array(res)
        return NormalizationReport(res, len(res), tol, bool(res[-1] < tol))

    nodes = {schedule.initial_state(): 1.0}
    res = []
    for n in range(1, max_horizon + 1):
        new = {}
        surviving = 0.0
        for state, mass in nodes.items():
            a = schedule.alpha(n, state)
            step = step_measure(a, eps)
            for mark, p in ((-1, step.lam), (1, step.mu)):
                if p <= 0 or mass * p == 0.0:
                    continue
                child = schedule.advance(state, mark)
                new[child] = new.get(child, 0.0) + mass * p
                surviving += mass * p
        nodes = new
        res.append(surviving)
        if surviving < tol:
            break
    res = np.array(res) if res else np.ones(1)
    return NormalizationReport(res, len(res), tol, bool(res[-1] < tol))


@dataclass
class ExactTree:
    """Exactly enumerated retired-walk chain under a schedule's measure.

    levels_per_depth[n] maps (state, retired) to probability mass; the
    walk value at a node is x0 * (1+eps)^level.
    """

    schedule: object
    eps: float
    x0: float
    depth: int
    nodes: list

    def value(self, level):
        return self.x0 * (1.0 + self.eps) ** level

    def leaf_mass(self):
        return float(sum(self.nodes[-1].values()))

    def martingale_residuals(self):
        """Max |E[X_next | node] - X_node| over non-retired nodes."""
        worst = 0.0
        for n, layer in enumerate(self.nodes[:-1]):
            for (state, retired), mass in layer.items():
                if retired or mass == 0.0:
                    continue
                a = self.schedule.alpha(n + 1, state)
                step = step_measure(a, self.eps)
                x = self.value(state[0])
                expect = (step.alpha * x + step.lam * self.value(state[0] - 1)
                          + step.mu * self.value(state[0] + 1))
                worst = max(worst, abs(expect - x))
        return worst

    def terminal_law(self):
        """Map walk value -> probability at the final depth."""
        law = {}
        for (state, _retired), mass in self.nodes[-1].items():
            x = self.value(state[0])
            law[x] = law.get(x, 0.0) + mass
        return law

    def to_csv(self, out_path):
        with open(out_path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["n", "level", "prob_down", "prob_retire", "prob_up", "X"])
            for n, layer in enumerate(self.nodes):
                for (state, retired), mass in sorted(layer.items(), key=lambda kv: kv[0][0][0]):
                    if retired:
                        probs = (0.0, 1.0, 0.0)
                    else:
                        step = step_measure(self.schedule.alpha(n + 1, state), self.eps)
                        probs = (step.lam, step.alpha, step.mu)
                    writer.writerow([n, state[0], repr(probs[0]), repr(probs[1]),
                                     repr(probs[2]), repr(self.value(state[0]))])


def enumerate_tree(schedule, eps, x0, depth):
    """Enumerate the walk chain to the given depth with exact masses."""
    layer = {(schedule.initial_state(), False): 1.0}
    nodes = [layer]
    for n in range(1, depth + 1):
        new = {}

        def add(key, mass):
            if mass != 0.0:
                new[key] = new.get(key, 0.0) + mass

        for (state, retired), mass in layer.items():
            if retired:
                add((state, True), mass)
                continue
            step = step_measure(schedule.alpha(n, state), eps)
            add((state, True), mass * step.alpha)
            add((schedule.advance(state, -1), False), mass * step.lam)
            add((schedule.advance(state, 1), False), mass * step.mu)
        layer = new
        nodes.append(layer)
    return ExactTree(schedule=schedule, eps=eps, x0=x0, depth=depth, nodes=nodes)


def simulate_walk(schedule, eps, x0, n_walks, seed, max_steps=100_000):
    """Sample retired walks directly under the schedule's measure.

    Returns a list of RetiredWalk; raises if a walk fails to retire
    within max_steps (the schedule then violates the decay condition).
    """
    walks = []
    for rng in path_rngs(seed, n_walks):
        state = schedule.initial_state()
        marks = []
        for n in range(1, max_steps + 1):
            step = step_measure(schedule.alpha(n, state), eps)
            r = rng.random()
            if r < step.alpha:
                marks.append(0)
                break
            mark = -1 if r < step.alpha + step.lam else 1
            marks.append(mark)
            state = schedule.advance(state, mark)
        else:
            raise ConvergenceError(f"walk failed to retire within {max_steps} steps")
        walks.append(RetiredWalk(x0=x0, eps=eps, marks=np.array(marks)))
    return walks


@dataclass
class MarkWeights:
    """Per-path likelihood machinery of the empirical measure change.

    z[p][n-1] is the step-n likelihood ratio of path p, l_prefix the
    running products, likelihood the final values. Buckets map
    (step, level) to reference mark counts.
    """

    z: list
    l_prefix: list
    likelihood: np.ndarray
    buckets: dict
    ref_probs: dict


def empirical_mark_weights(skels, schedule, smoothing=1.0, ref_probs_fn=None,
                           eps=None):
    """Likelihood ratios for a batch of one-dimensional snapped ladders.

    Reference conditional mark probabilities are estimated per
    (step, level) bucket with additive smoothing (so every mark keeps
    positive reference mass), unless an exact ref_probs_fn(n, level) is
    supplied. Targets come from the schedule through the closed-form
    step measures.
    """
    if eps is None:
        eps = skels[0].eps
    states = []
    for sk in skels:
        if sk.levels is None:
            raise ValidationError("empirical weighting needs snapped one-dimensional ladders")
        seq = [schedule.initial_state()]
        for mark in sk.marks[:-1]:
            seq.append(schedule.advance(seq[-1], int(mark)))
        states.append(seq)

    buckets = {}
    if ref_probs_fn is None:
        for sk, seq in zip(skels, states):
            for n, mark in enumerate(sk.marks, start=1):
                key = (n, seq[n - 1][0])
                counts = buckets.setdefault(key, np.zeros(3))
                counts[int(mark) + 1] += 1.0
    ref_probs = {}
    for key, counts in buckets.items():
        ref_probs[key] = (counts + smoothing) / (counts.sum() + 3.0 * smoothing)

    z_all, l_prefix_all, likelihood = [], [], np.empty(len(skels))
    for p, (sk, seq) in enumerate(zip(skels, states)):
        z = np.empty(len(sk.marks))
        for n, mark in enumerate(sk.marks, start=1):
            state = seq[n - 1]
            step = step_measure(schedule.alpha(n, state), eps)
            if ref_probs_fn is not None:
                ref = ref_probs_fn(n, state[0])
            else:
                ref = ref_probs[(n, state[0])]
            z[n - 1] = density_increment(int(mark), step, ref)
        z_all.append(z)
        lp = np.cumprod(z)
        l_prefix_all.append(lp)
        likelihood[p] = lp[-1] if len(lp) else 1.0
    return MarkWeights(z=z_all, l_prefix=l_prefix_all, likelihood=likelihood,
                       buckets=buckets, ref_probs=ref_probs)
