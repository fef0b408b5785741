"""Stationary equilibria as fixed points of best-respond-then-stationarize.

``solve_se`` iterates ``f <- (1 - lam) f + lam Phi(f)`` where ``Phi(f)`` is
the invariant distribution of the chain induced by a best response to ``f``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from .core import (
    FinitePure,
    ModelSpec,
    ObliviousStrategy,
    PopulationState,
    one_p_distance,
    weighted_sup_distance,
)
from .dp import BellmanStage, DpSolveOptions, bellman_apply, policy_value, solve_value
from .invariant import (
    DriftReport,
    InvariantOptions,
    drift,
    induced_chain,
    invariance_residual,
    invariant_distribution,
    invariant_state_action,
    negative_drift_level,
    tail_moment,
)
from .models import Condition


@dataclass(frozen=True)
class SeSolveOptions:
    """Options for the damped fixed-point iteration.

    ``smoothing`` controls the logit-smoothed best response used for finite
    action sets: ``"off"``, ``"auto"`` (switched on when the pure-response
    iteration stops making progress over ``cycle_window`` steps) or
    ``"always"``. The temperature is annealed geometrically toward
    ``logit_min_temperature``.

    With ``mixed_polish``, a finite-action run that does not settle is
    finished by solving the indifference conditions of the mixing states
    read off the damped profile (see ``polish_mixed``).

    With ``adaptive_damping`` the step is halved (down to ``min_damping``)
    whenever the fixed-point gap grows, and grows back toward ``damping``
    after consecutive decreases. This breaks the overshoot cycles that a
    fixed step produces when best responses swing between extremes.
    """

    damping: float = 0.5
    adaptive_damping: bool = True
    min_damping: float = 1e-3
    fp_tol: float = 1e-8
    max_outer_iters: int = 1000
    dp: DpSolveOptions = field(default_factory=DpSolveOptions)
    inv: InvariantOptions = field(default_factory=InvariantOptions)
    warm_start: bool = True
    smoothing: str = "auto"
    logit_temperature: float = 1e-2
    logit_anneal: float = 0.9
    logit_min_temperature: float = 1e-9
    cycle_window: int = 50
    boundary_width: int = 10
    mixed_polish: bool = True

    def __post_init__(self):
        if not 0 < self.damping <= 1:
            raise ValueError(f"damping must lie in (0, 1], got {self.damping}")
        if not 0 < self.min_damping <= self.damping:
            raise ValueError(f"min_damping must lie in (0, damping], got {self.min_damping}")
        if not self.fp_tol > 0:
            raise ValueError(f"fp_tol must be positive, got {self.fp_tol}")
        if self.max_outer_iters < 1:
            raise ValueError("max_outer_iters must be at least 1")
        if self.smoothing not in ("off", "auto", "always"):
            raise ValueError(f"unknown smoothing mode {self.smoothing!r}")


@dataclass(eq=False)
class SolveReport:
    strategy: ObliviousStrategy
    population: PopulationState
    bellman_residual: float
    invariance_residual: float
    fp_gap: float
    boundary_mass: float
    tail_moment: float
    tail_eta: int
    drift: DriftReport
    trace: List[float]
    boundary_trace: List[float]
    moment_trace: List[float]
    converged: bool
    iterations: int
    f0: PopulationState
    smoothing_used: bool = False
    value: Optional[np.ndarray] = None
    polished: bool = False

    @property
    def mean_state(self) -> float:
        return float(self.population.mean_state()[0])


def boundary_mass(f: PopulationState, width: int) -> float:
    """Mass on states whose sup norm is within ``width`` of the truncation bound."""
    level = f.space.sup_norm()
    return float(f.state_marginal[level > f.space.x_max - width].sum())


def _logit(q: np.ndarray, temperature: float) -> np.ndarray:
    z = (q - q.max(axis=1, keepdims=True)) / temperature
    w = np.exp(z)
    return w / w.sum(axis=1, keepdims=True)


def _best_response(model, f, opts: SeSolveOptions, v0=None, temperature=None):
    stage = BellmanStage(model, f, opts.dp)
    v, mu = solve_value(model, f, opts.dp, v0=v0, stage=stage)
    if temperature is not None:
        probs = _logit(stage.q_values(v), temperature)
        mu = ObliviousStrategy.mixed(probs, model.actions.values)
    return v, mu


def _stationarize(model, mu, f, opts: SeSolveOptions) -> PopulationState:
    if model.coupled:
        return invariant_state_action(model, mu, f, opts.inv)
    return invariant_distribution(induced_chain(model, mu, f), opts.inv, p=model.p)


def best_response(model: ModelSpec, f: PopulationState, opts: Optional[SeSolveOptions] = None) -> ObliviousStrategy:
    """Optimal pure oblivious strategy against a fixed population state."""
    return _best_response(model, f, opts or SeSolveOptions())[1]


def phi_step(
    model: ModelSpec, f: PopulationState, opts: Optional[SeSolveOptions] = None
) -> Tuple[PopulationState, ObliviousStrategy]:
    """Best response to ``f`` and the invariant distribution it induces."""
    opts = opts or SeSolveOptions()
    _, mu = _best_response(model, f, opts)
    return _stationarize(model, mu, f, opts), mu


def strategy_from_profile(model: ModelSpec, f: PopulationState, fallback: ObliviousStrategy) -> ObliviousStrategy:
    """Mixed strategy read off a state-action profile; ``fallback`` where ``f`` has no mass."""
    g = f.state_marginal
    fb = fallback.as_mixed(model.actions.values).table
    probs = np.where(g[:, None] > 0, f.mass / np.where(g > 0, g, 1.0)[:, None], fb)
    probs = probs / probs.sum(axis=1, keepdims=True)
    return ObliviousStrategy.mixed(probs, model.actions.values)


_MIX_MASS = 1e-8
_MIX_PROB = 1e-3


def _onehot(model: ModelSpec, actions: np.ndarray) -> np.ndarray:
    support = np.asarray(model.actions.values)
    return (np.asarray(actions)[:, None] == support[None, :]).astype(float)


def _stationary_profile(model, mu, f, opts: SeSolveOptions) -> PopulationState:
    """Profile ``f`` with ``f = invariant_state_action(mu, f)``; one step when kernels ignore ``f``."""
    for _ in range(500):
        g = _stationarize(model, mu, f, opts)
        if one_p_distance(g, f) <= 1e-14:
            return g
        f = g
    return f


@dataclass
class _MixedCandidate:
    base: np.ndarray
    pairs: List[Tuple[int, int, int]]

    def strategy(self, model, q) -> ObliviousStrategy:
        table = self.base.copy()
        for (x, lo, hi), qx in zip(self.pairs, q):
            table[x] = 0.0
            table[x, lo], table[x, hi] = 1.0 - qx, qx
        return ObliviousStrategy.mixed(table, model.actions.values)


def _indifference(model, cand: _MixedCandidate, q, f, opts):
    mu = cand.strategy(model, q)
    fq = _stationary_profile(model, mu, f, opts)
    v = policy_value(model, mu, fq)
    qv = BellmanStage(model, fq, opts.dp).q_values(v)
    diff = np.array([qv[x, hi] - qv[x, lo] for x, lo, hi in cand.pairs])
    return diff, mu, fq, v, qv


def _root_1d(fn, lo_val, hi_val, iters=200):
    """Illinois false position on ``[0, 1]`` for a function decreasing through zero."""
    a, b, fa, fb = 0.0, 1.0, lo_val, hi_val
    side = 0
    for _ in range(iters):
        c = (a * fb - b * fa) / (fb - fa)
        fc = fn(c)
        if fc == 0.0 or b - a < 1e-15:
            return c
        if np.sign(fc) == np.sign(fa):
            a, fa = c, fc
            if side == -1:
                fb *= 0.5
            side = -1
        else:
            b, fb = c, fc
            if side == 1:
                fa *= 0.5
            side = 1
    return c


def _solve_mixing(model, cand, f, opts):
    m = len(cand.pairs)
    if m == 1:
        d0 = _indifference(model, cand, [0.0], f, opts)[0][0]
        d1 = _indifference(model, cand, [1.0], f, opts)[0][0]
        if d0 <= 0 or d1 >= 0:
            return None
        return [_root_1d(lambda q: _indifference(model, cand, [q], f, opts)[0][0], d0, d1)]
    q = np.full(m, 0.5)
    for _ in range(50):
        diff = _indifference(model, cand, q, f, opts)[0]
        if np.max(np.abs(diff)) <= 1e-13:
            break
        jac = np.empty((m, m))
        h = 1e-7
        for j in range(m):
            qj = q.copy()
            qj[j] = qj[j] + h if qj[j] + h <= 1 else qj[j] - h
            jac[:, j] = (_indifference(model, cand, qj, f, opts)[0] - diff) / (qj[j] - q[j])
        try:
            step = np.linalg.solve(jac, -diff)
        except np.linalg.LinAlgError:
            return None
        q = np.clip(q + step, 0.0, 1.0)
    return q.tolist()


def _improve(model, pairs, base, f, opts):
    """Solve the mixing weights, then switch pure states to greedy actions until stable."""
    support = np.asarray(model.actions.values)
    mixing = {x for x, _, _ in pairs}
    rows = [x for x in range(model.n_states) if x not in mixing]
    for _ in range(20):
        cand = _MixedCandidate(base, pairs)
        q = _solve_mixing(model, cand, f, opts)
        if q is None:
            return None
        _, mu, fq, _, qv = _indifference(model, cand, q, f, opts)
        qmax = qv.max(axis=1)
        eps = 1e-12 * np.maximum(1.0, np.abs(qmax))
        improved = _onehot(model, support[np.argmax(qv >= (qmax - eps)[:, None], axis=1)])
        if np.array_equal(improved[rows], base[rows]):
            return mu, fq
        base = base.copy()
        base[rows] = improved[rows]
        f = fq
    return None


def polish_mixed(model: ModelSpec, f: PopulationState, opts: Optional[SeSolveOptions] = None, max_states: int = 4):
    """Mixed equilibrium from the indifference conditions suggested by a damped profile.

    Candidate mixing states are those whose profile conditionals put weight
    on a second action, ranked by the mass on that action; the smallest
    leading sets are tried first. Each mixing state randomizes between its
    two heaviest actions with the weight solving ``Q(x, hi) = Q(x, lo)``
    under the exact value of the mixed strategy at its own stationary
    profile; every other state plays a greedy pure action. Returns
    ``(mu, f)`` once both residual certificates hold, else ``None``.
    """
    opts = opts or SeSolveOptions()
    g = f.state_marginal
    cond = np.where(g[:, None] > 0, f.mass / np.where(g > 0, g, 1.0)[:, None], 0.0)
    ranked = []
    for x in np.flatnonzero(g > _MIX_MASS):
        order = np.argsort(-cond[x], kind="stable")
        if cond[x, order[1]] > _MIX_PROB:
            lo, hi = sorted(int(k) for k in order[:2])
            ranked.append((g[x] * cond[x, order[1]], (int(x), lo, hi)))
    ranked.sort(key=lambda t: -t[0])
    if not ranked:
        return None
    _, br = _best_response(model, f, opts)
    base = _onehot(model, br.table)
    for k in range(1, min(max_states, len(ranked)) + 1):
        pairs = sorted(pair for _, pair in ranked[:k])
        found = _improve(model, pairs, base, f, opts)
        if found is None:
            continue
        mu, fq = found
        bell, _ = se_residual(model, mu, fq, opts.dp)
        gap = one_p_distance(_stationarize(model, mu, fq, opts), fq)
        if bell <= opts.dp.tol and gap <= opts.fp_tol:
            return mu, fq
    return None


def se_residual(
    model: ModelSpec,
    mu: ObliviousStrategy,
    f: PopulationState,
    dp_opts: Optional[DpSolveOptions] = None,
) -> Tuple[float, float]:
    """``(bellman, invariance)`` residuals of a candidate equilibrium.

    ``bellman`` is the weighted sup distance between the exact value of
    following ``mu`` and its Bellman image; ``invariance`` is
    ``||f P_{mu,f} - f||_1`` on the state marginal.
    """
    v_mu = policy_value(model, mu, f)
    bell = weighted_sup_distance(v_mu, bellman_apply(model, f, v_mu, dp_opts), model.growth_n, model.space)
    inv = invariance_residual(induced_chain(model, mu, f), f)
    return bell, inv


def solve_se(
    model: ModelSpec,
    f0: Optional[PopulationState] = None,
    opts: Optional[SeSolveOptions] = None,
) -> SolveReport:
    """Damped fixed-point iteration for a stationary equilibrium.

    Non-convergence is reported through ``converged=False`` with the full
    distance, boundary-mass and moment traces.
    """
    opts = opts or SeSolveOptions()
    f0 = f0 or model.point_mass(0)
    finite = isinstance(model.actions, FinitePure)
    eta = model.p + 1
    temperature = opts.logit_temperature if (opts.smoothing == "always" and finite) else None
    smoothing_used = temperature is not None

    f = f0
    v = None
    trace: List[float] = []
    btrace: List[float] = []
    mtrace: List[float] = []
    gap = np.inf
    step = opts.damping
    streak = 0
    settled = False
    polished = False
    last_check = 0
    it = 0
    for it in range(1, opts.max_outer_iters + 1):
        v, mu = _best_response(model, f, opts, v0=v if opts.warm_start else None, temperature=temperature)
        f_new = _stationarize(model, mu, f, opts)
        gap = one_p_distance(f_new, f)
        trace.append(gap)
        btrace.append(boundary_mass(f, opts.boundary_width))
        mtrace.append(tail_moment(f, eta))
        annealed = temperature is None or temperature <= opts.logit_min_temperature
        if gap <= opts.fp_tol and annealed:
            settled = True
            break
        stalled = (
            temperature is None
            and finite
            and it > opts.cycle_window
            and it - last_check >= opts.cycle_window
            and min(trace[-opts.cycle_window:]) > 0.5 * trace[-opts.cycle_window - 1]
        )
        if stalled:
            last_check = it
            found = polish_mixed(model, f, opts) if opts.mixed_polish else None
            if found is not None:
                mu, f = found
                gap = one_p_distance(_stationarize(model, mu, f, opts), f)
                settled = polished = True
                v = policy_value(model, mu, f)
                break
            if opts.smoothing == "auto":
                temperature = opts.logit_temperature
                smoothing_used = True
        elif temperature is not None:
            temperature = max(temperature * opts.logit_anneal, opts.logit_min_temperature)
        if opts.adaptive_damping and len(trace) > 1:
            if trace[-1] > trace[-2]:
                step, streak = max(0.5 * step, opts.min_damping), 0
            else:
                streak += 1
                if streak >= 3:
                    step, streak = min(1.5 * step, opts.damping), 0
        mass = (1.0 - step) * f.mass + step * f_new.mass
        f = f.with_mass(mass / mass.sum())

    if not settled and finite and opts.mixed_polish:
        found = polish_mixed(model, f, opts)
        if found is not None:
            mu, f = found
            gap = one_p_distance(_stationarize(model, mu, f, opts), f)
            settled = polished = True
            v = policy_value(model, mu, f)
    if model.coupled and not settled:
        _, br = _best_response(model, f, opts, v0=v)
        mu = strategy_from_profile(model, f, br)
    bell, inv = se_residual(model, mu, f, opts.dp)
    return SolveReport(
        strategy=mu,
        population=f,
        bellman_residual=bell,
        invariance_residual=inv,
        fp_gap=float(gap),
        boundary_mass=boundary_mass(f, opts.boundary_width),
        tail_moment=tail_moment(f, eta),
        tail_eta=eta,
        drift=drift(model, mu, f),
        trace=trace,
        boundary_trace=btrace,
        moment_trace=mtrace,
        converged=bool(settled and bell <= opts.dp.tol),
        iterations=it,
        f0=f0,
        smoothing_used=smoothing_used,
        value=v,
        polished=polished,
    )


@dataclass(frozen=True)
class ConditionReport:
    family: str
    applicable: bool
    conditions: List[Condition]
    drift_check: Optional[Condition]
    passed: bool

    def to_dict(self):
        return {
            "family": self.family,
            "applicable": self.applicable,
            "passed": self.passed,
            "conditions": [c.to_dict() for c in self.conditions],
            "drift_check": None if self.drift_check is None else self.drift_check.to_dict(),
        }


def myopic_drift_check(model: ModelSpec) -> Condition:
    """Worst-case drift over the myopic action set must turn negative at large states."""
    actions = np.asarray(model.extras["myopic_actions"], dtype=float)
    states = model.space.states
    n = model.n_states
    table = np.stack([model.sup_drift(states, np.full(n, a)) for a in actions])
    worst = table.max(axis=0)
    k_bar, worst_beyond = negative_drift_level(model.space, worst)
    top = [float(row[-1, 0]) for row in table]
    values = {
        "myopic_actions": actions.tolist(),
        "k_bar": k_bar,
        "worst_drift_beyond_k_bar": worst_beyond,
        "drift_at_x_max": dict(zip((f"{a:g}" for a in actions), top)),
    }
    if "s_star" in model.extras:
        values["s_star"] = model.extras["s_star"]
    return Condition("negative drift over myopic actions", k_bar is not None, values)


def verify_conditions(model: ModelSpec) -> ConditionReport:
    """Closed-form sufficient conditions of the family plus the generic drift check."""
    if "conditions" not in model.extras or model.sup_drift is None:
        return ConditionReport(model.family, False, [], None, False)
    conditions = list(model.extras["conditions"])
    check = myopic_drift_check(model)
    passed = all(c.passed for c in conditions) and check.passed
    return ConditionReport(model.family, True, conditions, check, passed)
