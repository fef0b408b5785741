"""Industry-dynamics model families as ``ModelSpec`` constructors.

All families are scalar-state. The quality ladder, spillover,
learning-by-doing and consumer-learning models share the ladder dynamics:
with effective investment ``e`` a state moves up with probability
``(1-delta) alpha e / (1 + alpha e)``, down with probability
``delta / (1 + alpha e)``, and otherwise stays put.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np

from .core import (
    ConfigError,
    ContinuousBox,
    FinitePure,
    ModelSpec,
    PopulationState,
    TruncatedStateSpace,
    default_norm_exponent,
)

_LADDER_Z = np.array([[-1], [0], [1]])


@dataclass(frozen=True)
class Condition:
    """Outcome of one sufficient-condition check."""

    name: str
    passed: bool
    values: Dict[str, object] = field(default_factory=dict)

    def to_dict(self):
        return {"name": self.name, "passed": self.passed, "values": self.values}


def _check(name, symbol, value, lo=None, hi=None, lo_open=False, hi_open=False):
    label = f"{name} ({symbol})" if symbol else name
    if not isinstance(value, (int, float)) or isinstance(value, bool) or math.isnan(value):
        raise ConfigError(f"{label} must be a number, got {value!r}")
    bad_lo = lo is not None and (value <= lo if lo_open else value < lo)
    bad_hi = hi is not None and (value >= hi if hi_open else value > hi)
    if bad_lo or bad_hi:
        left = "(" if lo_open else "["
        right = ")" if hi_open else "]"
        lo_s = "-inf" if lo is None else f"{lo:g}"
        hi_s = "inf" if hi is None else f"{hi:g}"
        raise ConfigError(f"{label} must lie in {left}{lo_s}, {hi_s}{right}, got {value!r}")


def _check_int(name, value, lo):
    if not isinstance(value, int) or isinstance(value, bool) or value < lo:
        raise ConfigError(f"{name} must be an integer >= {lo}, got {value!r}")


def ladder_increments(e, alpha, delta):
    """Ladder kernel over increments ``(-1, 0, +1)`` for effective investment ``e``."""
    ae = alpha * np.asarray(e, dtype=float)
    up = (1.0 - delta) * ae / (1.0 + ae)
    down = delta / (1.0 + ae)
    return _LADDER_Z, np.stack([down, 1.0 - up - down, up], axis=1)


def ladder_drift(e, alpha, delta):
    ae = alpha * np.asarray(e, dtype=float)
    return ae / (1.0 + ae) - delta


def _common_ladder_checks(p):
    _check("alpha", "α", p.alpha, lo=0, lo_open=True)
    _check("delta", "δ", p.delta, lo=0, hi=1, lo_open=True, hi_open=True)
    _check("beta", "β", p.beta, lo=0, hi=1, hi_open=True)
    _check_int("x_max", p.x_max, 1)


# --------------------------------------------------------------------------
# quality ladder and spillovers


@dataclass(frozen=True)
class QualityLadderParams:
    theta1: float = 0.5
    c_tilde: float = 1.0
    d: float = 0.3
    alpha: float = 1.0
    delta: float = 0.2
    a_max: float = 10.0
    beta: float = 0.9
    x_max: int = 200
    resolution: float = 1e-3

    def __post_init__(self):
        _check("theta1", "θ₁", self.theta1, lo=0, lo_open=True)
        _check("c_tilde", "c̃", self.c_tilde, lo=0, lo_open=True)
        _check("d", None, self.d, lo=0, lo_open=True)
        _check("a_max", "ā", self.a_max, lo=0)
        _check("resolution", None, self.resolution, lo=0, hi=1, lo_open=True)
        _common_ladder_checks(self)


def _logit_payoff(p: QualityLadderParams):
    def payoff(states, a, f: PopulationState):
        y = f.space.states[:, 0]
        moment = float(f.state_marginal @ (y + 1.0) ** p.theta1)
        x = states[:, 0]
        return p.c_tilde * (x + 1.0) ** p.theta1 / moment - p.d * np.asarray(a, dtype=float)

    return payoff


def _ladder_spec(family, prm, payoff, increments, sup_drift, conditions, myopic, extras=None, **kw):
    space = TruncatedStateSpace(1, prm.x_max)
    spec_extras = {"conditions": conditions, "myopic_actions": np.asarray(myopic, dtype=float)}
    spec_extras.update(extras or {})
    return ModelSpec(
        family=family,
        space=space,
        beta=prm.beta,
        payoff=payoff,
        increments=increments,
        increment_bound=1,
        params=asdict(prm),
        sup_drift=sup_drift,
        extras=spec_extras,
        **kw,
    )


def quality_ladder(params: Optional[QualityLadderParams] = None, **kw) -> ModelSpec:
    """Quality-ladder oligopoly with logit monopolistic-competition profits."""
    p = params or QualityLadderParams(**kw)
    n = default_norm_exponent(p.theta1)

    def increments(states, a, f):
        return ladder_increments(a, p.alpha, p.delta)

    def sup_drift(states, a):
        return ladder_drift(a, p.alpha, p.delta)[:, None]

    conditions = [Condition("theta1 < 1", p.theta1 < 1, {"theta1": p.theta1})]
    return _ladder_spec(
        "quality_ladder",
        p,
        _logit_payoff(p),
        increments,
        sup_drift,
        conditions,
        [0.0],
        actions=ContinuousBox(0.0, p.a_max, p.resolution),
        growth_k=p.c_tilde + p.d * p.a_max,
        growth_n=n,
        p=n,
    )


@dataclass(frozen=True)
class SpilloverParams(QualityLadderParams):
    gamma: float = 0.1
    zeta: object = 1.0

    def __post_init__(self):
        super().__post_init__()
        _check("gamma", "γ", self.gamma, lo=0)
        if isinstance(self.zeta, (list, tuple)):
            if len(self.zeta) != self.x_max + 1:
                raise ConfigError(f"zeta (ζ) table needs x_max + 1 = {self.x_max + 1} entries, got {len(self.zeta)}")
            for z in self.zeta:
                _check("zeta", "ζ", z, lo=0)
            object.__setattr__(self, "zeta", tuple(float(z) for z in self.zeta))
        else:
            _check("zeta", "ζ", self.zeta, lo=0)

    def zeta_table(self) -> np.ndarray:
        if isinstance(self.zeta, tuple):
            return np.array(self.zeta)
        return np.full(self.x_max + 1, float(self.zeta))

    @property
    def gamma_threshold(self) -> float:
        sup = float(self.zeta_table().max())
        if sup == 0:
            return math.inf
        return self.delta / ((1.0 - self.delta) * self.alpha * sup)


def spillover_term(zeta: np.ndarray, f: PopulationState) -> np.ndarray:
    """``s(x, f) = sum_{y > x} f(y) zeta(y)`` for every state ``x``."""
    w = f.state_marginal * zeta
    return np.cumsum(w[::-1])[::-1] - w


def spillover_oligopoly(params: Optional[SpilloverParams] = None, **kw) -> ModelSpec:
    """Quality ladder whose up-probability uses ``a + gamma * s(x, f)``."""
    p = params or SpilloverParams(**kw)
    n = default_norm_exponent(p.theta1)
    zeta = p.zeta_table()
    sup_zeta = float(zeta.max())

    def effective(states, a, f):
        return np.asarray(a, dtype=float) + p.gamma * spillover_term(zeta, f)[states[:, 0]]

    def increments(states, a, f):
        return ladder_increments(effective(states, a, f), p.alpha, p.delta)

    def sup_drift(states, a):
        return ladder_drift(np.asarray(a, dtype=float) + p.gamma * sup_zeta, p.alpha, p.delta)[:, None]

    threshold = p.gamma_threshold
    conditions = [
        Condition("theta1 < 1", p.theta1 < 1, {"theta1": p.theta1}),
        Condition(
            "gamma < delta / ((1 - delta) alpha sup zeta)",
            p.gamma < threshold,
            {"gamma": p.gamma, "threshold": threshold, "sup_zeta": sup_zeta},
        ),
    ]
    return _ladder_spec(
        "spillover",
        p,
        _logit_payoff(p),
        increments,
        sup_drift,
        conditions,
        [0.0],
        extras={"effective_investment": effective},
        actions=ContinuousBox(0.0, p.a_max, p.resolution),
        growth_k=p.c_tilde + p.d * p.a_max,
        growth_n=n,
        p=n,
    )


# --------------------------------------------------------------------------
# learning by doing


@dataclass(frozen=True)
class LearningByDoingParams:
    s_max: int = 4
    demand: str = "linear"
    p0: float = 2.0
    slope: float = 1.0
    cost: str = "quadratic"
    c: float = 4.0
    alpha: float = 1.0
    delta: float = 0.2
    beta: float = 0.9
    x_max: int = 200

    def __post_init__(self):
        _check_int("s_max", self.s_max, 1)
        if self.demand not in ("linear", "hyperbolic"):
            raise ConfigError(f"demand must be 'linear' or 'hyperbolic', got {self.demand!r}")
        if self.cost not in ("quadratic", "linear"):
            raise ConfigError(f"cost must be 'quadratic' or 'linear', got {self.cost!r}")
        _check("p0", None, self.p0, lo=0, lo_open=True)
        _check("slope", None, self.slope, lo=0, lo_open=True)
        _check("c", None, self.c, lo=0, lo_open=True)
        _common_ladder_checks(self)

    def inverse_demand(self) -> Callable[[float], float]:
        if self.demand == "linear":
            return lambda q: max(0.0, self.p0 - self.slope * q)
        return lambda q: self.p0 / (1.0 + q)

    def cost_fn(self) -> Callable[[np.ndarray, np.ndarray], np.ndarray]:
        c = self.c
        if self.cost == "quadratic":
            return lambda x, s: s**2 / (1.0 + x) + s**2 / c
        return lambda x, s: s / (1.0 + x)


def check_cost_shape(cost, x_max: int, actions, tol: float = 1e-12) -> None:
    """Grid check: nonnegative; nonincreasing and convex in x; nondecreasing and
    convex in s; decreasing differences. Raises ``ConfigError`` naming the first
    violating (x, s) point."""
    x = np.arange(x_max + 1, dtype=float)[:, None]
    s = np.asarray(sorted(actions), dtype=float)[None, :]
    c = np.asarray(cost(x, s), dtype=float) * np.ones((x.size, s.size))

    def fail(what, ix, js):
        raise ConfigError(f"cost C(x, s) is not {what} at x={int(x[ix, 0])}, s={s[0, js]:g}")

    checks = [
        ("nonnegative", c < -tol),
        ("nonincreasing in x", np.diff(c, axis=0) > tol),
        ("convex in x", np.diff(c, 2, axis=0) < -tol),
        ("nondecreasing in s", np.diff(c, axis=1) < -tol),
        ("convex in s", np.diff(c, 2, axis=1) < -tol),
        ("of decreasing differences in (x, s)", np.diff(np.diff(c, axis=1), axis=0) > tol),
    ]
    for what, bad in checks:
        if bad.any():
            ix, js = np.argwhere(bad)[0]
            fail(what, ix, js)


def learning_by_doing(
    params: Optional[LearningByDoingParams] = None,
    cost: Optional[Callable] = None,
    inverse_demand: Optional[Callable[[float], float]] = None,
    **kw,
) -> ModelSpec:
    """Price-taking firms accumulating experience; coupled through output levels.

    ``cost`` and ``inverse_demand`` override the parametric forms.
    """
    p = params or LearningByDoingParams(**kw)
    cost = cost or p.cost_fn()
    demand = inverse_demand or p.inverse_demand()
    support = tuple(float(s) for s in range(p.s_max + 1))
    check_cost_shape(cost, p.x_max, support)
    s_arr = np.array(support)

    def payoff(states, a, f: PopulationState):
        aggregate = float(f.action_marginal @ np.asarray(f.actions))
        a = np.asarray(a, dtype=float)
        return a * demand(aggregate) - cost(states[:, 0].astype(float), a)

    def increments(states, a, f):
        return ladder_increments(a, p.alpha, p.delta)

    def sup_drift(states, a):
        return ladder_drift(a, p.alpha, p.delta)[:, None]

    limit_profit = s_arr * demand(0.0) - cost(float(p.x_max), s_arr)
    s_star = float(s_arr[int(np.argmax(limit_profit))])
    myopic = s_arr[s_arr <= s_star]
    growth_k = p.s_max * demand(0.0) + float(np.max(cost(0.0, s_arr)))
    return ModelSpec(
        family="learning_by_doing",
        space=TruncatedStateSpace(1, p.x_max),
        actions=FinitePure(support),
        beta=p.beta,
        payoff=payoff,
        increments=increments,
        increment_bound=1,
        growth_k=growth_k,
        growth_n=0,
        p=1,
        coupled=True,
        params=asdict(p),
        sup_drift=sup_drift,
        extras={"conditions": [], "myopic_actions": myopic, "s_star": s_star, "cost": cost, "inverse_demand": demand},
    )


# --------------------------------------------------------------------------
# supply chain


@dataclass(frozen=True)
class SupplyChainParams:
    bids: Tuple[float, ...] = (0.0, 1.0, 2.0, 3.0)
    quantity: float = 1.0
    reserve: float = 0.5
    price: float = 2.0
    holding: float = 0.1
    demand: Tuple[float, ...] = (0.25, 0.25, 0.25, 0.25)
    beta: float = 0.9
    x_max: int = 200

    def __post_init__(self):
        bids = tuple(float(b) for b in self.bids)
        demand = tuple(float(q) for q in self.demand)
        object.__setattr__(self, "bids", bids)
        object.__setattr__(self, "demand", demand)
        if 0.0 not in bids:
            raise ConfigError("bids (S) must include 0")
        for b in bids:
            _check("bids", "S", b, lo=0)
        _check("quantity", "Q", self.quantity, lo=0, lo_open=True)
        _check("reserve", "R", self.reserve, lo=0, lo_open=True)
        _check("price", "φ", self.price, lo=0)
        _check("holding", "h", self.holding, lo=0)
        _check("beta", "β", self.beta, lo=0, hi=1, hi_open=True)
        _check_int("x_max", self.x_max, 1)
        if not demand or any(q < 0 for q in demand) or abs(sum(demand) - 1.0) > 1e-12:
            raise ConfigError("demand must be a probability vector over {0, ..., d_max}")
        if self.demand_mean <= 0:
            raise ConfigError(f"demand mean must be positive, got {self.demand_mean}")

    @property
    def demand_mean(self) -> float:
        return float(np.dot(np.arange(len(self.demand)), self.demand))


def allocation(bid, f: PopulationState, quantity: float, reserve: float):
    """Proportional allocation ``s Q / (R + sum_s' s' k(s' | f))``."""
    aggregate = float(f.action_marginal @ np.asarray(f.actions))
    return np.asarray(bid, dtype=float) * quantity / (reserve + aggregate)


def round_half_up(v):
    return np.floor(np.asarray(v, dtype=float) + 0.5).astype(int)


def supply_chain(params: Optional[SupplyChainParams] = None, **kw) -> ModelSpec:
    """Inventory competition for a resource sold by proportional allocation.

    Allocations are rounded to the nearest integer (ties up) so that next
    inventory stays on the lattice.
    """
    p = params or SupplyChainParams(**kw)
    q = np.array(p.demand)
    d_max = q.size - 1
    r_max = int(round_half_up(max(p.bids) * p.quantity / p.reserve))
    z = np.arange(-d_max, r_max + 1)
    dvals = np.arange(d_max + 1)

    def expected_sales(x):
        return np.minimum(x[:, None], dvals[None, :]) @ q

    def _inc(states, r):
        x = states[:, 0]
        rows = np.arange(x.size)
        prob = np.zeros((x.size, z.size))
        for dd, qd in enumerate(q):
            if qd > 0:
                np.add.at(prob, (rows, r - np.minimum(x, dd) + d_max), qd)
        return z[:, None], prob

    def increments(states, a, f):
        return _inc(states, round_half_up(allocation(a, f, p.quantity, p.reserve)))

    def payoff(states, a, f):
        x = states[:, 0].astype(float)
        return p.price * expected_sales(states[:, 0]) - p.holding * x - np.asarray(a, dtype=float)

    def sup_drift(states, a):
        r = round_half_up(np.asarray(a, dtype=float) * p.quantity / p.reserve)
        return (r - expected_sales(states[:, 0]))[:, None].astype(float)

    conditions = [Condition("demand mean > 0", p.demand_mean > 0, {"demand_mean": p.demand_mean})]
    return ModelSpec(
        family="supply_chain",
        space=TruncatedStateSpace(1, p.x_max),
        actions=FinitePure(p.bids),
        beta=p.beta,
        payoff=payoff,
        increments=increments,
        increment_bound=r_max + d_max,
        growth_k=p.price * d_max + max(p.bids) + p.holding,
        growth_n=1,
        p=1,
        coupled=True,
        params=asdict(p),
        sup_drift=sup_drift,
        extras={"conditions": conditions, "myopic_actions": np.array([0.0])},
    )


# --------------------------------------------------------------------------
# consumer learning


@dataclass(frozen=True)
class ConsumerLearningParams:
    gamma: float = 1.0
    d: float = 1.5
    sigma2_low: float = 0.5
    sigma2_high: float = 1.0
    kappa: float = 1.0
    alpha: float = 1.0
    delta: float = 0.2
    a_max: float = 4.0
    beta: float = 0.9
    x_max: int = 200
    resolution: float = 1e-3

    def __post_init__(self):
        _check("gamma", "γ", self.gamma, lo=0, lo_open=True)
        _check("d", None, self.d, lo=0, lo_open=True)
        _check("sigma2_low", "σ_L²", self.sigma2_low, lo=0)
        _check("sigma2_high", "σ_H²", self.sigma2_high, lo=self.sigma2_low)
        _check("kappa", "κ_ω", self.kappa, lo=0)
        _check("a_max", "ā", self.a_max, lo=0)
        _check("resolution", None, self.resolution, lo=0, hi=1, lo_open=True)
        _common_ladder_checks(self)

    @property
    def c0(self) -> float:
        return self.delta / (self.alpha * (1.0 - self.delta))

    @property
    def d_threshold(self) -> float:
        return self.gamma * math.exp(-self.gamma * self.c0 + 0.5 * self.sigma2_high)


def consumer_learning(params: Optional[ConsumerLearningParams] = None, **kw) -> ModelSpec:
    """Social learning with effort; variance ``omega`` shrinks with own and population experience."""
    p = params or ConsumerLearningParams(**kw)

    def omega(x, f: PopulationState):
        mean = float(f.mean_state()[0])
        spread = p.sigma2_high - p.sigma2_low
        return p.sigma2_low + spread / (1.0 + np.asarray(x, dtype=float) + p.kappa * mean)

    def myopic_action(x, f):
        """Unconstrained maximizer of the one-period payoff."""
        return omega(x, f) / (2.0 * p.gamma) - math.log(p.d / p.gamma) / p.gamma

    def payoff(states, a, f):
        a = np.asarray(a, dtype=float)
        return 1.0 - np.exp(-p.gamma * a + 0.5 * omega(states[:, 0], f)) - p.d * a

    def increments(states, a, f):
        return ladder_increments(a, p.alpha, p.delta)

    def sup_drift(states, a):
        return ladder_drift(a, p.alpha, p.delta)[:, None]

    a_hi = p.sigma2_high / (2.0 * p.gamma) - math.log(p.d / p.gamma) / p.gamma
    a_hi = min(max(a_hi, 0.0), p.a_max)
    box = ContinuousBox(0.0, p.a_max, p.resolution)
    myopic = np.append(box.grid[box.grid < a_hi], a_hi)
    conditions = [
        Condition(
            "d >= gamma exp(-gamma c0 + sigma_H^2 / 2)",
            p.d >= p.d_threshold,
            {"d": p.d, "threshold": p.d_threshold, "c0": p.c0},
        )
    ]
    return ModelSpec(
        family="consumer_learning",
        space=TruncatedStateSpace(1, p.x_max),
        actions=box,
        beta=p.beta,
        payoff=payoff,
        increments=increments,
        increment_bound=1,
        growth_k=1.0 + math.exp(0.5 * p.sigma2_high) + p.d * p.a_max,
        growth_n=0,
        p=1,
        params=asdict(p),
        sup_drift=sup_drift,
        extras={
            "conditions": conditions,
            "myopic_actions": myopic,
            "omega": omega,
            "myopic_action": myopic_action,
        },
    )


FAMILIES = {
    "quality_ladder": (QualityLadderParams, quality_ladder),
    "spillover": (SpilloverParams, spillover_oligopoly),
    "learning_by_doing": (LearningByDoingParams, learning_by_doing),
    "supply_chain": (SupplyChainParams, supply_chain),
    "consumer_learning": (ConsumerLearningParams, consumer_learning),
}


def build_model(family: str, params: Optional[dict] = None) -> ModelSpec:
    """Construct a model family from a plain parameter mapping; unknown keys are rejected."""
    if family not in FAMILIES:
        raise ConfigError(f"unknown model family {family!r}; expected one of {sorted(FAMILIES)}")
    cls, ctor = FAMILIES[family]
    params = dict(params or {})
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(params) - known)
    if unknown:
        raise ConfigError(f"unknown parameter(s) for {family}: {', '.join(unknown)}")
    return ctor(cls(**params))


def param_names(family: str) -> List[str]:
    return [f.name for f in fields(FAMILIES[family][0])]
