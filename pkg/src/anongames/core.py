"""Shared domain types for anonymous stochastic games on truncated lattices.

States live in a finite box ``{0, ..., x_max}^d`` indexed lexicographically.
Population states are probability vectors over that box, or over the
product of the box with a finite pure-action set when players interact
through their actions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Mapping, Optional, Sequence, Tuple, Union

import numpy as np


class ConfigError(ValueError):
    """Invalid parameters or configuration."""


class ModelContractError(RuntimeError):
    """A model primitive returned something outside its declared contract."""


class NonConvergenceError(RuntimeError):
    """An iterative solver hit its iteration cap before meeting tolerance."""

    def __init__(self, message: str, last_residual: float, iterations: int):
        super().__init__(f"{message} (residual={last_residual:.3e} after {iterations} iterations)")
        self.last_residual = last_residual
        self.iterations = iterations


@dataclass(frozen=True)
class TruncatedStateSpace:
    """The box ``{0..x_max}^dim`` standing in for the nonnegative lattice."""

    dim: int
    x_max: int

    def __post_init__(self):
        if self.dim < 1:
            raise ConfigError(f"dim must be positive, got {self.dim}")
        # x_max = 0 gives the single-state space used by degenerate test games
        if self.x_max < 0:
            raise ConfigError(f"x_max must be nonnegative, got {self.x_max}")

    @property
    def shape(self) -> Tuple[int, ...]:
        return (self.x_max + 1,) * self.dim

    @property
    def size(self) -> int:
        return (self.x_max + 1) ** self.dim

    @cached_property
    def states(self) -> np.ndarray:
        """All states as an ``(size, dim)`` integer array in index order."""
        grids = np.indices(self.shape).reshape(self.dim, -1).T
        grids.flags.writeable = False
        return grids

    def index(self, x) -> int:
        x = np.atleast_1d(np.asarray(x, dtype=int))
        if x.shape != (self.dim,) or np.any(x < 0) or np.any(x > self.x_max):
            raise ConfigError(f"state {x.tolist()} outside the box [0, {self.x_max}]^{self.dim}")
        return int(np.ravel_multi_index(tuple(x), self.shape))

    def ravel(self, coords: np.ndarray) -> np.ndarray:
        """Indices of an ``(..., dim)`` array of in-box coordinates."""
        return np.ravel_multi_index(tuple(np.moveaxis(coords, -1, 0)), self.shape)

    def sup_norm(self) -> np.ndarray:
        return self.states.max(axis=1)

    def p_weights(self, p: int) -> np.ndarray:
        """``||x||_p^p`` for every state."""
        return (self.states.astype(float) ** p).sum(axis=1)


@dataclass(frozen=True, eq=False)
class PopulationState:
    """Probability mass over states, or over (state, pure action) pairs.

    For state-action profiles ``mass`` has shape ``(n_states, len(actions))``
    and ``actions`` holds the pure action values.
    """

    space: TruncatedStateSpace
    mass: np.ndarray
    p: int = 1
    actions: Optional[Tuple[float, ...]] = None

    def __post_init__(self):
        mass = np.array(self.mass, dtype=float)
        expected = (self.space.size,) if self.actions is None else (self.space.size, len(self.actions))
        if mass.shape != expected:
            raise ConfigError(f"mass has shape {mass.shape}, expected {expected}")
        if self.p < 1:
            raise ConfigError(f"norm exponent p must be a positive integer, got {self.p}")
        if np.any(mass < 0) or not np.all(np.isfinite(mass)):
            raise ConfigError("population masses must be finite and nonnegative")
        if abs(mass.sum() - 1.0) > 1e-12:
            raise ConfigError(f"population masses sum to {mass.sum()!r}, not 1")
        mass.flags.writeable = False
        object.__setattr__(self, "mass", mass)
        if self.actions is not None:
            object.__setattr__(self, "actions", tuple(float(s) for s in self.actions))

    @classmethod
    def from_weights(cls, space, weights, p=1, actions=None) -> "PopulationState":
        """Normalize nonnegative weights into a population state."""
        w = np.clip(np.asarray(weights, dtype=float), 0.0, None)
        total = w.sum()
        if total <= 0:
            raise ConfigError("weights must have positive total mass")
        return cls(space, w / total, p=p, actions=actions)

    @classmethod
    def point_mass(cls, space, x, p=1, actions=None, action_index=0) -> "PopulationState":
        if actions is None:
            mass = np.zeros(space.size)
            mass[space.index(x)] = 1.0
        else:
            mass = np.zeros((space.size, len(actions)))
            mass[space.index(x), action_index] = 1.0
        return cls(space, mass, p=p, actions=actions)

    @classmethod
    def uniform(cls, space, p=1) -> "PopulationState":
        return cls(space, np.full(space.size, 1.0 / space.size), p=p)

    @property
    def coupled(self) -> bool:
        return self.actions is not None

    @cached_property
    def state_marginal(self) -> np.ndarray:
        return self.mass if self.actions is None else self.mass.sum(axis=1)

    @cached_property
    def action_marginal(self) -> np.ndarray:
        if self.actions is None:
            raise ConfigError("population state carries no action profile")
        return self.mass.sum(axis=0)

    @cached_property
    def norm(self) -> float:
        """Cached 1-p norm."""
        return float(self.space.p_weights(self.p) @ self.state_marginal)

    def mean_state(self) -> np.ndarray:
        return self.state_marginal @ self.space.states

    def with_mass(self, mass) -> "PopulationState":
        return PopulationState(self.space, mass, p=self.p, actions=self.actions)


@dataclass(frozen=True)
class ContinuousBox:
    """Scalar action interval optimized on a uniform grid.

    ``resolution`` is the grid step as a fraction of the interval width.
    """

    lo: float
    hi: float
    resolution: float = 1e-3

    def __post_init__(self):
        if not self.lo <= self.hi:
            raise ConfigError(f"action box needs lo <= hi, got [{self.lo}, {self.hi}]")
        if not self.resolution > 0:
            raise ConfigError(f"grid resolution must be positive, got {self.resolution}")

    @property
    def grid(self) -> np.ndarray:
        if self.hi == self.lo:
            return np.array([float(self.lo)])
        n = int(round(1.0 / self.resolution)) + 1
        return np.linspace(self.lo, self.hi, max(n, 2))

    @property
    def step(self) -> float:
        g = self.grid
        return float(g[1] - g[0]) if g.size > 1 else 0.0

    def contains(self, a) -> np.ndarray:
        a = np.asarray(a, dtype=float)
        return (a >= self.lo - 1e-12) & (a <= self.hi + 1e-12)


@dataclass(frozen=True)
class FinitePure:
    """Finite set of pure scalar actions; strategies may mix over it."""

    values: Tuple[float, ...]

    def __post_init__(self):
        vals = tuple(float(v) for v in self.values)
        if not vals:
            raise ConfigError("finite action set must be nonempty")
        if len(set(vals)) != len(vals):
            raise ConfigError(f"finite action set has duplicates: {vals}")
        object.__setattr__(self, "values", vals)

    @property
    def grid(self) -> np.ndarray:
        return np.array(self.values)

    def contains(self, a) -> np.ndarray:
        return np.isin(np.asarray(a, dtype=float), self.grid)


ActionSet = Union[ContinuousBox, FinitePure]


@dataclass(frozen=True, eq=False)
class ObliviousStrategy:
    """Stationary per-state action rule.

    ``kind == "pure"``: ``table`` holds one action value per state.
    ``kind == "mixed"``: ``table`` has shape ``(n_states, len(support))`` with
    per-state probabilities over the pure actions in ``support``.
    """

    kind: str
    table: np.ndarray
    support: Optional[Tuple[float, ...]] = None

    def __post_init__(self):
        table = np.array(self.table, dtype=float)
        if self.kind == "pure":
            if table.ndim != 1:
                raise ConfigError("pure strategy table must be one-dimensional")
        elif self.kind == "mixed":
            if self.support is None or table.ndim != 2 or table.shape[1] != len(self.support):
                raise ConfigError("mixed strategy needs a (n_states, |S|) table and its support")
            if np.any(table < 0) or np.any(np.abs(table.sum(axis=1) - 1.0) > 1e-12):
                raise ConfigError("mixed strategy rows must be probability vectors")
            object.__setattr__(self, "support", tuple(float(s) for s in self.support))
        else:
            raise ConfigError(f"unknown strategy kind {self.kind!r}")
        table.flags.writeable = False
        object.__setattr__(self, "table", table)

    @classmethod
    def pure(cls, actions) -> "ObliviousStrategy":
        return cls("pure", np.asarray(actions, dtype=float))

    @classmethod
    def mixed(cls, probs, support) -> "ObliviousStrategy":
        return cls("mixed", probs, tuple(support))

    def as_mixed(self, support: Sequence[float]) -> "ObliviousStrategy":
        """Degenerate mixed form of a pure strategy over a finite support."""
        if self.kind == "mixed":
            return self
        support = np.asarray(support, dtype=float)
        lookup = {float(s): j for j, s in enumerate(support)}
        try:
            cols = np.array([lookup[float(a)] for a in self.table], dtype=int)
        except KeyError as exc:
            raise ConfigError(f"pure action {exc.args[0]} is not in the finite support") from None
        probs = np.zeros((self.table.size, support.size))
        probs[np.arange(self.table.size), cols] = 1.0
        return ObliviousStrategy.mixed(probs, support)

    def validate_for(self, actions) -> None:
        if self.kind == "pure":
            if not np.all(actions.contains(self.table)):
                raise ConfigError("pure strategy assigns actions outside the action set")
        elif not isinstance(actions, FinitePure) or not np.array_equal(self.support, actions.values):
            raise ConfigError("mixed strategy support must equal the model's finite action set")


PayoffFn = Callable[[np.ndarray, np.ndarray, PopulationState], np.ndarray]
IncrementFn = Callable[[np.ndarray, np.ndarray, PopulationState], Tuple[np.ndarray, np.ndarray]]


@dataclass(frozen=True, eq=False)
class ModelSpec:
    """A game definition on a truncated state space.

    ``payoff(states, a, f)`` and ``increments(states, a, f)`` are vectorized
    over rows: ``states`` is ``(n, dim)``, ``a`` is ``(n,)``. ``increments``
    returns the increment vectors ``z`` as ``(nz, dim)`` and their
    probabilities as ``(n, nz)``.
    """

    family: str
    space: TruncatedStateSpace
    actions: ActionSet
    beta: float
    payoff: PayoffFn
    increments: IncrementFn
    increment_bound: int
    growth_k: float
    growth_n: int
    p: int = 1
    coupled: bool = False
    params: Mapping[str, object] = field(default_factory=dict)
    sup_drift: Optional[Callable[[np.ndarray, np.ndarray], np.ndarray]] = None
    extras: Mapping[str, object] = field(default_factory=dict)

    def __post_init__(self):
        if not 0.0 <= self.beta < 1.0:
            raise ConfigError(f"discount beta must lie in [0, 1), got {self.beta}")
        if self.coupled and not isinstance(self.actions, FinitePure):
            raise ConfigError("coupling through actions requires a finite pure-action set")

    @property
    def n_states(self) -> int:
        return self.space.size

    def point_mass(self, x=0) -> PopulationState:
        actions = self.actions.values if self.coupled else None
        return PopulationState.point_mass(self.space, x, p=self.p, actions=actions)


def one_p_norm(f: PopulationState) -> float:
    """``sum_x ||x||_p^p f(x)`` over the state marginal."""
    return f.norm


def _check_same(f: PopulationState, g: PopulationState) -> None:
    if f.space != g.space or f.p != g.p or f.actions != g.actions:
        raise ConfigError("population states live on different supports or norm exponents")


def one_p_distance(f: PopulationState, g: PopulationState) -> float:
    """``sum ||x||_p^p |f - g|``, taken pointwise over the full support."""
    _check_same(f, g)
    w = f.space.p_weights(f.p)
    diff = np.abs(f.mass - g.mass)
    if diff.ndim == 2:
        diff = diff.sum(axis=1)
    return float(w @ diff)


def weighted_sup_distance(v1, v2, n: int, space: TruncatedStateSpace) -> float:
    """``max_x |v1(x) - v2(x)| / (1 + ||x||_inf)^n``."""
    w = (1.0 + space.sup_norm()) ** n
    return float(np.max(np.abs(np.asarray(v1) - np.asarray(v2)) / w))


def transition_rows(model: ModelSpec, x_idx, a, f: PopulationState):
    """Clamped next-state indices and probabilities for ``(state, action)`` rows.

    Returns ``(next_idx, prob)``, both ``(n, nz)``. Increments that leave the
    box land on the clamped coordinate.
    """
    x_idx = np.asarray(x_idx, dtype=int)
    a = np.asarray(a, dtype=float)
    states = model.space.states[x_idx]
    z, prob = model.increments(states, a, f)
    z = np.asarray(z, dtype=int).reshape(-1, model.space.dim)
    prob = np.asarray(prob, dtype=float)
    if prob.shape != (x_idx.size, z.shape[0]):
        raise ModelContractError(f"kernel returned probabilities of shape {prob.shape}")
    if np.any(np.abs(z) > model.increment_bound):
        raise ModelContractError(
            f"kernel increments exceed the declared bound M={model.increment_bound}"
        )
    if np.any(prob < -1e-15) or np.any(np.abs(prob.sum(axis=1) - 1.0) > 1e-12):
        raise ModelContractError("kernel rows are not probability distributions")
    nxt = np.clip(states[:, None, :] + z[None, :, :], 0, model.space.x_max)
    return model.space.ravel(nxt), np.clip(prob, 0.0, None)


def apply_truncated_kernel(model: ModelSpec, x, a, f: PopulationState) -> np.ndarray:
    """Next-state distribution from state ``x`` under action ``a``, as a dense vector."""
    idx, prob = transition_rows(model, [model.space.index(x)], [a], f)
    out = np.zeros(model.n_states)
    np.add.at(out, idx[0], prob[0])
    return out


def growth_bound(model: ModelSpec, states: np.ndarray) -> np.ndarray:
    return model.growth_k * (1.0 + states.max(axis=1)) ** model.growth_n


def check_model_contract(model: ModelSpec, populations: Sequence[PopulationState], n_actions: int = 11) -> None:
    """Probe kernel normalization, increment bounds and the payoff growth bound.

    Raises ``ModelContractError`` on the first violation.
    """
    grid = model.actions.grid
    if grid.size > n_actions:
        grid = grid[np.linspace(0, grid.size - 1, n_actions).round().astype(int)]
    x_idx = np.repeat(np.arange(model.n_states), grid.size)
    a = np.tile(grid, model.n_states)
    states = model.space.states[x_idx]
    for f in populations:
        transition_rows(model, x_idx, a, f)
        pay = np.asarray(model.payoff(states, a, f), dtype=float)
        if not np.all(np.isfinite(pay)):
            raise ModelContractError("payoff is not finite on probed points")
        if np.any(np.abs(pay) > growth_bound(model, states) * (1 + 1e-12)):
            raise ModelContractError("payoff violates the declared growth bound K(1+|x|)^n")


def default_norm_exponent(theta: float) -> int:
    return max(1, math.ceil(theta))
