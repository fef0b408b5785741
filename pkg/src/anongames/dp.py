"""Single-agent oblivious dynamic program against a fixed population state."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from .core import (
    ContinuousBox,
    ModelContractError,
    ModelSpec,
    NonConvergenceError,
    ObliviousStrategy,
    PopulationState,
    transition_rows,
    weighted_sup_distance,
)
from .invariant import induced_chain

_GOLDEN = (np.sqrt(5.0) - 1.0) / 2.0


@dataclass(frozen=True)
class DpSolveOptions:
    tol: float = 1e-11
    max_iters: int = 20_000
    refine: bool = True
    refine_method: str = "slope"
    refine_iters: int = 45
    policy_sweeps: int = 20
    tie_break: str = "lowest"

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError(f"tol must be positive, got {self.tol}")
        if self.max_iters < 1:
            raise ValueError(f"max_iters must be at least 1, got {self.max_iters}")
        if self.refine_method not in ("slope", "golden"):
            raise ValueError(f"unknown refine_method {self.refine_method!r}")
        if self.policy_sweeps < 0:
            raise ValueError(f"policy_sweeps must be nonnegative, got {self.policy_sweeps}")
        if self.tie_break != "lowest":
            raise ValueError(f"unsupported tie_break {self.tie_break!r}")


class BellmanStage:
    """Payoffs and clamped transitions on the action grid, fixed for one ``f``.

    Precomputing these once per population state makes each Bellman
    application a gather plus a max.
    """

    def __init__(self, model: ModelSpec, f: PopulationState, opts: Optional[DpSolveOptions] = None):
        self.model = model
        self.f = f
        self.opts = opts or DpSolveOptions()
        self.grid = model.actions.grid
        n, k = model.n_states, self.grid.size
        x_idx = np.repeat(np.arange(n), k)
        a = np.tile(self.grid, n)
        pay = np.asarray(model.payoff(model.space.states[x_idx], a, f), dtype=float)
        if not np.all(np.isfinite(pay)):
            raise ModelContractError("payoff is not finite on the action grid")
        self.rewards = pay.reshape(n, k)
        nxt, prob = transition_rows(model, x_idx, a, f)
        # increment-major layout: one contiguous (n, k) slab per increment
        self.next_idx = np.ascontiguousarray(nxt.T.reshape(-1, n, k))
        self.prob = np.ascontiguousarray(prob.T.reshape(-1, n, k))
        self.refine = self.opts.refine and isinstance(model.actions, ContinuousBox) and k > 1

    def q_values(self, v: np.ndarray) -> np.ndarray:
        """Bellman right-hand side for every (state, grid action)."""
        cont = np.zeros_like(self.rewards)
        for prob, nxt in zip(self.prob, self.next_idx):
            cont += prob * v[nxt]
        return self.rewards + self.model.beta * cont

    def _rhs(self, v: np.ndarray, a: np.ndarray) -> np.ndarray:
        x_idx = np.arange(self.model.n_states)
        pay = np.asarray(self.model.payoff(self.model.space.states, a, self.f), dtype=float)
        if not np.all(np.isfinite(pay)):
            raise ModelContractError("payoff is not finite at a refined action")
        nxt, prob = transition_rows(self.model, x_idx, a, self.f)
        # centred on V(x) so comparisons near the optimum lose less to rounding
        return pay + self.model.beta * (prob * (v[nxt] - v[:, None])).sum(axis=1)

    def _slope(self, v, a, h):
        box = self.model.actions
        lo = np.maximum(a - h, box.lo)
        hi = np.minimum(a + h, box.hi)
        return (self._rhs(v, hi) - self._rhs(v, lo)) / (hi - lo)

    def _bisect(self, v, lo, hi):
        """Root of the finite-difference slope of the RHS on per-state brackets.

        Bisection on the slope sign has an error linear in rounding noise,
        unlike comparison-based searches, and moves continuously with ``v``.
        Brackets whose slope does not change sign return the endpoint it points to.
        """
        h = 1e-3 * (self.grid[1] - self.grid[0])
        left = self._slope(v, lo, h) <= 0
        right = self._slope(v, hi, h) >= 0
        a, b = lo, hi
        for _ in range(self.opts.refine_iters):
            mid = 0.5 * (a + b)
            up = self._slope(v, mid, h) > 0
            a = np.where(up, mid, a)
            b = np.where(up, b, mid)
        best = np.where(left, lo, np.where(right, hi, 0.5 * (a + b)))
        return best, self._rhs(v, best)

    def _golden(self, v, lo, hi):
        """Comparison-only golden-section search; needs continuity alone but
        stalls near ``sqrt(eps)`` relative accuracy in the action."""
        c = hi - _GOLDEN * (hi - lo)
        d = lo + _GOLDEN * (hi - lo)
        fc, fd = self._rhs(v, c), self._rhs(v, d)
        for _ in range(self.opts.refine_iters):
            left = fc >= fd
            hi = np.where(left, d, hi)
            lo = np.where(left, lo, c)
            new_c = hi - _GOLDEN * (hi - lo)
            new_d = lo + _GOLDEN * (hi - lo)
            c, d = np.where(left, new_c, d), np.where(left, c, new_d)
            fc, fd = self._rhs(v, c), self._rhs(v, d)
        return np.where(fc >= fd, c, d), np.maximum(fc, fd)

    def evaluate(self, actions: np.ndarray, v: np.ndarray, sweeps: int) -> np.ndarray:
        """``sweeps`` applications of the fixed-policy operator for ``actions``."""
        x_idx = np.arange(self.model.n_states)
        pay = np.asarray(self.model.payoff(self.model.space.states, actions, self.f), dtype=float)
        nxt, prob = transition_rows(self.model, x_idx, actions, self.f)
        for _ in range(sweeps):
            v = pay + self.model.beta * (prob * v[nxt]).sum(axis=1)
        return v

    def apply(self, v: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Return ``(T_f v, maximizing actions)``."""
        q = self.q_values(v)
        qmax = q.max(axis=1)
        # exact ties (up to rounding) go to the lowest action index
        eps = 1e-12 * np.maximum(1.0, np.abs(qmax))
        k_best = np.argmax(q >= (qmax - eps)[:, None], axis=1)
        actions = self.grid[k_best]
        tv = qmax
        if self.refine:
            g = self.grid
            lo = g[np.maximum(k_best - 1, 0)]
            hi = g[np.minimum(k_best + 1, g.size - 1)]
            search = self._bisect if self.opts.refine_method == "slope" else self._golden
            a_ref, val_ref = search(v, lo, hi)
            val_ref = val_ref + self.model.beta * v
            # a hard switch between grid and refined actions makes the policy jump
            keep = val_ref >= qmax - eps
            actions = np.where(keep, a_ref, actions)
            tv = np.where(keep, np.maximum(val_ref, qmax), qmax)
        return tv, actions


def bellman_apply(model: ModelSpec, f: PopulationState, v, opts: Optional[DpSolveOptions] = None) -> np.ndarray:
    """One application of ``T_f`` on the truncated space."""
    return BellmanStage(model, f, opts).apply(np.asarray(v, dtype=float))[0]


def bellman_residual(model: ModelSpec, f: PopulationState, v, opts: Optional[DpSolveOptions] = None) -> float:
    v = np.asarray(v, dtype=float)
    return weighted_sup_distance(v, bellman_apply(model, f, v, opts), model.growth_n, model.space)


def solve_value(
    model: ModelSpec,
    f: PopulationState,
    opts: Optional[DpSolveOptions] = None,
    v0: Optional[np.ndarray] = None,
    stage: Optional[BellmanStage] = None,
) -> Tuple[np.ndarray, ObliviousStrategy]:
    """Value iteration to the fixed point of ``T_f``.

    Starts from zero unless ``v0`` is given. Stops once the weighted sup
    residual ``||T_f V - V||`` is within ``opts.tol`` and returns that ``V``
    together with the greedy pure strategy. Between Bellman applications,
    ``opts.policy_sweeps`` cheap evaluations of the current greedy policy
    speed up convergence without changing the fixed point.
    """
    opts = opts or DpSolveOptions()
    stage = stage or BellmanStage(model, f, opts)
    v = np.zeros(model.n_states) if v0 is None else np.array(v0, dtype=float)
    weight = (1.0 + model.space.sup_norm()) ** model.growth_n
    residual = np.inf
    for _ in range(opts.max_iters):
        tv, actions = stage.apply(v)
        residual = float(np.max(np.abs(tv - v) / weight))
        if residual <= opts.tol:
            return v, ObliviousStrategy.pure(actions)
        v = stage.evaluate(actions, tv, opts.policy_sweeps) if opts.policy_sweeps else tv
    raise NonConvergenceError("value iteration did not converge", residual, opts.max_iters)


def expected_payoff(model: ModelSpec, mu: ObliviousStrategy, f: PopulationState) -> np.ndarray:
    """Per-state payoff under ``mu``; mixed strategies average over pure actions."""
    states = model.space.states
    if mu.kind == "pure":
        return np.asarray(model.payoff(states, mu.table, f), dtype=float)
    n = model.n_states
    out = np.zeros(n)
    for j, s in enumerate(mu.support):
        w = mu.table[:, j]
        if np.any(w):
            out += w * np.asarray(model.payoff(states, np.full(n, s), f), dtype=float)
    return out


def policy_value(model: ModelSpec, mu: ObliviousStrategy, f: PopulationState) -> np.ndarray:
    """Exact discounted value of following ``mu`` against ``f``: solves ``(I - beta P) V = r``."""
    matrix = induced_chain(model, mu, f).matrix
    reward = expected_payoff(model, mu, f)
    return np.linalg.solve(np.eye(model.n_states) - model.beta * matrix, reward)


def residual_trace(model: ModelSpec, f: PopulationState, steps: int, opts: Optional[DpSolveOptions] = None) -> np.ndarray:
    """Weighted-sup residuals ``||T^{j+1} 0 - T^j 0||`` for ``j < steps``.

    Ratios of entries ``k`` apart give an empirical k-stage contraction factor.
    """
    stage = BellmanStage(model, f, opts)
    v = np.zeros(model.n_states)
    out = np.empty(steps)
    for j in range(steps):
        tv, _ = stage.apply(v)
        out[j] = weighted_sup_distance(tv, v, model.growth_n, model.space)
        v = tv
    return out
