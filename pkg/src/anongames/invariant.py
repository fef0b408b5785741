"""Invariant distributions of strategy-induced chains, plus drift diagnostics."""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core import (
    ConfigError,
    ModelSpec,
    NonConvergenceError,
    ObliviousStrategy,
    PopulationState,
    TruncatedStateSpace,
    transition_rows,
)


_SQUARING_MAX_STATES = 5000
_SQUARING_STEPS = 64


class MultipleRecurrentClassesWarning(RuntimeWarning):
    """The chain has more than one invariant distribution."""


@dataclass(frozen=True, eq=False)
class InducedChain:
    """Row-stochastic transition matrix on a truncated state space."""

    space: TruncatedStateSpace
    matrix: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=float)
        n = self.space.size
        if m.shape != (n, n):
            raise ConfigError(f"transition matrix has shape {m.shape}, expected {(n, n)}")
        if np.any(m < 0) or np.any(np.abs(m.sum(axis=1) - 1.0) > 1e-12):
            raise ConfigError("transition matrix rows must be probability vectors")
        m.flags.writeable = False
        object.__setattr__(self, "matrix", m)


@dataclass(frozen=True)
class InvariantOptions:
    method: str = "power"
    tol: float = 1e-12
    max_iters: int = 20_000

    def __post_init__(self):
        if self.method not in ("power", "direct"):
            raise ValueError(f"unknown invariant method {self.method!r}")
        if not self.tol > 0 or self.max_iters < 1:
            raise ValueError("invariant options need tol > 0 and max_iters >= 1")


def induced_chain(model: ModelSpec, mu: ObliviousStrategy, f: PopulationState) -> InducedChain:
    """Chain ``x' ~ P(. | x, mu(x), f)``; mixed strategies average the pure kernels."""
    n = model.n_states
    x_idx = np.arange(n)
    matrix = np.zeros((n, n))
    if mu.kind == "pure":
        branches = [(mu.table, np.ones(n))]
    else:
        branches = [(np.full(n, s), mu.table[:, j]) for j, s in enumerate(mu.support)]
    for a, w in branches:
        if not np.any(w):
            continue
        nxt, prob = transition_rows(model, x_idx, a, f)
        np.add.at(matrix, (np.repeat(x_idx, nxt.shape[1]), nxt.ravel()), (w[:, None] * prob).ravel())
    # rows were assembled from normalized pieces; remove accumulated rounding
    matrix /= matrix.sum(axis=1, keepdims=True)
    return InducedChain(model.space, matrix)


def _power(chain: InducedChain, opts: InvariantOptions) -> np.ndarray:
    p = chain.matrix
    f = np.full(chain.space.size, 1.0 / chain.space.size)
    residual = np.inf
    for _ in range(opts.max_iters):
        g = f @ p
        residual = float(np.abs(g - f).sum())
        f = g / g.sum()
        if residual <= opts.tol:
            return f
    if chain.space.size <= _SQUARING_MAX_STATES:
        # same iterate sequence, subsampled at powers of two
        q = p
        for _ in range(_SQUARING_STEPS):
            f = f @ q
            f /= f.sum()
            g = f @ p
            residual = float(np.abs(g - f).sum())
            if residual <= opts.tol:
                return g / g.sum()
            q = q @ q
            q /= q.sum(axis=1, keepdims=True)
    raise NonConvergenceError("power iteration did not converge", residual, opts.max_iters)


def _direct(chain: InducedChain):
    """Least-squares solve of ``(P^T - I) f = 0`` stacked with ``sum f = 1``.

    Returns ``None`` when the system is rank deficient (several recurrent classes).
    """
    n = chain.space.size
    a = np.vstack([chain.matrix.T - np.eye(n), np.ones((1, n))])
    b = np.zeros(n + 1)
    b[-1] = 1.0
    sol, _, rank, _ = np.linalg.lstsq(a, b, rcond=None)
    if rank < n:
        return None
    sol = np.clip(sol, 0.0, None)
    return sol / sol.sum()


def invariant_distribution(
    chain: InducedChain, opts: Optional[InvariantOptions] = None, p: int = 1
) -> PopulationState:
    """An invariant distribution of ``chain``.

    Power iteration starts from the uniform distribution, which fixes the
    selection when the chain has several invariant distributions. The direct
    method falls back to that power-iteration limit, with a warning, when the
    linear system does not determine a unique solution. Power iteration that
    exhausts ``max_iters`` on a slowly mixing chain falls back to the direct
    solve when that solution is unique.
    """
    opts = opts or InvariantOptions()
    if opts.method == "direct":
        mass = _direct(chain)
        if mass is None:
            warnings.warn(
                "chain has multiple recurrent classes; returning the power-iteration limit "
                "from the uniform start",
                MultipleRecurrentClassesWarning,
                stacklevel=2,
            )
            mass = _power(chain, opts)
    else:
        try:
            mass = _power(chain, opts)
        except NonConvergenceError:
            # slow mixing (nearly absorbing regions) rather than non-uniqueness
            mass = _direct(chain)
            if mass is None:
                raise
    return PopulationState(chain.space, mass, p=p)


def invariance_residual(chain: InducedChain, f: PopulationState) -> float:
    g = f.state_marginal
    return float(np.abs(g @ chain.matrix - g).sum())


def invariant_state_action(
    model: ModelSpec,
    mu: ObliviousStrategy,
    f: PopulationState,
    opts: Optional[InvariantOptions] = None,
) -> PopulationState:
    """State-action profile ``f'(x, s) = g(x) mu(x)(s)`` with ``g`` invariant for the mixed kernel."""
    if not model.coupled:
        raise ConfigError("state-action invariant distributions need a model coupled through actions")
    if mu.kind != "mixed":
        mu = mu.as_mixed(model.actions.values)
    g = invariant_distribution(induced_chain(model, mu, f), opts, p=model.p).mass
    return PopulationState(model.space, g[:, None] * mu.table, p=model.p, actions=mu.support)


@dataclass(frozen=True, eq=False)
class DriftReport:
    """Expected untruncated increments per state and coordinate.

    ``k_bar`` is the smallest level beyond which every coordinate drifts
    strictly downward, or ``None`` if no such level exists in the box.
    """

    drift: np.ndarray
    k_bar: Optional[int]
    worst_beyond: Optional[float]

    def to_dict(self):
        return {
            "k_bar": self.k_bar,
            "worst_beyond": self.worst_beyond,
            "drift": self.drift.tolist(),
        }


def negative_drift_level(space: TruncatedStateSpace, drift: np.ndarray):
    """Smallest ``K`` with ``drift[x, l] < 0`` whenever ``x_l >= K``, and the max drift there."""
    states = space.states
    k_bar = 0
    for ell in range(space.dim):
        bad = states[drift[:, ell] >= 0, ell]
        if bad.size:
            k_bar = max(k_bar, int(bad.max()) + 1)
    if k_bar > space.x_max:
        return None, None
    worst = max(float(drift[states[:, ell] >= k_bar, ell].max()) for ell in range(space.dim))
    return k_bar, worst


def expected_increments(model: ModelSpec, mu: ObliviousStrategy, f: PopulationState) -> np.ndarray:
    states = model.space.states
    n = model.n_states
    if mu.kind == "pure":
        branches = [(mu.table, np.ones(n))]
    else:
        branches = [(np.full(n, s), mu.table[:, j]) for j, s in enumerate(mu.support)]
    out = np.zeros((n, model.space.dim))
    for a, w in branches:
        z, prob = model.increments(states, a, f)
        out += w[:, None] * (np.asarray(prob) @ np.asarray(z, dtype=float).reshape(-1, model.space.dim))
    return out


def drift(model: ModelSpec, mu: ObliviousStrategy, f: PopulationState) -> DriftReport:
    """Pre-truncation drift of each coordinate under ``mu`` against ``f``."""
    d = expected_increments(model, mu, f)
    k_bar, worst = negative_drift_level(model.space, d)
    return DriftReport(d, k_bar, worst)


@dataclass(frozen=True)
class FosterLyapunovResult:
    holds: bool
    witness: Optional[tuple]
    threshold: Optional[int]
    k_bar: int


def foster_lyapunov_check(chain: InducedChain, k_bar: int) -> FosterLyapunovResult:
    """Check ``E[U(x') | x] - U(x) <= -1`` for ``U(x) = sum_l x_l^2`` beyond ``k_bar``.

    ``threshold`` is the smallest level for which the inequality holds at all
    states with larger sup norm (``None`` if it fails at the top of the box).
    The check fails when no state lies beyond ``k_bar``.
    """
    states = chain.space.states
    u = (states.astype(float) ** 2).sum(axis=1)
    excess = chain.matrix @ u - u
    level = chain.space.sup_norm()
    violating = np.flatnonzero((level > k_bar) & (excess > -1.0))
    beyond = np.any(level > k_bar)
    bad_levels = level[excess > -1.0]
    threshold = int(bad_levels.max()) if bad_levels.size else -1
    if threshold >= chain.space.x_max:
        threshold = None
    witness = tuple(int(c) for c in states[violating[0]]) if violating.size else None
    return FosterLyapunovResult(bool(beyond and violating.size == 0), witness, threshold, k_bar)


def tail_moment(f: PopulationState, eta: int) -> float:
    """``sum_x ||x||_eta^eta f(x)`` on the state marginal."""
    return float(f.space.p_weights(eta) @ f.state_marginal)
