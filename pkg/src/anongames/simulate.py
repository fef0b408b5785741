"""Finite-m Monte Carlo of players following oblivious strategies.

Random streams: replication ``r`` uses the seed ``seed + r``; player ``j``
in that replication draws from ``PCG64(SeedSequence(seed + r, spawn_key=(j,)))``.
Each player's stream is consumed in a fixed order (initial state, then an
action draw and a transition draw per period), so adding players never
changes the draws of existing ones, and two runs that differ only in the
tagged player's strategy share every random number.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import IO, Dict, List, Optional

import numpy as np

from .core import ConfigError, ModelSpec, ObliviousStrategy, PopulationState, transition_rows
from .dp import expected_payoff
from .invariant import induced_chain, tail_moment

CSV_COLUMNS = ("t", "m", "seed", "distance_1p", "tagged_state", "mean_state")


@dataclass(frozen=True)
class SimConfig:
    m: int
    T: int
    seed: int = 0
    replications: int = 1
    tagged: int = 0

    def __post_init__(self):
        if self.m < 2:
            raise ConfigError(f"m must be at least 2, got {self.m}")
        if self.T < 1:
            raise ConfigError(f"T must be at least 1, got {self.T}")
        if self.replications < 1:
            raise ConfigError(f"replications must be at least 1, got {self.replications}")
        if not 0 <= self.tagged < self.m:
            raise ConfigError(f"tagged player {self.tagged} outside 0..{self.m - 1}")
        if not 0 <= self.seed < 2**64:
            raise ConfigError(f"seed must be an unsigned 64-bit integer, got {self.seed}")


@dataclass(eq=False)
class SimTrace:
    """Per-replication, per-period record of the tagged player's view.

    ``populations[r, t]`` is the empirical profile of the other ``m - 1``
    players; ``payoffs[r, j]`` is player ``j``'s discounted payoff over
    periods ``0..T-1``.
    """

    m: int
    T: int
    seeds: np.ndarray
    populations: np.ndarray
    distances: np.ndarray
    tagged_states: np.ndarray
    mean_states: np.ndarray
    payoffs: np.ndarray
    tagged: int = 0

    def rows(self):
        for r, seed in enumerate(self.seeds):
            for t in range(self.T + 1):
                yield (t, self.m, int(seed), float(self.distances[r, t]),
                       int(self.tagged_states[r, t]), float(self.mean_states[r, t]))

    def write_csv(self, fh: IO[str], header: bool = True) -> None:
        writer = csv.writer(fh, lineterminator="\n")
        if header:
            writer.writerow(CSV_COLUMNS)
        writer.writerows(self.rows())


def player_uniforms(rep_seed: int, m: int, T: int) -> np.ndarray:
    """``(m, 1 + 2T)`` uniforms: column 0 for the initial state, then (action, transition) per period."""
    out = np.empty((m, 1 + 2 * T))
    for j in range(m):
        gen = np.random.Generator(np.random.PCG64(np.random.SeedSequence(rep_seed, spawn_key=(j,))))
        out[j] = gen.random(1 + 2 * T)
    return out


def _inverse_cdf(cdf: np.ndarray, u: np.ndarray) -> np.ndarray:
    idx = np.searchsorted(cdf, u * cdf[-1], side="right")
    return np.minimum(idx, cdf.size - 1)


def _choose(mu: ObliviousStrategy, x: np.ndarray, u: np.ndarray, support):
    """Action values and action-column indices (``-1`` when not on a finite support)."""
    if mu.kind == "pure":
        a = mu.table[x]
        if support is None:
            return a, np.full(x.size, -1)
        lookup = {s: j for j, s in enumerate(support)}
        return a, np.array([lookup[float(v)] for v in a], dtype=int)
    cdf = np.cumsum(mu.table[x], axis=1)
    cols = np.array([_inverse_cdf(row, np.array([uj]))[0] for row, uj in zip(cdf, u)], dtype=int)
    return np.asarray(mu.support)[cols], cols


def _run(model: ModelSpec, mu, mu_tagged, f: PopulationState, uniforms: np.ndarray, tagged: int):
    m, width = uniforms.shape
    T = (width - 1) // 2
    n = model.n_states
    support = model.actions.values if model.coupled else None
    n_act = len(support) if support is not None else 1
    weights = model.space.p_weights(model.p)
    coords = model.space.states

    x = _inverse_cdf(np.cumsum(f.state_marginal), uniforms[:, 0])
    shape = (T + 1, n, n_act) if model.coupled else (T + 1, n)
    pops = np.zeros(shape)
    dist = np.zeros(T + 1)
    tagged_x = np.zeros(T + 1, dtype=int)
    means = np.zeros(T + 1)
    disc = np.zeros(m)
    target = f.mass

    for t in range(T + 1):
        u_act = uniforms[:, 1 + 2 * t] if t < T else np.zeros(m)
        a, cols = _choose(mu, x, u_act, support)
        a_tag, col_tag = _choose(mu_tagged, x[tagged:tagged + 1], u_act[tagged:tagged + 1], support)
        a[tagged], cols[tagged] = a_tag[0], col_tag[0]

        key = x * n_act + np.maximum(cols, 0) if model.coupled else x
        counts = np.bincount(key, minlength=n * n_act).astype(float)
        own = np.zeros_like(counts)
        own[key[tagged]] = 1.0
        view = ((counts - own) / (m - 1)).reshape(shape[1:])
        pops[t] = view
        diff = np.abs(view - target)
        dist[t] = float(weights @ (diff.sum(axis=1) if model.coupled else diff))
        tagged_x[t] = x[tagged]
        marginal = view.sum(axis=1) if model.coupled else view
        means[t] = float(marginal @ coords.sum(axis=1))
        if t == T:
            break

        u_tr = uniforms[:, 2 + 2 * t]
        new_x = np.empty_like(x)
        groups: Dict[tuple, List[int]] = {}
        for j in range(m):
            groups.setdefault((int(key[j]), float(a[j])), []).append(j)
        for (k, action), members in sorted(groups.items()):
            own = np.zeros_like(counts)
            own[k] = 1.0
            mass = ((counts - own) / (m - 1)).reshape(shape[1:])
            f_minus = PopulationState(model.space, mass / mass.sum(), p=model.p, actions=support)
            xi = x[members[0]]
            pay = float(model.payoff(coords[[xi]], np.array([action]), f_minus)[0])
            nxt, prob = transition_rows(model, [xi], [action], f_minus)
            cdf = np.cumsum(prob[0])
            idx = np.asarray(members)
            disc[idx] += model.beta**t * pay
            new_x[idx] = nxt[0][_inverse_cdf(cdf, u_tr[idx])]
        x = new_x
    return pops, dist, tagged_x, means, disc, x


def simulate_population(
    model: ModelSpec,
    mu: ObliviousStrategy,
    f: PopulationState,
    cfg: SimConfig,
    tagged_strategy: Optional[ObliviousStrategy] = None,
) -> SimTrace:
    """Simulate ``cfg.m`` players for ``cfg.T`` periods per replication.

    Initial states are drawn independently from ``f``. Every player
    transitions against the empirical profile of the others at the same
    period. The tagged player follows ``tagged_strategy`` when given.
    """
    mu_tag = tagged_strategy or mu
    out = []
    seeds = np.array([cfg.seed + r for r in range(cfg.replications)], dtype=np.uint64)
    for seed in seeds:
        u = player_uniforms(int(seed), cfg.m, cfg.T)
        out.append(_run(model, mu, mu_tag, f, u, cfg.tagged))
    pops, dist, tx, means, disc = (np.stack(z) for z in list(zip(*out))[:5])
    return SimTrace(cfg.m, cfg.T, seeds, pops, dist, tx, means, disc, cfg.tagged)


@dataclass(frozen=True)
class GapStats:
    """Paired estimate of the tagged player's gain from deviating.

    Two estimators share the same simulated populations. The pathwise one
    (``pathwise_*``) differences the tagged player's realized discounted
    payoffs. The conditional one (``mean``, ``stderr``, ``per_replication``)
    integrates the tagged player's own randomness exactly: given the
    realized profile of the others at each period, its state distribution
    starts at ``f`` and is pushed through the time-varying kernel. What
    remains in the conditional gap is finite-population noise, which
    vanishes as ``m`` grows.

    With a continuation value both add ``beta^T V(x_T)``, valuing a
    deviation for ``T`` periods followed by reversion. ``raw`` holds the
    pathwise horizon-truncated sums and ``tail_bound`` bounds what
    truncation can leave out. The estimate covers one supplied deviation
    only, so it lower-bounds the best unilateral gain.
    """

    m: int
    mean: float
    stderr: float
    per_replication: np.ndarray
    pathwise_mean: float
    pathwise_stderr: float
    pathwise_per_replication: np.ndarray
    tail_bound: float
    raw_mean: float
    raw_stderr: float
    continuation: bool

    def to_dict(self):
        return {
            "m": self.m,
            "mean": self.mean,
            "stderr": self.stderr,
            "continuation": self.continuation,
            "pathwise_mean": self.pathwise_mean,
            "pathwise_stderr": self.pathwise_stderr,
            "raw_mean": self.raw_mean,
            "raw_stderr": self.raw_stderr,
            "tail_bound": self.tail_bound,
            "per_replication": self.per_replication.tolist(),
            "pathwise_per_replication": self.pathwise_per_replication.tolist(),
        }


def _mean_se(x: np.ndarray):
    se = float(x.std(ddof=1) / np.sqrt(x.size)) if x.size > 1 else 0.0
    return float(x.mean()), se


def conditional_value(
    model: ModelSpec,
    mu: ObliviousStrategy,
    start: np.ndarray,
    profiles: np.ndarray,
    continuation: Optional[np.ndarray] = None,
) -> float:
    """Expected discounted payoff of ``mu`` from the state distribution
    ``start`` when the others' profile in period ``t`` is ``profiles[t]``."""
    support = model.actions.values if model.coupled else None
    p = np.asarray(start, dtype=float)
    total = 0.0
    T = profiles.shape[0] - 1
    for t in range(T):
        view = profiles[t]
        f_t = PopulationState(model.space, view / view.sum(), p=model.p, actions=support)
        total += model.beta**t * float(p @ expected_payoff(model, mu, f_t))
        p = p @ induced_chain(model, mu, f_t).matrix
    if continuation is not None:
        total += model.beta**T * float(p @ continuation)
    return total


def deviation_gap(
    model: ModelSpec,
    mu: ObliviousStrategy,
    f: PopulationState,
    mu_dev: ObliviousStrategy,
    cfg: SimConfig,
    continuation: Optional[np.ndarray] = None,
) -> GapStats:
    """Common-random-number estimate of ``V(mu_dev; others mu) - V(mu; others mu)``.

    ``continuation`` is a value function on the truncated states (normally
    the equilibrium value of ``mu``) added at the horizon for both paths.
    """
    cond = np.empty(cfg.replications)
    path = np.empty(cfg.replications)
    raw = np.empty(cfg.replications)
    j = cfg.tagged
    start = f.state_marginal
    for r in range(cfg.replications):
        u = player_uniforms(cfg.seed + r, cfg.m, cfg.T)
        base = _run(model, mu, mu, f, u, j)
        dev = _run(model, mu, mu_dev, f, u, j)
        raw[r] = dev[4][j] - base[4][j]
        path[r] = raw[r]
        if continuation is not None:
            path[r] += model.beta**cfg.T * (continuation[dev[5][j]] - continuation[base[5][j]])
        cond[r] = (conditional_value(model, mu_dev, start, dev[0], continuation)
                   - conditional_value(model, mu, start, base[0], continuation))
    tail = model.beta**cfg.T * model.growth_k * (1.0 + model.space.x_max) ** model.growth_n / (1.0 - model.beta)
    mean, se = _mean_se(cond)
    p_mean, p_se = _mean_se(path)
    raw_mean, raw_se = _mean_se(raw)
    return GapStats(cfg.m, mean, se, cond, p_mean, p_se, path, float(tail), raw_mean, raw_se,
                    continuation is not None)


def perturbed_population(f: PopulationState, eps: float = 0.1) -> PopulationState:
    """``(1 - eps) f + eps * uniform`` on the same support."""
    uniform = np.full(f.mass.shape, 1.0 / f.mass.size)
    return f.with_mass((1.0 - eps) * f.mass + eps * uniform)


def concentration_metrics(f: PopulationState, model: ModelSpec) -> Dict[str, float]:
    """Market-structure summaries of a population state.

    States are ordered by sup norm. ``tail_mass_above_p95`` is the mass
    strictly above the 95th percentile of ``f``; ``boundary_mass`` is the
    mass in the top 5% of truncation levels.
    """
    g = f.state_marginal
    level = model.space.sup_norm()
    by_level = np.bincount(level, weights=g, minlength=model.space.x_max + 1)
    cdf = np.cumsum(by_level)
    p95 = int(np.searchsorted(cdf, 0.95 - 1e-12))
    top = model.space.x_max + 1 - max(1, int(np.ceil(0.05 * (model.space.x_max + 1))))
    return {
        "mean_state": float(g @ model.space.states.sum(axis=1)),
        "p95_state": p95,
        "tail_mass_above_p95": float(by_level[p95 + 1:].sum()),
        "tail_moment": tail_moment(f, model.p + 1),
        "boundary_mass": float(g[level >= top].sum()),
    }
