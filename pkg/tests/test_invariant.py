import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from anongames.core import ConfigError, NonConvergenceError, ObliviousStrategy, PopulationState, TruncatedStateSpace
from anongames.invariant import (
    InducedChain,
    InvariantOptions,
    MultipleRecurrentClassesWarning,
    drift,
    foster_lyapunov_check,
    induced_chain,
    invariance_residual,
    invariant_distribution,
    invariant_state_action,
    tail_moment,
)
from anongames.models import learning_by_doing, quality_ladder, spillover_oligopoly

from oracles import (
    birth_death_matrix,
    geometric_mean_closed_form,
    geometric_pmf,
    spillover_drift_closed_form,
    state_action_oracle,
    stationary_dense,
)

SPACE20 = TruncatedStateSpace(1, 20)
DIRECT = InvariantOptions(method="direct")


def birth_death_chain(up=0.2, down=0.4):
    return InducedChain(SPACE20, birth_death_matrix(21, up, down))


# -- chain construction --------------------------------------------------


def test_chain_rejects_non_stochastic_rows():
    bad = np.eye(21)
    bad[0, 0] = 0.9
    with pytest.raises(ConfigError):
        InducedChain(SPACE20, bad)
    with pytest.raises(ConfigError):
        InducedChain(SPACE20, np.eye(3))


def test_induced_chain_rows_are_distributions():
    model = quality_ladder(x_max=40)
    mu = ObliviousStrategy.pure(np.linspace(0.0, 2.0, 41))
    chain = induced_chain(model, mu, model.point_mass(0))
    assert np.all(chain.matrix >= 0)
    assert np.max(np.abs(chain.matrix.sum(axis=1) - 1.0)) <= 1e-12


# -- invariant_distribution ----------------------------------------------


def test_identity_chain_gives_uniform():
    f = invariant_distribution(InducedChain(SPACE20, np.eye(21)))
    np.testing.assert_allclose(f.mass, np.full(21, 1 / 21), atol=1e-15)


def test_identity_chain_direct_warns_and_falls_back():
    with pytest.warns(MultipleRecurrentClassesWarning):
        f = invariant_distribution(InducedChain(SPACE20, np.eye(21)), DIRECT)
    np.testing.assert_allclose(f.mass, np.full(21, 1 / 21), atol=1e-15)


def test_birth_death_is_geometric():
    chain = birth_death_chain()
    power = invariant_distribution(chain)
    direct = invariant_distribution(chain, DIRECT)
    np.testing.assert_allclose(power.mass, direct.mass, atol=1e-10)
    np.testing.assert_allclose(power.mass, geometric_pmf(21, 0.5), atol=1e-10)
    assert invariance_residual(chain, power) <= 1e-12


def test_zero_investment_ladder_is_absorbed_at_zero():
    model = quality_ladder(x_max=30)
    chain = induced_chain(model, ObliviousStrategy.pure(np.zeros(31)), model.point_mass(0))
    f = invariant_distribution(chain)
    assert f.mass[0] == pytest.approx(1.0, abs=1e-10)


def test_power_iteration_raises_when_nothing_can_rescue_it():
    # two copies of a period-2 chain: iterates oscillate and the direct solve is not unique
    block = np.array([[0, 1, 0], [0.5, 0, 0.5], [0, 1, 0]])
    m = np.kron(np.eye(2), block)
    with pytest.raises(NonConvergenceError) as err:
        invariant_distribution(InducedChain(TruncatedStateSpace(1, 5), m), InvariantOptions(max_iters=100))
    assert err.value.last_residual == pytest.approx(2 / 3)


def test_slowly_mixing_chain_is_rescued():
    chain = InducedChain(TruncatedStateSpace(1, 60), birth_death_matrix(61, 0.001, 0.0015))
    f = invariant_distribution(chain, InvariantOptions(max_iters=50))
    np.testing.assert_allclose(f.mass, stationary_dense(chain.matrix), atol=1e-10)


def _random_chain(weights, n):
    m = np.asarray(weights).reshape(n, n) + 1e-3
    return m / m.sum(axis=1, keepdims=True)


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 8).flatmap(lambda n: st.tuples(st.just(n), st.lists(st.floats(0, 1), min_size=n * n, max_size=n * n))))
def test_power_matches_direct_on_irreducible_chains(case):
    n, weights = case
    chain = InducedChain(TruncatedStateSpace(1, n - 1), _random_chain(weights, n))
    power = invariant_distribution(chain)
    direct = invariant_distribution(chain, DIRECT)
    np.testing.assert_allclose(power.mass, direct.mass, atol=1e-8)
    assert invariance_residual(chain, power) <= 1e-12


# -- state-action --------------------------------------------------------


def lbd_small():
    return learning_by_doing(x_max=9, s_max=2)


def uniform_profile(model):
    k = len(model.actions.values)
    return PopulationState(model.space, np.full((model.n_states, k), 1 / (model.n_states * k)), actions=model.actions.values)


def test_pure_strategy_support_on_graph():
    model = lbd_small()
    mu = ObliviousStrategy.pure(np.tile([0.0, 1.0, 2.0], 4)[:10])
    f = invariant_state_action(model, mu, uniform_profile(model))
    cols = mu.table.astype(int)
    off = np.ones_like(f.mass, dtype=bool)
    off[np.arange(10), cols] = False
    assert np.all(f.mass[off] == 0)
    g = invariant_distribution(induced_chain(model, mu, uniform_profile(model))).mass
    np.testing.assert_allclose(f.state_marginal, g, atol=1e-12)


def test_even_mixing_splits_state_mass():
    model = learning_by_doing(x_max=1, s_max=1)
    mu = ObliviousStrategy.mixed(np.full((2, 2), 0.5), model.actions.values)
    f = invariant_state_action(model, mu, uniform_profile(model))
    np.testing.assert_allclose(f.mass[:, 0], f.mass[:, 1], atol=1e-15)


def test_state_action_matches_product_chain_oracle():
    model = lbd_small()
    rng = np.random.default_rng(7)
    probs = rng.dirichlet(np.ones(3), size=10)
    mu = ObliviousStrategy.mixed(probs, model.actions.values)
    prof = uniform_profile(model)
    f = invariant_state_action(model, mu, prof)
    np.testing.assert_allclose(f.mass, state_action_oracle(model, probs, model.actions.values, prof), atol=1e-9)


@settings(max_examples=25, deadline=None)
@given(st.lists(st.floats(0.01, 1), min_size=30, max_size=30))
def test_state_action_conditionals_equal_strategy(w):
    model = lbd_small()
    probs = np.asarray(w).reshape(10, 3)
    probs /= probs.sum(axis=1, keepdims=True)
    mu = ObliviousStrategy.mixed(probs, model.actions.values)
    f = invariant_state_action(model, mu, uniform_profile(model))
    g = f.state_marginal
    live = g > 0
    np.testing.assert_allclose(f.mass[live] / g[live, None], probs[live], atol=1e-12)


def test_state_action_needs_coupled_model():
    model = quality_ladder(x_max=5)
    with pytest.raises(ConfigError):
        invariant_state_action(model, ObliviousStrategy.pure(np.zeros(6)), model.point_mass(0))


# -- drift ---------------------------------------------------------------


def test_zero_investment_drift_is_minus_delta():
    model = quality_ladder(x_max=20, delta=0.2)
    rep = drift(model, ObliviousStrategy.pure(np.zeros(21)), model.point_mass(0))
    np.testing.assert_allclose(rep.drift[1:-1, 0], -0.2, atol=1e-15)
    assert rep.k_bar == 0


def test_unit_investment_drift():
    model = quality_ladder(x_max=20, alpha=1.0, delta=0.2)
    rep = drift(model, ObliviousStrategy.pure(np.ones(21)), model.point_mass(0))
    np.testing.assert_allclose(rep.drift[:, 0], 0.3, atol=1e-15)
    assert rep.k_bar is None


def test_spillover_knife_edge_drift():
    model = spillover_oligopoly(gamma=0.25, alpha=1.0, delta=0.2, zeta=1.0, x_max=20)
    rep = drift(model, ObliviousStrategy.pure(np.zeros(21)), model.point_mass(20))
    expected = spillover_drift_closed_form(0.25, 1.0, 0.2, 1.0)
    assert expected == pytest.approx(0.0, abs=1e-15)
    assert rep.drift[0, 0] == pytest.approx(expected, abs=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(0, 5), min_size=41, max_size=41))
def test_drift_does_not_depend_on_truncation(actions):
    small = quality_ladder(x_max=20)
    large = quality_ladder(x_max=40)
    a = np.asarray(actions)
    d_small = drift(small, ObliviousStrategy.pure(a[:21]), small.point_mass(0)).drift
    d_large = drift(large, ObliviousStrategy.pure(a), large.point_mass(0)).drift
    np.testing.assert_array_equal(d_small[:20], d_large[:20])


# -- Foster-Lyapunov -----------------------------------------------------


def test_down_biased_birth_death_satisfies_foster_lyapunov():
    # E[U'] - U = -0.4 x + 0.6 in the interior, <= -1 from x = 4
    res = foster_lyapunov_check(birth_death_chain(), k_bar=3)
    assert res.holds and res.witness is None
    assert res.threshold == 3


def test_identity_chain_fails_foster_lyapunov():
    res = foster_lyapunov_check(InducedChain(SPACE20, np.eye(21)), k_bar=3)
    assert not res.holds
    assert res.witness == (4,)


def test_foster_lyapunov_then_power_iteration_converges():
    chain = birth_death_chain()
    assert foster_lyapunov_check(chain, 3).holds
    f = invariant_distribution(chain, InvariantOptions(tol=1e-10, max_iters=100_000))
    assert invariance_residual(chain, f) <= 1e-10


# -- tail moment ---------------------------------------------------------


@pytest.mark.parametrize("eta", [1, 2, 3])
def test_tail_moment_point_mass(eta):
    assert tail_moment(PopulationState.point_mass(SPACE20, 0), eta) == 0.0


def test_tail_moment_two_point():
    w = np.zeros(21)
    w[[1, 3]] = 0.5
    assert tail_moment(PopulationState(SPACE20, w), 2) == pytest.approx(5.0, abs=1e-15)


def test_tail_moment_geometric():
    f = PopulationState(SPACE20, geometric_pmf(21, 0.5))
    assert tail_moment(f, 1) == pytest.approx(geometric_mean_closed_form(21, 0.5), abs=1e-9)
