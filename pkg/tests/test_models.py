import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from anongames.core import ConfigError, PopulationState
from anongames.models import (
    FAMILIES,
    ConsumerLearningParams,
    LearningByDoingParams,
    allocation,
    build_model,
    check_cost_shape,
    consumer_learning,
    learning_by_doing,
    param_names,
    quality_ladder,
    spillover_oligopoly,
    supply_chain,
)

X0 = np.array([[0]])


def probs_at(model, x, a, f):
    z, prob = model.increments(np.array([[x]]), np.array([a], dtype=float), f)
    return dict(zip(np.asarray(z)[:, 0].tolist(), np.asarray(prob)[0].tolist()))


# -- quality ladder ------------------------------------------------------


def test_ladder_payoff_at_point_mass_zero():
    model = quality_ladder(theta1=0.5, c_tilde=1.0, x_max=10)
    assert model.payoff(X0, np.array([0.0]), model.point_mass(0))[0] == pytest.approx(1.0, abs=1e-15)


def test_ladder_payoff_against_higher_rivals():
    model = quality_ladder(theta1=0.5, c_tilde=1.0, x_max=10)
    assert model.payoff(X0, np.array([0.0]), model.point_mass(3))[0] == pytest.approx(0.5, abs=1e-15)


def test_ladder_kernel_interior():
    model = quality_ladder(alpha=1.0, delta=0.2, x_max=10)
    got = probs_at(model, 5, 1.0, model.point_mass(0))
    assert got == pytest.approx({-1: 0.1, 0: 0.5, 1: 0.4}, abs=1e-15)


def test_ladder_norm_exponent_rounds_up():
    assert quality_ladder(theta1=0.5, x_max=5).p == 1
    assert quality_ladder(theta1=1.2, x_max=5).p == 2


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(0, 1), min_size=11, max_size=11).filter(lambda w: sum(w) > 1e-3), st.integers(1, 10))
def test_ladder_payoff_decreasing_in_rival_moment(w, shift):
    # shifting mass upward raises the population moment and lowers profit
    model = quality_ladder(x_max=10)
    g = np.asarray(w) / sum(w)
    up = np.zeros(11)
    for x, m in enumerate(g):
        up[min(x + shift, 10)] += m
    f, h = PopulationState(model.space, g), PopulationState(model.space, up)
    if np.allclose(f.mass, h.mass):
        return
    states = model.space.states
    a = np.zeros(11)
    assert np.all(model.payoff(states, a, h) < model.payoff(states, a, f))


# -- spillover -----------------------------------------------------------


def test_spillover_reduces_to_ladder_below_rivals():
    sp = spillover_oligopoly(gamma=0.3, x_max=10)
    ql = quality_ladder(x_max=10)
    for x in (3, 7):
        f = sp.point_mass(3)
        assert probs_at(sp, x, 0.7, f) == probs_at(ql, x, 0.7, f)


def test_spillover_effective_investment():
    model = spillover_oligopoly(gamma=0.25, zeta=1.0, x_max=10)
    e = model.extras["effective_investment"](X0, np.array([0.5]), model.point_mass(5))
    assert e[0] == pytest.approx(0.75, abs=1e-15)


def test_spillover_drift_at_knife_edge():
    model = spillover_oligopoly(gamma=0.25, alpha=1.0, delta=0.2, zeta=1.0, x_max=10)
    got = probs_at(model, 0, 0.0, model.point_mass(5))
    assert got[1] - got[-1] == pytest.approx(0.25 / 1.25 * 0.8 - 0.2 / 1.25, abs=1e-15)
    assert got[1] - got[-1] == pytest.approx(0.0, abs=1e-15)


def test_spillover_zeta_table_length_checked():
    with pytest.raises(ConfigError):
        spillover_oligopoly(zeta=[1.0, 1.0], x_max=5)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(0, 1), min_size=11, max_size=11).filter(lambda w: sum(w) > 1e-3), st.integers(0, 10))
def test_spillover_kernel_nondecreasing_under_upward_shift(w, x):
    model = spillover_oligopoly(gamma=0.2, x_max=10)
    g = np.asarray(w) / sum(w)
    up = np.zeros(11)
    for y, m in enumerate(g):
        up[min(y + 1, 10)] += m
    low = probs_at(model, x, 0.5, PopulationState(model.space, g))
    high = probs_at(model, x, 0.5, PopulationState(model.space, up))
    assert high[1] >= low[1] - 1e-15


# -- learning by doing ---------------------------------------------------


def test_learning_by_doing_s_star():
    model = learning_by_doing(c=4.0, p0=2.0, s_max=6)
    assert model.extras["s_star"] == 4.0


def test_learning_by_doing_zero_output_earns_nothing():
    model = learning_by_doing(x_max=10)
    states = model.space.states
    np.testing.assert_array_equal(model.payoff(states, np.zeros(11), model.point_mass(4)), 0.0)


def test_learning_by_doing_payoff_substitution():
    model = learning_by_doing(x_max=10, s_max=2, cost=lambda x, s: s**2 / (1.0 + x))
    f = PopulationState.point_mass(model.space, 0, actions=model.actions.values, action_index=1)
    assert model.payoff(np.array([[1]]), np.array([2.0]), f)[0] == pytest.approx(0.0, abs=1e-15)


def test_cost_shape_violation_names_the_point():
    with pytest.raises(ConfigError, match=r"nonincreasing in x at x=0"):
        check_cost_shape(lambda x, s: s * (1.0 + x), 5, (0.0, 1.0, 2.0))
    with pytest.raises(ConfigError, match="convex in s"):
        learning_by_doing(x_max=5, cost=lambda x, s: np.sqrt(s))


def test_shipped_costs_have_decreasing_differences():
    for kind in ("quadratic", "linear"):
        cost = LearningByDoingParams(cost=kind).cost_fn()
        x = np.arange(51, dtype=float)[:, None]
        s = np.arange(5, dtype=float)[None, :]
        c = cost(x, s) * np.ones((51, 5))
        assert np.all(np.diff(np.diff(c, axis=1), axis=0) <= 1e-12)


# -- supply chain --------------------------------------------------------


def supply_profile(model, weights):
    w = np.zeros((model.n_states, len(model.actions.values)))
    w[0] = weights
    return PopulationState(model.space, w / w.sum(), actions=model.actions.values)


def test_zero_bid_gets_nothing():
    model = supply_chain(x_max=10)
    for weights in ([1, 0, 0, 0], [0, 0, 0, 1], [1, 1, 1, 1]):
        assert allocation(0.0, supply_profile(model, weights), 1.0, 0.5) == 0.0


def test_allocation_value():
    model = supply_chain(x_max=10)
    f = supply_profile(model, [0, 0, 1, 0])
    assert allocation(2.0, f, 1.0, 0.5) == pytest.approx(0.8, abs=1e-15)


def test_allocation_falls_when_rival_bids_rise():
    model = supply_chain(x_max=10)
    low = supply_profile(model, [0, 1, 0, 0])
    high = supply_profile(model, [0, 0, 0, 1])
    for bid in (1.0, 2.0, 3.0):
        assert allocation(bid, high, 1.0, 0.5) < allocation(bid, low, 1.0, 0.5)


def test_supply_chain_requires_zero_bid_and_positive_demand():
    with pytest.raises(ConfigError):
        supply_chain(bids=(1.0, 2.0))
    with pytest.raises(ConfigError):
        supply_chain(demand=(1.0, 0.0))


def test_supply_chain_increment_bound():
    model = supply_chain(x_max=10)
    assert model.increment_bound == round(3 * 1.0 / 0.5) + 3


# -- consumer learning ---------------------------------------------------


def test_consumer_zero_effort_payoff():
    model = consumer_learning(x_max=10)
    f = model.point_mass(2)
    states = model.space.states
    omega = model.extras["omega"](states[:, 0], f)
    np.testing.assert_allclose(model.payoff(states, np.zeros(11), f), 1.0 - np.exp(0.5 * omega), atol=1e-15)


def test_consumer_myopic_closed_form():
    model = consumer_learning(gamma=1.0, d=0.5, sigma2_low=1.0, sigma2_high=1.0, x_max=10)
    a = model.extras["myopic_action"](np.zeros(1), model.point_mass(0))
    assert a[0] == pytest.approx(0.5 + math.log(2.0), abs=1e-15)
    assert a[0] == pytest.approx(1.1931, abs=1e-4)


def test_consumer_condition_threshold():
    p = ConsumerLearningParams(gamma=1.0, sigma2_high=1.0, alpha=1.0, delta=0.2)
    assert p.c0 == pytest.approx(0.25)
    assert p.d_threshold == pytest.approx(math.exp(0.25), abs=1e-15)
    assert p.d_threshold == pytest.approx(1.2840, abs=1e-4)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(0, 1), min_size=21, max_size=21).filter(lambda w: sum(w) > 1e-3))
def test_consumer_omega_monotone_and_bounded(w):
    model = consumer_learning(sigma2_low=0.3, sigma2_high=1.2, kappa=0.5, x_max=20)
    omega = model.extras["omega"]
    g = np.asarray(w) / sum(w)
    up = np.zeros(21)
    up[1:] = g[:-1]
    up[-1] += g[-1]
    f, h = PopulationState(model.space, g), PopulationState(model.space, up)
    x = np.arange(21)
    vals = omega(x, f)
    assert np.all(np.diff(vals) < 0)
    assert np.all((vals >= 0.3) & (vals <= 1.2))
    assert np.all(omega(x, h) <= vals + 1e-15)


# -- registry ------------------------------------------------------------


def test_build_model_rejects_unknown_family_and_keys():
    with pytest.raises(ConfigError, match="unknown model family"):
        build_model("cournot")
    with pytest.raises(ConfigError, match="unknown parameter"):
        build_model("quality_ladder", {"thetaa": 0.5})


def test_range_errors_name_the_parameter():
    with pytest.raises(ConfigError, match="δ"):
        build_model("quality_ladder", {"delta": 1.5})
    with pytest.raises(ConfigError, match="β"):
        build_model("consumer_learning", {"beta": 1.0})


@pytest.mark.parametrize("family", sorted(FAMILIES))
def test_defaults_build_and_expose_params(family):
    model = build_model(family, {"x_max": 20})
    assert model.family == family
    assert set(model.params) == set(param_names(family))
