import io

import numpy as np
import pytest

from anongames.core import ConfigError, ObliviousStrategy, PopulationState
from anongames.dp import policy_value
from anongames.equilibrium import best_response, solve_se
from anongames.models import quality_ladder
from anongames.simulate import (
    SimConfig,
    concentration_metrics,
    conditional_value,
    deviation_gap,
    perturbed_population,
    player_uniforms,
    simulate_population,
)

from oracles import discounted_sum, single_state_model, toy_model

# mean-field limit of the conditional gap for the baseline deviation below (T=10)
BASELINE_GAP_LIMIT = -0.00568040638138001


@pytest.fixture(scope="module")
def deviation(baseline_model, baseline):
    dev = best_response(baseline_model, perturbed_population(baseline.population, 0.1))
    cont = policy_value(baseline_model, baseline.strategy, baseline.population)
    return dev, cont


@pytest.fixture(scope="module")
def gaps(baseline_model, baseline, deviation):
    dev, cont = deviation
    return {
        m: deviation_gap(baseline_model, baseline.strategy, baseline.population, dev,
                         SimConfig(m=m, T=10, replications=20), continuation=cont)
        for m in (50, 200, 1000)
    }


# -- simulate_population -------------------------------------------------


def test_frozen_population_has_zero_distance():
    # identity kernel with everyone starting at 0: the empirical profile never moves
    model = toy_model(n_states=5, steps={0: 1.0})
    f = model.point_mass(0)
    tr = simulate_population(model, ObliviousStrategy.pure(np.zeros(5)), f, SimConfig(m=20, T=5, replications=2))
    np.testing.assert_array_equal(tr.distances, 0.0)
    np.testing.assert_array_equal(tr.tagged_states, 0)


def test_runs_are_bit_identical(baseline_model, baseline):
    cfg = SimConfig(m=30, T=5, seed=11, replications=2)
    a = simulate_population(baseline_model, baseline.strategy, baseline.population, cfg)
    b = simulate_population(baseline_model, baseline.strategy, baseline.population, cfg)
    assert a.distances.tobytes() == b.distances.tobytes()
    assert a.populations.tobytes() == b.populations.tobytes()
    assert a.payoffs.tobytes() == b.payoffs.tobytes()


def test_larger_population_tracks_the_equilibrium_closer(baseline_model, baseline):
    med = {}
    for m in (100, 1000):
        tr = simulate_population(baseline_model, baseline.strategy, baseline.population,
                                 SimConfig(m=m, T=10, replications=20))
        med[m] = np.median(tr.distances[:, -1])
    assert med[1000] < med[100]


def test_empirical_profiles_are_distributions(baseline_model, baseline):
    tr = simulate_population(baseline_model, baseline.strategy, baseline.population, SimConfig(m=40, T=4))
    np.testing.assert_allclose(tr.populations.sum(axis=2), 1.0, atol=1e-12)
    assert tr.populations.shape == (1, 5, baseline_model.n_states)


def test_tagged_marginal_matches_chain_when_kernel_ignores_others():
    # the tagged player is a Markov chain on its own; compare its t-step law
    steps = {-1: 0.3, 0: 0.3, 1: 0.4}
    model = toy_model(n_states=6, steps=steps)
    f = model.point_mass(0)
    reps, T = 400, 4
    tr = simulate_population(model, ObliviousStrategy.pure(np.zeros(6)), f, SimConfig(m=2, T=T, replications=reps))
    kernel = np.zeros((6, 6))
    for x in range(6):
        for z, p in steps.items():
            kernel[x, min(max(x + z, 0), 5)] += p
    law = np.linalg.matrix_power(kernel, T)[0]
    freq = np.bincount(tr.tagged_states[:, -1], minlength=6) / reps
    se = np.sqrt(law * (1 - law) / reps)
    assert np.all(np.abs(freq - law) <= 3 * se + 1e-12)


def test_adding_players_keeps_existing_draws():
    small = player_uniforms(5, 10, 3)
    large = player_uniforms(5, 50, 3)
    np.testing.assert_array_equal(small, large[:10])


@pytest.mark.parametrize("bad", [dict(m=1, T=5), dict(m=5, T=0), dict(m=5, T=5, replications=0),
                                 dict(m=5, T=5, tagged=5), dict(m=5, T=5, seed=-1)])
def test_config_validation(bad):
    with pytest.raises(ConfigError):
        SimConfig(**bad)


def test_single_period_csv_has_two_rows_per_replication(baseline_model, baseline):
    tr = simulate_population(baseline_model, baseline.strategy, baseline.population, SimConfig(m=10, T=1, replications=3))
    buf = io.StringIO()
    tr.write_csv(buf)
    lines = buf.getvalue().splitlines()
    assert lines[0] == "t,m,seed,distance_1p,tagged_state,mean_state"
    assert len(lines) == 1 + 2 * 3


# -- deviation_gap -------------------------------------------------------


def test_no_deviation_means_zero_gap(baseline_model, baseline):
    cont = policy_value(baseline_model, baseline.strategy, baseline.population)
    g = deviation_gap(baseline_model, baseline.strategy, baseline.population, baseline.strategy,
                      SimConfig(m=30, T=5, replications=4), continuation=cont)
    np.testing.assert_array_equal(g.per_replication, 0.0)
    np.testing.assert_array_equal(g.pathwise_per_replication, 0.0)


def test_single_state_gap_is_discounted_payoff_difference():
    model = single_state_model([1.0, 3.0], beta=0.9)
    f = model.point_mass(0)
    low, high = ObliviousStrategy.pure([0.0]), ObliviousStrategy.pure([1.0])
    g = deviation_gap(model, low, f, high, SimConfig(m=5, T=6, replications=3))
    expected = discounted_sum([3.0 - 1.0] * 6, 0.9)
    np.testing.assert_allclose(g.per_replication, expected, atol=1e-12)
    np.testing.assert_allclose(g.pathwise_per_replication, expected, atol=1e-12)
    assert g.raw_mean == pytest.approx(expected, abs=1e-12)
    assert not g.continuation


def test_tail_bound_shrinks_with_horizon():
    model = single_state_model([1.0], beta=0.9)
    f = model.point_mass(0)
    mu = ObliviousStrategy.pure([0.0])
    short = deviation_gap(model, mu, f, mu, SimConfig(m=3, T=2))
    long = deviation_gap(model, mu, f, mu, SimConfig(m=3, T=20))
    assert long.tail_bound < short.tail_bound


def test_conditional_value_at_stationary_profile_is_the_policy_value(baseline_model, baseline, deviation):
    _, cont = deviation
    f = baseline.population.mass
    prof = np.repeat(f[None], 11, axis=0)
    got = conditional_value(baseline_model, baseline.strategy, f, prof, cont)
    assert got == pytest.approx(float(f @ cont), abs=1e-9)


def test_equilibrium_deviation_does_not_pay(gaps):
    g = gaps[1000]
    assert g.mean + 2 * g.stderr <= 0
    assert g.mean == pytest.approx(BASELINE_GAP_LIMIT, abs=3 * g.stderr)


def test_gap_noise_shrinks_with_population(gaps):
    se = [gaps[m].stderr for m in (50, 200, 1000)]
    assert se[0] > se[1] > se[2]
    positive = [np.median(np.maximum(gaps[m].per_replication, 0.0)) for m in (50, 200, 1000)]
    assert positive[2] <= positive[0]


def test_pathwise_estimate_is_consistent_with_conditional(gaps):
    g = gaps[1000]
    assert abs(g.pathwise_mean - g.mean) <= 3 * g.pathwise_stderr


def test_gap_serializes(gaps):
    d = gaps[50].to_dict()
    assert d["m"] == 50 and len(d["per_replication"]) == 20
    assert {"pathwise_mean", "raw_mean", "tail_bound"} <= set(d)


# -- concentration -------------------------------------------------------


def test_point_mass_at_zero_has_no_tail():
    model = quality_ladder(x_max=20)
    c = concentration_metrics(model.point_mass(0), model)
    assert c["mean_state"] == 0.0 and c["tail_mass_above_p95"] == 0.0 and c["p95_state"] == 0


def test_uniform_low_states_mean():
    model = quality_ladder(x_max=20)
    w = np.zeros(21)
    w[:10] = 0.1
    c = concentration_metrics(PopulationState(model.space, w), model)
    assert c["mean_state"] == pytest.approx(4.5, abs=1e-12)
    assert c["boundary_mass"] == 0.0


def test_stronger_returns_to_quality_concentrate_the_industry():
    # largest alternative to the baseline whose equilibrium the damped map reaches
    means = {}
    for theta in (0.3, 0.6):
        model = quality_ladder(theta1=theta, x_max=100)
        rep = solve_se(model)
        assert rep.converged
        means[theta] = concentration_metrics(rep.population, model)["mean_state"]
    assert means[0.6] > means[0.3]

