import math

import numpy as np

from momentbound.measures import (Constraint, Interval, MarginalClass,
                                  class_violation, raw_moment)
from momentbound.optimize import DEConfig, Problem, bound_qoi
from momentbound.quantities import QoISpec
from momentbound.reference import (dominance_test, gumbel_sampler,
                                   jensen_extremal_check, mc_reference,
                                   normal_cdf, probit, quantile_se,
                                   random_extreme, random_feasible,
                                   sample_inputs, truncated_normal_sampler,
                                   uniform_sampler)

FLOW = MarginalClass(name="j", support=Interval(160.0, 3580.0),
                     constraints=(Constraint.raw_moment(1, 736.0),
                                  Constraint.raw_moment(2, 602043.0)))
ROUGHNESS = MarginalClass(name="ks", support=Interval(12.55, 47.45),
                          constraints=(Constraint.raw_moment(1, 30.0),
                                       Constraint.raw_moment(2, 949.0)),
                          mode=30.0)
LEVEL = MarginalClass(name="zv", support=Interval(49.0, 51.0),
                      constraints=(Constraint.raw_moment(1, 50.0),))
BED = MarginalClass(name="zm", support=Interval(54.0, 55.0),
                    constraints=(Constraint.raw_moment(1, 54.5),))


def _identity(x):
    return np.asarray(x, dtype=float)[:, 0]


def test_probit_inverts_normal_cdf():
    z = np.linspace(-5.5, 5.5, 111)
    u = np.array([normal_cdf(v) for v in z])
    assert np.max(np.abs(probit(u) - z)) < 1e-8  # Acklam-grade accuracy
    assert abs(probit(0.5)) < 1e-9
    try:
        probit(np.array([0.0, 0.5]))
    except ValueError:
        pass
    else:
        raise AssertionError("probit must reject u outside (0, 1)")


def test_samplers_hit_known_quantiles():
    g = gumbel_sampler(626.14, 190.0)
    # CDF at the location parameter is exp(-1)
    assert abs(g(np.exp(-1.0)) - 626.14) < 1e-10
    tn = truncated_normal_sampler(30.0, 7.5, 15.0, 45.0)
    assert abs(tn(0.5) - 30.0) < 1e-7  # symmetric window keeps the median
    un = uniform_sampler(49.0, 51.0)
    assert un(0.0) == 49.0 and un(0.75) == 50.5


def test_sample_inputs_deterministic_and_marginal():
    samplers = [uniform_sampler(0.0, 1.0), gumbel_sampler(0.0, 1.0)]
    a = sample_inputs(samplers, 1000, seed=5)
    b = sample_inputs(samplers, 1000, seed=5)
    assert np.array_equal(a, b)
    c = sample_inputs(samplers, 1000, seed=6)
    assert not np.array_equal(a, c)
    # streams are keyed per column: dropping a column must not shift others
    solo = sample_inputs([uniform_sampler(0.0, 1.0)], 1000, seed=5)
    assert np.array_equal(a[:, :1], solo)


def test_mc_reference_uniform_quantile():
    spec = QoISpec(kind="lower_quantile", p=0.95)
    got = mc_reference([uniform_sampler(0.0, 1.0)], _identity, spec,
                       n=200_000, seed=3)
    assert abs(got - 0.95) < 0.002
    spec = QoISpec(kind="expectation")
    got = mc_reference([uniform_sampler(2.0, 4.0)], _identity, spec,
                       n=100_000, seed=4)
    assert abs(got - 3.0) < 0.01
    spec = QoISpec(kind="failure_prob", h=0.25)
    got = mc_reference([uniform_sampler(0.0, 1.0)], _identity, spec,
                       n=100_000, seed=5)
    assert abs(got - 0.25) < 0.005
    spec = QoISpec(kind="variance")
    got = mc_reference([uniform_sampler(0.0, 1.0)], _identity, spec,
                       n=100_000, seed=6)
    assert abs(got - 1.0 / 12.0) < 0.002


def test_quantile_se_matches_uniform_theory():
    # uniform density 1 at the quantile: se = sqrt(p(1-p)/n)
    rng = np.random.default_rng(9)
    values = rng.random(40_000)
    se = quantile_se(values, 0.95)
    theory = math.sqrt(0.95 * 0.05 / 40_000)
    assert 0.5 * theory < se < 2.0 * theory


def test_random_feasible_all_flood_classes():
    rng = np.random.default_rng(1)
    for mc in (FLOW, ROUGHNESS, LEVEL, BED):
        for _ in range(12):
            m = random_feasible(mc, rng)
            assert m is not None, mc.name
            assert class_violation(m, mc) <= 1e-8
            assert m.n_components == mc.budget + 3
        # interior draws differ draw to draw
        a = random_feasible(mc, np.random.default_rng(2))
        b = random_feasible(mc, np.random.default_rng(3))
        assert a.locations != b.locations if hasattr(a, "locations") \
            else a.endpoints != b.endpoints


def test_random_extreme_decodes_within_budget():
    rng = np.random.default_rng(4)
    for mc in (FLOW, ROUGHNESS, LEVEL, BED):
        for _ in range(10):
            m = random_extreme(mc, rng)
            assert m is not None
            assert class_violation(m, mc) <= 1e-8
            assert m.n_components <= mc.budget


def test_dominance_holds_at_true_optimum():
    # sup E[X^2] with E[X] = 0.5 on [0,1] is exactly 0.5
    mean_half = MarginalClass(name="x", support=Interval(0.0, 1.0),
                              constraints=(Constraint.raw_moment(1, 0.5),))
    prob = Problem(classes=(mean_half,), model=_identity,
                   spec=QoISpec(kind="expectation", power=2, direction="sup"))
    report = dominance_test(prob, 0.5, trials=60, seed=2)
    assert report["trials"] >= 50
    assert report["violations"] == 0
    assert report["max_excess"] <= 0.0
    assert report["worst_measure"] is None


def test_dominance_flags_an_understated_bound():
    mean_half = MarginalClass(name="x", support=Interval(0.0, 1.0),
                              constraints=(Constraint.raw_moment(1, 0.5),))
    prob = Problem(classes=(mean_half,), model=_identity,
                   spec=QoISpec(kind="expectation", power=2, direction="sup"))
    report = dominance_test(prob, 0.26, trials=40, seed=2)
    assert report["violations"] > 0
    assert report["max_excess"] > 0.0
    assert report["worst_measure"] is not None


def test_dominance_respects_direction_and_value_fn():
    mean_half = MarginalClass(name="x", support=Interval(0.0, 1.0),
                              constraints=(Constraint.raw_moment(1, 0.5),))
    prob = Problem(classes=(mean_half,), model=_identity,
                   spec=QoISpec(kind="expectation", power=2, direction="inf"))
    report = dominance_test(prob, 0.25, trials=40, seed=3,
                            value_fn=lambda pm: raw_moment(pm.marginals[0], 2))
    assert report["violations"] == 0  # nothing beats the point mass downward


def test_jensen_affine_equality():
    prob = Problem(classes=(LEVEL, BED), model=lambda x: x[:, 0] + x[:, 1],
                   spec=QoISpec(kind="expectation", direction="sup"))
    report = jensen_extremal_check(prob, trials=40, seed=5)
    assert report["mode"] == "affine"
    assert report["trials"] >= 30
    assert report["failures"] == 0
    assert report["max_gap"] < 1e-12


def test_jensen_quasiconvex_failure_prob():
    prob = Problem(classes=(LEVEL, BED), model=lambda x: x[:, 0] + x[:, 1],
                   spec=QoISpec(kind="failure_prob", h=104.6, direction="sup"))
    report = jensen_extremal_check(prob, trials=40, seed=6)
    assert report["mode"] == "quasi_convex"
    assert report["failures"] == 0


def test_dominance_against_solver_bound():
    # end to end: solver bound on the flood level class pair, then attack it
    prob = Problem(classes=(LEVEL, BED), model=lambda x: x[:, 0] + x[:, 1],
                   spec=QoISpec(kind="failure_prob", h=104.4, direction="sup"))
    res = bound_qoi(prob, DEConfig(seed=1, max_generations=150, population=20))
    report = dominance_test(prob, res.value, trials=50, seed=7)
    assert report["violations"] == 0
