import json

import numpy as np
import pytest

from momentbound.measures import Constraint, Interval, MarginalClass
from momentbound.optimize import (DEConfig, JointConstraint, Problem,
                                  _reflect, bound_qoi, cdf_envelope,
                                  golden_sweep, linearized_variance_bound,
                                  optimize)
from momentbound.quantities import DirectionError, QoISpec


def _identity(x):
    return np.asarray(x, dtype=float)[:, 0]


FREE = MarginalClass(name="x", support=Interval(0.0, 1.0), constraints=())
MEAN_HALF = MarginalClass(name="x", support=Interval(0.0, 1.0),
                          constraints=(Constraint.raw_moment(1, 0.5),))
TWO_MOMENT = MarginalClass(name="x", support=Interval(0.0, 1.0),
                           constraints=(Constraint.raw_moment(1, 0.5),
                                        Constraint.raw_moment(2, 0.3)))


def test_reflect_folds_onto_unit_interval():
    x = np.array([-0.2, 0.3, 1.3, 2.7, -1.6])
    got = _reflect(x)
    assert np.allclose(got, [0.2, 0.3, 0.7, 0.7, 0.4], atol=1e-15)
    assert np.all((got >= 0) & (got <= 1))


def test_joint_constraint_violation():
    eq = JointConstraint(fn=_identity, relation="eq", bound=2.0, scale=4.0)
    assert eq.violation(2.0) == 0.0
    assert eq.violation(3.0) == 0.25
    assert eq.violation(1.0) == 0.25
    leq = JointConstraint(fn=_identity, relation="leq", bound=2.0)
    assert leq.violation(1.5) == 0.0
    assert leq.violation(2.5) == 0.5


def test_optimize_sphere():
    target = np.array([0.31, 0.62, 0.17, 0.48, 0.85])

    def objective(thetas):
        return -np.sum((thetas - target) ** 2, axis=1)

    theta, score, trace = optimize(objective, 5,
                                   DEConfig(seed=3, max_generations=400))
    assert -score < 1e-6
    assert np.allclose(theta, target, atol=2e-3)


def test_optimize_linear_boundary():
    objective = lambda thetas: thetas[:, 0]
    theta, score, _ = optimize(objective, 1,
                               DEConfig(seed=5, max_generations=300,
                                        population=20))
    assert score > 0.9999
    theta, score, _ = optimize(objective, 1,
                               DEConfig(seed=5, max_generations=300,
                                        population=20), maximize=False)
    assert score < 1e-4


def test_optimize_trace_is_monotone_and_seeded():
    objective = lambda thetas: -np.sum((thetas - 0.4) ** 2, axis=1)
    cfg = DEConfig(seed=11, max_generations=60, population=15)
    t1, s1, trace1 = optimize(objective, 3, cfg)
    t2, s2, trace2 = optimize(objective, 3, cfg)
    assert np.array_equal(t1, t2) and s1 == s2 and trace1 == trace2
    vals = [v for _, v in trace1]
    assert all(b >= a for a, b in zip(vals, vals[1:]))
    t3, _, _ = optimize(objective, 3,
                        DEConfig(seed=12, max_generations=60, population=15))
    assert not np.array_equal(t1, t3)


def test_optimize_worker_count_never_changes_result():
    objective = lambda thetas: np.sin(7 * thetas[:, 0]) * thetas[:, 1]
    runs = []
    for workers in (1, 4):
        cfg = DEConfig(seed=21, max_generations=80, population=16,
                       workers=workers)
        runs.append(optimize(objective, 2, cfg))
    assert np.array_equal(runs[0][0], runs[1][0])
    assert runs[0][1] == runs[1][1]
    assert runs[0][2] == runs[1][2]


def test_optimize_best1bin_strategy():
    objective = lambda thetas: -np.sum((thetas - 0.7) ** 2, axis=1)
    _, score, _ = optimize(objective, 4,
                           DEConfig(seed=2, max_generations=300,
                                    strategy="best1bin"))
    assert -score < 1e-8


def test_optimize_rejects_non_finite_objective():
    objective = lambda thetas: np.where(thetas[:, 0] > 0.5, np.nan, 1.0)
    with pytest.raises(RuntimeError):
        optimize(objective, 1, DEConfig(seed=0, max_generations=10))


def test_optimize_early_stop_on_flat_scores():
    objective = lambda thetas: np.zeros(thetas.shape[0])
    _, _, trace = optimize(objective, 2,
                           DEConfig(seed=0, max_generations=500))
    assert len(trace) == 2  # initial generation plus one converged step


def test_bound_pinned_expectation_is_constant():
    # E[X] is pinned by the class, so every decode scores the same
    prob = Problem(classes=(MEAN_HALF,), model=_identity,
                   spec=QoISpec(kind="expectation", direction="sup"))
    res = bound_qoi(prob, DEConfig(seed=1, max_generations=20, population=10))
    assert abs(res.value - 0.5) < 1e-10
    assert res.feasibility["max_violation"] < 1e-9


def test_bound_failure_prob_markov_vertex():
    # sup P[X <= 0.3] with E[X] = 0.5: atoms at 0.3 and 1, mass 5/7 below
    prob = Problem(classes=(MEAN_HALF,), model=_identity,
                   spec=QoISpec(kind="failure_prob", h=0.3, direction="sup"))
    res = bound_qoi(prob, DEConfig(seed=1, max_generations=300, population=30))
    assert abs(res.value - 5.0 / 7.0) < 1e-6
    locs = np.asarray(res.argmax.marginals[0].locations)
    assert np.min(np.abs(locs - 0.3)) < 1e-6  # one atom rides the level


def test_bound_second_moment_extremes():
    sup = Problem(classes=(MEAN_HALF,), model=_identity,
                  spec=QoISpec(kind="expectation", power=2, direction="sup"))
    res = bound_qoi(sup, DEConfig(seed=7, max_generations=150, population=25))
    assert abs(res.value - 0.5) < 1e-8  # mass split between 0 and 1
    inf = Problem(classes=(MEAN_HALF,), model=_identity,
                  spec=QoISpec(kind="expectation", power=2, direction="inf"))
    res = bound_qoi(inf, DEConfig(seed=8, max_generations=150, population=25))
    assert abs(res.value - 0.25) < 1e-8  # point mass at the mean


def test_bound_with_joint_constraints():
    leq = JointConstraint(fn=_identity, relation="leq", bound=0.4,
                          scale=1.0, label="mean cap")
    prob = Problem(classes=(FREE,), model=_identity,
                   spec=QoISpec(kind="expectation", direction="sup"),
                   joint=(leq,))
    res = bound_qoi(prob, DEConfig(seed=9, max_generations=200, population=25))
    assert abs(res.value - 0.4) < 1e-6
    assert res.feasibility["max_violation"] < 1e-6
    assert res.feasibility["joint"][0]["label"] == "mean cap"

    pin = JointConstraint(fn=_identity, relation="eq", bound=0.25,
                          scale=1.0, label="pinned mean")
    prob = Problem(classes=(FREE,), model=_identity,
                   spec=QoISpec(kind="expectation", power=2, direction="sup"),
                   joint=(pin,))
    res = bound_qoi(prob, DEConfig(seed=10, max_generations=200, population=25))
    # E[X^2] <= E[X] on [0,1], tight only on {0,1}-supported laws
    assert abs(res.value - 0.25) < 1e-6


def test_bound_zero_dims_short_circuit():
    pinned = MarginalClass(name="x", support=Interval(0.0, 1.0),
                           constraints=(Constraint.raw_moment(1, 0.3),
                                        Constraint.raw_moment(2, 0.09)))
    prob = Problem(classes=(pinned,), model=_identity,
                   spec=QoISpec(kind="expectation", direction="sup"))
    res = bound_qoi(prob, DEConfig(seed=0))
    assert res.value == 0.3
    assert res.trace == [(0, 0.3)]


def test_bound_rejects_forbidden_direction():
    prob = Problem(classes=(MEAN_HALF,), model=_identity,
                   spec=QoISpec(kind="upper_quantile", p=0.5, direction="inf"))
    bound_qoi(prob, DEConfig(seed=0, max_generations=5, population=8))
    bad = Problem(classes=(MEAN_HALF,), model=_identity,
                  spec=QoISpec(kind="lower_quantile", p=0.5, direction="inf"))
    with pytest.raises(DirectionError):
        bound_qoi(bad)


def test_bound_result_serializes():
    prob = Problem(classes=(MEAN_HALF,), model=_identity,
                   spec=QoISpec(kind="expectation", direction="sup"))
    res = bound_qoi(prob, DEConfig(seed=4, max_generations=10, population=8))
    doc = res.to_dict()
    assert set(doc) == {"value", "measure", "trace", "feasibility", "seed",
                        "qoi"}
    assert doc["qoi"]["kind"] == "expectation"
    json.dumps(doc)  # must be plain data throughout


def test_golden_sweep_quadratic():
    inner = lambda y: (-(y - 0.37) ** 2, None)
    y, val, _ = golden_sweep(inner, 0.0, 1.0, maximize=True)
    assert abs(y - 0.37) < 1e-6 and abs(val) < 1e-10
    inner = lambda y: ((y - 1.7) ** 2, "tag")
    y, val, payload = golden_sweep(inner, 0.0, 3.0, maximize=False)
    assert abs(y - 1.7) < 1e-6 and payload == "tag"


def test_golden_sweep_skips_infeasible_pins():
    def inner(y):
        if y < 0.5:
            return None, None
        return -(y - 0.6) ** 2, None

    y, val, _ = golden_sweep(inner, 0.0, 1.0, maximize=True)
    assert abs(y - 0.6) < 1e-6
    y, val, payload = golden_sweep(lambda y: (None, None), 0.0, 1.0, True)
    assert y is None and val is None and payload is None


def test_variance_bound_free_class():
    cfg = DEConfig(seed=4, max_generations=60, population=12)
    res = linearized_variance_bound((FREE,), _identity, "sup", cfg)
    assert abs(res.value - 0.25) < 1e-4  # fair coin on {0, 1}
    assert abs(res.extra["phi0"] - 0.5) < 0.02
    assert res.spec.kind == "variance" and res.spec.direction == "sup"
    cfg = DEConfig(seed=5, max_generations=50, population=10)
    res = linearized_variance_bound((FREE,), _identity, "inf", cfg)
    assert res.value < 1e-5  # any point mass has zero variance


def test_variance_bound_pinned_mean_class():
    sym = MarginalClass(name="x", support=Interval(-1.0, 1.0),
                        constraints=(Constraint.raw_moment(1, 0.0),))
    cfg = DEConfig(seed=6, max_generations=60, population=12)
    res = linearized_variance_bound((sym,), _identity, "sup", cfg)
    assert abs(res.value - 1.0) < 1e-4  # mass split between -1 and +1


def test_cdf_envelope_single_moment_class():
    # inf P[X <= h] with E[X] = 0.5 is max(0, 1 - 0.5/h) before h = 1
    prob = Problem(classes=(MEAN_HALF,), model=_identity,
                   spec=QoISpec(kind="failure_prob", h=0.5, direction="inf"))
    cfg = DEConfig(seed=2, max_generations=200, population=25)
    env = cdf_envelope(prob, [0.3, 0.625, 0.8, 1.0], cfg)
    oracle = [0.0, 0.2, 0.375, 1.0]
    for (h, v), want in zip(env, oracle):
        assert abs(v - want) < 1e-6, (h, v, want)
    vals = [v for _, v in env]
    assert all(b >= a for a, b in zip(vals, vals[1:]))


def test_cdf_envelope_two_moment_class():
    # LP vertices: {0, 0.5+, 1} gives 0.1 at h = 0.5; {0.3, 0.75+} gives 5/9
    prob = Problem(classes=(TWO_MOMENT,), model=_identity,
                   spec=QoISpec(kind="failure_prob", h=0.5, direction="inf"))
    cfg = DEConfig(seed=3, max_generations=300, population=30)
    env = cdf_envelope(prob, [0.5, 0.75], cfg)
    assert abs(env[0][1] - 0.1) < 1e-6
    assert abs(env[1][1] - 5.0 / 9.0) < 1e-6


def test_cdf_envelope_rejects_unsorted_grid():
    prob = Problem(classes=(MEAN_HALF,), model=_identity,
                   spec=QoISpec(kind="failure_prob", h=0.5, direction="inf"))
    with pytest.raises(ValueError):
        cdf_envelope(prob, [0.8, 0.3])
