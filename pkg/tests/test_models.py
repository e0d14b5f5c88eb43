import math
import sys

import numpy as np
import pytest

from momentbound.models import (ExternalCommandModel, ExternalTableModel,
                                HydraulicHeightModel, HydraulicLevelModel,
                                ModelDomainError, ModelFailureError,
                                conditional_failure_prob, hydraulic_height)

SUM_MODEL = [sys.executable, "-c",
             "import sys\n"
             "for line in sys.stdin:\n"
             "    print(sum(map(float, line.split())), flush=True)\n"]


def test_hydraulic_height_hand_value():
    # Zm - Zv = 4.5 makes sqrt((Zm-Zv)/5000) exactly 0.03
    got = hydraulic_height(736.0, 30.0, 50.0, 54.5)
    expected = math.exp(0.6 * math.log(736.0 / (300.0 * 30.0 * 0.03)))
    assert abs(got - expected) < 1e-13
    assert abs(got - 1.8254) < 5e-4


def test_hydraulic_height_vectorized_matches_scalar():
    rng = np.random.default_rng(3)
    j = rng.uniform(200, 3000, 20)
    ks = rng.uniform(15, 45, 20)
    zv = rng.uniform(49, 51, 20)
    zm = rng.uniform(54, 56, 20)
    vec = hydraulic_height(j, ks, zv, zm)
    for i in range(20):
        # vector and scalar code paths may differ by one ulp
        assert math.isclose(vec[i], hydraulic_height(j[i], ks[i], zv[i], zm[i]),
                            rel_tol=1e-14)


def test_hydraulic_height_monotonicity():
    base = hydraulic_height(736.0, 30.0, 50.0, 55.0)
    assert hydraulic_height(800.0, 30.0, 50.0, 55.0) > base
    assert hydraulic_height(736.0, 35.0, 50.0, 55.0) < base
    assert hydraulic_height(736.0, 30.0, 50.0, 54.0) > base  # gentler slope
    assert hydraulic_height(0.0, 30.0, 50.0, 55.0) == 0.0


def test_hydraulic_height_domain_errors():
    with pytest.raises(ModelDomainError) as err:
        hydraulic_height(736.0, 30.0, 55.0, 54.0)
    assert err.value.row == (736.0, 30.0, 55.0, 54.0)
    with pytest.raises(ModelDomainError):
        hydraulic_height(736.0, 0.0, 50.0, 55.0)
    with pytest.raises(ModelDomainError):
        hydraulic_height(-1.0, 30.0, 50.0, 55.0)
    # vector input reports the first offending row
    with pytest.raises(ModelDomainError) as err:
        hydraulic_height(np.array([100.0, -5.0]), np.array([30.0, 20.0]),
                         np.array([50.0, 50.0]), np.array([55.0, 55.0]))
    assert err.value.row == (-5.0, 20.0, 50.0, 55.0)


def test_height_and_level_models():
    hm = HydraulicHeightModel()
    lm = HydraulicLevelModel()
    assert hm.dims == 4 and lm.dims == 4
    x = np.array([[736.0, 30.0, 50.0, 55.0],
                  [1000.0, 25.0, 49.5, 54.5]])
    h = hm(x)
    assert np.allclose(h, hydraulic_height(x[:, 0], x[:, 1], x[:, 2], x[:, 3]))
    assert np.allclose(lm(x), x[:, 2] + h, atol=0, rtol=0)


def test_conditional_failure_prob_at_characteristic_flow():
    # coef = 300*30*0.03 = 270; h = 51 makes q(h) = 270 = rho, so the
    # probability is exp(-exp(0)) = 1/e no matter the scale
    for beta in (50.0, 190.0, 400.0):
        p = conditional_failure_prob(270.0, beta, 30.0, 50.0, 54.5, 51.0)
        assert abs(p - math.exp(-1.0)) < 1e-14


def test_conditional_failure_prob_small_scale_limit():
    # beta -> 0 turns the CDF into a step at q(h) = rho
    assert conditional_failure_prob(270.0, 1e-9, 30.0, 50.0, 54.5, 51.5) > 1 - 1e-12
    assert conditional_failure_prob(270.0, 1e-9, 30.0, 50.0, 54.5, 50.5) < 1e-12


def test_conditional_failure_prob_monotone():
    # grid straddling the characteristic height, clear of tail underflow
    hs = np.linspace(51.8, 53.8, 40)
    ps = conditional_failure_prob(1013.0, 190.0, 30.0, 50.0, 55.0, hs)
    assert np.all(np.diff(ps) > 0)
    assert 0.0 < ps[0] < ps[-1] < 1.0
    p_lo = conditional_failure_prob(1013.0, 190.0, 20.0, 50.0, 55.0, 52.0)
    p_hi = conditional_failure_prob(1013.0, 190.0, 40.0, 50.0, 55.0, 52.0)
    assert p_hi > p_lo  # smoother bed carries more flow before h is reached


def test_conditional_failure_prob_conventions_agree():
    # 52.5 - 50.0 is exact in binary, so the two routes match to the bit
    p_level = conditional_failure_prob(1013.0, 190.0, 30.0, 50.0, 55.0, 52.5,
                                       convention="level")
    p_height = conditional_failure_prob(1013.0, 190.0, 30.0, 50.0, 55.0, 2.5,
                                        convention="height")
    assert p_level == p_height


def test_conditional_failure_prob_below_riverbed():
    with pytest.warns(RuntimeWarning):
        p = conditional_failure_prob(1013.0, 190.0, 30.0, 50.0, 55.0, 49.5)
    assert p == 0.0


def test_conditional_failure_prob_literal_form():
    rho, beta, h = 1013.0, 190.0, 52.0
    q = 300.0 * 30.0 * math.sqrt(5.0 / 5000.0) * (h - 50.0) ** (5.0 / 3.0)
    lit = conditional_failure_prob(rho, beta, 30.0, 50.0, 55.0, h,
                                   literal_form=True)
    assert abs(lit - math.exp(-math.exp(min(beta * (rho - q), 700.0)))) < 1e-15
    std = conditional_failure_prob(rho, beta, 30.0, 50.0, 55.0, h)
    assert lit != std


def test_conditional_failure_prob_validation():
    with pytest.raises(ModelDomainError):
        conditional_failure_prob(1013.0, -1.0, 30.0, 50.0, 55.0, 52.0)
    with pytest.raises(ModelDomainError):
        conditional_failure_prob(1013.0, 190.0, 30.0, 55.0, 54.0, 52.0)
    with pytest.raises(ValueError):
        conditional_failure_prob(1013.0, 190.0, 30.0, 50.0, 55.0, 52.0,
                                 convention="depth")


def test_conditional_failure_prob_matches_monte_carlo():
    # draw Gumbel flows, push through the level model, compare frequencies
    rho, beta, ks, zv, zm, h = 1013.0, 558.0, 30.0, 50.0, 55.0, 52.5
    rng = np.random.default_rng(7)
    u = rng.random(200_000)
    j = np.maximum(rho - beta * np.log(-np.log(u)), 0.0)
    level = zv + hydraulic_height(j, ks, zv, zm)
    p_mc = float(np.mean(level <= h))
    p = conditional_failure_prob(rho, beta, ks, zv, zm, h)
    assert abs(p - p_mc) < 0.005


def test_external_table_model(tmp_path):
    path = tmp_path / "grid.csv"
    path.write_text("x1,x2,y\n0.0,0.0,1.0\n1.0,0.0,2.0\n0.0,1.0,3.0\n1.0,1.0,4.0\n")
    model = ExternalTableModel(str(path))
    assert model.dims == 2
    got = model(np.array([[0.0, 0.0], [0.9, 0.1], [0.1, 0.9], [2.0, 2.0]]))
    assert np.array_equal(got, [1.0, 2.0, 3.0, 4.0])


def test_external_table_model_rejects_bad_files(tmp_path):
    empty = tmp_path / "empty.csv"
    empty.write_text("")
    with pytest.raises(ModelFailureError):
        ExternalTableModel(str(empty))
    badheader = tmp_path / "badheader.csv"
    badheader.write_text("a,b,y\n0,0,1\n")
    with pytest.raises(ModelFailureError):
        ExternalTableModel(str(badheader))
    nonnum = tmp_path / "nonnum.csv"
    nonnum.write_text("x1,y\n0.0,oops\n")
    with pytest.raises(ModelFailureError):
        ExternalTableModel(str(nonnum))
    norows = tmp_path / "norows.csv"
    norows.write_text("x1,y\n")
    with pytest.raises(ModelFailureError):
        ExternalTableModel(str(norows))


def test_external_command_model_line_protocol():
    model = ExternalCommandModel(SUM_MODEL, dims=3)
    try:
        x = np.array([[1.0, 2.0, 3.0], [0.5, 0.25, 0.125], [-1.0, 1.0, 0.0]])
        got = model(x)
        assert np.allclose(got, x.sum(axis=1), atol=1e-12)
        # session survives across calls
        assert np.allclose(model(x[:1]), [6.0], atol=1e-12)
    finally:
        model.close()


def test_external_command_model_pool_is_deterministic():
    x = np.random.default_rng(5).uniform(-10, 10, (40, 2))
    one = ExternalCommandModel(SUM_MODEL, dims=2, sessions=1)
    pool = ExternalCommandModel(SUM_MODEL, dims=2, sessions=3)
    try:
        assert np.array_equal(one(x), pool(x))
    finally:
        one.close()
        pool.close()


def test_external_command_model_failures():
    dead = ExternalCommandModel(["true"], dims=1)
    with pytest.raises(ModelFailureError):
        dead(np.array([[1.0]]))
    chatty = ExternalCommandModel(
        [sys.executable, "-c",
         "import sys\nfor line in sys.stdin: print('pear', flush=True)\n"],
        dims=1)
    try:
        with pytest.raises(ModelFailureError):
            chatty(np.array([[1.0]]))
    finally:
        chatty.close()
    nanbox = ExternalCommandModel(
        [sys.executable, "-c",
         "import sys\nfor line in sys.stdin: print('nan', flush=True)\n"],
        dims=1)
    try:
        with pytest.raises(ModelFailureError):
            nanbox(np.array([[1.0]]))
    finally:
        nanbox.close()


def test_external_command_wraps_builtin_model():
    script = ("import sys\n"
              "from momentbound.models import hydraulic_height\n"
              "for line in sys.stdin:\n"
              "    j, ks, zv, zm = map(float, line.split())\n"
              "    print(float(hydraulic_height(j, ks, zv, zm)), flush=True)\n")
    ext = ExternalCommandModel([sys.executable, "-c", script], dims=4)
    try:
        x = np.random.default_rng(11).uniform(
            [200, 15, 49, 54], [3000, 45, 51, 56], (25, 4))
        assert np.allclose(ext(x), HydraulicHeightModel()(x), atol=1e-12)
    finally:
        ext.close()
