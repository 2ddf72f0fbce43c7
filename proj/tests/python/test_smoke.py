import math
import os
import subprocess

import numpy as np
import pytest

import jsmean


def test_pinv_and_penrose():
    rng = np.random.default_rng(0)
    y = rng.standard_normal((2, 4))
    res = jsmean.pinv(y.T @ y)
    assert res.rank == 2
    assert max(jsmean.penrose_residuals(y.T @ y, res.pinv)) < 1e-10
    with pytest.raises(jsmean.InvalidInput):
        jsmean.pinv(np.array([[1.0, 2.0], [0.0, 1.0]]))


def test_estimate_and_conditions():
    spec = jsmean.ModelSpec(16, 3, 2, np.zeros((16, 3)), jsmean.identity_sigma(16))
    draw = jsmean.sample_draw(spec, 7)
    bound = jsmean.domination_bound(16, 3, 2)
    assert bound == pytest.approx(32 / 13)
    r = jsmean.scaled_sigmoid_r(bound)
    out = jsmean.estimate(draw.x, draw.s, r)
    assert out.delta.shape == (16, 3)
    assert out.f == pytest.approx(jsmean.compute_F(draw.x, draw.s_pinv))
    proj = draw.s @ draw.s_pinv.pinv
    expected = draw.x - r.eval(out.f) / out.f * proj @ draw.x
    np.testing.assert_allclose(out.delta, expected, rtol=0, atol=1e-12)
    assert jsmean.check_domination_conditions(spec, r).overall
    assert jsmean.sigmoid_r().eval(1.0) == pytest.approx(1 / (1 + math.exp(-1)), rel=1e-15)


def test_risk_and_diagnostics():
    spec = jsmean.ModelSpec(4, 3, 2, np.ones((4, 3)), jsmean.compound_sigma(4))
    mle = jsmean.mc_risk(spec, reps=4000, seed=3)
    assert abs(mle.mean - 12.0) <= 3 * mle.stderr
    zero = jsmean.risk_difference(spec, jsmean.zero_r(), 100, 1)
    assert zero.delta_risk == 0.0 and zero.stderr == 0.0
    example = jsmean.ModelSpec(2, 1, 1, np.ones((2, 1)), jsmean.identity_sigma(2))
    with pytest.raises(jsmean.PreconditionError):
        jsmean.lemma4_upper_bound(example)
    control = jsmean.ModelSpec(8, 2, 1, np.zeros((8, 2)), jsmean.identity_sigma(8))
    assert jsmean.lemma4_upper_bound(control) == pytest.approx(288.0)
    assert not jsmean.inv_F_diagnostic(control, 2000, 1).heavy_tail


def test_audit_and_cli():
    reports = jsmean.run_full_audit(instances=2, seed=1, mc_reps=500)
    assert reports and all(r.passed for r in reports)
    code, out, err = jsmean.run_cli(["simulate", "--p", "8", "--n-list", "2", "--reps", "20"])
    assert code == 0
    assert out.splitlines()[0] == "p,q,n,sigma_kind,theta_norm,reps,seed,delta_risk,stderr,rank_condition_ok"
    assert len(out.splitlines()) == 12
    code, _, err = jsmean.run_cli(["simulate", "--p", "x"])
    assert code == 2 and "error" in err


@pytest.mark.skipif("JSMEAN_BINARY" not in os.environ, reason="binary path not provided")
def test_binary_matches_module():
    args = ["counterexample", "--reps", "1000", "--seed", "4"]
    proc = subprocess.run([os.environ["JSMEAN_BINARY"], *args], capture_output=True, text=True)
    code, out, _ = jsmean.run_cli(args)
    assert proc.returncode == code
    assert proc.stdout == out
