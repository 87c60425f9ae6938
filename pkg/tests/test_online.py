import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from genmdp.bench import fixture
from genmdp.discretization import build_uniform_net
from genmdp.mdp_core import gain_bias_of_stationary
from genmdp.oracles import BudgetOverflow, QueryLedger
from genmdp import online


def test_oracle_exact_finite_zero_regret(m2):
    tr, logs = online.run_online_finite(m2, 2, 300, "oracle_exact", seed=0)
    assert np.all(tr.cum_finiteH == 0)
    refreshes = [l for l in logs if l.planner]
    assert len(refreshes) == math.floor(math.log2(300)) + 1


def test_oracle_exact_infinite(m2):
    tr, logs = online.run_online_infinite(m2, 5000, "oracle_exact", seed=1)
    assert np.allclose(tr.cum_expected, 0, atol=1e-6)
    assert abs(tr.cum_inpath[-1]) < 5 * math.sqrt(5000)
    assert len(logs) == math.ceil(math.log2(5000 + 1))
    assert sum(l.length for l in logs) == 5000


@pytest.mark.parametrize("mode", ["classical", "quantum_modern", "quantum_simple"])
def test_finite_budgets_respected(m2, mode):
    led = QueryLedger()
    tr, logs = online.run_online_finite(m2, 2, 2048, mode, seed=0, ledger=led, scale=1 / 64)
    assert not led.any_overflow()
    for l in logs:
        if l.planner and not l.planner["flagged"]:
            assert l.planner["queries"] <= l.planner["budget"]
            assert l.planner["one_sided"]
    assert np.all(np.diff(tr.episode_regret.cumsum()) >= -1e-12)


@pytest.mark.parametrize("mode", ["classical", "quantum"])
def test_infinite_budgets_respected(m2, mode):
    led = QueryLedger()
    tr, logs = online.run_online_infinite(m2, 4096, mode, seed=2, ledger=led)
    assert not led.any_overflow()
    assert [l.length for l in logs] == [1, 2, 4, 8, 16, 32, 64, 128, 256, 512, 1024, 2048, 1]


def test_replay_determinism(m2):
    a, _ = online.run_online_infinite(m2, 2000, "quantum", seed=5)
    b, _ = online.run_online_infinite(m2, 2000, "quantum", seed=5)
    assert np.array_equal(a.reward, b.reward) and np.array_equal(a.state, b.state)
    c, _ = online.run_online_finite(m2, 2, 500, "classical", seed=5, scale=1 / 64)
    d, _ = online.run_online_finite(m2, 2, 500, "classical", seed=5, scale=1 / 64)
    assert np.array_equal(c.cum_finiteH, d.cum_finiteH)


def test_compute_regrets_examples(m2):
    T = 100
    log = online.StepLog(np.arange(1, T + 1), np.ones(T, int), np.zeros(T, int), np.zeros(T, int),
                         np.full(T, 0.975), np.array([0]))
    g_stay = gain_bias_of_stationary(m2, np.array([0, 0])).gain
    tr = online.compute_regrets(log, online.OracleBundle(g_star=0.975, rule_gain=[g_stay]))
    assert np.allclose(tr.cum_inpath, 0)
    assert tr.cum_expected[-1] == pytest.approx(100 * 0.475)
    with pytest.raises(ValueError):
        online.compute_regrets(log, online.OracleBundle(g_star=0.975))


def test_csv_and_sidecar(m2, tmp_path):
    led = QueryLedger()
    tr, logs = online.run_online_infinite(m2, 64, "classical", seed=0, ledger=led)
    tr.to_csv(tmp_path / "t.csv")
    online.write_sidecar(tmp_path / "t.json", logs, led, {"seed": 0})
    lines = (tmp_path / "t.csv").read_text().splitlines()
    assert lines[0].startswith("t,episode,state,action,reward") and len(lines) == 65
    assert '"episodes"' in (tmp_path / "t.json").read_text()


def test_strict_overflow_raises(m2):
    led = QueryLedger(1e-3, strict=True)
    led.open_phase("x", 1)
    with pytest.raises(BudgetOverflow):
        from genmdp.plan_finite import classical_backward_induction
        classical_backward_induction(m2, 2, 0.5, 0.1, ledger=led, scale=1 / 64)


def test_compact_loop_runs():
    spec = fixture("compactD1")
    net = build_uniform_net(1, 16)
    tr, logs = online.run_online_infinite(spec, 300, "quantum", seed=0, net=net)
    assert tr.state.max() < 16 and np.isfinite(tr.cum_expected).all()
    tr, _ = online.run_online_finite(spec, 2, 64, "quantum_simple", seed=0, net=net)
    assert np.isfinite(tr.cum_finiteH).all()


def test_doubling_examples():
    assert online.doubling_bound_check([1, 1, 2, 4, 8, 16, 32])
    assert online.doubling_bound_check([1])
    assert online.doubling_bound_check([])


@settings(max_examples=1000, deadline=None)
@given(st.lists(st.floats(0, 1), min_size=1, max_size=40), st.floats(0, 1))
def test_doubling_random_admissible(fracs, first):
    z = [first]
    for f in fracs:
        z.append(f * max(1.0, sum(z)))  # admissible: z_k <= Z_{k-1}
    assert online.doubling_bound_check(z)
