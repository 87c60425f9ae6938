import math

import numpy as np
import pytest

from genmdp.bench import generate_random_mdp, fixture
from genmdp.discretization import build_uniform_net
from genmdp.mdp_core import FiniteMdp, exact_backward_induction, policy_value_finite
from genmdp.oracles import HypothesisViolation, QuantumEmulationConfig, QueryLedger
from genmdp import plan_finite as pf

SCALE = 1 / 64


def sandwich(mdp, out, H):
    V, _ = exact_backward_induction(mdp, H)
    Vp, _ = policy_value_finite(mdp, out.policy, H)
    return bool(np.all(out.values <= Vp + 1e-9) and np.all(Vp <= V + 1e-9)), V[0] - Vp[0]


def test_classical_m2_examples(m2):
    out = pf.classical_backward_induction(m2, 2, 0.05, 0.1, seed=1, scale=SCALE)
    ok, gap = sandwich(m2, out, 2)
    assert ok and gap.max() <= 0.05
    assert policy_value_finite(m2, out.policy, 2)[0][0, 0] >= 1.425


def test_classical_count_identity(m2):
    for H, eps in [(2, 0.05), (3, 0.3), (4, 1.0)]:
        led = QueryLedger()
        pf.classical_backward_induction(m2, H, eps, 0.1, seed=0, scale=SCALE, ledger=led)
        sched = pf.classical_schedule(H, eps, 0.1, 2, 2, SCALE)
        assert len(sched) == pf.num_epochs(H, eps)
        assert led.count("classical_sample") == sum((m + (H - 1) * l) * 4 for _, m, l, _ in sched)
        assert led.count("classical_sample") == pf.classical_query_count(H, eps, 0.1, 2, 2, SCALE)


def test_modern_and_simple_count_identities(m2):
    cfg = QuantumEmulationConfig()
    for H in (1, 2, 4):
        led = QueryLedger()
        pf.quantum_modern_backward_induction(m2, H, 0.1, 0.1, ledger=led, cfg=cfg)
        assert led.used() == pf.modern_query_count(H, 0.1, 0.1, 2, 2, cfg)
        led = QueryLedger()
        pf.quantum_simple_backward_induction(m2, H, 0.1, 0.1, ledger=led, cfg=cfg)
        assert led.used() == pf.simple_query_count(H, 0.1, 0.1, 2, 2, cfg)


def test_zero_reward_mdp(m2):
    z = FiniteMdp(kernel=m2.kernel, rewards=np.zeros((2, 2)))
    out = pf.classical_backward_induction(z, 3, 0.5, 0.1, scale=SCALE)
    assert np.all(out.values == 0)
    assert sandwich(z, out, 3)[1].max() == 0


def test_h1_is_greedy(m2):
    for fn in (pf.quantum_simple_backward_induction, pf.quantum_modern_backward_induction):
        out = fn(m2, 1, 0.1, 0.1)
        assert np.array_equal(out.policy[0], np.argmax(m2.rewards, axis=1))


@pytest.mark.parametrize("mode", ["uniform", "signed_worst"])
def test_quantum_planners_m2(m2, mode):
    cfg = QuantumEmulationConfig(mode)
    V, _ = exact_backward_induction(m2, 2)
    for seed in range(20):
        for fn in (pf.quantum_modern_backward_induction, pf.quantum_simple_backward_induction):
            out = fn(m2, 2, 0.05, 0.1, cfg=cfg, seed=seed)
            ok, _ = sandwich(m2, out, 2)
            assert ok and out.one_sided_ok
            assert policy_value_finite(m2, out.policy, 2)[0][0, 0] >= 1.375
            # stay and go coincide at state 1, so compare values rather than actions
            assert np.allclose(policy_value_finite(m2, out.policy, 2)[0], V)


def test_exact_noise_gives_optimal_policy():
    mdp = generate_random_mdp(4, 3, 0.3, 11)
    V, _ = exact_backward_induction(mdp, 3)
    out = pf.quantum_modern_backward_induction(mdp, 3, 0.01, 0.1, cfg=QuantumEmulationConfig("exact"))
    assert np.allclose(policy_value_finite(mdp, out.policy, 3)[0][0], V[0], atol=0.01)


def test_modern_eps_ratio(m2):
    a, b = QueryLedger(), QueryLedger()
    pf.quantum_modern_backward_induction(m2, 2, 0.05, 0.1, ledger=a)
    pf.quantum_modern_backward_induction(m2, 2, 0.025, 0.1, ledger=b)
    assert 1.8 <= b.used() / a.used() <= 2.3


def test_simple_sqrt_a_ratio():
    small, big = generate_random_mdp(3, 4, 0.2, 1), generate_random_mdp(3, 16, 0.2, 1)
    a, b = QueryLedger(), QueryLedger()
    pf.quantum_simple_backward_induction(small, 3, 0.05, 0.1, ledger=a)
    pf.quantum_simple_backward_induction(big, 3, 0.05, 0.1, ledger=b)
    assert 1.9 <= b.used() / a.used() <= 2.6


def test_monotone_epochs_and_error_halving():
    mdp = generate_random_mdp(4, 2, 0.2, 5)
    out = pf.classical_backward_induction(mdp, 3, 0.1, 0.1, seed=2, scale=SCALE)
    V, _ = exact_backward_induction(mdp, 3)
    prev = None
    for e in out.epochs:
        if prev is not None:
            assert np.all(e.u >= prev)
        prev = e.u
        Vp, _ = policy_value_finite(mdp, e.policy, 3)
        assert np.max(V[0] - Vp[0]) <= e.eps_k + 1e-9


def test_determinism(m2):
    a = pf.classical_backward_induction(m2, 2, 0.1, 0.1, seed=4, scale=SCALE)
    b = pf.classical_backward_induction(m2, 2, 0.1, 0.1, seed=4, scale=SCALE)
    assert a.to_json() == b.to_json()
    c = pf.quantum_modern_backward_induction(m2, 2, 0.1, 0.1, seed=4)
    d = pf.quantum_modern_backward_induction(m2, 2, 0.1, 0.1, seed=4)
    assert c.to_json() == d.to_json()


def test_compact_planning_and_hypothesis():
    spec = fixture("compactD1")
    with pytest.raises(HypothesisViolation):
        pf.classical_backward_induction(spec, 2, 0.5, 0.1, net=build_uniform_net(1, 4), scale=SCALE)
    net = build_uniform_net(1, 32)
    led = QueryLedger()
    out = pf.quantum_modern_backward_induction(spec, 2, 0.5, 0.1, net=net, ledger=led)
    assert out.policy.shape == (2, 32) and out.guarantee["slack"] > 0
    cl = pf.classical_backward_induction(spec, 2, 1.0, 0.1, net=net, scale=SCALE / 8)
    assert cl.queries == pf.classical_query_count(2, 1.0, 0.1, 32, 2, SCALE / 8)


def test_bad_args(m2):
    with pytest.raises(ValueError):
        pf.classical_backward_induction(m2, 0, 0.1, 0.1)
    with pytest.raises(ValueError):
        pf.quantum_simple_backward_induction(m2, 2, 0.1, 1.5)
    assert pf.num_epochs(2, 0.05) == math.ceil(math.log2(40))
