import numpy as np
import pytest

from genmdp.bench import fixture
from genmdp.mdp_core import (
    FiniteMdp, ergodicity_coefficient, exact_gain_bias_optimal, gain_bias_of_stationary,
)
from genmdp.oracles import HypothesisViolation, QuantumEmulationConfig, QueryLedger
from genmdp import plan_infinite as pinf


def vi_cfg(mdp, eps, **kw):
    return pinf.VIConfig(eps=eps, nu=ergodicity_coefficient(mdp).nu,
                         Lambda=exact_gain_bias_optimal(mdp).span_h, **kw)


def test_clip_examples():
    assert np.allclose(pinf.clip_update([0.3, 0.3], 0.2), [0.3, 0.3])
    assert np.allclose(pinf.clip_update([0, 1], 0.2), [0.1, 0.9])
    assert np.allclose(pinf.clip_update([0, 0.5, 1], 0.2), [0.1, 0.5, 0.9])


def test_clip_contract():
    rng = np.random.default_rng(0)
    for _ in range(2000):
        u = rng.normal(size=int(rng.integers(1, 6))) * rng.choice([0.01, 1, 10])
        e = float(rng.uniform(0, 1))
        c = pinf.clip_update(u, e)
        assert np.ptp(c) <= np.ptp(u) + 1e-12
        assert np.max(np.abs(c - u)) <= e / 2 + 1e-12


def test_config_validation():
    with pytest.raises(HypothesisViolation):
        pinf.VIConfig(eps=3.0, nu=0.9, Lambda=1)
    with pytest.raises(ValueError):
        pinf.VIConfig(eps=0.1, nu=1.0, Lambda=1)
    c = pinf.VIConfig(eps=0.05, nu=0.9, Lambda=0.5)
    assert c.sweep_cap() == 10 * int(np.ceil(np.log(20) / np.log(1 / 0.9)))
    assert c.span_bound() == pytest.approx(min(5.0, 10.0))


@pytest.mark.parametrize("name", ["M2", "riverswim6"])
def test_classical_vi(name):
    mdp = fixture(name)
    g = exact_gain_bias_optimal(mdp).gain
    cfg = vi_cfg(mdp, 0.05)
    for seed in range(3):
        out = pinf.classical_value_iteration(mdp, cfg, seed=seed)
        assert abs(out.gain - g) <= 0.05
        assert out.sweeps <= cfg.sweep_cap()
        assert g - gain_bias_of_stationary(mdp, out.rule).g.min() <= 0.1


@pytest.mark.parametrize("name", ["M2", "riverswim6"])
@pytest.mark.parametrize("mode", ["uniform", "signed_worst"])
def test_quantum_vi(name, mode):
    mdp = fixture(name)
    g = exact_gain_bias_optimal(mdp).gain
    cfg = vi_cfg(mdp, 0.05)
    for seed in range(5):
        out = pinf.quantum_value_iteration(mdp, cfg, qcfg=QuantumEmulationConfig(mode), seed=seed)
        assert abs(out.gain - g) <= 0.05
        eps_eff = max(out.backup_errors)
        gd = gain_bias_of_stationary(mdp, out.rule).g
        assert np.max(np.abs(gd - out.gain)) <= eps_eff + out.spans[-1] / 2 + 1e-9
        _, holds = pinf.robust_vi_span_certificate(out.spans, eps_eff, cfg.nu, out.spans[0])
        assert holds
        assert max(out.iterate_spans) <= cfg.span_bound() + 1e-9


def test_constant_reward_nu_zero():
    mdp = FiniteMdp(kernel=np.tile([0.3, 0.7], (2, 3, 1)), rewards=np.full((2, 3), 0.4))
    cfg = pinf.VIConfig(eps=0.05, nu=0.0, Lambda=0.0)
    out = pinf.classical_value_iteration(mdp, cfg)
    assert out.gain == pytest.approx(0.4) and out.sweeps == 0


def test_exact_noise_nu_zero_optimal():
    rng = np.random.default_rng(3)
    mdp = FiniteMdp(kernel=np.tile(rng.dirichlet(np.ones(4)), (4, 3, 1)), rewards=rng.random((4, 3)))
    cfg = pinf.VIConfig(eps=0.01, nu=0.0, Lambda=exact_gain_bias_optimal(mdp).span_h)
    out = pinf.quantum_value_iteration(mdp, cfg, qcfg=QuantumEmulationConfig("exact"))
    assert gain_bias_of_stationary(mdp, out.rule).gain == pytest.approx(exact_gain_bias_optimal(mdp).gain)


def test_ledger_matches_closed_form(m2):
    cfg = vi_cfg(m2, 0.05)
    led = QueryLedger()
    out = pinf.classical_value_iteration(m2, cfg, ledger=led)
    assert led.count("classical_sample") == pinf.classical_query_count(cfg, 2, 2, out.sweeps)


def test_quantum_eps_ratio(m2):
    reads = []
    for eps in (0.05, 0.025):
        led = QueryLedger()
        out = pinf.quantum_value_iteration(m2, vi_cfg(m2, eps), ledger=led, seed=0)
        reads.append((led.used(), out.sweeps))
    assert reads[0][1] == reads[1][1]
    assert 1.8 <= reads[1][0] / reads[0][0] <= 2.3


def test_certificate_examples():
    spans = [1.0, 0.5, 0.25, 0.125]
    b, ok = pinf.robust_vi_span_certificate(spans, 0.0, 0.5, 1.0)
    assert ok and np.allclose(b, spans)
    b, _ = pinf.robust_vi_span_certificate([1, 0, 0], 0.1, 0.0, 1.0)
    assert np.allclose(b[1:], 0.4)


def test_sweep_cap_raises():
    k = np.zeros((2, 1, 2))
    k[0, 0, 1] = k[1, 0, 0] = 1  # periodic, no contraction
    mdp = FiniteMdp(kernel=k, rewards=np.array([[0.0], [1.0]]))
    cfg = pinf.VIConfig(eps=0.01, nu=0.5, Lambda=1.0, safety_factor=1)  # ν understated on purpose
    with pytest.raises(pinf.SweepCapExceeded):
        pinf.classical_value_iteration(mdp, cfg)


def test_determinism(m2):
    cfg = vi_cfg(m2, 0.05)
    a = pinf.quantum_value_iteration(m2, cfg, seed=8).to_json()
    assert a == pinf.quantum_value_iteration(m2, cfg, seed=8).to_json()
