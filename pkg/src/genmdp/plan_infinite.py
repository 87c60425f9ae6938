"""Average-reward value iteration under a generative model.

Both planners start from u_0 = 0, u_1 = max_a r, and repeat an approximate
greedy backup followed by clip_update until the span of successive
differences drops below the stopping threshold. The gain estimate is the
midrange of the last difference.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .discretization import HolderParams, Net
from .mdp_core import ConvergenceError, span
from .oracles import (
    HypothesisViolation, QuantumEmulationConfig, QueryLedger, as_model, bounded_noise,
    q_max_charge, q_mean_charge,
)


class SweepCapExceeded(ConvergenceError):
    """Value iteration ran past its safety cap; the contraction hypothesis likely fails."""


@dataclass(frozen=True)
class VIConfig:
    eps: float
    nu: float
    Lambda: float
    delta: float = 0.1
    holder: HolderParams = HolderParams(0.0, 1.0)
    safety_factor: int = 10
    scale: float = 1.0

    def __post_init__(self):
        if not self.eps > 0:
            raise ValueError("eps must be positive")
        if not 0 <= self.nu < 1:
            raise ValueError("nu must lie in [0, 1)")
        if self.Lambda < 0:
            raise ValueError("Lambda must be nonnegative")
        if not 0 < self.delta < 1:
            raise ValueError("delta must lie in (0, 1)")
        if self.nu > 0 and self.eps > 2 / self.nu:
            raise HypothesisViolation(f"eps = {self.eps} exceeds 2/nu = {2 / self.nu:.4g}")

    @property
    def eps_u(self) -> float:
        return (1 - self.nu) * self.eps / 4

    def threshold(self, slack: float) -> float:
        return 1.5 * self.eps + 18 * (1 + self.Lambda) * slack / (1 - self.nu)

    def sweep_cap(self) -> int:
        if self.nu == 0:
            base = 1
        else:
            base = max(1, math.ceil(math.log(1 / self.eps) / math.log(1 / self.nu)))
        return self.safety_factor * base

    def theorem_sweeps(self, slack: float = 0.0) -> int:
        """Sweeps after which the span bound falls below the stopping threshold (sp(L u_0 - u_0) <= 1)."""
        if self.nu == 0:
            return 1
        eu = self.eps_u
        c = (1 + self.Lambda) * slack
        ratio = (1 - self.nu) * (1 + 2 * eu + 8 * c) / (2 * eu + 2 * c)
        return max(1, math.ceil(math.log(max(ratio, 1.0)) / math.log(1 / self.nu)))

    def span_bound(self) -> float:
        """A-priori bound on sp(u_t) along the run."""
        b = 4 * self.Lambda + 3
        return b if self.nu == 1 else min(b, 2 * self.Lambda / (1 - self.nu))


@dataclass
class VIOutput:
    rule: np.ndarray
    gain: float
    spans: list  # sp(u_{t+1} - u_t) for t = 0, 1, ...
    sweeps: int
    ledger: list = field(default_factory=list)
    queries: int = 0
    backup_errors: list = field(default_factory=list)  # exact |u_{t+1} - L u_t|_inf on the net model
    iterate_spans: list = field(default_factory=list)  # sp(u_t)
    threshold: float = 0.0
    eps_u: float = 0.0

    def to_dict(self):
        return {"rule": self.rule.tolist(), "gain": self.gain, "spans": self.spans,
                "sweeps": self.sweeps, "ledger": self.ledger, "queries": self.queries,
                "threshold": self.threshold}

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


def clip_update(u_tilde, eps_u: float) -> np.ndarray:
    """Pull entries near the max down and entries near the min up by at most eps_u/2."""
    u = np.asarray(u_tilde, dtype=float)
    if u.size == 0:
        raise ValueError("empty input")
    hi, lo = u.max(), u.min()
    out = u.copy()
    top = u >= hi - eps_u / 2
    bot = u <= lo + eps_u / 2
    out[top] = max(hi - eps_u / 2, lo)
    # the near-max case takes precedence, as in the update rule's case order
    out[bot & ~top] = min(lo + eps_u / 2, hi)
    return out


def classical_sample_count(cfg: VIConfig, t: int, S: int, A: int) -> int:
    """m_t, samples per (s, a) at sweep t (1-based)."""
    nu, eps, Lam = cfg.nu, cfg.eps, cfg.Lambda
    factor = min(4 * (1 + Lam) ** 2, Lam**2 / (1 - nu) ** 2)
    m = cfg.scale * 512 / ((1 - nu) ** 2 * eps**2) * factor * math.log(math.pi**2 * t**2 * S * A / (6 * cfg.delta))
    return max(1, math.ceil(m))


def classical_query_count(cfg: VIConfig, S: int, A: int, sweeps: int | None = None) -> int:
    n = cfg.theorem_sweeps() if sweeps is None else sweeps
    return sum(classical_sample_count(cfg, t, S, A) * S * A for t in range(1, n + 1))


def _quantum_deltas(cfg: VIConfig, t: int, S: int, A: int):
    d1 = min(0.5, 6 * cfg.delta / (math.pi**2 * t**2 * S))
    d2 = min(d1, d1**2 / (A * math.log(1 / d1) ** 2))
    return d1, d2


def quantum_sweep_charge(cfg: VIConfig, t: int, S: int, A: int, span_u: float, qcfg: QuantumEmulationConfig):
    """(q_max_inner, q_mean) charged by one sweep of the quantum planner."""
    d1, d2 = _quantum_deltas(cfg, t, S, A)
    n_max = q_max_charge(A, d1, qcfg.c_max)
    if span_u <= 0:
        return S * n_max, 0
    eps_rel = cfg.eps_u / 2 / span_u
    return S * n_max, S * n_max * q_mean_charge(eps_rel, d2, qcfg.c_mean)


def quantum_query_count(cfg: VIConfig, S: int, A: int, qcfg: QuantumEmulationConfig | None = None,
                        sweeps: int | None = None) -> int:
    qcfg = qcfg or QuantumEmulationConfig()
    n = cfg.theorem_sweeps() if sweeps is None else sweeps
    return sum(quantum_sweep_charge(cfg, t, S, A, cfg.span_bound(), qcfg)[1] for t in range(1, n + 1))


def _check(cfg: VIConfig, slack: float):
    if cfg.nu > 0 and slack > (1 - cfg.nu) / cfg.nu:
        raise HypothesisViolation(f"L n^-alpha = {slack:.4g} exceeds (1-nu)/nu")


def _run(model, cfg: VIConfig, ledger: QueryLedger, backup):
    r = model.rewards
    P = model.kernel
    u_prev = np.zeros(model.S)
    u = r.max(axis=1)
    rule = np.argmax(r, axis=1)
    thr = cfg.threshold(model.slack)
    cap = cfg.sweep_cap()
    spans = [span(u - u_prev)]
    errors = [0.0]
    it_spans = [span(u)]
    t = 1
    while spans[-1] > thr:
        if t > cap:
            raise SweepCapExceeded(f"no convergence after {cap} sweeps (span {spans[-1]:.3g} > {thr:.3g})")
        u_tilde, rule = backup(u, t)
        u_next = clip_update(u_tilde, cfg.eps_u)
        errors.append(float(np.max(np.abs(u_next - (r + P @ u).max(axis=1)))))
        u_prev, u = u, u_next
        spans.append(span(u - u_prev))
        it_spans.append(span(u))
        t += 1
    d = u - u_prev
    return rule, 0.5 * (d.max() + d.min()), spans, t - 1, errors, it_spans, thr


def classical_value_iteration(env, cfg: VIConfig, *, net: Net | None = None, ledger: QueryLedger | None = None,
                              seed=0, rng=None) -> VIOutput:
    """Approximate value iteration with Hoeffding-sized sample batches per sweep."""
    model = as_model(env, net, cfg.holder)
    _check(cfg, model.slack)
    rng = rng if rng is not None else np.random.default_rng(seed)
    ledger = ledger if ledger is not None else QueryLedger()
    start = ledger.used()

    def backup(u, t):
        m = classical_sample_count(cfg, t, model.S, model.A)
        freq = model.counts(m, rng, ledger) / m
        base = u.min()
        q = model.rewards + base + freq @ (u - base)
        a = np.argmax(q, axis=1)
        return q[np.arange(model.S), a], a

    rule, g, spans, sweeps, errors, it_spans, thr = _run(model, cfg, ledger, backup)
    return VIOutput(rule, float(g), spans, sweeps, ledger.snapshot(), ledger.used() - start,
                    errors, it_spans, thr, cfg.eps_u)


def quantum_value_iteration(env, cfg: VIConfig, *, net: Net | None = None, ledger: QueryLedger | None = None,
                            qcfg: QuantumEmulationConfig | None = None, seed=0, rng=None) -> VIOutput:
    """Value iteration with emulated mean estimation inside emulated max-finding per state."""
    model = as_model(env, net, cfg.holder)
    _check(cfg, model.slack)
    qcfg = qcfg or QuantumEmulationConfig()
    rng = rng if rng is not None else np.random.default_rng(seed)
    ledger = ledger if ledger is not None else QueryLedger()
    start = ledger.used()
    S, A = model.S, model.A
    # the first iterate max_a r needs max-finding over known rewards only
    ledger.charge("q_max_inner", S * q_max_charge(A, _quantum_deltas(cfg, 1, S, A)[0], qcfg.c_max))

    def backup(u, t):
        sp = span(u)
        n_inner, n_mean = quantum_sweep_charge(cfg, t, S, A, sp, qcfg)
        mu = model.kernel @ u + bounded_noise(np.full((S, A), cfg.eps_u / 2 if sp > 0 else 0.0), qcfg, rng)
        ledger.charge("q_max_inner", n_inner)
        ledger.charge("q_mean", n_mean)
        q = model.rewards + mu
        a = np.argmax(q, axis=1)
        return q[np.arange(S), a], a

    rule, g, spans, sweeps, errors, it_spans, thr = _run(model, cfg, ledger, backup)
    return VIOutput(rule, float(g), spans, sweeps, ledger.snapshot(), ledger.used() - start,
                    errors, it_spans, thr, cfg.eps_u)


def robust_vi_span_certificate(spans, eps_eff: float, nu: float, sp0: float, tol: float = 1e-9):
    """Bound nu^t (sp0 + 2 eps) + 4 eps (1 - nu^t)/(1 - nu) on sp(u_{t+1} - u_t), t = 0, 1, ...

    Returns (bounds, holds) where holds says every observed span is within its bound.
    """
    spans = np.asarray(spans, dtype=float)
    t = np.arange(spans.size)
    pw = nu**t
    geo = t.astype(float) if nu == 1 else (1 - pw) / (1 - nu)
    bounds = pw * (sp0 + 2 * eps_eff) + 4 * eps_eff * geo
    return bounds, bool(np.all(spans <= bounds + tol))
