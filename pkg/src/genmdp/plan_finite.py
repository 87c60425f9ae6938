"""Finite-horizon planners under a generative model.

classical_backward_induction: variance-reduced epochs with Bernstein/Hoeffding
    shifted estimates and monotone updates.
quantum_modern_backward_induction: the same epoch structure with emulated
    multivariate and univariate quantum mean estimation.
quantum_simple_backward_induction: one backward pass, emulated mean
    estimation inside emulated max-finding over actions.

Time indices are 0-based internally: row t of a (H, S) table is step t+1.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .discretization import HolderParams, Net
from .oracles import (
    HypothesisViolation, QuantumEmulationConfig, QueryLedger, as_model, bounded_noise,
    q_max_charge, q_mean_charge, q_mean_multi_charge,
)

ONE_SIDED_TOL = 1e-12


@dataclass
class EpochRecord:
    eps_k: float
    u: np.ndarray
    policy: np.ndarray
    mu_hat: np.ndarray | None = None
    sigma_tilde: np.ndarray | None = None
    beta_hat: np.ndarray | None = None
    one_sided: bool = True


@dataclass
class PlannerOutput:
    policy: np.ndarray  # (H, S) actions
    values: np.ndarray  # (H, S) final u_t
    epochs: list = field(default_factory=list)
    ledger: list = field(default_factory=list)
    guarantee: dict = field(default_factory=dict)
    queries: int = 0

    @property
    def one_sided_ok(self) -> bool:
        """Whether every shifted estimate stayed below its exact target."""
        return all(e.one_sided for e in self.epochs)

    def to_dict(self):
        return {
            "policy": self.policy.tolist(),
            "values": self.values.tolist(),
            "guarantee": self.guarantee,
            "ledger": self.ledger,
            "queries": self.queries,
            "one_sided_ok": self.one_sided_ok,
            "epochs": [{"eps_k": e.eps_k, "one_sided": e.one_sided} for e in self.epochs],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


def num_epochs(H: int, eps: float) -> int:
    if eps <= 0:
        raise ValueError("eps must be positive")
    return max(0, math.ceil(math.log2(H / eps) - 1e-12))


def classical_schedule(H: int, eps: float, delta: float, S: int, A: int, scale: float = 1.0):
    """Per-epoch (eps_k, m_k, l_k, theta_k) for the classical planner."""
    K = num_epochs(H, eps)
    out = []
    for k in range(1, K + 1):
        eps_k = H / 2**k
        log_m = math.log(16 * H * S * A * K / delta)
        m = max(1, math.ceil(scale * 128 * H**3 / min(eps_k**2, 1.0) * log_m))
        l = max(1, math.ceil(scale * 512 * H**2 * math.log(4 * H * S * A * K / delta)))
        out.append((eps_k, m, l, log_m / m))
    return out


def classical_query_count(H, eps, delta, S, A, scale=1.0) -> int:
    return sum((m + (H - 1) * l) * S * A for _, m, l, _ in classical_schedule(H, eps, delta, S, A, scale))


def _modern_deltas(K, H, S, A, delta):
    # two multivariate calls per (s, a) share half of delta; the
    # per-step difference estimates share the other half
    return delta / (4 * K * S * A), delta / (2 * K * max(H - 1, 1) * S * A)


def modern_schedule(H: int, eps: float, delta: float, S: int, A: int):
    K = num_epochs(H, eps)
    d_multi, d_beta = _modern_deltas(K, H, S, A, delta)
    return [(H / 2**k, min(H / 2**k, 1.0) / (20 * H**1.5), d_multi, d_beta) for k in range(1, K + 1)]


def modern_query_count(H, eps, delta, S, A, cfg: QuantumEmulationConfig | None = None) -> int:
    cfg = cfg or QuantumEmulationConfig()
    total = 0
    for _, theta, d_multi, d_beta in modern_schedule(H, eps, delta, S, A):
        total += 2 * S * A * q_mean_multi_charge(theta / math.sqrt(H), d_multi, H, cfg.c_multi)
        total += (H - 1) * S * A * q_mean_charge(1.0 / (16 * H), d_beta, cfg.c_mean)
    return total


def _simple_deltas(H, S, A, delta):
    d1 = delta / (H * S)
    d2 = min(d1, d1**2 / (A * math.log(1 / d1) ** 2))
    return d1, d2


def simple_query_count(H, eps, delta, S, A, cfg: QuantumEmulationConfig | None = None) -> int:
    cfg = cfg or QuantumEmulationConfig()
    d1, d2 = _simple_deltas(H, S, A, delta)
    per_state = q_max_charge(A, d1, cfg.c_max) * q_mean_charge(eps / (2 * H * H), d2, cfg.c_mean)
    return (H - 1) * S * per_state


def _check_common(H, eps, delta):
    if H < 1:
        raise ValueError("H must be at least 1")
    if not eps > 0:
        raise ValueError("eps must be positive")
    if not 0 < delta < 1:
        raise ValueError("delta must lie in (0, 1)")


def _check_slack(slack, H):
    if slack > 1.0 / (16 * H):
        raise HypothesisViolation(f"L n^-alpha = {slack:.4g} exceeds 1/(16H) = {1 / (16 * H):.4g}")


def _init_tables(model, H):
    """u^(0) with the last step set to max_a r (r is known exactly) and argmax policy."""
    u = np.zeros((H, model.S))
    pi = np.zeros((H, model.S), dtype=int)
    pi[H - 1] = np.argmax(model.rewards, axis=1)
    u[H - 1] = model.rewards.max(axis=1) - model.slack
    return u, pi


def _greedy_step(model, mu_hat_next, beta_hat_next, u_prev_t, pi_prev_t):
    q = model.rewards + mu_hat_next + beta_hat_next
    a = np.argmax(q, axis=1)
    cand = q[np.arange(model.S), a] - model.slack
    keep = cand <= u_prev_t
    return np.where(keep, u_prev_t, cand), np.where(keep, pi_prev_t, a)


def _finish(model, H, u, pi, epochs, ledger, eps, delta, bound, phase_start):
    queries = ledger.used() - phase_start if ledger is not None else 0
    return PlannerOutput(
        policy=pi, values=u, epochs=epochs,
        ledger=ledger.snapshot() if ledger is not None else [],
        guarantee={"eps": eps, "delta": delta, "suboptimality_bound": bound, "slack": model.slack},
        queries=queries,
    )


def classical_backward_induction(env, H: int, eps: float, delta: float, *, net: Net | None = None,
                                 holder: HolderParams | None = None, ledger: QueryLedger | None = None,
                                 seed=0, scale: float = 1.0, rng=None) -> PlannerOutput:
    """Variance-reduced approximate backward induction with classical samples."""
    _check_common(H, eps, delta)
    model = as_model(env, net, holder)
    _check_slack(model.slack, H)
    rng = rng if rng is not None else np.random.default_rng(seed)
    ledger = ledger if ledger is not None else QueryLedger()
    start = ledger.used()
    S, A, P, lip = model.S, model.A, model.kernel, model.slack

    u_prev, pi_prev = _init_tables(model, H)
    epochs = []
    for eps_k, m, l, theta in classical_schedule(H, eps, delta, S, A, scale):
        counts = model.counts(m, rng, ledger) / m
        mean = counts @ u_prev.T  # (S, A, H)
        sig = np.clip(counts @ (u_prev**2).T - mean**2, 0.0, None)
        mu_hat = mean - np.sqrt(2 * theta * sig) - (2 / 3 * theta + 2 * (2 * theta) ** 0.75 + lip) * H
        ok = bool(np.all(mu_hat <= P @ u_prev.T + ONE_SIDED_TOL))

        u_new, pi_new = u_prev.copy(), pi_prev.copy()
        beta_hat = np.zeros((S, A, H))
        for t in range(H - 2, -1, -1):
            diff = u_new[t + 1] - u_prev[t + 1]
            bar = model.counts(l, rng, ledger) / l
            beta_hat[:, :, t + 1] = bar @ diff - eps_k / (4 * H) - 1.5 * lip * H
            ok &= bool(np.all(beta_hat[:, :, t + 1] <= P @ diff + ONE_SIDED_TOL))
            u_new[t], pi_new[t] = _greedy_step(model, mu_hat[:, :, t + 1], beta_hat[:, :, t + 1],
                                               u_prev[t], pi_prev[t])
        epochs.append(EpochRecord(eps_k, u_new.copy(), pi_new.copy(), mu_hat.transpose(2, 0, 1),
                                  sig.transpose(2, 0, 1), beta_hat.transpose(2, 0, 1), ok))
        u_prev, pi_prev = u_new, pi_new
    return _finish(model, H, u_prev, pi_prev, epochs, ledger, eps, delta,
                   eps + 12 * lip * H**2, start)


def quantum_modern_backward_induction(env, H: int, eps: float, delta: float, *, net: Net | None = None,
                                      holder: HolderParams | None = None,
                                      ledger: QueryLedger | None = None,
                                      cfg: QuantumEmulationConfig | None = None, seed=0,
                                      rng=None) -> PlannerOutput:
    """Epoch-based planner with emulated multivariate quantum mean estimation."""
    _check_common(H, eps, delta)
    model = as_model(env, net, holder)
    _check_slack(model.slack, H)
    cfg = cfg or QuantumEmulationConfig()
    rng = rng if rng is not None else np.random.default_rng(seed)
    ledger = ledger if ledger is not None else QueryLedger()
    start = ledger.used()
    S, A, P, lip = model.S, model.A, model.kernel, model.slack

    u_prev, pi_prev = _init_tables(model, H)
    epochs = []
    for eps_k, theta, d_multi, d_beta in modern_schedule(H, eps, delta, S, A):
        e_multi = theta / math.sqrt(H)
        mean = P @ u_prev.T  # (S, A, H)
        var = np.clip(P @ (u_prev**2).T - mean**2, 0.0, None)
        # variances are the means of f_t = (u_t - mu_t)^2; their spread sets the error
        dev2 = (u_prev[None, None, :, :] - mean[..., None]) ** 2  # (S, A, H, S)
        f_var = np.clip(np.einsum("sax,satx->sat", P, dev2**2) - var**2, 0.0, None)
        sig_bound = np.sqrt(f_var.sum(axis=2)) * e_multi
        mu_bound = np.sqrt(var.sum(axis=2)) * e_multi
        sig_tilde = var + bounded_noise(np.repeat(sig_bound[..., None], H, axis=2), cfg, rng)
        mu_tilde = mean + bounded_noise(np.repeat(mu_bound[..., None], H, axis=2), cfg, rng)
        ledger.charge("q_mean_multi", 2 * S * A * q_mean_multi_charge(e_multi, d_multi, H, cfg.c_multi))
        spread = np.sqrt(np.clip(sig_tilde, 0.0, None).mean(axis=2, keepdims=True))
        mu_hat = mu_tilde - theta * spread - (theta**1.5 + lip) * H
        ok = bool(np.all(mu_hat <= mean + ONE_SIDED_TOL))

        u_new, pi_new = u_prev.copy(), pi_prev.copy()
        beta_hat = np.zeros((S, A, H))
        beta_charge = q_mean_charge(1.0 / (16 * H), d_beta, cfg.c_mean)
        for t in range(H - 2, -1, -1):
            diff = u_new[t + 1] - u_prev[t + 1]
            exact = P @ diff
            bound = (diff.max() - diff.min()) / (16 * H)
            beta_tilde = exact + bounded_noise(np.full((S, A), bound), cfg, rng)
            ledger.charge("q_mean", S * A * beta_charge)
            beta_hat[:, :, t + 1] = beta_tilde - eps_k / (4 * H) - lip * H
            ok &= bool(np.all(beta_hat[:, :, t + 1] <= exact + ONE_SIDED_TOL))
            u_new[t], pi_new[t] = _greedy_step(model, mu_hat[:, :, t + 1], beta_hat[:, :, t + 1],
                                               u_prev[t], pi_prev[t])
        epochs.append(EpochRecord(eps_k, u_new.copy(), pi_new.copy(), mu_hat.transpose(2, 0, 1),
                                  sig_tilde.transpose(2, 0, 1), beta_hat.transpose(2, 0, 1), ok))
        u_prev, pi_prev = u_new, pi_new
    return _finish(model, H, u_prev, pi_prev, epochs, ledger, eps, delta,
                   eps + 8 * lip * H**2, start)


def quantum_simple_backward_induction(env, H: int, eps: float, delta: float, *, net: Net | None = None,
                                      holder: HolderParams | None = None,
                                      ledger: QueryLedger | None = None,
                                      cfg: QuantumEmulationConfig | None = None, seed=0,
                                      rng=None) -> PlannerOutput:
    """Single backward pass: emulated mean estimation composed inside emulated max-finding."""
    _check_common(H, eps, delta)
    model = as_model(env, net, holder)
    cfg = cfg or QuantumEmulationConfig()
    rng = rng if rng is not None else np.random.default_rng(seed)
    ledger = ledger if ledger is not None else QueryLedger()
    start = ledger.used()
    S, A, P, lip = model.S, model.A, model.kernel, model.slack
    d1, d2 = _simple_deltas(H, S, A, delta)
    eps_rel = eps / (2 * H * H)  # values live in [0, H], so this is eps/(2H) absolute
    n_max = q_max_charge(A, d1, cfg.c_max)
    mean_charge = q_mean_charge(eps_rel, d2, cfg.c_mean)

    u, pi = _init_tables(model, H)
    # max-finding over the known rewards at the last step costs no transition queries
    ledger.charge("q_max_inner", S * n_max)
    ok = True
    for t in range(H - 2, -1, -1):
        nxt = u[t + 1]
        exact = P @ nxt
        bound = (nxt.max() - nxt.min()) * eps_rel
        mu = exact + bounded_noise(np.full((S, A), bound), cfg, rng)
        ok &= bool(np.all(np.abs(mu - exact) <= eps / (2 * H) + ONE_SIDED_TOL))
        q = model.rewards + mu
        a = np.argmax(q, axis=1)
        cand = q[np.arange(S), a] - eps / (2 * H) - (1 + H) * lip
        ledger.charge("q_max_inner", S * n_max)
        ledger.charge("q_mean", S * n_max * mean_charge)
        u[t], pi[t] = cand, a
    epochs = [EpochRecord(eps, u.copy(), pi.copy(), one_sided=ok)]
    return _finish(model, H, u, pi, epochs, ledger, eps, delta,
                   eps + 2 * (1 + H) * H * lip, start)

