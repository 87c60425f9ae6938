"""Exact tabular MDP semantics used as ground truth.

Everything here is deterministic and exact (up to floating point): Bellman
operators, backward induction, policy evaluation with per-step variances,
gain/bias of stationary rules and the optimal gain via relative value
iteration.
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

ROW_TOL = 1e-12
ORACLE_TOL = 1e-9
SWEEP_CAP = 10**6


class ConvergenceError(RuntimeError):
    """An iterative oracle did not reach its tolerance within the sweep cap."""


def _frozen(a, dtype=float):
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class FiniteMdp:
    """Tabular MDP with kernel[s, a, s'] and rewards[s, a] in [0, 1]."""

    kernel: np.ndarray
    rewards: np.ndarray

    def __post_init__(self):
        kernel = _frozen(self.kernel)
        rewards = _frozen(self.rewards)
        if kernel.ndim != 3 or kernel.shape[0] != kernel.shape[2]:
            raise ValueError(f"kernel must have shape (S, A, S), got {kernel.shape}")
        if rewards.shape != kernel.shape[:2]:
            raise ValueError(f"rewards shape {rewards.shape} does not match kernel {kernel.shape}")
        if np.any(kernel < 0) or np.any(np.abs(kernel.sum(axis=2) - 1.0) > ROW_TOL):
            raise ValueError("kernel rows must be nonnegative and sum to 1")
        if np.any(rewards < 0) or np.any(rewards > 1) or not np.all(np.isfinite(rewards)):
            raise ValueError("rewards must lie in [0, 1]")
        object.__setattr__(self, "kernel", kernel)
        object.__setattr__(self, "rewards", rewards)

    @property
    def num_states(self) -> int:
        return self.kernel.shape[0]

    @property
    def num_actions(self) -> int:
        return self.kernel.shape[1]

    def to_dict(self):
        return {
            "S": self.num_states,
            "A": self.num_actions,
            "kernel": self.kernel.reshape(-1).tolist(),
            "rewards": self.rewards.tolist(),
        }

    @classmethod
    def from_dict(cls, d):
        S, A = int(d["S"]), int(d["A"])
        kernel = np.asarray(d["kernel"], dtype=float).reshape(S, A, S)
        return cls(kernel=kernel, rewards=np.asarray(d["rewards"], dtype=float).reshape(S, A))

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "FiniteMdp":
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True)
class GainBias:
    g: np.ndarray  # per-state gain
    h: np.ndarray  # bias, normalized so min(h) = 0
    rule: np.ndarray | None = None

    @property
    def span_h(self) -> float:
        return float(self.h.max() - self.h.min())

    @property
    def gain(self) -> float:
        """Gain as a scalar; only meaningful when it is constant across states."""
        return float(self.g.mean())


@dataclass(frozen=True)
class ContractionInfo:
    nu: float


def span(u) -> float:
    u = np.asarray(u, dtype=float)
    if u.size == 0:
        raise ValueError("span of an empty vector")
    return float(u.max() - u.min())


def greedy(q):
    """Argmax over the last axis with ties going to the lowest index."""
    return np.argmax(q, axis=-1)


def rule_matrix(rule, S: int, A: int) -> np.ndarray:
    """Turn a deterministic (S,) or randomized (S, A) rule into an (S, A) matrix."""
    rule = np.asarray(rule)
    if rule.shape == (S,):
        if not np.issubdtype(rule.dtype, np.integer) or rule.min() < 0 or rule.max() >= A:
            raise ValueError("deterministic rule must hold valid action indices")
        m = np.zeros((S, A))
        m[np.arange(S), rule] = 1.0
        return m
    if rule.shape == (S, A):
        rule = rule.astype(float)
        if np.any(rule < 0) or np.any(np.abs(rule.sum(axis=1) - 1.0) > ROW_TOL):
            raise ValueError("randomized rule rows must be distributions")
        return rule
    raise ValueError(f"rule shape {rule.shape} incompatible with S={S}, A={A}")


def induced_chain(mdp: FiniteMdp, rule):
    """(r_d, P_d) for a decision rule d."""
    w = rule_matrix(rule, mdp.num_states, mdp.num_actions)
    r_d = (w * mdp.rewards).sum(axis=1)
    P_d = np.einsum("sa,sat->st", w, mdp.kernel)
    return r_d, P_d


def q_values(mdp: FiniteMdp, u) -> np.ndarray:
    u = np.asarray(u, dtype=float)
    if u.shape != (mdp.num_states,):
        raise ValueError(f"u has shape {u.shape}, expected ({mdp.num_states},)")
    return mdp.rewards + mdp.kernel @ u


def bellman_apply(mdp: FiniteMdp, u, rule=None):
    """Apply L_d (if rule is given) or L. Returns (values, rule)."""
    q = q_values(mdp, u)
    if rule is not None:
        w = rule_matrix(rule, mdp.num_states, mdp.num_actions)
        return (w * q).sum(axis=1), np.asarray(rule)
    d = greedy(q)
    return q[np.arange(mdp.num_states), d], d


def exact_backward_induction(mdp: FiniteMdp, H: int):
    """V*_t for t=1..H (row t-1) and a greedy policy of shape (H, S)."""
    if H < 1:
        raise ValueError("H must be at least 1")
    S = mdp.num_states
    V = np.zeros((H, S))
    pi = np.zeros((H, S), dtype=int)
    nxt = np.zeros(S)
    for t in range(H - 1, -1, -1):
        V[t], pi[t] = bellman_apply(mdp, nxt)
        nxt = V[t]
    return V, pi


def _policy_rules(pi, H, S, A):
    if len(pi) != H:
        raise ValueError(f"policy has {len(pi)} rules, expected H={H}")
    return [rule_matrix(pi[t], S, A) for t in range(H)]


def policy_value_finite(mdp: FiniteMdp, pi, H: int):
    """Exact V^pi_t (shape (H, S)) and sigma^pi_t(s, a) = Var_{p(.|s,a)} V^pi_t (shape (H, S, A))."""
    S, A = mdp.num_states, mdp.num_actions
    rules = _policy_rules(pi, H, S, A)
    V = np.zeros((H, S))
    nxt = np.zeros(S)
    for t in range(H - 1, -1, -1):
        V[t] = (rules[t] * q_values(mdp, nxt)).sum(axis=1)
        nxt = V[t]
    mean = mdp.kernel @ V.T  # (S, A, H)
    second = mdp.kernel @ (V**2).T
    sigma = np.clip(second - mean**2, 0.0, None).transpose(2, 0, 1)
    return V, sigma


def state_distributions(mdp: FiniteMdp, pi, H: int, x0) -> np.ndarray:
    """Law of x_t for t=1..H under pi started from x0 (index or distribution)."""
    S, A = mdp.num_states, mdp.num_actions
    rules = _policy_rules(pi, H, S, A)
    mu = np.zeros(S)
    if np.ndim(x0) == 0:
        mu[int(x0)] = 1.0
    else:
        mu[:] = x0
    out = np.zeros((H, S))
    for t in range(H):
        out[t] = mu
        mu = np.einsum("s,sa,sat->t", mu, rules[t], mdp.kernel)
    return out


def _forward_terms(mdp: FiniteMdp, pi, H: int, t: int, x):
    """Laws of x_t', t' = t..H-1, started at x_t = x, plus the (S, A) rule matrices."""
    S, A = mdp.num_states, mdp.num_actions
    rules = _policy_rules(pi, H, S, A)
    mus = state_distributions(mdp, rules[t - 1:], H - t + 1, x)
    return rules, mus


def expected_deviation_sum(mdp: FiniteMdp, pi, H: int, t: int, x) -> float:
    """sum_{t'=t}^{H-1} E_pi[sqrt(sigma^pi_{t'+1}(x_t', pi_t'(x_t'))) | x_t = x].

    Times are 1-based. The total-variance argument bounds this by H^1.5.
    """
    _, sigma = policy_value_finite(mdp, pi, H)
    rules, mus = _forward_terms(mdp, pi, H, t, x)
    return float(sum(np.einsum("s,sa,sa->", mus[tp - t], rules[tp - 1], np.sqrt(sigma[tp]))
                     for tp in range(t, H)))


def expected_variance_double_sum(mdp: FiniteMdp, pi, H: int, t: int, x) -> float:
    """sum_{k=1}^{H} sum_{t'=t}^{H-1} E_pi[sigma^pi_k(x_t', pi_t'(x_t')) | x_t = x], bounded by 4 H^3."""
    _, sigma = policy_value_finite(mdp, pi, H)
    rules, mus = _forward_terms(mdp, pi, H, t, x)
    sig_all = sigma.sum(axis=0)
    return float(sum(np.einsum("s,sa,sa->", mus[tp - t], rules[tp - 1], sig_all)
                     for tp in range(t, H)))


def _stationary_limit(P: np.ndarray, tol: float = 1e-13, cap: int = 200) -> np.ndarray:
    """Cesaro limit of P via repeated squaring of the aperiodic transform."""
    Q = 0.5 * (np.eye(P.shape[0]) + P)
    for _ in range(cap):
        Q2 = Q @ Q
        if np.max(np.abs(Q2 - Q)) < tol:
            return Q2
        Q = Q2
    raise ConvergenceError("Cesaro limit did not converge")


def gain_bias_of_stationary(mdp: FiniteMdp, rule) -> GainBias:
    r_d, P_d = induced_chain(mdp, rule)
    S = mdp.num_states
    Pi = _stationary_limit(P_d)
    g = Pi @ r_d
    # deviation matrix: h = (I - P + Pi)^{-1} (I - Pi) r
    h = np.linalg.solve(np.eye(S) - P_d + Pi, (np.eye(S) - Pi) @ r_d)
    h = h - h.min()
    resid = np.max(np.abs(r_d + P_d @ h - g - h))
    if resid > ORACLE_TOL:
        raise ConvergenceError(f"evaluation equations residual {resid:.2e}")
    return GainBias(g=g, h=h, rule=np.asarray(rule))


def exact_gain_bias_optimal(mdp: FiniteMdp, lam: float = 0.5, cap: int = SWEEP_CAP) -> GainBias:
    """Optimal gain and bias by relative value iteration on the aperiodic transform.

    The transform uses r' = lam*r and P' = (1-lam) I + lam P, which keeps the
    bias and scales the gain by lam.
    """
    S, A = mdp.num_states, mdp.num_actions
    r = lam * mdp.rewards
    P = lam * mdp.kernel + (1 - lam) * np.eye(S)[:, None, :]
    u = np.zeros(S)
    for _ in range(cap):
        lu = (r + P @ u).max(axis=1)
        diff = lu - u
        u = lu - lu[0]
        if span(diff) < 1e-12:
            break
    else:
        raise ConvergenceError("relative value iteration hit the sweep cap")
    h = u - u.min()
    q = q_values(mdp, h)
    d = greedy(q)
    lh = q.max(axis=1)
    g = 0.5 * (np.max(lh - h) + np.min(lh - h))
    resid = np.max(np.abs(lh - h - g))
    if resid > ORACLE_TOL:
        raise ConvergenceError(f"optimality equation residual {resid:.2e}; mdp may not be weakly communicating")
    return GainBias(g=np.full(S, g), h=h, rule=d)


def ergodicity_coefficient(mdp: FiniteMdp) -> ContractionInfo:
    """1 - min over pairs of (s, a) rows of their overlap sum_s'' min(p, p')."""
    rows = mdp.kernel.reshape(-1, mdp.num_states)
    worst = 1.0
    block = max(1, 2**22 // rows.size)  # keep the pairwise slab small
    for i in range(0, rows.shape[0], block):
        overlap = np.minimum(rows[i:i + block, None, :], rows[None, :, :]).sum(axis=2)
        worst = min(worst, float(overlap.min()))
    return ContractionInfo(nu=float(np.clip(1.0 - worst, 0.0, 1.0)))
