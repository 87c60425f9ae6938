"""Online learning loops that alternate generative and exploration phases.

run_online_finite: H-step episodes; the policy is recomputed when the episode
    index is a power of two, with a generative budget c_budget * H k / 2.
run_online_infinite: doubling episodes; episode k explores for as many steps
    as were taken before it, after a generative phase with budget
    c_budget * tau_k (tau_k the previous exploration length).

Planner accuracy is chosen as the tightest value whose closed-form query
count fits the phase budget. Regrets are measured with exact oracles on the
finite (or discretized) model.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import plan_finite as pf
from . import plan_infinite as pinf
from .discretization import Net, quantize_many, sample_compact
from .mdp_core import (
    ConvergenceError, FiniteMdp, ergodicity_coefficient, exact_backward_induction,
    exact_gain_bias_optimal, gain_bias_of_stationary, policy_value_finite,
)
from .oracles import HypothesisViolation, QuantumEmulationConfig, QueryLedger, as_model

FINITE_MODES = ("classical", "quantum_modern", "quantum_simple", "oracle_exact")
INFINITE_MODES = ("classical", "quantum", "oracle_exact")


@dataclass
class EpisodeLog:
    k: int
    start: int
    length: int
    policy_id: int
    planner: dict = field(default_factory=dict)


@dataclass
class StepLog:
    """Raw per-step record of a run plus per-episode first states."""

    t: np.ndarray
    episode: np.ndarray
    state: np.ndarray
    action: np.ndarray
    reward: np.ndarray
    first_state: np.ndarray  # per episode, net index of x_1


@dataclass
class OracleBundle:
    g_star: float | None = None
    rule_gain: np.ndarray | None = None  # per episode, min_x g^{d_k}(x)
    v_star: np.ndarray | None = None  # V*_1 over net states
    v_pi: list | None = None  # per episode, V_1^{pi_k} over net states


@dataclass
class RegretTrace:
    t: np.ndarray
    episode: np.ndarray
    state: np.ndarray
    action: np.ndarray
    reward: np.ndarray
    cum_inpath: np.ndarray
    cum_expected: np.ndarray
    cum_finiteH: np.ndarray
    episode_starts: np.ndarray
    episode_regret: np.ndarray | None = None  # finite-horizon increments per episode

    def to_csv(self, path):
        cols = ["t", "episode", "state", "action", "reward", "cum_inpath", "cum_expected", "cum_finiteH"]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(cols)
            for row in zip(*(getattr(self, c) for c in cols)):
                w.writerow(["" if isinstance(v, float) and math.isnan(v) else v for v in
                            (x.item() if hasattr(x, "item") else x for x in row)])


def write_sidecar(path, logs, ledger: QueryLedger, extra=None):
    doc = {"episodes": [asdict(e) for e in logs], "ledger": ledger.snapshot(),
           "totals": ledger.totals(), "overflow": ledger.any_overflow()}
    doc.update(extra or {})
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1, default=_jsonable)


def _jsonable(x):
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, np.generic):
        return x.item()
    raise TypeError(type(x))


def compute_regrets(log: StepLog, oracles: OracleBundle) -> RegretTrace:
    n = len(log.t)
    nan = np.full(n, np.nan)
    ep_idx = log.episode - 1
    starts = np.flatnonzero(np.r_[True, np.diff(log.episode) != 0]) if n else np.zeros(0, int)
    cum_inpath, cum_expected, cum_fin, ep_regret = nan, nan.copy(), nan.copy(), None
    if oracles.g_star is not None:
        cum_inpath = np.cumsum(oracles.g_star - log.reward)
        if oracles.rule_gain is None:
            raise ValueError("expected regret needs the per-episode rule gains")
        cum_expected = np.cumsum(oracles.g_star - np.asarray(oracles.rule_gain)[ep_idx])
    if oracles.v_star is not None:
        if oracles.v_pi is None:
            raise ValueError("finite-horizon regret needs V_1 of every episode's policy")
        x1 = log.first_state
        ep_regret = np.array([oracles.v_star[x1[k]] - oracles.v_pi[k][x1[k]] for k in range(len(x1))])
        ends = np.cumsum(ep_regret)
        cum_fin = ends[ep_idx]
    return RegretTrace(log.t, log.episode, log.state, log.action, log.reward,
                       cum_inpath, cum_expected, cum_fin, starts, ep_regret)


class _Explorer:
    """Steps the true environment; states are reported as net indices."""

    def __init__(self, model, rng: np.random.Generator, init_law=None):
        self.model = model
        self.rng = rng
        self.compact = not isinstance(model.env, FiniteMdp)
        self.init_law = init_law
        if not self.compact:
            self.cdf = np.cumsum(model.kernel, axis=2)
            self.cdf[..., -1] = 1.0
        self.x = None

    def reset(self) -> int:
        if self.compact:
            self.x = self.rng.random(self.model.env.D) if self.init_law is None else self.init_law(self.rng)
            return int(quantize_many(self.model.net, self.x[None, :])[0])
        S = self.model.S
        if self.init_law is None:
            self.x = int(self.rng.integers(S))
        else:
            self.x = int(self.rng.choice(S, p=self.init_law))
        return self.x

    def step(self, s: int, a: int):
        """Reward of (x, a) and the next net index."""
        if self.compact:
            r = float(self.model.env.reward(self.x, a))
            self.x = sample_compact(self.model.env, self.x, a, self.rng)
            return r, int(quantize_many(self.model.net, self.x[None, :])[0])
        r = float(self.model.rewards[s, a])
        self.x = int(np.searchsorted(self.cdf[s, a], self.rng.random(), side="right"))
        return r, self.x


def _largest_epochs(count, H, budget, kmax=60):
    """Largest epoch count whose closed-form query count fits the budget (0 if none)."""
    best = 0
    for K in range(1, kmax + 1):
        if count(H / 2**K) <= budget:
            best = K
        else:
            break
    return best


def _smallest_eps(count, lo, hi, budget, iters=80):
    """Smallest eps in [lo, hi] with count(eps) <= budget by bisection in log space, or None."""
    if count(hi) > budget:
        return None
    if count(lo) <= budget:
        return lo
    a, b = math.log(lo), math.log(hi)
    for _ in range(iters):
        mid = 0.5 * (a + b)
        if count(math.exp(mid)) <= budget:
            b = mid
        else:
            a = mid
    return math.exp(b)


def fit_finite_eps(mode, budget, H, delta, S, A, scale=1.0, qcfg=None):
    """Accuracy target for a refresh with the given budget; None if nothing fits."""
    qcfg = qcfg or QuantumEmulationConfig()
    if mode == "classical":
        K = _largest_epochs(lambda e: pf.classical_query_count(H, e, delta, S, A, scale), H, budget)
        return H / 2**K if K else None
    if mode == "quantum_modern":
        K = _largest_epochs(lambda e: pf.modern_query_count(H, e, delta, S, A, qcfg), H, budget)
        return H / 2**K if K else None
    if mode == "quantum_simple":
        if H == 1:
            return 1.0
        return _smallest_eps(lambda e: pf.simple_query_count(H, e, delta, S, A, qcfg), 1e-9, float(H), budget)
    raise ValueError(f"unknown mode {mode!r}")


def _finite_planner(mode):
    return {"classical": pf.classical_backward_induction,
            "quantum_modern": pf.quantum_modern_backward_induction,
            "quantum_simple": pf.quantum_simple_backward_induction}[mode]


def run_online_finite(env, H: int, K: int, mode: str, delta: float = 0.1, seed=0, *, net: Net | None = None,
                      holder=None, scale: float = 1.0, c_budget: float = 8.0,
                      qcfg: QuantumEmulationConfig | None = None, init_law=None, strict: bool = False,
                      ledger: QueryLedger | None = None):
    """Finite-horizon online loop; returns (RegretTrace, [EpisodeLog])."""
    if K < 1:
        raise ValueError("K must be at least 1")
    if mode not in FINITE_MODES:
        raise ValueError(f"mode must be one of {FINITE_MODES}")
    model = as_model(env, net, holder)
    fin = model.finite
    S, A = model.S, model.A
    qcfg = qcfg or QuantumEmulationConfig()
    ledger = ledger if ledger is not None else QueryLedger(c_budget, strict)
    plan_rng = np.random.default_rng([seed, 1])
    explorer = _Explorer(model, np.random.default_rng([seed, 2]), init_law)

    v_star = exact_backward_induction(fin, H)[0][0]
    policy = np.zeros((H, S), dtype=int)
    policy[H - 1] = np.argmax(fin.rewards, axis=1)
    v_pi_now = policy_value_finite(fin, policy, H)[0][0]
    delta_share = delta / max(1, math.ceil(math.log2(K)))

    steps = np.zeros((5, K * H))
    first, v_pi, logs = np.zeros(K, dtype=int), [], []
    policy_id = 0
    for k in range(1, K + 1):
        record = {}
        if k & (k - 1) == 0:
            tau = H * k / 2
            ledger.open_phase(f"k{k}", tau)
            record = {"mode": mode, "budget": c_budget * tau, "delta": delta_share, "flagged": False}
            if mode == "oracle_exact":
                policy = exact_backward_induction(fin, H)[1]
                record["eps"] = 0.0
            else:
                eps = fit_finite_eps(mode, c_budget * tau, H, delta_share, S, A, scale, qcfg)
                record["eps"] = eps
                if eps is None:
                    record.update(flagged=True, reason="budget too small for any accuracy target")
                else:
                    kw = {"scale": scale} if mode == "classical" else {"cfg": qcfg}
                    before = ledger.used(f"k{k}")
                    try:
                        out = _finite_planner(mode)(model, H, eps, delta_share, ledger=ledger, rng=plan_rng, **kw)
                    except HypothesisViolation as err:
                        record.update(flagged=True, reason=str(err))
                    else:
                        policy = out.policy
                        record["one_sided"] = out.one_sided_ok
                    record["queries"] = ledger.used(f"k{k}") - before
            record["overflow"] = ledger.overflow(f"k{k}")
            ledger.close_phase()
            v_pi_now = policy_value_finite(fin, policy, H)[0][0]
            policy_id += 1
        logs.append(EpisodeLog(k, (k - 1) * H + 1, H, policy_id, record))
        v_pi.append(v_pi_now)
        s = explorer.reset()
        first[k - 1] = s
        for h in range(H):
            a = int(policy[h, s])
            r, s_next = explorer.step(s, a)
            i = (k - 1) * H + h
            steps[:, i] = (i + 1, k, s, a, r)
            s = s_next
    log = StepLog(steps[0].astype(int), steps[1].astype(int), steps[2].astype(int),
                  steps[3].astype(int), steps[4], first)
    return compute_regrets(log, OracleBundle(v_star=v_star, v_pi=v_pi)), logs


def fit_vi_eps(mode, budget, nu, Lambda, delta, S, A, reward_span, holder_slack=0.0, scale=1.0,
               qcfg=None):
    """Smallest eps whose closed-form value-iteration query count fits the budget."""
    qcfg = qcfg or QuantumEmulationConfig()
    hi = 2.0 / nu if nu > 0 else 2.0

    def count(eps):
        cfg = pinf.VIConfig(eps=eps, nu=nu, Lambda=Lambda, delta=delta, scale=scale)
        if cfg.threshold(holder_slack) >= reward_span:
            return 0  # the stopping test passes before any sweep
        n = cfg.theorem_sweeps(holder_slack)
        if mode == "classical":
            return pinf.classical_query_count(cfg, S, A, n)
        return pinf.quantum_query_count(cfg, S, A, qcfg, n)

    return _smallest_eps(count, 1e-6, hi, budget)


def run_online_infinite(env, T: int, mode: str, delta: float = 0.1, Lambda: float | None = None,
                        nu: float | None = None, seed=0, *, net: Net | None = None, holder=None,
                        scale: float = 1.0, c_budget: float = 8.0,
                        qcfg: QuantumEmulationConfig | None = None, init_law=None, strict: bool = False,
                        ledger: QueryLedger | None = None):
    """Doubling-episode average-reward loop; returns (RegretTrace, [EpisodeLog])."""
    if T < 1:
        raise ValueError("T must be at least 1")
    if mode not in INFINITE_MODES:
        raise ValueError(f"mode must be one of {INFINITE_MODES}")
    model = as_model(env, net, holder)
    fin = model.finite
    S, A = model.S, model.A
    qcfg = qcfg or QuantumEmulationConfig()
    ledger = ledger if ledger is not None else QueryLedger(c_budget, strict)
    plan_rng = np.random.default_rng([seed, 1])
    explorer = _Explorer(model, np.random.default_rng([seed, 2]), init_law)

    opt = exact_gain_bias_optimal(fin)
    g_star = opt.gain
    Lambda = opt.span_h if Lambda is None else Lambda
    nu = ergodicity_coefficient(fin).nu if nu is None else nu
    reward_span = float(np.ptp(fin.rewards.max(axis=1)))

    rule = np.zeros(S, dtype=int)
    steps = np.zeros((5, T))
    firsts, gains, logs = [], [], []
    t, tau, k = 1, 1, 0
    while t <= T:
        k += 1
        ledger.open_phase(f"k{k}", tau)
        delta_k = delta / (8 * t**1.25)
        record = {"mode": mode, "budget": c_budget * tau, "delta": delta_k, "flagged": False}
        if mode == "oracle_exact":
            rule = opt.rule
            record["eps"] = 0.0
        else:
            eps = fit_vi_eps(mode, c_budget * tau, nu, Lambda, delta_k, S, A, reward_span,
                             model.slack, scale, qcfg)
            record["eps"] = eps
            if eps is None:
                record.update(flagged=True, reason="budget too small")
            else:
                cfg = pinf.VIConfig(eps=eps, nu=nu, Lambda=Lambda, delta=delta_k, holder=model.holder,
                                    scale=scale)
                before = ledger.used(f"k{k}")
                try:
                    if mode == "classical":
                        out = pinf.classical_value_iteration(model, cfg, ledger=ledger, rng=plan_rng)
                    else:
                        out = pinf.quantum_value_iteration(model, cfg, ledger=ledger, qcfg=qcfg, rng=plan_rng)
                except (HypothesisViolation, ConvergenceError) as err:
                    record.update(flagged=True, reason=str(err))
                else:
                    rule = out.rule
                    record.update(gain_estimate=out.gain, sweeps=out.sweeps)
                record["queries"] = ledger.used(f"k{k}") - before
        record["overflow"] = ledger.overflow(f"k{k}")
        ledger.close_phase()
        gains.append(float(gain_bias_of_stationary(fin, rule).g.min()))

        start = t
        tau_next = t
        s = explorer.reset()
        firsts.append(s)
        while t < 2 * tau_next and t <= T:
            a = int(rule[s])
            r, s_next = explorer.step(s, a)
            steps[:, t - 1] = (t, k, s, a, r)
            s = s_next
            t += 1
        logs.append(EpisodeLog(k, start, t - start, k, record))
        tau = tau_next
    log = StepLog(steps[0].astype(int), steps[1].astype(int), steps[2].astype(int),
                  steps[3].astype(int), steps[4], np.array(firsts))
    return compute_regrets(log, OracleBundle(g_star=g_star, rule_gain=np.array(gains))), logs


def doubling_bound_check(lengths) -> bool:
    """Check both summation bounds used by the regret proofs for episode lengths z_k.

    With Z_k = max(1, z_1 + ... + z_k): sum z_k / Z_{k-1} <= 4 log2(Z_n / 2)
    when Z_n >= 4, and sum z_k / sqrt(Z_{k-1}) <= sqrt(Z_n) / (sqrt(2) - 1).
    """
    z = np.asarray(lengths, dtype=float)
    if z.size == 0:
        return True
    Z = np.cumsum(z)
    prev = np.maximum(np.r_[1.0, Z[:-1]], 1.0)
    zn = max(1.0, Z[-1])
    ok = float(np.sum(z / np.sqrt(prev))) <= math.sqrt(zn) / (math.sqrt(2) - 1) + 1e-9
    if zn >= 4:
        ok &= float(np.sum(z / prev)) <= 4 * math.log2(zn / 2) + 1e-9
    return bool(ok)
