"""Sampling oracles, emulated quantum subroutines and query accounting.

The quantum routines are emulated: they read the exact distribution, perturb
the exact answer by noise inside the documented error bound, and charge the
theoretical query count to a ledger. Failure probabilities only enter the
charges, never the outputs.
"""
from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass

import numpy as np

from .discretization import HolderParams, Net, discretize, lipschitz_slack, quantize_many, sample_compact
from .mdp_core import FiniteMdp, span

KINDS = ("classical_sample", "q_mean", "q_mean_multi", "q_max_inner")
# kinds that consume calls to the transition oracle; q_max_inner counts
# invocations of the candidate evaluator, whose own oracle cost is charged
# separately under q_mean
ORACLE_KINDS = ("classical_sample", "q_mean", "q_mean_multi")
NOISE_MODES = ("exact", "uniform", "signed_worst")
OFFLINE = "offline"


class BudgetOverflow(RuntimeError):
    pass


class HypothesisViolation(ValueError):
    """A planner precondition from the guarantees does not hold."""


class QueryLedger:
    """Counts per (kind, phase) with optional per-phase budgets."""

    def __init__(self, c_budget: float = 8.0, strict: bool = False):
        self.c_budget = c_budget
        self.strict = strict
        self.counts = defaultdict(int)
        self.budgets = {}
        self.phases = [OFFLINE]
        self.phase = OFFLINE

    def open_phase(self, phase, tau: float | None = None):
        """Start a generative phase; its budget is c_budget * tau (None means unbudgeted)."""
        self.phase = str(phase)
        if self.phase not in self.phases:
            self.phases.append(self.phase)
        self.budgets[self.phase] = None if tau is None else self.c_budget * tau

    def close_phase(self):
        self.phase = OFFLINE

    def charge(self, kind: str, count: int):
        if kind not in KINDS:
            raise ValueError(f"unknown oracle kind {kind!r}")
        count = int(count)
        if count < 0:
            raise ValueError("charges must be nonnegative")
        self.counts[(kind, self.phase)] += count
        if self.strict and self.overflow(self.phase):
            raise BudgetOverflow(f"phase {self.phase} used {self.used(self.phase)} "
                                 f"> budget {self.budgets[self.phase]}")

    def count(self, kind: str, phase=None) -> int:
        if phase is None:
            return sum(v for (k, _), v in self.counts.items() if k == kind)
        return self.counts.get((kind, str(phase)), 0)

    def used(self, phase=None) -> int:
        """Oracle calls to the transition kernel in a phase (or overall)."""
        return sum(self.count(k, phase) for k in ORACLE_KINDS)

    def overflow(self, phase) -> bool:
        b = self.budgets.get(str(phase))
        return b is not None and self.used(phase) > b

    def any_overflow(self) -> bool:
        return any(self.overflow(p) for p in self.phases)

    def snapshot(self):
        out = []
        for p in self.phases:
            for k in KINDS:
                c = self.counts.get((k, p), 0)
                if c or (k == KINDS[0] and p in self.budgets):
                    out.append({"phase": p, "kind": k, "count": c,
                                "budget": self.budgets.get(p), "overflow": self.overflow(p)})
        return out

    def totals(self):
        return {k: self.count(k) for k in KINDS}


@dataclass(frozen=True)
class SamplerConfig:
    seed: int = 0
    stream: int = 0

    def rng(self) -> np.random.Generator:
        return np.random.default_rng([self.seed, self.stream])


@dataclass(frozen=True)
class QuantumEmulationConfig:
    noise_mode: str = "uniform"
    c_mean: float = 1.0
    c_multi: float = 1.0
    c_max: float = 1.0

    def __post_init__(self):
        if self.noise_mode not in NOISE_MODES:
            raise ValueError(f"noise_mode must be one of {NOISE_MODES}")
        if min(self.c_mean, self.c_multi, self.c_max) <= 0:
            raise ValueError("charge constants must be positive")


def _ceil(x: float) -> int:
    # guard against 46.00000000001 style round-off pushing the ceiling up
    return int(math.ceil(x - 1e-9))


def q_mean_charge(eps: float, delta: float, c: float = 1.0) -> int:
    return _ceil(c / eps * math.log(1.0 / delta))


def q_mean_multi_charge(eps: float, delta: float, m: int, c: float = 1.0) -> int:
    return _ceil(c / eps * math.log(m / delta))


def q_max_charge(A: int, delta: float, c: float = 1.0) -> int:
    return _ceil(c * math.sqrt(A) * math.log(1.0 / delta))


def _check_eps_delta(eps, delta):
    if not eps > 0:
        raise ValueError("eps must be positive")
    if not 0 < delta < 1:
        raise ValueError("delta must lie in (0, 1)")


def bounded_noise(bound, cfg: QuantumEmulationConfig, rng: np.random.Generator):
    """Noise with |noise| <= bound entrywise, drawn per the emulation noise mode."""
    bound = np.asarray(bound, dtype=float)
    if cfg.noise_mode == "exact":
        return np.zeros_like(bound)
    if cfg.noise_mode == "uniform":
        return bound * rng.uniform(-1.0, 1.0, size=bound.shape)
    return bound * rng.choice([-1.0, 1.0], size=bound.shape)


def sample_next(env, s, a, ledger: QueryLedger | None, rng: np.random.Generator, net: Net | None = None):
    """One classical draw from p(.|s,a); for compact specs s may be a point or a net index."""
    if isinstance(env, FiniteMdp):
        nxt = int(rng.choice(env.num_states, p=env.kernel[s, a]))
    else:
        x = net.points[s] if (net is not None and np.ndim(s) == 0) else s
        nxt = sample_compact(env, x, a, rng)
    if ledger is not None:
        ledger.charge("classical_sample", 1)
    return nxt


def sample_counts(env, s: int, a: int, m: int, rng: np.random.Generator, net: Net | None = None,
                  ledger: QueryLedger | None = None) -> np.ndarray:
    """Successor counts over (net) states for m i.i.d. draws from (s, a).

    For finite MDPs this is a multinomial draw, which has exactly the law of m
    categorical samples. For compact specs it samples the continuous kernel at
    the net point and quantizes.
    """
    if ledger is not None:
        ledger.charge("classical_sample", m)
    if isinstance(env, FiniteMdp):
        return rng.multinomial(m, env.kernel[s, a])
    out = np.zeros(net.size, dtype=np.int64)
    chunk = 1 << 20
    left = m
    while left > 0:
        k = min(left, chunk)
        xs = sample_compact(env, net.points[s], a, rng, size=k)
        out += np.bincount(quantize_many(net, xs), minlength=net.size)
        left -= k
    return out


def empirical_mean_var(samples):
    x = np.asarray(samples, dtype=float)
    if x.size == 0:
        raise ValueError("need at least one sample")
    mean = float(x.mean())
    return mean, float((x**2).mean() - mean**2)


def emulated_q_mean(u, p, eps: float, delta: float, ledger: QueryLedger | None,
                    cfg: QuantumEmulationConfig, rng: np.random.Generator) -> float:
    """Mean of u under p within span(u)*eps; charges ceil(c_mean/eps ln(1/delta)) q_mean queries."""
    _check_eps_delta(eps, delta)
    u = np.asarray(u, dtype=float)
    exact = float(np.dot(p, u))
    out = exact + float(bounded_noise(span(u) * eps, cfg, rng))
    if ledger is not None:
        ledger.charge("q_mean", q_mean_charge(eps, delta, cfg.c_mean))
    return out


def emulated_q_mean_multi(us, p, eps: float, delta: float, ledger: QueryLedger | None,
                          cfg: QuantumEmulationConfig, rng: np.random.Generator) -> np.ndarray:
    """Means of the rows of us under p, each within sqrt(sum_i Var_p u_i) * eps."""
    _check_eps_delta(eps, delta)
    us = np.atleast_2d(np.asarray(us, dtype=float))
    p = np.asarray(p, dtype=float)
    means = us @ p
    var = np.clip((us**2) @ p - means**2, 0.0, None)
    bound = math.sqrt(var.sum()) * eps
    out = means + bounded_noise(np.full(means.shape, bound), cfg, rng)
    if ledger is not None:
        ledger.charge("q_mean_multi", q_mean_multi_charge(eps, delta, us.shape[0], cfg.c_multi))
    return out


def emulated_q_max(values, delta: float, ledger: QueryLedger | None, cfg: QuantumEmulationConfig,
                   inner_charge: int = 0, inner_kind: str = "q_mean"):
    """Exact argmax (lowest index on ties) of the candidate values.

    Charges ceil(c_max sqrt(A) ln(1/delta)) evaluator calls to q_max_inner and,
    per call, inner_charge queries of inner_kind (the cost of the evaluator).
    """
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        raise ValueError("no candidates")
    if not 0 < delta < 1:
        raise ValueError("delta must lie in (0, 1)")
    i = int(np.argmax(values))
    if ledger is not None:
        calls = q_max_charge(values.size, delta, cfg.c_max)
        ledger.charge("q_max_inner", calls)
        if inner_charge:
            ledger.charge(inner_kind, calls * int(inner_charge))
    return i, float(values[i])


@dataclass
class GenerativeModel:
    """What a planner sees: net states, known rewards, a sampler, and exact laws for emulation.

    For a finite MDP the net is the identity and the slack L n^-alpha is 0.
    For a compact spec, `finite` is the discretized model on the net.
    """

    env: object
    net: Net | None
    finite: FiniteMdp
    holder: HolderParams

    @property
    def S(self) -> int:
        return self.finite.num_states

    @property
    def A(self) -> int:
        return self.finite.num_actions

    @property
    def rewards(self) -> np.ndarray:
        return self.finite.rewards

    @property
    def kernel(self) -> np.ndarray:
        return self.finite.kernel

    @property
    def slack(self) -> float:
        return lipschitz_slack(self.holder, self.net)

    def counts(self, m: int, rng: np.random.Generator, ledger: QueryLedger | None = None) -> np.ndarray:
        """(S, A, S) successor counts with m draws at every (s, a)."""
        if ledger is not None:
            ledger.charge("classical_sample", m * self.S * self.A)
        if isinstance(self.env, FiniteMdp):
            return rng.multinomial(m, self.kernel)
        out = np.empty((self.S, self.A, self.S), dtype=np.int64)
        for s in range(self.S):
            for a in range(self.A):
                out[s, a] = sample_counts(self.env, s, a, m, rng, self.net)
        return out


def as_model(env, net: Net | None = None, holder: HolderParams | None = None) -> GenerativeModel:
    if isinstance(env, GenerativeModel):
        return env
    if isinstance(env, FiniteMdp):
        return GenerativeModel(env=env, net=None, finite=env, holder=HolderParams(0.0, 1.0))
    if net is None:
        raise ValueError("compact specs need a net")
    return GenerativeModel(env=env, net=net, finite=discretize(env, net),
                           holder=holder if holder is not None else env.holder)
