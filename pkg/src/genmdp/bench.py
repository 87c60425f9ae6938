"""Instance generators, named fixtures, slope fits and the experiment config."""
from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .discretization import CompactMdpSpec, make_holder_family
from .mdp_core import FiniteMdp

FIXTURES = ("M2", "riverswim6", "compactD1")


def generate_random_mdp(S: int, A: int, mixing: float, seed) -> FiniteMdp:
    """Rows (1 - mixing) * point mass at a random state + mixing * uniform; rewards U[0, 1].

    Any two rows share at least the uniform part, so the ergodicity
    coefficient is at most 1 - mixing.
    """
    if S < 1 or A < 1:
        raise ValueError("S and A must be positive")
    if not 0 <= mixing <= 1:
        raise ValueError("mixing must lie in [0, 1]")
    rng = np.random.default_rng(seed)
    target = rng.integers(S, size=(S, A))
    kernel = np.full((S, A, S), mixing / S)
    kernel[np.arange(S)[:, None], np.arange(A)[None, :], target] += 1 - mixing
    return FiniteMdp(kernel=kernel, rewards=rng.uniform(0, 1, size=(S, A)))


def _mixed(det_next, S, mix=0.1):
    S_, A = det_next.shape
    kernel = np.full((S_, A, S), mix / S)
    kernel[np.arange(S_)[:, None], np.arange(A)[None, :], det_next] += 1 - mix
    return kernel


def m2() -> FiniteMdp:
    # actions: 0 = stay, 1 = go (to the rewarding state 1)
    det = np.array([[0, 1], [1, 1]])
    rewards = np.array([[0.0, 0.5], [1.0, 1.0]])
    return FiniteMdp(kernel=_mixed(det, 2), rewards=rewards)


def riverswim6() -> FiniteMdp:
    # actions: 0 = left, 1 = right; small reward at the left bank, big one at the right
    S = 6
    s = np.arange(S)
    det = np.stack([np.maximum(s - 1, 0), np.minimum(s + 1, S - 1)], axis=1)
    rewards = np.zeros((S, 2))
    rewards[0, 0] = 0.005
    rewards[S - 1, 1] = 1.0
    return FiniteMdp(kernel=_mixed(det, S), rewards=rewards)


def fixture(name: str):
    if name == "M2":
        return m2()
    if name == "riverswim6":
        return riverswim6()
    if name == "compactD1":
        return make_holder_family(D=1, A=2, beta=1.0, seed=0)
    raise ValueError(f"unknown fixture {name!r}; choose from {FIXTURES}")


@dataclass(frozen=True)
class SlopeFit:
    exponent: float
    intercept: float
    window: tuple
    residual: float  # RMS residual in log space
    points: int


def fit_loglog_slope(series, window=None, t=None, points: int | None = 64) -> SlopeFit:
    """Least-squares slope of log(value) against log(t) over t in [lo, hi].

    t defaults to 1, 2, ...; with `points` set, the fit uses that many
    log-spaced indices in the window so every scale carries equal weight
    (None fits every sample).
    """
    y = np.asarray(series, dtype=float)
    t = np.arange(1, y.size + 1, dtype=float) if t is None else np.asarray(t, dtype=float)
    if t.shape != y.shape:
        raise ValueError("t and series lengths differ")
    lo, hi = (t[0], t[-1]) if window is None else window
    if lo > hi or lo < t[0] or hi > t[-1]:
        raise ValueError(f"window {window} outside the trace range [{t[0]}, {t[-1]}]")
    idx = np.flatnonzero((t >= lo) & (t <= hi))
    if points is not None and idx.size > points:
        grid = np.geomspace(t[idx[0]], t[idx[-1]], points)
        pick = np.unique(np.searchsorted(t, grid).clip(idx[0], idx[-1]))
        idx = pick
    if idx.size < 2:
        raise ValueError("need at least two points in the window")
    if np.any(y[idx] <= 0):
        raise ValueError("series must be positive inside the window")
    lx, ly = np.log(t[idx]), np.log(y[idx])
    if np.ptp(ly) == 0:
        return SlopeFit(0.0, float(ly[0]), (float(lo), float(hi)), 0.0, int(idx.size))
    fit = stats.linregress(lx, ly)
    res = ly - (fit.intercept + fit.slope * lx)
    return SlopeFit(float(fit.slope), float(fit.intercept), (float(lo), float(hi)),
                    float(np.sqrt(np.mean(res**2))), int(idx.size))


@dataclass
class ExperimentConfig:
    """Everything needed to replay a run; unknown keys are rejected by from_dict."""

    instance: dict = field(default_factory=lambda: {"fixture": "M2"})
    mode: str = "classical"
    H: int = 2
    K: int | None = None
    T: int | None = None
    eps: float | None = None
    delta: float = 0.1
    seeds: list = field(default_factory=lambda: [0])
    noise_mode: str = "uniform"
    scale: float = 1.0
    c_budget: float = 8.0
    strict: bool = False
    tau: float | None = None
    Lambda: float | None = None
    nu: float | None = None
    out: str = "out"

    def __post_init__(self):
        keys = set(self.instance)
        if len(keys & {"fixture", "random", "compact", "path"}) != 1 or len(keys) != 1:
            raise ValueError("instance must have exactly one of fixture, random, compact, path")
        if "random" in keys:
            _only(self.instance["random"], {"S", "A", "mixing", "seed"}, "instance.random")
        if "compact" in keys:
            _only(self.instance["compact"], {"D", "A", "beta", "seed", "n", "width", "mix"}, "instance.compact")
        if not self.seeds:
            raise ValueError("seeds must be nonempty")
        self.seeds = [int(s) for s in self.seeds]

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        _only(d, {f.name for f in dataclasses.fields(cls)}, "config")
        return cls(**d)

    @classmethod
    def from_json(cls, text: str) -> "ExperimentConfig":
        return cls.from_dict(json.loads(text))

    def to_dict(self):
        return dataclasses.asdict(self)

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


def _only(d, allowed, where):
    extra = set(d) - set(allowed)
    if extra:
        raise ValueError(f"unknown keys in {where}: {sorted(extra)}")


def build_instance(inst: dict):
    """(env, net) from an ExperimentConfig instance entry."""
    from .discretization import build_uniform_net

    if "fixture" in inst:
        return fixture(inst["fixture"]), None
    if "random" in inst:
        p = inst["random"]
        return generate_random_mdp(int(p["S"]), int(p["A"]), float(p.get("mixing", 0.1)), p.get("seed", 0)), None
    if "path" in inst:
        with open(inst["path"]) as fh:
            doc = json.load(fh)
        if "kernel" in doc:
            return FiniteMdp.from_dict(doc), None
        return CompactMdpSpec.from_dict(doc), None
    p = inst["compact"]
    spec = make_holder_family(int(p.get("D", 1)), int(p.get("A", 2)), float(p.get("beta", 1.0)),
                              p.get("seed", 0), width=float(p.get("width", 0.1)), mix=p.get("mix"))
    return spec, (build_uniform_net(spec.D, int(p["n"])) if "n" in p else None)
