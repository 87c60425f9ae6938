"""Uniform nets on [0, 1]^D and a family of Lipschitz compact-state MDPs.

Kernel family: with probability w(x, a) the next state is drawn from a target
law T_a (uniform on a box around a mode, or a point mass at the mode when the
box has zero width); otherwise it is uniform on the cube. Since T_a and the
uniform part do not depend on x, TVD between p(.|x,a) and p(.|x',a) is
|w(x,a) - w(x',a)| * TVD(T_a, Unif), which gives closed-form certificates.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .mdp_core import FiniteMdp

NET_CAP = 10**6


@dataclass(frozen=True)
class HolderParams:
    L: float = 0.0
    alpha: float = 1.0

    def __post_init__(self):
        if self.L < 0 or self.alpha < 0:
            raise ValueError("Hölder constants must be nonnegative")


@dataclass(frozen=True)
class Net:
    D: int
    n: int
    points: np.ndarray = field(repr=False)

    @property
    def size(self) -> int:
        return self.points.shape[0]

    @property
    def covering_radius(self) -> float:
        return float(np.sqrt(self.D) / (2 * self.n))

    def to_dict(self):
        return {"D": self.D, "n": self.n}

    @classmethod
    def from_dict(cls, d):
        return build_uniform_net(int(d["D"]), int(d["n"]))


def build_uniform_net(D: int, n: int, cap: int = NET_CAP) -> Net:
    """Cell centers of the n^D grid, ordered with the last axis varying fastest."""
    if D < 1 or n < 1:
        raise ValueError("D and n must be positive")
    if n**D > cap:
        raise ValueError(f"net size {n}^{D} exceeds cap {cap}")
    axes = (np.arange(n) + 0.5) / n
    grid = np.stack(np.meshgrid(*([axes] * D), indexing="ij"), axis=-1).reshape(-1, D)
    grid.setflags(write=False)
    return Net(D=D, n=n, points=grid)


def _cell_coords(n: int, x: np.ndarray) -> np.ndarray:
    # half-open cells [i/n, (i+1)/n), the last one closed at 1
    return np.minimum(np.floor(x * n).astype(int), n - 1)


def quantize(net: Net, x) -> int:
    x = np.asarray(x, dtype=float).reshape(net.D)
    if np.any(x < 0) or np.any(x > 1):
        raise ValueError(f"point {x} lies outside the unit cube")
    return int(quantize_many(net, x[None, :])[0])


def quantize_many(net: Net, xs) -> np.ndarray:
    """Vectorized quantizer for an (N, D) array of points in the cube."""
    xs = np.asarray(xs, dtype=float).reshape(-1, net.D)
    idx = _cell_coords(net.n, xs)
    weights = net.n ** np.arange(net.D - 1, -1, -1)
    return idx @ weights


@dataclass(frozen=True)
class CompactMdpSpec:
    """Compact-state MDP on [0,1]^D; see the module docstring for the family."""

    D: int
    A: int
    beta: float
    mix: np.ndarray  # lambda_a, peak mixing weight
    direction: np.ndarray  # (A, D) unit vectors v_a
    offset: np.ndarray  # (A, D) o_a
    mode: np.ndarray  # (A, D) target modes m_a
    width: float  # half-width of the target box; 0 means point mass
    reward_level: np.ndarray  # rho_a
    reward_center: np.ndarray  # (A, D)
    holder: HolderParams
    L_kernel: float
    L_reward: float

    def _proj(self, x, a):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return (x - self.offset[a]) @ self.direction[a]

    def mix_weight(self, x, a):
        """w(x,a) = lambda_a (1 - (1 - cos(beta <v_a, x - o_a>)) / 4), in [lambda_a/2, lambda_a]."""
        if np.ndim(x) <= 1:
            z = self.beta * float(np.dot(np.asarray(x, dtype=float) - self.offset[a], self.direction[a]))
            return float(self.mix[a] * (1.0 - (1.0 - np.cos(z)) / 4.0))
        z = self.beta * self._proj(x, a)
        w = self.mix[a] * (1.0 - (1.0 - np.cos(z)) / 4.0)
        return w if np.ndim(x) > 1 else float(w[0])

    def reward(self, x, a):
        """rho_a exp(-beta^2 |x - c_a|^2 / 2)."""
        if np.ndim(x) <= 1:
            d = np.asarray(x, dtype=float) - self.reward_center[a]
            return float(self.reward_level[a] * np.exp(-0.5 * self.beta**2 * float(np.dot(d, d))))
        x = np.atleast_2d(np.asarray(x, dtype=float))
        d2 = ((x - self.reward_center[a]) ** 2).sum(axis=1)
        r = self.reward_level[a] * np.exp(-0.5 * self.beta**2 * d2)
        return r if r.shape[0] > 1 else float(r[0])

    def target_box(self, a):
        return self._boxes[0][a], self._boxes[1][a]

    def target_uniform_tvd(self, a) -> float:
        if self.width == 0:
            return 1.0
        lo, hi = self.target_box(a)
        return float(1.0 - np.prod(hi - lo))

    def tvd(self, x, xp, a) -> float:
        """Closed-form TVD between p(.|x,a) and p(.|x',a)."""
        return abs(self.mix_weight(x, a) - self.mix_weight(xp, a)) * self.target_uniform_tvd(a)

    def cell_probabilities(self, net: Net, x, a) -> np.ndarray:
        """Law of the quantized successor Q(x') for x' ~ p(.|x,a)."""
        w = self.mix_weight(x, a)
        out = np.full(net.size, (1.0 - w) / net.size)
        if self.width == 0:
            out[quantize(net, self.mode[a])] += w
            return out
        lo, hi = self.target_box(a)
        edges = np.arange(net.n + 1) / net.n
        per_axis = []
        for d in range(self.D):
            ov = np.clip(np.minimum(edges[1:], hi[d]) - np.maximum(edges[:-1], lo[d]), 0.0, None)
            per_axis.append(ov / (hi[d] - lo[d]))
        mass = per_axis[0]
        for d in range(1, self.D):
            mass = np.multiply.outer(mass, per_axis[d])
        return out + w * mass.reshape(-1)

    def to_dict(self):
        return {
            "D": self.D, "A": self.A, "beta": self.beta, "mix": self.mix.tolist(),
            "direction": self.direction.tolist(), "offset": self.offset.tolist(),
            "mode": self.mode.tolist(), "width": self.width,
            "reward_level": self.reward_level.tolist(),
            "reward_center": self.reward_center.tolist(),
        }

    @classmethod
    def from_dict(cls, d):
        return _assemble(int(d["D"]), int(d["A"]), float(d["beta"]), np.array(d["mix"]),
                         np.array(d["direction"]), np.array(d["offset"]), np.array(d["mode"]),
                         float(d["width"]), np.array(d["reward_level"]), np.array(d["reward_center"]))

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


def _assemble(D, A, beta, mix, direction, offset, mode, width, reward_level, reward_center):
    spec = CompactMdpSpec(D=D, A=A, beta=beta, mix=mix, direction=direction, offset=offset,
                          mode=mode, width=width, reward_level=reward_level,
                          reward_center=reward_center, holder=HolderParams(0.0, 1.0),
                          L_kernel=0.0, L_reward=0.0)
    object.__setattr__(spec, "_boxes", (np.clip(mode - width, 0.0, 1.0), np.clip(mode + width, 0.0, 1.0)))
    # |d/dz cos| <= 1 and |grad <v, x>| = 1, so w is (lambda_a beta / 4)-Lipschitz
    L_kernel = max(mix[a] * beta / 4.0 * spec.target_uniform_tvd(a) for a in range(A))
    # the Gaussian bump rho exp(-beta^2 r^2 / 2) has slope at most rho beta / sqrt(e)
    L_reward = float(np.max(reward_level) * beta / np.sqrt(np.e))
    object.__setattr__(spec, "L_kernel", float(L_kernel))
    object.__setattr__(spec, "L_reward", L_reward)
    object.__setattr__(spec, "holder", HolderParams(max(L_kernel, L_reward), 1.0))
    return spec


def make_holder_family(D: int, A: int, beta: float, seed: int, *, width: float = 0.1,
                       mix: float | None = None) -> CompactMdpSpec:
    """Random member of the family; width=0 with mix=1 and beta=0 is a pure point mass."""
    if beta < 0:
        raise ValueError("beta must be nonnegative")
    rng = np.random.default_rng(seed)
    lam = np.full(A, float(mix)) if mix is not None else rng.uniform(0.5, 0.9, size=A)
    v = rng.normal(size=(A, D))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    return _assemble(
        D, A, float(beta), lam, v,
        offset=rng.uniform(0, 1, size=(A, D)),
        mode=rng.uniform(0, 1, size=(A, D)),
        width=float(width),
        reward_level=rng.uniform(0.3, 1.0, size=A),
        reward_center=rng.uniform(0, 1, size=(A, D)),
    )


def sample_compact(spec: CompactMdpSpec, x, a, rng: np.random.Generator, size: int | None = None):
    """Draw x' ~ p(.|x,a); with size given, returns an (size, D) array."""
    n = 1 if size is None else int(size)
    w = spec.mix_weight(x, a)
    pick = rng.random(n) < w
    out = rng.random((n, spec.D))
    k = int(pick.sum())
    if k:
        if spec.width == 0:
            out[pick] = spec.mode[a]
        else:
            lo, hi = spec.target_box(a)
            out[pick] = lo + (hi - lo) * rng.random((k, spec.D))
    return out[0] if size is None else out


def discretize(spec: CompactMdpSpec, net: Net) -> FiniteMdp:
    """Finite MDP on the net: rewards at cell centers, kernel = law of the quantized successor."""
    if net.D != spec.D:
        raise ValueError("net and spec dimensions differ")
    kernel = np.empty((net.size, spec.A, net.size))
    rewards = np.empty((net.size, spec.A))
    for a in range(spec.A):
        rewards[:, a] = np.atleast_1d(spec.reward(net.points, a))
        for i, s in enumerate(net.points):
            kernel[i, a] = spec.cell_probabilities(net, s, a)
    kernel /= kernel.sum(axis=2, keepdims=True)
    return FiniteMdp(kernel=kernel, rewards=rewards)


def lipschitz_slack(holder: HolderParams, net: Net | None) -> float:
    """L * rho^alpha with rho the covering radius of the net (0 for finite inputs)."""
    if net is None or holder.L == 0:
        return 0.0
    return float(holder.L * net.covering_radius ** holder.alpha)
