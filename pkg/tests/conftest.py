import numpy as np
import pytest

from genmdp.bench import fixture, generate_random_mdp


@pytest.fixture
def m2():
    return fixture("M2")


@pytest.fixture
def river():
    return fixture("riverswim6")


def random_mdps(n, seed=0, smax=4, amax=4, mixing=(0.05, 0.5)):
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n):
        S, A = int(rng.integers(1, smax + 1)), int(rng.integers(1, amax + 1))
        out.append(generate_random_mdp(S, A, float(rng.uniform(*mixing)), [seed, i]))
    return out
