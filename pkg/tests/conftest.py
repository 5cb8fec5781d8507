import numpy as np
import pytest

from bayesvpi.mdp import Mdp


def random_mdp(rng, num_states, num_actions, discount=0.9, support=(-1.0, 0.0, 1.0), sparsity=0.0):
    trans = rng.random((num_states, num_actions, num_states))
    if sparsity:
        trans *= rng.random(trans.shape) > sparsity
        trans[..., 0] += 1e-3
    trans /= trans.sum(axis=-1, keepdims=True)
    rdist = rng.dirichlet(np.ones(len(support)), size=(num_states, num_actions))
    return Mdp(trans, rdist, np.array(support), discount)


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


ACCEPTANCE: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[n])
