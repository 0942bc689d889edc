import numpy as np
import pytest

from coopsynth.dist import synth_dist
from coopsynth.graph import benchmark_topology
from coopsynth.lumped import synth_lumped
from coopsynth.sstools import AgentModel, block_diag_compose


def example_agent():
    # 1 / (s^2 + 2s + 2) on both the performance and the spatial channel
    return AgentModel(A=[[0, 1], [-2, -2]], B1=[[0], [1]], B=[[0], [1]],
                      C1=[[1, 0]], C=[[1, 0]])


@pytest.fixture(scope="session")
def agent():
    return example_agent()


@pytest.fixture(scope="session")
def param4():
    return benchmark_topology(4)


@pytest.fixture(scope="session")
def S4():
    return block_diag_compose([example_agent()] * 4)


@pytest.fixture(scope="session")
def lumped4(S4, param4):
    return synth_lumped(S4, param4, [0.05])


@pytest.fixture(scope="session")
def dist4(param4):
    return synth_dist([example_agent()] * 4, param4, [0.05])


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
