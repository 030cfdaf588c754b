import json
import os

import numpy as np
import pytest

from remest import LtiSystem, MarkovChannel, riccati_steady_state

DATA_DIR = os.path.join(os.path.dirname(__file__), "data")


def pendubot_matrices():
    a = np.array([[1.0058, 0.0150, -0.0016, 0.0000],
                  [0.7808, 1.0058, -0.2105, -0.0016],
                  [-0.0060, 0.0000, 1.0077, 0.0150],
                  [-0.7962, -0.0060, 1.0294, 1.0077]])
    c = np.array([[1.0, 0, 0, 0], [0, 0, 1.0, 0]])
    u = np.array([0.003, 1.0, -0.005, -2.150])
    return a, c, np.outer(u, u), 0.001 * np.eye(2)


@pytest.fixture(scope="session")
def plant():
    a, c, w, v = pendubot_matrices()
    return LtiSystem(A=a, C=c, W=w, V=v)


@pytest.fixture(scope="session")
def filt(plant):
    return riccati_steady_state(plant, tol=1e-12)


@pytest.fixture(scope="session")
def default_channel():
    return MarkovChannel(P=[[0.1, 0.9], [0.5, 0.5]], d=[0.8, 0.1])


@pytest.fixture(scope="session")
def onoff_switching_channel():
    # deterministic two-state switch; only the second state can deliver
    return MarkovChannel(P=[[0.0, 1.0], [1.0, 0.0]], d=[1.0, 0.0])


def load_data(name):
    with open(os.path.join(DATA_DIR, name)) as fh:
        return json.load(fh)
