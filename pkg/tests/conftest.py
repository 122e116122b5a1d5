import numpy as np
import pytest

from tactile_placement.experiments import TENNIS
from tactile_placement.hand import build_hand
from tactile_placement.objects import make_object
from tactile_placement.sim import PhysicsParams, Simulation


@pytest.fixture(scope="session")
def hand():
    return build_hand()


@pytest.fixture(scope="session")
def tennis_body():
    return make_object(TENNIS)


@pytest.fixture()
def sim(hand, tennis_body):
    return Simulation(hand, tennis_body, PhysicsParams())


def settle_on_palm(sim, hand, pos=(0.0, 0.075, 0.06), seconds=1.0):
    """Drop the object and let it come to rest under zero joint targets."""
    state = sim.initial_state(np.asarray(pos, dtype=float))
    targets = np.zeros(hand.n_joints)
    steps = int(seconds / (sim.params.dt * sim.params.substeps))
    for _ in range(steps):
        state, wrenches, contacts, diag = sim.step(state, targets)
    return state, wrenches, contacts, diag
