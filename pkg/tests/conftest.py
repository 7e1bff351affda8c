import math

import pytest

from app.models.models import Direction, ProtocolConfig
from app.simulation.geom import RngStream, sample_sphere_array
from app.simulation.quantum import state_params


@pytest.fixture
def sp_pi8():
    return state_params(math.pi / 8)


@pytest.fixture
def strict_cfg():
    return ProtocolConfig(gamma=math.pi / 8, mode="strict", master_seed=11)


@pytest.fixture
def ideal_cfg():
    return ProtocolConfig(gamma=math.pi / 8, mode="ideal", master_seed=11)


@pytest.fixture
def random_pairs():
    """Twenty seeded (a, b) pairs, not canonicalized."""
    points = sample_sphere_array(3, RngStream(2024, ("tests", "pairs")), 40)
    directions = [Direction.from_components(p, normalize=True) for p in points]
    return list(zip(directions[0::2], directions[1::2]))


@pytest.fixture
def generic_setting():
    """A setting with nonzero y components on both sides and a_z > b_z > 0."""
    a = Direction.from_components((0.3, 0.4, 0.8), normalize=True)
    b = Direction.from_components((-0.5, 0.6, 0.3), normalize=True)
    return a, b
