import pytest

import archspace as a
from archspace.ops import Shape


@pytest.fixture
def desk_spec():
    """Four builder blocks over two stages; the standard desk-scale network."""
    blocks = [
        a.build("mbconv4", Shape(24, 4, 4)),
        a.build("attention2h", Shape(24, 4, 4)),
        a.build("resnet_basic", Shape(48, 2, 2)),
        a.build("identity", Shape(48, 2, 2)),
    ]
    return a.make_network(12, (32, 32), (2, 2), (24, 48), 10, blocks=blocks)


@pytest.fixture
def desk_budget():
    return a.Budget(50_000, 250_000, 1_000_000, 20_000_000)
