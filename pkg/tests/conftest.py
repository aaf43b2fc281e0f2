import os

import pytest

from enclavesim.asm import assemble
from enclavesim.cpu import Policy, make_machine
from enclavesim.device import Schedule

SCENARIO_DIR = os.path.abspath(os.path.join(os.path.dirname(__file__), os.pardir, "scenarios"))


def scenario_path(name: str) -> str:
    return os.path.join(SCENARIO_DIR, name)


def build_machine(src: str, device=None, policy=Policy.ATOMIC):
    """Assemble a program and wrap it in a fresh machine."""
    image, layout, labels = assemble(src)
    m = make_machine(bytearray(image), layout, device if device is not None else Schedule(()), policy)
    return m, layout, labels


@pytest.fixture
def mk():
    return build_machine
