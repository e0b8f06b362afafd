import json

import numpy as np
import pytest

from gridsan.checks import fig2_grid, two_bus_grid
from gridsan.scenarios.smartgrid import DATA_DIR


@pytest.fixture(scope="session")
def fig2():
    return fig2_grid()


@pytest.fixture(scope="session")
def fig2_doc():
    return json.loads((DATA_DIR / "fig2.json").read_text())


@pytest.fixture
def two_bus():
    return two_bus_grid()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
