import pytest

from kerneltower import DivergentDeltaModel, WordTreeModel, feeder_model
from kerneltower.points import orbit_closure


@pytest.fixture(scope="session")
def ex25():
    """The canonical word-tree example: m=2, r=c=1/2, eta=1."""
    return WordTreeModel(m=2, r=0.5, c=0.5, eta=1.0)


@pytest.fixture(scope="session")
def delta2():
    return DivergentDeltaModel(m=2)


@pytest.fixture(scope="session")
def feeder():
    return feeder_model()


@pytest.fixture(scope="session")
def root(ex25):
    return ex25.point("")


@pytest.fixture(scope="session")
def small_base(ex25):
    """Root plus its two children."""
    return [ex25.point(x) for x in ("", "1", "2")]


@pytest.fixture(scope="session")
def closure2(ex25, root):
    return orbit_closure(ex25.branch, [root], 2)
