import hypothesis
import numpy as np
import pytest

from mtlcsi import dataset
from mtlcsi.chansim import ChannelConfig
from mtlcsi.secrecy import TopologyConfig

hypothesis.settings.register_profile("default", deadline=None, max_examples=100)
hypothesis.settings.load_profile("default")


@pytest.fixture(scope="session")
def tiny_topology():
    return TopologyConfig(2, 1)


@pytest.fixture(scope="session")
def tiny_windows(tiny_topology):
    chan = ChannelConfig(num_samples=60, seed=11)
    return dataset.make_windows(dataset.build_scenario(tiny_topology, chan), 4, 1)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


_ACCEPTANCE = pytest.StashKey[dict]()


@pytest.fixture(scope="session")
def acceptance_log(request):
    """Criterion id -> (passed, detail); printed in the terminal summary."""
    return request.config.stash.setdefault(_ACCEPTANCE, {})


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    results = config.stash.get(_ACCEPTANCE, None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(results, key=lambda k: (int("".join(c for c in k if c.isdigit())), k)):
        passed, detail = results[key]
        terminalreporter.write_line(f"criterion {key}: {'PASS' if passed else 'FAIL'}  {detail}")
