import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from fedtrust import model as mk

settings.register_profile("default", max_examples=50, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_params(arch: mk.ArchitectureDescriptor, rng: np.random.Generator, bound: float = 1.0) -> mk.ModelParams:
    return mk.ModelParams(arch, rng.uniform(-bound, bound, size=arch.param_count))


def pytest_terminal_summary(terminalreporter):
    import sys

    module = sys.modules.get("test_acceptance")
    if module is None or not module.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(module.RESULTS):
        terminalreporter.write_line(module.RESULTS[n])
