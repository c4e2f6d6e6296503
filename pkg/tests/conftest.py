import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from sohgraph.data_io import SynthConfig, synth_battery

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_synth_config():
    # short battery with a fast knee so the full pipeline runs in seconds
    return SynthConfig(total_cycles=160, knee_cycle=60, linear_rate=5e-4, knee_rate=4e-5)


@pytest.fixture(scope="session")
def small_battery(small_synth_config):
    return synth_battery(small_synth_config)


_verdicts = pytest.StashKey[list]()


@pytest.fixture
def verdict(request):
    """Record one pass/fail line per acceptance criterion; echoed in the summary."""
    lines = request.config.stash.setdefault(_verdicts, [])

    def record(number, ok, detail):
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"
        lines.append((number, line))
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_verdicts, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
