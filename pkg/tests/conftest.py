import numpy as np
import pytest

from nnhacore.filterbank import FilterBank, FilterBankSpec
from nnhacore.prescription import (Mlp, TrainerConfig, default_rule, grid_levels, oracle_grid,
                                   train)

FS = 24000.0


def bin_sine(freq_hz, n, amplitude=1.0, fs=FS, phase=0.0):
    t = np.arange(n)
    return amplitude * np.sin(2 * np.pi * freq_hz * t / fs + phase)


@pytest.fixture(scope="session")
def spec():
    return FilterBankSpec()


@pytest.fixture(scope="session")
def bank(spec):
    return FilterBank(spec)


@pytest.fixture(scope="session")
def rule():
    return default_rule(6)


@pytest.fixture(scope="session")
def trained(rule):
    """Network trained on the oracle grid with default settings (seed 0)."""
    data = oracle_grid(rule, grid_levels())
    return train(Mlp.initialize([6, 8, 6], seed=0), data, TrainerConfig(seed=0))


def pytest_terminal_summary(terminalreporter):
    import sys
    module = sys.modules.get("tests.test_acceptance")
    results = getattr(module, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for line in sorted(results, key=lambda s: int(s.split()[1].rstrip("."))):
            terminalreporter.write_line(line)
