from __future__ import annotations

from datetime import datetime

import numpy as np
import pytest

from fusioncast.core_unet import CoreUNetConfig
from fusioncast.grid_io import VariableSeries
from fusioncast.wf_unet import WFUNetConfig


@pytest.fixture
def tiny_core_config():
    """Smallest gradient-checkable shape: 1263 parameters."""
    return CoreUNetConfig(
        levels=2, base_channels=2, input_lag=2, spatial_size=(8, 8), dropout_rate=0.0
    )


@pytest.fixture
def tiny_wf_config(tiny_core_config):
    return WFUNetConfig(stream_config=tiny_core_config)


@pytest.fixture
def desk_core_config():
    return CoreUNetConfig(
        levels=3, base_channels=4, input_lag=4, spatial_size=(32, 32), dropout_rate=0.5
    )


def make_series(values, name="tp", start=None, step_hours=1, **kwargs):
    return VariableSeries(
        variable_name=name,
        values=np.asarray(values),
        start_time=start or datetime(2020, 1, 1),
        step_hours=step_hours,
        **kwargs,
    )


@pytest.fixture
def series_factory():
    return make_series


# One line per acceptance criterion, collected by tests/test_acceptance.py and
# echoed after the test summary so the verdicts are visible without -s.
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
