import numpy as np
import pytest
import torch

from structgan.config import builtin_config


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_config():
    """Small fcdensenet cycle+edge config for fast 32x32 training steps."""
    return builtin_config("cycle+edge").replace(
        load_size=(32, 32), crop_size=(32, 32), n_scales=3, growth_rate=4,
        layers_per_block=2, first_channels=8, ndf=8, disc_depth=3, ngf=8, n_res_blocks=2)


def pytest_configure(config):
    torch.set_num_threads(1)


_ACCEPTANCE = []


def pytest_runtest_logreport(report):
    if "test_acceptance.py" in report.nodeid and report.when == "call":
        _ACCEPTANCE.append((report.nodeid.split("::")[-1], report.outcome))
    elif "test_acceptance.py" in report.nodeid and report.when == "setup" and report.failed:
        _ACCEPTANCE.append((report.nodeid.split("::")[-1], "error"))


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, outcome in _ACCEPTANCE:
        mark = "PASS" if outcome == "passed" else "FAIL"
        terminalreporter.write_line(f"[{mark}] {name}")
