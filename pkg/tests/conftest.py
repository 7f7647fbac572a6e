import numpy as np
import pytest
import torch

from uaed.synthdata import AnnotatorProfile, SynthConfig, write_dataset


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(autouse=True)
def _torch_threads():
    torch.set_num_threads(1)


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory):
    """8 synthetic 64x64 images with 4 annotators."""
    root = tmp_path_factory.mktemp("tiny")
    write_dataset(SynthConfig(seed=3, n_images=8, size=(64, 64)), root)
    return root


@pytest.fixture(scope="session")
def heterogeneous_profiles():
    return [
        AnnotatorProfile(0.0, 0.0, 0.0),
        AnnotatorProfile(0.7, 0.1, 0.3),
        AnnotatorProfile(1.0, 0.25, 0.0),
        AnnotatorProfile(0.5, 0.05, 0.8),
    ]



_ACCEPTANCE = pytest.StashKey[list]()


@pytest.fixture
def record_criterion(request):
    """Record one acceptance-criterion outcome, echoed live and in the final summary."""
    lines = request.config.stash.setdefault(_ACCEPTANCE, [])
    reporter = request.config.pluginmanager.get_plugin("terminalreporter")

    def record(number, passed, detail):
        line = f"[{'PASS' if passed else 'FAIL'}] criterion {number}: {detail}"
        lines.append(line)
        if reporter is not None:
            reporter.write_line("")
            reporter.write_line(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split("criterion ")[1].split(":")[0])):
            terminalreporter.write_line(line)
