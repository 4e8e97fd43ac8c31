import sys

import pytest
from hypothesis import settings

from ftzip import synth
from ftzip.linear_model import TrainConfig, train

settings.register_profile("ci", deadline=None)
settings.load_profile("ci")


@pytest.fixture(scope="session")
def small_split():
    return synth.desk_split(n_docs=5000, seed=7)


@pytest.fixture(scope="session")
def small_model(small_split):
    tr, _ = small_split
    return train(tr, TrainConfig(dim=8, bucket=5000, lr=0.3))


def pytest_terminal_summary(terminalreporter):
    acceptance = sys.modules.get("test_acceptance")
    if acceptance is not None and acceptance.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(acceptance.RESULTS, key=lambda l: int(l.split("criterion")[1].split(":")[0])):
            terminalreporter.write_line(line)
