import pytest

from snoopshield import harness


@pytest.fixture(scope="session")
def default_spec():
    return harness.ExperimentSpec.default()


@pytest.fixture(scope="session")
def default_corpus(default_spec):
    return harness.generate(default_spec)


@pytest.fixture(scope="session")
def default_truth(default_spec):
    return harness.ground_truth(default_spec)
