import sys

import pytest

from dialex.corpus import build_entity_examples
from dialex.embedding import HashingEmbedder
from dialex.fixtures import build_adversarial_fixture, build_golden_fixture
from dialex.pipeline import build_registry
from dialex.retriever import build_index


@pytest.fixture(scope="session")
def provider():
    return HashingEmbedder()


@pytest.fixture(scope="session")
def golden():
    return build_golden_fixture()


@pytest.fixture(scope="session")
def golden_index(golden, provider):
    return build_index(build_entity_examples(golden.records), provider)


@pytest.fixture(scope="session")
def golden_registry(golden):
    return build_registry(golden.schemas)


@pytest.fixture(scope="session")
def adversarial():
    return build_adversarial_fixture()


@pytest.fixture(scope="session")
def adversarial_index(adversarial, provider):
    return build_index(build_entity_examples(adversarial.corpus_records), provider)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """Echo the acceptance ledger so each criterion's verdict survives capture."""
    mod = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    lines = getattr(mod, "LEDGER", None) if mod else None
    if lines:
        terminalreporter.write_line("")
        for line in lines:
            terminalreporter.write_line(line)
