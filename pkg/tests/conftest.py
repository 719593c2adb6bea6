import pytest

from genret.corpus_index import index_from_texts
from genret.synthetic import BRIDGE_CORPUS, SAMUEL


@pytest.fixture
def samuel():
    return index_from_texts(SAMUEL)


@pytest.fixture
def bridge():
    return index_from_texts(BRIDGE_CORPUS, add_done=True)


def pytest_terminal_summary(terminalreporter):
    from helpers import ACCEPTANCE

    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])
