import numpy as np
import pytest

from kge.data import make_modular_kg, write_triples
from oracles import ACCEPTANCE


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def toy_dir(tmp_path_factory):
    """The planted modular graph: 100 entities, relations +1/+5, 10% held out."""
    return make_modular_kg(tmp_path_factory.mktemp("toy"), seed=0)


@pytest.fixture
def tiny_dir(tmp_path):
    write_triples(tmp_path / "train.txt", [("A", "likes", "B"), ("B", "likes", "C"),
                                           ("A", "knows", "C"), ("C", "knows", "B")])
    write_triples(tmp_path / "valid.txt", [("A", "likes", "C")])
    write_triples(tmp_path / "test.txt", [("B", "knows", "A"), ("C", "likes", "D")])
    return tmp_path
