import pytest

from lcrl import fixture_path
from lcrl.automaton import load_automaton_file
from lcrl.environments import load_environment, load_kripke


def automaton(name):
    return load_automaton_file(fixture_path(name))


def environment(name):
    return load_environment(fixture_path(name))


def kripke(name):
    return load_kripke(fixture_path(name).read_text())


@pytest.fixture
def reach_avoid():
    return automaton("reach_avoid.ldba")


@pytest.fixture
def guess_ab():
    return automaton("guess_a_or_b.ldba")


@pytest.fixture
def two_sets():
    return automaton("recurrence_ab.ldba")
