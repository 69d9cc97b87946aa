"""Logically-constrained reinforcement learning with automaton-shaped rewards."""
from importlib import resources

__version__ = "0.1.0"


def fixture_path(name: str):
    """Filesystem path of a shipped fixture file."""
    return resources.files(__package__).joinpath("fixtures", name)
