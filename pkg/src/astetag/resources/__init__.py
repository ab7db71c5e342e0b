"""Bundled data files."""

from importlib import resources
from pathlib import Path


def overfit_fixture_path() -> Path:
    """Path of the bundled 16-sentence training fixture."""
    with resources.as_file(
        resources.files(__package__).joinpath("overfit16.txt")
    ) as path:
        return Path(path)
