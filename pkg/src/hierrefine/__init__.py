"""Hierarchical planning with knowledge-based symbol grounding, refined by penalized REINFORCE."""

from importlib import resources
from pathlib import Path

__version__ = "0.1.0"


def data_path(name: str) -> Path:
    """Path of a bundled Mountain Car knowledge-base or config file."""
    return Path(str(resources.files(__name__) / "data" / name))
