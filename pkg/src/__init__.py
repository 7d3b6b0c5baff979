"""Transient RFI source classifier."""

from importlib.metadata import PackageNotFoundError, version
from pathlib import Path

import toml

DISTRIBUTION = "rfi-transient-classifier"


def _resolve_version() -> str:
    try:
        return version(DISTRIBUTION)
    except PackageNotFoundError:
        # source checkout: read it from the manifest next to the package
        pyproject = Path(__file__).parent.parent / "pyproject.toml"
        return toml.load(pyproject)["project"]["version"]


__version__ = _resolve_version()
