"""Mapping from exceptions to machine-readable categories and exit codes."""

from __future__ import annotations

import numpy as np
from pydantic import ValidationError

from .io import ContainerError

EXIT_CODES = {
    "invalid-config": 3,
    "container": 4,
    "numerical": 5,
    "server": 6,
    "internal": 1,
}


def classify(exc: BaseException) -> tuple[str, str]:
    """Return ``(category, group)``; ``group`` keys ``EXIT_CODES``."""
    if isinstance(exc, ContainerError):
        return exc.category, "container"
    if isinstance(exc, FileNotFoundError):
        return "missing-file", "container"
    if isinstance(exc, (np.linalg.LinAlgError, FloatingPointError)):
        return "numerical", "numerical"
    if isinstance(exc, (ValueError, ValidationError, KeyError)):
        return "invalid-config", "invalid-config"
    return "internal", "internal"
