"""Exception types shared across the package.

The CLI maps these onto its documented exit codes, so raising the right
class matters more than the message wording.
"""

from __future__ import annotations


class RelfineError(Exception):
    """Base class for all errors raised by this package."""


class FormatError(RelfineError, ValueError):
    """A file, grid, or config failed validation (CLI exit code 2)."""


class SceneSpecError(RelfineError, ValueError):
    """A scene specification is invalid (CLI exit code 2)."""


class UnknownCategoryError(RelfineError, LookupError):
    """A constraint or query names a category with no map (CLI exit code 3)."""


class SceneSetMismatchError(RelfineError, ValueError):
    """Two runs being compared do not cover the same scenes (CLI exit code 4)."""
