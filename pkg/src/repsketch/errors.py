"""Exception hierarchy shared by every module.

Each class carries the CLI exit code it maps to, so the front end can
translate failures without a lookup table.
"""

from __future__ import annotations


class RepSketchError(Exception):
    exit_code = 2


class InputError(RepSketchError, ValueError):
    """Bad argument: dimension mismatch, out-of-range parameter, missing file."""

    exit_code = 2


class ConfigError(InputError):
    exit_code = 2


class IncompatibleSketchError(InputError):
    """Two sketches built from different ensembles cannot be combined."""

    exit_code = 2


class ParseError(InputError):
    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


class FormatError(RepSketchError):
    """Binary file is malformed. ``offset`` is the byte position of the fault."""

    exit_code = 3

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


class TrainingError(RepSketchError):
    exit_code = 1

    def __init__(self, message: str, epoch: int):
        super().__init__(f"epoch {epoch}: {message}")
        self.epoch = epoch
