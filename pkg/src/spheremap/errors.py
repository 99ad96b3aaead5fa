"""Exception hierarchy shared by all spheremap modules.

The CLI maps these onto stable exit codes (see cli.py), so new error
conditions should reuse one of the classes below instead of raising bare
ValueError.
"""


class SpheremapError(Exception):
    """Base class for all package errors."""


class ParameterError(SpheremapError):
    """A configuration value or function argument is out of its valid range."""


class InputError(SpheremapError):
    """Input data violates a documented precondition (empty cloud, too few points, ...)."""


class ParseError(SpheremapError):
    """A file could not be parsed.

    Carries the location of the failure: byte offset for binary formats,
    line number for text formats (whichever applies).
    """

    def __init__(self, message, *, offset=None, line=None):
        loc = []
        if offset is not None:
            loc.append(f"byte {offset}")
        if line is not None:
            loc.append(f"line {line}")
        suffix = f" ({', '.join(loc)})" if loc else ""
        super().__init__(message + suffix)
        self.offset = offset
        self.line = line


class StructuralError(SpheremapError):
    """File parsed but its contents violate a structural rule (e.g. time ordering)."""


class DegenerateRegistrationError(SpheremapError):
    """Scan-to-map registration found too few valid correspondences."""
