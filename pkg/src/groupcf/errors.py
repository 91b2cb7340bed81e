"""Exception hierarchy.

Every error carries the process exit code the CLI maps it to:
2 for bad input, 3 when no solution exists, 4 when a resource (seeds,
neighbors) runs out.
"""

from __future__ import annotations


class GroupCFError(Exception):
    exit_code = 2


class InputError(GroupCFError):
    exit_code = 2


class NoSolutionError(GroupCFError):
    exit_code = 3


class ExhaustionError(GroupCFError):
    exit_code = 4


# -- tabular ---------------------------------------------------------------

class SchemaError(InputError):
    pass


class MissingColumn(InputError):
    def __init__(self, column: str, path: str | None = None):
        self.column = column
        where = f" in {path}" if path else ""
        super().__init__(f"missing column {column!r}{where}")


class UnknownCategory(InputError):
    def __init__(self, feature: str, value: str, row: int | None = None):
        self.feature, self.value, self.row = feature, value, row
        at = f" (row {row})" if row is not None else ""
        super().__init__(f"unknown category {value!r} for feature {feature!r}{at}")


class MalformedNumber(InputError):
    def __init__(self, row: int, feature: str, value: str):
        self.row, self.feature, self.value = row, feature, value
        super().__init__(f"row {row}: cannot parse {value!r} as a number for feature {feature!r}")


class DegenerateSplit(InputError):
    pass


class SchemaMismatch(InputError):
    pass


# -- model -----------------------------------------------------------------

class InvalidConfig(InputError):
    pass


class SingleClassTraining(InputError):
    pass


class UnknownInstance(InputError):
    pass


class FormatVersionMismatch(InputError):
    pass


# -- neighbors -------------------------------------------------------------

class InsufficientNeighbors(ExhaustionError):
    def __init__(self, found: int, wanted: int):
        self.found, self.wanted = found, wanted
        super().__init__(f"only {found} like neighbors available, wanted {wanted}")


class InsufficientEligible(ExhaustionError):
    def __init__(self, cls: str, found: int, wanted: int):
        self.cls, self.found, self.wanted = cls, found, wanted
        super().__init__(f"class {cls!r}: only {found} eligible seeds, wanted {wanted}")


# -- counterfactual search -------------------------------------------------

class NoActionableFeatures(InputError):
    pass


class AllSinglesFailed(NoSolutionError):
    pass


class EmptyContrastClass(NoSolutionError):
    pass


class TooFewPoints(InputError):
    pass


class NoValidCandidate(NoSolutionError):
    def __init__(self, message: str, diagnostic: dict | None = None):
        self.diagnostic = diagnostic or {}
        super().__init__(message)


# -- metrics / study -------------------------------------------------------

class LengthMismatch(InputError):
    pass


class ZeroVariance(InputError):
    pass


class MissingItem(InputError):
    pass


class InvalidCounterfactual(InputError):
    pass


class ExhaustedSeeds(ExhaustionError):
    def __init__(self, succeeded: int, wanted: int, draws: int):
        self.succeeded, self.wanted, self.draws = succeeded, wanted, draws
        super().__init__(
            f"built {succeeded} of {wanted} item sets after {draws} seed draws"
        )


class SelectorNotFound(InputError):
    pass
