"""Exception hierarchy.

``DataError`` subclasses describe bad inputs (CLI exit code 3); everything
else signals misuse of the API.
"""


class CardforgeError(Exception):
    """Base class for all package errors."""


class DataError(CardforgeError):
    """Input data could not be ingested or is internally inconsistent."""


class MissingColumn(DataError):
    pass


class ValueOutOfRange(DataError):
    def __init__(self, message, rows=()):
        super().__init__(message)
        self.rows = tuple(rows)


class InvalidLabel(DataError):
    def __init__(self, message, rows=()):
        super().__init__(message)
        self.rows = tuple(rows)


class DuplicateId(DataError):
    pass


class ManifestMismatch(DataError):
    pass


class NonNumericColumn(DataError):
    pass


class AlreadyBinned(DataError):
    pass


class MixedPredictionKinds(DataError):
    pass


class EmptyCohort(DataError):
    pass


class InvalidSpec(DataError):
    pass


class InvalidCard(DataError):
    pass


class UnsupportedSchema(InvalidCard):
    pass


class MissingSection(CardforgeError):
    def __init__(self, section):
        super().__init__(f"missing or empty section: {section}")
        self.section = section


class EmptyInput(CardforgeError):
    pass


class AllReplicatesDegenerate(CardforgeError):
    pass


class MissingCI(CardforgeError):
    pass


class EmptySpec(CardforgeError):
    pass
