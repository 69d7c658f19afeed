"""Exception hierarchy shared by all modules."""


class SharesError(Exception):
    """Base class for all package errors."""


# input / data problems
class ParseError(SharesError):
    def __init__(self, message, line=None, column=None, position=None):
        self.line = line
        self.column = column
        self.position = position
        where = []
        if line is not None:
            where.append(f"line {line}")
        if column is not None:
            where.append(f"column {column}")
        if position is not None:
            where.append(f"position {position}")
        super().__init__(f"{message} ({', '.join(where)})" if where else message)


class UnknownFunction(ParseError):
    pass


class SchemaError(SharesError):
    pass


class DomainError(SharesError):
    pass


class UnknownEquation(SharesError):
    pass


class UnknownDataset(SharesError):
    pass


class ValidationFailed(SharesError):
    def __init__(self, verdict):
        self.verdict = verdict
        super().__init__(
            "expression is not a transparent SHARE: "
            + ", ".join(str(v) for v in verdict.violations)
        )


class ConfigError(SharesError):
    pass


# numerical problems
class DegenerateTarget(SharesError):
    pass


class NonFiniteOutput(SharesError):
    pass


class NonFiniteGradient(SharesError):
    pass


class TrainingDiverged(SharesError):
    pass


# analysis problems
class UnknownShape(SharesError):
    pass


class NoSegments(SharesError):
    pass


class PatternMismatch(SharesError):
    def __init__(self, pattern):
        self.pattern = pattern
        super().__init__(f"expected segment pattern RPRPR, found {pattern or '<empty>'}")


# search
class NoAdmissibleDonor(SharesError):
    pass
