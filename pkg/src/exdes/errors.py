"""Exception hierarchy shared across the package.

Two broad families matter to callers: ``DomainError`` (bad input, rule or
rejection semantics; CLI exit code 1) and ``TransportError`` (connectivity
and persistence trouble; CLI exit code 2).
"""


class ExdesError(Exception):
    pass


class DomainError(ExdesError):
    pass


class TransportError(ExdesError):
    pass


# -- telemetry ---------------------------------------------------------------

class EmptySnapshot(DomainError):
    pass


class NonFiniteValue(DomainError):
    pass


# -- parsing (rule DSL, scenario files, model files, record lines) -----------

class ParseError(DomainError):
    def __init__(self, line_no, reason):
        super().__init__(f"line {line_no}: {reason}")
        self.line_no = line_no
        self.reason = reason


class UnknownParameter(ParseError):
    pass


class DuplicateRuleId(ParseError):
    pass


class MissingVersion(ParseError):
    pass


class NonFiniteThreshold(ParseError):
    pass


class OverlappingDoorIntervals(ParseError):
    pass


class DirectiveOutOfRange(ParseError):
    pass


# -- rule evaluation and updates ---------------------------------------------

class StateMismatch(DomainError):
    pass


class StaleVersion(DomainError):
    pass


# -- trackers and aggregation ------------------------------------------------

class TimeRegression(DomainError):
    pass


# -- agent runtime -----------------------------------------------------------

class UnknownActuator(DomainError):
    pass


class TransportDown(TransportError):
    pass


class SpillIoError(TransportError):
    pass


# -- wire protocol -----------------------------------------------------------

class WireError(DomainError):
    pass


class PayloadTooLarge(WireError):
    pass


class BadMagic(WireError):
    pass


class UnsupportedVersion(WireError):
    pass


class Truncated(WireError):
    pass


class BadCrc(WireError):
    pass


class BadAuth(WireError):
    pass


class WindowOverflow(WireError):
    pass


# -- collector and analysis --------------------------------------------------

class UnknownAgent(DomainError):
    pass


class EmptyPeriod(DomainError):
    pass


class InsufficientData(DomainError):
    pass


class NoFeasibleCandidate(DomainError):
    pass
