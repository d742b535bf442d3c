"""Exception hierarchy shared across the package."""


class TangleSimError(Exception):
    """Base class for every error raised by tanglesim."""


# message model
class ParentCountOutOfRange(TangleSimError):
    pass


class DuplicateParent(TangleSimError):
    pass


class MalformedEncoding(TangleSimError):
    pass


# tangle
class UnknownParent(TangleSimError):
    pass


class UnknownMessage(TangleSimError):
    pass


class NoEligibleTips(TangleSimError):
    pass


# utxo ledger
class UnknownBranch(TangleSimError):
    pass


class WinnerNotPending(TangleSimError):
    pass


# fpc
class QuorumInfeasible(TangleSimError):
    pass


class InfeasibleGridPoint(TangleSimError):
    pass


# configuration
class ConfigError(TangleSimError):
    """Any problem with a configuration file or override."""


class ParseError(ConfigError):
    pass


class UnknownKey(ConfigError):
    def __init__(self, key: str):
        super().__init__(f"unknown configuration key: {key}")
        self.key = key


class InvariantViolation(ConfigError):
    def __init__(self, key: str, constraint: str):
        super().__init__(f"{key}: violates {constraint}")
        self.key = key
        self.constraint = constraint
