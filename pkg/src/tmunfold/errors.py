"""Exception hierarchy shared by all modules."""


class TMError(Exception):
    """Base class for every error raised by tmunfold."""


# expression language
class ExprError(TMError):
    pass


class ExprSyntaxError(ExprError):
    """Malformed expression text.

    ``offset`` is a byte offset into the UTF-8 encoded source and
    ``expected`` the set of tokens that would have been accepted there.
    """

    def __init__(self, message, offset, expected=()):
        self.offset = offset
        self.expected = frozenset(expected)
        exp = ", ".join(sorted(self.expected))
        super().__init__(f"{message} at offset {offset}" + (f" (expected one of: {exp})" if exp else ""))


class UnknownFunction(ExprSyntaxError):
    pass


class UnboundVariable(ExprError):
    def __init__(self, name):
        self.name = name
        super().__init__(f"unbound variable {name!r}")


class DomainEvalError(ExprError):
    pass


class StencilOutOfDomain(ExprError):
    pass


# space data model
class ConfigError(TMError):
    pass


class SchemaError(ConfigError):
    pass


class ConfigReferenceError(ConfigError):
    """Dangling id in a configuration (named to avoid the builtin)."""

    def __init__(self, ref, where=""):
        self.ref = ref
        super().__init__(f"unknown reference {ref!r}" + (f" in {where}" if where else ""))


class NotInTube(TMError):
    pass


class OutOfDomain(TMError):
    pass


# unfolding
class ValidationError(TMError):
    pass


class EmptyRestriction(TMError):
    pass


class CollarError(TMError):
    pass


# lifting
class NotLiftable(TMError):
    """``rejection`` holds the failed parity test, ``pair`` the offending piece names."""

    def __init__(self, message, rejection=None, pair=()):
        self.rejection = rejection
        self.pair = tuple(pair)
        super().__init__(message)


class InconsistentLift(TMError):
    pass
