"""Exception types raised across the package."""


class HotEmbedError(Exception):
    """Base class for all package errors."""


class FeatureNotTracked(HotEmbedError, KeyError):
    pass


class StateError(HotEmbedError, ValueError):
    """Serialized state cannot be decoded."""


class VersionMismatch(StateError):
    pass


class CorruptState(StateError):
    pass


class HandleMissing(HotEmbedError, LookupError):
    pass


class NoFreeRow(HotEmbedError, RuntimeError):
    pass


class BudgetTooSmall(HotEmbedError, ValueError):
    pass


class DomainError(HotEmbedError, ValueError):
    pass


class NonFinite(HotEmbedError, ValueError):
    pass


class ConfigMismatch(HotEmbedError, ValueError):
    pass


class ConfigError(HotEmbedError, ValueError):
    def __init__(self, field, message):
        self.field = field
        super().__init__(f"{field}: {message}")


class ParseError(HotEmbedError, ValueError):
    def __init__(self, line, message):
        self.line = line
        super().__init__(f"line {line}: {message}")
