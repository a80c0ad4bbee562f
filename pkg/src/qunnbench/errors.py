"""Exception hierarchy shared by every module.

The CLI maps these onto process exit codes, so each family stays distinct.
"""


class QunnError(Exception):
    """Base class for all errors raised by qunnbench."""


class ConfigError(QunnError, ValueError):
    """Invalid configuration (register size, experiment document, ...)."""


class ArgumentError(QunnError, ValueError):
    """An operation received arguments outside its domain."""


class ParseError(ConfigError):
    """A circuit or config document could not be parsed.

    ``position`` locates the offending element (e.g. ``"ops[3].target"``).
    """

    def __init__(self, message: str, position: str | None = None):
        self.position = position
        if position:
            message = f"{position}: {message}"
        super().__init__(message)


class CatalogLookupError(QunnError, LookupError):
    """Unknown built-in ansatz id or recipe name."""


class IngestionError(QunnError):
    """Dataset file is malformed. ``field`` names the offending header field."""

    def __init__(self, message: str, field: str | None = None):
        self.field = field
        super().__init__(f"{field}: {message}" if field else message)


class CacheError(QunnError):
    """Feature cache file is corrupt or unreadable."""
