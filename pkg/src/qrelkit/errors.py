"""Exception types shared across qrelkit modules."""


class QrelkitError(Exception):
    """Base class for all qrelkit errors."""


class InvalidIdError(QrelkitError):
    """Record ID violates the ID rules (empty, or contains tab/newline/NUL)."""


class DuplicateIdError(QrelkitError):
    """The same record ID appeared more than once where IDs must be unique."""

    def __init__(self, record_id: bytes, context: str = ""):
        self.record_id = record_id
        where = f" in {context}" if context else ""
        super().__init__(f"duplicate id {record_id!r}{where}")


class NotFoundError(QrelkitError):
    """Lookup of a record ID missed."""

    def __init__(self, record_id: bytes):
        self.record_id = record_id
        super().__init__(f"id not found: {record_id!r}")


class MissingRecordError(QrelkitError):
    """A qrel references an ID absent from the backing store."""

    def __init__(self, side: str, record_id: bytes):
        self.side = side
        self.record_id = record_id
        super().__init__(f"missing {side} record: {record_id!r}")


class FormatError(QrelkitError):
    """Malformed input file; carries the 1-based line number when known."""

    def __init__(self, message: str, path=None, line: int | None = None):
        self.path = path
        self.line = line
        loc = ""
        if path is not None:
            loc += f"{path}"
        if line is not None:
            loc += f":{line}"
        if loc:
            message = f"{loc}: {message}"
        super().__init__(message)


class UnknownNameError(QrelkitError):
    """A registry lookup (loader / filter / transform / metric) failed."""

    def __init__(self, kind: str, name: str, known):
        self.kind = kind
        self.name = name
        known = ", ".join(sorted(known))
        super().__init__(f"unknown {kind} {name!r} (registered: {known})")


class StoreFormatError(QrelkitError):
    """A store or cache file failed header/bounds validation."""


class ConfigError(QrelkitError):
    """A configuration object violates its invariants."""
