class MNSSError(Exception):
    """Base class for errors raised by this package."""


class InvalidInputError(MNSSError, ValueError):
    pass


class ShapeError(InvalidInputError):
    pass


class DegenerateStreamlineError(InvalidInputError):
    def __init__(self, streamline_id):
        self.streamline_id = streamline_id
        where = "" if streamline_id is None else f" {streamline_id}"
        super().__init__(f"streamline{where} has zero arc length")


class EmptyIndexError(MNSSError, ValueError):
    pass


class FormatError(MNSSError, ValueError):
    """Malformed file. ``offset`` is a byte offset (binary formats) and
    ``line`` a 1-based line number (text formats) when known."""

    def __init__(self, message, offset=None, line=None, path=None):
        self.offset = offset
        self.line = line
        self.path = path
        where = []
        if path is not None:
            where.append(str(path))
        if line is not None:
            where.append(f"line {line}")
        if offset is not None:
            where.append(f"byte {offset}")
        prefix = ": ".join([", ".join(where)]) + ": " if where else ""
        super().__init__(prefix + message)


class BatchQueryError(MNSSError, ValueError):
    def __init__(self, query_index, cause):
        self.query_index = query_index
        self.cause = cause
        super().__init__(f"query {query_index}: {cause}")
