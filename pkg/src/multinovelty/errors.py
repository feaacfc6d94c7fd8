"""Exception taxonomy shared across the toolkit."""

from __future__ import annotations


class MultiNoveltyError(Exception):
    """Base class for all toolkit errors."""


class InvalidArg(MultiNoveltyError):
    """An argument violated an operation's precondition."""


class NoPrompts(MultiNoveltyError):
    """A prompt file contained no prompts."""


class DuplicateId(MultiNoveltyError):
    """Two prompts declared the same id."""


class InvalidRecord(MultiNoveltyError):
    """A record violated its type invariants."""


class StorageError(MultiNoveltyError):
    """An I/O failure while reading or writing a store."""


class ParseError(MultiNoveltyError):
    """A malformed line in a JSONL store."""

    def __init__(self, message: str, path: str = "", line: int = 0):
        super().__init__(message)
        self.path = path
        self.line = line


class InsufficientDocs(MultiNoveltyError):
    """A pairwise metric needs at least two documents."""


class MissingEmbeddings(MultiNoveltyError):
    """An embedding-based metric was requested without embeddings."""


class ProviderError(MultiNoveltyError):
    """A provider request failed after exhausting retries."""

    def __init__(self, message: str, status: int | None = None, attempts: int = 1):
        super().__init__(message)
        self.status = status
        self.attempts = attempts


class AuthError(MultiNoveltyError):
    """The provider rejected our credentials; never retried."""


class JudgeParseError(MultiNoveltyError):
    """A judge reply stayed unparseable after the one-reminder retry."""


class JudgeError(MultiNoveltyError):
    """A judge failed mid-corpus; partial labels are retained.

    `index` is the position of the response that could not be judged,
    `labels` the verdicts produced up to (excluding) that position.
    """

    def __init__(self, message: str, index: int, labels: list[str]):
        super().__init__(message)
        self.index = index
        self.labels = labels


class ViewShortfall(MultiNoveltyError):
    """View generation produced fewer unique views than requested."""

    def __init__(self, got: int, want: int):
        super().__init__(f"got {got} unique views, wanted {want}")
        self.got = got
        self.want = want


class SourceError(MultiNoveltyError):
    """An image source could not be read."""
