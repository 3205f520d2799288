"""Shared containers: the author-by-month panel and the paper-level event table."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, replace
from typing import Iterator, NamedTuple, Optional, Sequence

import numpy as np

from .exceptions import InputError


def default_author_ids(n: int) -> np.ndarray:
    """Zero-padded labels whose lexicographic order matches the row order."""
    width = max(6, len(str(max(n - 1, 0))))
    return np.array([f"A{i:0{width}d}" for i in range(n)], dtype=object)


@dataclass(frozen=True)
class AuthorPanel:
    """Rectangular author x month matrix of non-negative publication counts.

    Months are 0-based integers; any calendar meaning lives in the IO layer.
    """

    counts: np.ndarray
    author_ids: np.ndarray

    def __post_init__(self):
        counts = np.asarray(self.counts)
        if counts.ndim != 2:
            raise InputError("counts must be a 2-d author x month array")
        if counts.size and (not np.issubdtype(counts.dtype, np.integer)):
            if not np.all(np.mod(counts, 1) == 0):
                raise InputError("counts must be integral")
        counts = counts.astype(np.int64, copy=False)
        if np.any(counts < 0):
            raise InputError("counts must be non-negative")
        if counts.shape[1] < 2:
            raise InputError("panel needs at least two months")
        ids = np.asarray(self.author_ids, dtype=object)
        if ids.shape != (counts.shape[0],):
            raise InputError("author_ids length must equal the number of panel rows")
        object.__setattr__(self, "counts", counts)
        object.__setattr__(self, "author_ids", ids)

    @property
    def n_authors(self) -> int:
        return self.counts.shape[0]

    @property
    def n_months(self) -> int:
        return self.counts.shape[1]

    def digest(self) -> str:
        """SHA-256 of the count matrix, used to assert that scenarios share data."""
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.counts).tobytes())
        h.update(str(self.counts.shape).encode())
        return h.hexdigest()


class PaperEvent(NamedTuple):
    """One submitted manuscript."""

    paper_id: str
    author_id: str
    month: int
    tokens: Optional[list]
    flagged: bool


@dataclass(frozen=True)
class PaperTable:
    """Columnar list of :class:`PaperEvent` records.

    ``author`` holds row indices into ``author_ids`` so that timing results
    line up with :class:`AuthorPanel` rows. Rows are kept in author-major,
    month-minor order; flag draws are consumed in that order.
    """

    paper_id: np.ndarray
    author: np.ndarray
    month: np.ndarray
    author_ids: np.ndarray
    flagged: np.ndarray = None
    tokens: Optional[Sequence[Sequence[str]]] = None
    text: Optional[Sequence[str]] = field(default=None, repr=False)

    def __post_init__(self):
        n = len(self.paper_id)
        object.__setattr__(self, "paper_id", np.asarray(self.paper_id, dtype=object))
        object.__setattr__(self, "author", np.asarray(self.author, dtype=np.int64))
        object.__setattr__(self, "month", np.asarray(self.month, dtype=np.int64))
        object.__setattr__(self, "author_ids", np.asarray(self.author_ids, dtype=object))
        if self.flagged is None:
            object.__setattr__(self, "flagged", np.zeros(n, dtype=bool))
        else:
            object.__setattr__(self, "flagged", np.asarray(self.flagged, dtype=bool))
        for name in ("author", "month", "flagged"):
            if len(getattr(self, name)) != n:
                raise InputError(f"column {name!r} has the wrong length")
        for name in ("tokens", "text"):
            col = getattr(self, name)
            if col is not None and len(col) != n:
                raise InputError(f"column {name!r} has the wrong length")
        if n and (self.author.min() < 0 or self.author.max() >= len(self.author_ids)):
            raise InputError("author index out of range")

    def __len__(self) -> int:
        return len(self.paper_id)

    def __iter__(self) -> Iterator[PaperEvent]:
        for j in range(len(self)):
            yield self[j]

    def __getitem__(self, j: int) -> PaperEvent:
        return PaperEvent(
            str(self.paper_id[j]),
            str(self.author_ids[self.author[j]]),
            int(self.month[j]),
            None if self.tokens is None else list(self.tokens[j]),
            bool(self.flagged[j]),
        )

    @property
    def n_authors(self) -> int:
        return len(self.author_ids)

    def with_flags(self, flagged: np.ndarray) -> "PaperTable":
        """Copy with a new flag column; the original is left untouched."""
        return replace(self, flagged=np.array(flagged, dtype=bool))

    def reset(self) -> "PaperTable":
        return self.with_flags(np.zeros(len(self), dtype=bool))

    def to_panel(self, n_months: int) -> AuthorPanel:
        """Aggregate papers back to author x month counts."""
        counts = np.zeros((self.n_authors, n_months), dtype=np.int64)
        np.add.at(counts, (self.author, self.month), 1)
        return AuthorPanel(counts, self.author_ids)
