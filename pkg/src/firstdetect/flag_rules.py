"""Paper-level flagging rules and the treatment dates they induce.

Every rule returns a fresh :class:`~firstdetect.data.PaperTable`; nothing is
mutated in place, so one paper list can feed several scenarios.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Iterable, Tuple

import numpy as np

from .data import PaperTable
from .exceptions import ConfigurationError, InputError
from .text_mixture import tokenize

NEVER = -1


@dataclass(frozen=True)
class HazardParams:
    """Per-paper flag probability and the first month at which flags can occur.

    ``p`` may sit on the closed interval so that degenerate rules (never flag,
    always flag) can be expressed.
    """

    p: float
    start_month: int = 10

    def __post_init__(self):
        if not 0.0 <= self.p <= 1.0:
            raise ConfigurationError(f"flag probability must lie in [0, 1], got {self.p}")


@dataclass(frozen=True)
class TreatmentAssignment:
    """Cohort month per author (``NEVER`` if untreated) plus pseudo dates for
    never-treated authors. Arrays are aligned with panel rows."""

    author_ids: np.ndarray
    cohort: np.ndarray
    pseudo_cohort: np.ndarray
    window: Tuple[int, int]

    def __post_init__(self):
        cohort = np.asarray(self.cohort, dtype=np.int64)
        pseudo = np.asarray(self.pseudo_cohort, dtype=np.int64)
        object.__setattr__(self, "cohort", cohort)
        object.__setattr__(self, "pseudo_cohort", pseudo)
        object.__setattr__(self, "author_ids", np.asarray(self.author_ids, dtype=object))
        lo, hi = self.window
        if lo > hi:
            raise ConfigurationError("empty eligibility window")
        treated = cohort != NEVER
        if np.any((cohort[treated] < lo) | (cohort[treated] > hi)):
            raise InputError("treatment date outside the eligibility window")
        if np.any(treated & (pseudo != NEVER)):
            raise InputError("treated author also carries a pseudo date")

    @property
    def treated(self) -> np.ndarray:
        return self.cohort != NEVER

    @property
    def treated_share(self) -> float:
        return float(self.treated.mean()) if self.cohort.size else 0.0

    @property
    def stack_month(self) -> np.ndarray:
        """Real cohort month for treated authors, pseudo month otherwise."""
        return np.where(self.treated, self.cohort, self.pseudo_cohort)

    def with_pseudo(self, pseudo: np.ndarray) -> "TreatmentAssignment":
        return replace(self, pseudo_cohort=pseudo)


def detection_hazard(n, p):
    """Probability that at least one of ``n`` papers is flagged, ``1 - (1-p)**n``.

    Evaluated as ``-expm1(n * log1p(-p))`` so that small ``p`` keeps full
    relative precision. Vectorised over ``n``.
    """
    p = float(p)
    if not 0.0 <= p <= 1.0 or np.isnan(p):
        raise ValueError(f"p must lie in [0, 1], got {p}")
    n = np.asarray(n)
    if np.any(n < 0):
        raise ValueError("n must be non-negative")
    with np.errstate(invalid="ignore", divide="ignore"):
        q = -np.expm1(n * np.log1p(-p))
    q = np.where(n == 0, 0.0, q)
    return q[()] if q.ndim == 0 else q


def bernoulli_flags(papers: PaperTable, params: HazardParams, rng: np.random.Generator) -> PaperTable:
    """Flag each eligible paper independently with probability ``params.p``.

    One uniform is drawn per distinct paper id, in order of first appearance,
    so coauthor rows of one paper share its flag. Ineligible papers also
    consume a draw, which keeps the stream independent of the window.
    """
    ids = papers.paper_id
    _, first, inv = np.unique(ids, return_index=True, return_inverse=True)
    order = np.argsort(first, kind="stable")
    u_unique = np.empty(first.size)
    u_unique[order] = rng.random(first.size)
    flagged = (papers.month >= params.start_month) & (u_unique[inv.ravel()] < params.p)
    return papers.with_flags(flagged)


def keyword_flags(papers: PaperTable, keywords: Iterable[str], start_month: int) -> PaperTable:
    """Flag papers from ``start_month`` on whose tokens contain any keyword.

    Matching is case-insensitive on whole tokens after punctuation stripping;
    there is no stemming, so ``find`` does not match ``findings``.
    """
    if papers.tokens is None:
        raise InputError("keyword flags need a token list on every paper")
    keys = set()
    for kw in keywords:
        keys.update(tokenize(kw))
    if not keys:
        raise ConfigurationError("empty keyword set")
    hits = np.zeros(len(papers), dtype=bool)
    for j, toks in enumerate(papers.tokens):
        if toks is None:
            raise InputError(f"paper {papers.paper_id[j]} has no tokens")
        if papers.month[j] >= start_month:
            hits[j] = not keys.isdisjoint(tokenize(" ".join(toks)))
    return papers.with_flags(hits)


def score_flags(papers: PaperTable, scores, cutoff: float, start_month: int) -> PaperTable:
    """Flag papers from ``start_month`` on whose external score exceeds ``cutoff``."""
    scores = np.asarray(scores, dtype=float)
    if scores.shape != (len(papers),):
        raise InputError("need one score per paper")
    return papers.with_flags((papers.month >= start_month) & (scores > cutoff))


def detector_flags(papers: PaperTable, table, start_month: int, cutoff: float = 0.1) -> PaperTable:
    """Flag papers from ``start_month`` on whose fitted LLM share exceeds ``cutoff``.

    Uses the raw abstract when available, otherwise treats the token list as
    a single sentence.
    """
    from .text_mixture import score_document, split_sentences

    if papers.text is None and papers.tokens is None:
        raise InputError("detector flags need abstracts or tokens")
    hits = np.zeros(len(papers), dtype=bool)
    for j in np.flatnonzero(papers.month >= start_month):
        if papers.text is not None:
            sents = split_sentences(papers.text[j] or "")
        else:
            sents = [list(papers.tokens[j])] if papers.tokens[j] else []
        hits[j] = score_document(sents, table, cutoff).classified_llm
    return papers.with_flags(hits)


def first_detection_timing(papers: PaperTable, window: Tuple[int, int]) -> TreatmentAssignment:
    """Treatment date = earliest month in ``window`` with at least one flagged paper."""
    lo, hi = window
    cohort = np.full(papers.n_authors, np.iinfo(np.int64).max, dtype=np.int64)
    sel = papers.flagged & (papers.month >= lo) & (papers.month <= hi)
    np.minimum.at(cohort, papers.author[sel], papers.month[sel])
    cohort[cohort == np.iinfo(np.int64).max] = NEVER
    return TreatmentAssignment(papers.author_ids, cohort, np.full_like(cohort, NEVER), (lo, hi))


def random_timing(author_ids, treated_share: float, window: Tuple[int, int],
                  rng: np.random.Generator) -> TreatmentAssignment:
    """Treat each author with probability ``treated_share`` at a uniform month in ``window``.

    Draws never look at output, so the assigned dates are independent of the panel.
    """
    lo, hi = window
    if lo > hi:
        raise ConfigurationError("empty eligibility window")
    if not 0.0 < treated_share <= 1.0:
        raise ConfigurationError("treated_share must lie in (0, 1]")
    ids = np.asarray(author_ids, dtype=object)
    n = ids.size
    treated = rng.random(n) < treated_share
    dates = rng.integers(lo, hi + 1, size=n)
    cohort = np.where(treated, dates, NEVER)
    return TreatmentAssignment(ids, cohort, np.full(n, NEVER, dtype=np.int64), (lo, hi))


def check_stopping_time(papers: PaperTable, assignment: TreatmentAssignment) -> None:
    """Raise if any treated author has a flag before t* or none at t*."""
    lo, _ = assignment.window
    t_star = assignment.cohort[papers.author]
    sel = papers.flagged & (papers.month >= lo) & (t_star != NEVER)
    if np.any(papers.month[sel] < t_star[sel]):
        raise AssertionError("flag found before the first-detection month")
    at = np.zeros(papers.n_authors, dtype=bool)
    at[papers.author[sel & (papers.month == t_star)]] = True
    if np.any(assignment.treated & ~at):
        raise AssertionError("treated author without a flag at t*")
