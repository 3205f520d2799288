"""Stacked difference-in-differences data.

One stack per cohort month ``c``: the authors first treated at ``c`` plus the
never-treated authors whose pseudo date is ``c``, observed over the whole
panel window. Event time is ``k = t - c``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Dict, Tuple

import numpy as np

from .data import AuthorPanel
from .exceptions import ConfigurationError, InputError, NoCohortsError
from .flag_rules import NEVER, TreatmentAssignment
from .ppml_hdfe import EventStudyFit, FeSpec, fit_ppml

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class StackConfig:
    pseudo_window: Tuple[int, int] = (10, 29)
    min_cohort_size: int = 2
    k_report_range: Tuple[int, int] = (-11, 17)
    bin_endpoints: bool = True

    def __post_init__(self):
        lo, hi = self.pseudo_window
        if lo > hi:
            raise ConfigurationError("empty pseudo-treatment window")
        if self.min_cohort_size < 1:
            raise ConfigurationError("min_cohort_size must be >= 1")
        if self.k_report_range[0] > self.k_report_range[1]:
            raise ConfigurationError("k_report_range is reversed")


@dataclass(frozen=True)
class StackedDataset:
    """Long-form stacked rows. ``author`` indexes ``author_ids``; the cluster
    of a row is its author."""

    stack: np.ndarray
    author: np.ndarray
    month: np.ndarray
    k: np.ndarray
    treated: np.ndarray
    y: np.ndarray
    author_ids: np.ndarray
    dropped_cohorts: Dict[int, str] = field(default_factory=dict)

    def __len__(self):
        return self.stack.size

    @property
    def cluster(self) -> np.ndarray:
        return self.author

    @property
    def k_range(self) -> Tuple[int, int]:
        return int(self.k.min()), int(self.k.max())

    @property
    def cohorts(self) -> np.ndarray:
        return np.unique(self.stack)


@dataclass(frozen=True)
class EventDesign:
    """Regressor matrix and fixed-effect layout for one stacked dataset."""

    X: np.ndarray
    labels: tuple
    event_times: tuple
    fe: FeSpec
    cluster: np.ndarray


def assign_pseudo_dates(assignment: TreatmentAssignment, config: StackConfig,
                        rng: np.random.Generator) -> TreatmentAssignment:
    """Uniform pseudo cohort month for every never-treated author."""
    lo, hi = config.pseudo_window
    never = ~assignment.treated
    draws = rng.integers(lo, hi + 1, size=int(never.sum()))
    pseudo = np.full(assignment.cohort.size, NEVER, dtype=np.int64)
    pseudo[never] = draws
    return assignment.with_pseudo(pseudo)


def build_stacks(panel: AuthorPanel, assignment: TreatmentAssignment, config: StackConfig) -> StackedDataset:
    """Stack treated authors and their pseudo-dated controls cohort by cohort.

    A cohort is kept when it has at least ``min_cohort_size`` treated authors,
    at least one control (so every month x stack cell holds both groups) and
    an in-window reference month ``c - 1``. Dropped cohorts are logged and
    listed in ``dropped_cohorts``.
    """
    if panel.n_authors != assignment.cohort.size or not np.array_equal(panel.author_ids, assignment.author_ids):
        raise InputError("panel and assignment disagree on authors")
    sm = assignment.stack_month
    if np.any(sm == NEVER):
        raise InputError("every author needs a real or pseudo cohort date")
    treated = assignment.treated
    T = panel.n_months

    cohorts, inv = np.unique(sm, return_inverse=True)
    n_t = np.bincount(inv, weights=treated, minlength=cohorts.size)
    n_c = np.bincount(inv, weights=~treated, minlength=cohorts.size)
    dropped = {}
    for c, nt, nc in zip(cohorts, n_t, n_c):
        if nt < config.min_cohort_size:
            dropped[int(c)] = f"{int(nt)} treated < min_cohort_size {config.min_cohort_size}"
        elif nc == 0:
            dropped[int(c)] = "no never-treated controls"
        elif not 1 <= c <= T - 1:
            dropped[int(c)] = "reference month outside the panel"
    for c, why in dropped.items():
        log.info("dropping cohort %d: %s", c, why)
    keep_cohort = np.array([int(c) not in dropped for c in cohorts])
    keep_author = keep_cohort[inv]
    if not keep_author.any():
        raise NoCohortsError("no cohort survived stacking")

    authors = np.flatnonzero(keep_author)
    authors = authors[np.lexsort((authors, sm[authors]))]
    author = np.repeat(authors, T)
    month = np.tile(np.arange(T), authors.size)
    stack = sm[author]
    return StackedDataset(
        stack=stack, author=author, month=month, k=month - stack, treated=treated[author],
        y=panel.counts[author, month], author_ids=panel.author_ids, dropped_cohorts=dropped,
    )


def regressor_layout(data: StackedDataset, config: StackConfig) -> EventDesign:
    """Treated x event-time dummies for each k in ``k_report_range`` except -1
    that at least one treated row reaches.

    With ``bin_endpoints`` treated rows beyond the range load on one binned
    dummy per side (only created when such rows exist). Fixed effects are
    author and month x stack; clusters are authors.
    """
    k_lo, k_hi = config.k_report_range
    if not k_lo <= -1 <= k_hi:
        raise ConfigurationError("k_report_range must contain the reference period -1")
    tr = data.treated
    # event times no treated row reaches get no column
    seen = set(np.unique(data.k[tr]).tolist())
    ks = [k for k in range(k_lo, k_hi + 1) if k != -1 and k in seen]
    labels = [f"k={k}" for k in ks]
    event_times = list(ks)
    col_of = np.full(k_hi - k_lo + 1, -1)
    col_of[np.array(ks, dtype=np.int64) - k_lo] = np.arange(len(ks))

    col = np.full(len(data), -1)
    inside = tr & (data.k >= k_lo) & (data.k <= k_hi) & (data.k != -1)
    col[inside] = col_of[data.k[inside] - k_lo]
    if config.bin_endpoints:
        for mask, label in ((tr & (data.k < k_lo), f"k<={k_lo - 1}"), (tr & (data.k > k_hi), f"k>={k_hi + 1}")):
            if mask.any():
                col[mask] = len(labels)
                labels.append(label)
                event_times.append(None)
    X = np.zeros((len(data), len(labels)))
    rows = np.flatnonzero(col >= 0)
    X[rows, col[rows]] = 1.0

    # each author sits in exactly one stack, so author clusters never span stacks
    first_stack = np.full(data.author_ids.size, -1)
    first_stack[data.author] = data.stack
    if np.any(first_stack[data.author] != data.stack):
        raise InputError("an author appears in more than one stack")

    cell = data.stack.astype(np.int64) * (int(data.month.max()) + 1) + data.month
    fe = FeSpec.from_labels(data.author, cell)
    return EventDesign(X, tuple(labels), tuple(event_times), fe, data.cluster)


def fit_stacked(data: StackedDataset, config: StackConfig, **kwargs) -> EventStudyFit:
    """Build the event-study design and fit it by PPML."""
    d = regressor_layout(data, config)
    return fit_ppml(data.y, d.X, d.fe, cluster=d.cluster, labels=d.labels, event_times=d.event_times, **kwargs)
