"""Null data-generating process: i.i.d. Poisson output around author-specific means.

There is no treatment effect anywhere in this module by construction.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np

from .data import AuthorPanel, PaperTable, default_author_ids
from .exceptions import ConfigurationError


@dataclass(frozen=True)
class GammaMeans:
    shape: float = 2.0
    scale: float = 0.5

    def validate(self):
        if not (self.shape > 0 and self.scale > 0):
            raise ConfigurationError("gamma shape and scale must be positive")

    def draw(self, n, rng):
        return rng.gamma(self.shape, self.scale, size=n)


@dataclass(frozen=True)
class ConstantMeans:
    mu: float = 1.0

    def validate(self):
        if not self.mu > 0:
            raise ConfigurationError("constant mean must be positive")

    def draw(self, n, rng):
        return np.full(n, float(self.mu))


@dataclass(frozen=True)
class EmpiricalMeans:
    """Fixed list of means. Passed through when its length matches the
    author count, otherwise resampled with replacement."""

    values: tuple

    def validate(self):
        v = np.asarray(self.values, dtype=float)
        if v.size == 0 or not np.all(np.isfinite(v)) or np.any(v <= 0):
            raise ConfigurationError("empirical means must be a non-empty list of positive numbers")

    def draw(self, n, rng):
        v = np.asarray(self.values, dtype=float)
        if v.size == n:
            return v.copy()
        return rng.choice(v, size=n, replace=True)


MeanDistribution = Union[GammaMeans, ConstantMeans, EmpiricalMeans]


@dataclass(frozen=True)
class DgpConfig:
    n_authors: int = 2000
    n_months: int = 30
    means: MeanDistribution = field(default_factory=GammaMeans)
    seed: int = 0

    def validate(self):
        if self.n_authors < 1:
            raise ConfigurationError("n_authors must be >= 1")
        if self.n_months < 2:
            raise ConfigurationError("n_months must be >= 2")
        self.means.validate()

    def to_dict(self):
        kind = {GammaMeans: "gamma", ConstantMeans: "constant", EmpiricalMeans: "empirical"}
        means = {"kind": kind[type(self.means)], **self.means.__dict__}
        if "values" in means:
            means["values"] = list(means["values"])
        return {"n_authors": self.n_authors, "n_months": self.n_months, "means": means, "seed": self.seed}

    @classmethod
    def from_dict(cls, d):
        m = dict(d.get("means", {"kind": "gamma"}))
        kind = m.pop("kind", "gamma")
        if kind == "gamma":
            means = GammaMeans(**m)
        elif kind == "constant":
            means = ConstantMeans(**m)
        elif kind == "empirical":
            means = EmpiricalMeans(tuple(m["values"]))
        else:
            raise ConfigurationError(f"unknown mean distribution {kind!r}")
        return cls(int(d.get("n_authors", 2000)), int(d.get("n_months", 30)), means, int(d.get("seed", 0)))


def draw_author_means(config: DgpConfig, rng: np.random.Generator = None) -> np.ndarray:
    """Draw one expected monthly output per author.

    Returns a float array of length ``config.n_authors`` with strictly positive
    entries. Uses ``config.seed`` when no generator is supplied.
    """
    config.validate()
    if rng is None:
        rng = np.random.default_rng(config.seed)
    means = np.asarray(config.means.draw(config.n_authors, rng), dtype=float)
    # gamma draws can underflow to exactly 0 for tiny shapes
    means = np.maximum(means, np.finfo(float).tiny)
    return means


def simulate_panel(means: Sequence[float], n_months: int, rng: np.random.Generator,
                   author_ids=None) -> AuthorPanel:
    """Independent Poisson(mu_i) counts for every author-month."""
    means = np.asarray(means, dtype=float)
    if means.ndim != 1 or np.any(~np.isfinite(means)) or np.any(means <= 0):
        raise ConfigurationError("author means must be finite and positive")
    counts = rng.poisson(means[:, None], size=(means.size, n_months))
    if author_ids is None:
        author_ids = default_author_ids(means.size)
    return AuthorPanel(counts, author_ids)


def expand_to_papers(panel: AuthorPanel) -> PaperTable:
    """One PaperEvent per submitted paper, ordered author-major, month-minor.

    Paper ids have the form ``<author>-<month>-<j>`` with ``j`` the index of
    the paper within its author-month.
    """
    counts = panel.counts
    flat = counts.ravel()
    total = int(flat.sum())
    cells = np.repeat(np.arange(flat.size), flat)
    author = cells // panel.n_months
    month = cells % panel.n_months
    # within-cell running index
    starts = np.cumsum(flat) - flat
    within = np.arange(total) - np.repeat(starts, flat)
    ids = panel.author_ids
    paper_id = np.array([f"{ids[a]}-{m}-{j}" for a, m, j in zip(author, month, within)], dtype=object)
    return PaperTable(paper_id=paper_id, author=author, month=month, author_ids=ids)
