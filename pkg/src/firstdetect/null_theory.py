"""Closed-form probability limits of the event-study path under no effect.

With monthly output i.i.d. from F and per-paper flag probability p, the month
of first detection is size-biased towards high output (weight q(y)), the
month before it is tilted towards low output (weight (1-p)**y), and later
months are unselected. With author fixed effects and k = -1 as reference,
PPML recovers log ratios of these conditional means.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, List, NamedTuple, Optional

import numpy as np
from scipy import stats

from .data import AuthorPanel
from .exceptions import ConfigurationError, InputError
from .flag_rules import NEVER, TreatmentAssignment, detection_hazard


@dataclass(frozen=True)
class OutputPmf:
    """Probabilities of y = 0, 1, ..., n_max."""

    probabilities: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.probabilities, dtype=float)
        if p.ndim != 1 or p.size == 0 or np.any(p < 0) or abs(p.sum() - 1.0) > 1e-10:
            raise ConfigurationError("pmf entries must be non-negative and sum to 1")
        object.__setattr__(self, "probabilities", p)

    @property
    def support(self) -> np.ndarray:
        return np.arange(self.probabilities.size)

    @property
    def mean(self) -> float:
        return float(np.dot(self.support, self.probabilities))

    @property
    def variance(self) -> float:
        n = self.support
        return float(np.dot((n - self.mean) ** 2, self.probabilities))

    @classmethod
    def from_dict(cls, masses) -> "OutputPmf":
        p = np.zeros(max(masses) + 1)
        for n, w in masses.items():
            p[n] = w
        return cls(p)


class NullPath(NamedTuple):
    mean_k0: float
    mean_kminus1: float
    mean_post: float
    gamma0: float
    gamma_plus: float
    degenerate: bool = False


def poisson_pmf(mu: float, tail: float = 1e-12, n_max: Optional[int] = None) -> OutputPmf:
    """Poisson(mu) truncated where the upper tail drops below ``tail``
    (or at ``n_max`` if given), renormalised."""
    if not mu > 0:
        raise ConfigurationError("mu must be positive")
    if n_max is None:
        n_max = int(max(stats.poisson.isf(tail, mu), 1))
        while stats.poisson.sf(n_max, mu) >= tail:
            n_max += 1
    p = stats.poisson.pmf(np.arange(n_max + 1), mu)
    return OutputPmf(p / p.sum())


def mixed_poisson_pmf(means: Iterable[float], tail: float = 1e-12) -> OutputPmf:
    """Marginal pmf of y when each author's output is Poisson(mu_i)."""
    means = np.asarray(list(means), dtype=float)
    n_max = int(max(stats.poisson.isf(tail, means.max()), 1)) + 1
    p = stats.poisson.pmf(np.arange(n_max + 1)[None, :], means[:, None]).mean(axis=0)
    return OutputPmf(p / p.sum())


def _check_p(p):
    if not 0.0 < p < 1.0:
        raise ConfigurationError("p must lie strictly between 0 and 1")


def gamma_null_general(pmf: OutputPmf, p: float) -> NullPath:
    """Exact summation over the pmf support.

    k = 0 mean:  E[y q(y)] / E[q(y)]
    k = -1 mean: E[y (1-p)^y] / E[(1-p)^y]
    k >= 1 mean: E[y]
    """
    _check_p(p)
    n = pmf.support.astype(float)
    f = pmf.probabilities
    mu = pmf.mean
    if pmf.variance <= 1e-300 * max(mu, 1.0):
        return NullPath(mu, mu, mu, 0.0, 0.0, True)
    q = detection_hazard(n, p)
    s = np.exp(n * math.log1p(-p))
    eq = math.fsum(f * q)
    mean_k0 = math.fsum(f * n * q) / eq
    mean_m1 = math.fsum(f * n * s) / math.fsum(f * s)
    return NullPath(mean_k0, mean_m1, mu, math.log(mean_k0 / mean_m1), math.log(mu / mean_m1))


def gamma_null_poisson(mu: float, p: float) -> NullPath:
    """Poisson(mu) output: plateau ``-log(1-p)`` whatever ``mu``."""
    if not mu > 0:
        raise ConfigurationError("mu must be positive")
    _check_p(p)
    e = math.exp(-mu * p)
    mean_m1 = mu * (1.0 - p)
    # 1 - e**(-mu p) via expm1 keeps precision when mu*p is tiny
    mean_k0 = mu * (1.0 - (1.0 - p) * e) / -math.expm1(-mu * p)
    gamma0 = math.log(mean_k0 / mean_m1)
    return NullPath(mean_k0, mean_m1, mu, gamma0, -math.log1p(-p))


def covariance_terms(pmf: OutputPmf, p: float):
    """Return ``(Cov(y, q(y)), E[q(y)])`` by direct summation."""
    n = pmf.support.astype(float)
    f = pmf.probabilities
    q = detection_hazard(n, p)
    eq = float(np.dot(f, q))
    return float(np.dot(f, n * q)) - pmf.mean * eq, eq


def treated_weighted_path(means: Iterable[float], p: float, n_eligible: int) -> NullPath:
    """Theory overlay for Poisson output with heterogeneous author means.

    Each author is Poisson(mu_i), so the within-author ratio of post to
    reference means is 1/(1-p) for every author and the plateau stays at
    ``-log(1-p)``. The k = 0 and k = -1 means are averaged over authors with
    weights equal to their chance of being treated within ``n_eligible``
    months; ``gamma0`` built from them is an approximation, since the
    estimator also weights authors by cohort composition.
    """
    _check_p(p)
    means = np.asarray(list(means), dtype=float)
    w = -np.expm1(-means * p * n_eligible)
    if w.sum() == 0:
        raise ConfigurationError("no author can be treated")
    e = np.exp(-means * p)
    k0 = float(np.dot(w, means * (1.0 - (1.0 - p) * e) / -np.expm1(-means * p)) / w.sum())
    m1 = float(np.dot(w, means * (1.0 - p)) / w.sum())
    post = float(np.dot(w, means) / w.sum())
    return NullPath(k0, m1, post, math.log(k0 / m1), -math.log1p(-p))


class ConditionalMean(NamedTuple):
    mean: float
    se: float
    n: int


def conditional_mean_oracle(panel: AuthorPanel, assignment: TreatmentAssignment, k: int,
                            within_window: bool = True) -> ConditionalMean:
    """Average output of treated authors at event time ``k``.

    With ``within_window`` only months inside the eligibility window count.
    This matters at k = -1: for authors treated in the first eligible month
    the reference month predates flagging and carries no selection.
    """
    treated = np.flatnonzero(assignment.cohort != NEVER)
    t = assignment.cohort[treated] + k
    lo, hi = assignment.window
    ok = (t >= 0) & (t < panel.n_months)
    if within_window:
        ok &= (t >= lo) & (t <= hi)
    y = panel.counts[treated[ok], t[ok]].astype(float)
    if y.size == 0:
        raise InputError(f"no treated observations at event time {k}")
    se = float(y.std(ddof=1) / math.sqrt(y.size)) if y.size > 1 else float("nan")
    return ConditionalMean(float(y.mean()), se, int(y.size))


def theory_sweep(mus: Iterable[float], ps: Iterable[float]) -> List[dict]:
    """Poisson closed forms over a (mu, p) grid, one dict per point."""
    rows = []
    for mu in mus:
        for p in ps:
            path = gamma_null_poisson(mu, p)
            rows.append({"mu": mu, "p": p, "gamma0": path.gamma0, "gamma_plus": path.gamma_plus,
                         "mean_k0": path.mean_k0, "mean_kminus1": path.mean_kminus1, "mean_post": path.mean_post})
    return rows
