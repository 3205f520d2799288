"""Monte Carlo orchestration: simulate, flag, time, stack, fit, aggregate.

Every replication derives its random streams from ``(master_seed, rep_index)``
alone, so results do not depend on execution order or worker count.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from functools import partial
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .data import AuthorPanel, PaperTable
from .event_stack import StackConfig, assign_pseudo_dates, build_stacks, fit_stacked
from .exceptions import ConfigurationError, ConvergenceError, InputError, NoCohortsError
from .flag_rules import (HazardParams, TreatmentAssignment, bernoulli_flags, first_detection_timing,
                         keyword_flags, random_timing)
from .null_theory import NullPath, gamma_null_poisson, treated_weighted_path
from .panel_dgp import ConstantMeans, DgpConfig, draw_author_means, expand_to_papers, simulate_panel
from .ppml_hdfe import EventStudyFit, wald_test

log = logging.getLogger(__name__)

TIMINGS = ("first_detection", "random")
_EXPECTED_FAILURES = (NoCohortsError, ConvergenceError, InputError, np.linalg.LinAlgError)


@dataclass(frozen=True)
class ExperimentConfig:
    """One Monte Carlo experiment.

    ``treated_share=None`` matches the random-timing share to the realised
    first-detection share on the same panel. ``alternative`` controls the
    rejection accounting: ``"greater"`` is the one-sided test in favour of a
    positive effect.
    """

    dgp: DgpConfig = field(default_factory=lambda: DgpConfig(2000, 30, ConstantMeans(1.0)))
    hazard: HazardParams = field(default_factory=lambda: HazardParams(0.2, 10))
    timing: str = "first_detection"
    stack: StackConfig = field(default_factory=StackConfig)
    n_reps: int = 200
    level: float = 0.05
    k_eval_range: Tuple[int, int] = (1, 17)
    master_seed: int = 0
    alternative: str = "greater"
    treated_share: Optional[float] = None

    def __post_init__(self):
        self.validate()

    @property
    def window(self) -> Tuple[int, int]:
        return self.hazard.start_month, self.dgp.n_months - 1

    def validate(self):
        self.dgp.validate()
        if self.timing not in TIMINGS:
            raise ConfigurationError(f"timing must be one of {TIMINGS}")
        if self.n_reps < 1:
            raise ConfigurationError("n_reps must be >= 1")
        if not 0 < self.level < 1:
            raise ConfigurationError("level must lie in (0, 1)")
        if self.alternative not in ("two-sided", "greater"):
            raise ConfigurationError("alternative must be 'two-sided' or 'greater'")
        lo, hi = self.window
        if not 1 <= lo <= hi:
            raise ConfigurationError("eligibility start must fall inside the panel, after month 0")
        plo, phi = self.stack.pseudo_window
        if plo < 1 or phi > hi:
            raise ConfigurationError("pseudo-treatment window must lie inside the panel")
        if self.k_eval_range[0] > self.k_eval_range[1]:
            raise ConfigurationError("k_eval_range is reversed")
        if self.treated_share is not None and not 0 < self.treated_share <= 1:
            raise ConfigurationError("treated_share must lie in (0, 1]")

    @classmethod
    def build(cls, n_authors=2000, n_months=30, p=0.2, start_month=10, means=None, **kwargs):
        """Config whose pseudo window spans the eligibility window."""
        means = means if means is not None else ConstantMeans(1.0)
        stack = kwargs.pop("stack", None) or StackConfig(pseudo_window=(start_month, n_months - 1))
        return cls(dgp=DgpConfig(n_authors, n_months, means), hazard=HazardParams(p, start_month),
                   stack=stack, **kwargs)

    @classmethod
    def paper_scale(cls, **kwargs):
        """100,000 authors, 30 months, 1,000 replications."""
        kwargs.setdefault("n_reps", 1000)
        return cls.build(n_authors=100_000, **kwargs)

    def to_dict(self) -> dict:
        return {
            "dgp": self.dgp.to_dict(),
            "hazard": {"p": self.hazard.p, "start_month": self.hazard.start_month},
            "timing": self.timing,
            "stack": {"pseudo_window": list(self.stack.pseudo_window), "min_cohort_size": self.stack.min_cohort_size,
                      "k_report_range": list(self.stack.k_report_range), "bin_endpoints": self.stack.bin_endpoints},
            "n_reps": self.n_reps, "level": self.level, "k_eval_range": list(self.k_eval_range),
            "master_seed": self.master_seed, "alternative": self.alternative, "treated_share": self.treated_share,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        st = d.get("stack", {})
        stack = StackConfig(tuple(st.get("pseudo_window", (10, 29))), int(st.get("min_cohort_size", 2)),
                            tuple(st.get("k_report_range", (-11, 17))), bool(st.get("bin_endpoints", True)))
        hz = d.get("hazard", {})
        return cls(
            dgp=DgpConfig.from_dict(d.get("dgp", {})), hazard=HazardParams(float(hz.get("p", 0.2)), int(hz.get("start_month", 10))),
            timing=d.get("timing", "first_detection"), stack=stack, n_reps=int(d.get("n_reps", 200)),
            level=float(d.get("level", 0.05)), k_eval_range=tuple(d.get("k_eval_range", (1, 17))),
            master_seed=int(d.get("master_seed", 0)), alternative=d.get("alternative", "greater"),
            treated_share=d.get("treated_share"),
        )

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()


@dataclass
class McSummary:
    """Per-k Monte Carlo means with 95% intervals, plus rejection bookkeeping."""

    scenario: str
    event_times: np.ndarray
    mean: np.ndarray
    mc_se: np.ndarray
    ci_lo: np.ndarray
    ci_hi: np.ndarray
    n_by_k: np.ndarray
    rejection_rate_positive: float
    n_tests: int
    n_reps_completed: int
    post_mean: float
    post_mc_se: float
    failures: List[Tuple[int, str]] = field(default_factory=list)

    def at(self, k: int) -> Tuple[float, float]:
        j = int(np.flatnonzero(self.event_times == k)[0])
        return float(self.mean[j]), float(self.mc_se[j])


@dataclass
class ScenarioPair:
    first_detection: McSummary
    random: McSummary
    theory: Optional[NullPath]
    panels_shared: bool


# -- data sources ----------------------------------------------------------------

def simulated_source(config: ExperimentConfig, rng: np.random.Generator) -> Tuple[AuthorPanel, PaperTable]:
    means = draw_author_means(config.dgp, rng)
    panel = simulate_panel(means, config.dgp.n_months, rng)
    return panel, expand_to_papers(panel)


def _streams(master_seed: int, rep_index: int):
    ss = np.random.SeedSequence([int(master_seed), int(rep_index)])
    names = ("dgp", "flags", "fd_pseudo", "rnd_timing", "rnd_pseudo")
    return dict(zip(names, (np.random.default_rng(s) for s in ss.spawn(len(names)))))


def _fit_assignment(panel, assignment: TreatmentAssignment, config: ExperimentConfig, rng, provenance) -> EventStudyFit:
    full = assign_pseudo_dates(assignment, config.stack, rng)
    data = build_stacks(panel, full, config.stack)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        fit = fit_stacked(data, config.stack)
    fit.provenance = {
        **provenance,
        "treated_share": assignment.treated_share,
        "n_cohorts": int(data.cohorts.size),
        "dropped_cohorts": len(data.dropped_cohorts),
        "warnings": [str(w.message) for w in caught],
    }
    return fit


def _replicate(config: ExperimentConfig, rep_index: int, scenarios: Sequence[str], source) -> Dict[str, object]:
    """Fits (or failure messages) for the requested timing rules on one shared panel."""
    s = _streams(config.master_seed, rep_index)
    out = {}
    try:
        panel, papers = source(config, s["dgp"])
        flagged = bernoulli_flags(papers, config.hazard, s["flags"])
        fd = first_detection_timing(flagged, config.window)
    except _EXPECTED_FAILURES as exc:
        return {sc: f"{type(exc).__name__}: {exc}" for sc in scenarios}
    base = {"rep_index": rep_index, "master_seed": config.master_seed, "panel_digest": panel.digest()}
    for sc in scenarios:
        try:
            if sc == "first_detection":
                if not fd.treated.any():
                    raise NoCohortsError("no author was ever flagged")
                out[sc] = _fit_assignment(panel, fd, config, s["fd_pseudo"], {**base, "scenario": sc})
            else:
                share = config.treated_share if config.treated_share is not None else fd.treated_share
                if share <= 0:
                    raise NoCohortsError("matched treated share is zero")
                ra = random_timing(panel.author_ids, share, config.window, s["rnd_timing"])
                out[sc] = _fit_assignment(panel, ra, config, s["rnd_pseudo"], {**base, "scenario": sc})
        except _EXPECTED_FAILURES as exc:
            out[sc] = f"{type(exc).__name__}: {exc}"
    return out


def run_replication(config: ExperimentConfig, rep_index: int, source: Callable = simulated_source) -> EventStudyFit:
    """One simulate -> flag -> time -> stack -> fit pass for ``config.timing``.

    Raises :class:`NoCohortsError` (or the estimator's error) when the
    replication cannot be fitted.
    """
    res = _replicate(config, rep_index, (config.timing,), source)[config.timing]
    if isinstance(res, str):
        raise NoCohortsError(res) if res.startswith("NoCohortsError") else RuntimeError(res)
    return res


def _run_reps(config, scenarios, source, workers):
    job = partial(_replicate, config, scenarios=scenarios, source=source)
    reps = range(config.n_reps)
    if workers and workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(job, reps, chunksize=max(1, config.n_reps // (4 * workers))))
    else:
        results = [job(r) for r in reps]
    return results


def aggregate(fits: Sequence[EventStudyFit], config: ExperimentConfig, failures=(), scenario: str = None) -> McSummary:
    """Monte Carlo mean, SE and 95% interval per event time; pooled rejection rate.

    The rejection rate pools every (k, replication) pair with k inside
    ``config.k_eval_range`` whose coefficient was estimated.
    """
    if not fits:
        raise NoCohortsError("no successful replication to aggregate")
    ks = sorted({k for f in fits for k in f.gamma})
    G = np.full((len(fits), len(ks)), np.nan)
    col = {k: j for j, k in enumerate(ks)}
    for i, f in enumerate(fits):
        for k, b in f.gamma.items():
            G[i, col[k]] = b
    n = np.sum(np.isfinite(G), axis=0)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        mean = np.nanmean(G, axis=0)
        sd = np.nanstd(G, axis=0, ddof=1)
    mc_se = np.where(n > 1, sd / np.sqrt(np.maximum(n, 1)), np.nan)
    lo, hi = config.k_eval_range
    tests = rejects = 0
    for f in fits:
        for k in range(lo, hi + 1):
            if k in f.gamma and np.isfinite(f.gamma[k]) and f.se_by_k[k] > 0:
                tests += 1
                rejects += wald_test(f, k, level=config.level, alternative=config.alternative).reject_positive
    post_cols = [col[k] for k in range(lo, hi + 1) if k in col]
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        per_rep_post = np.nanmean(G[:, post_cols], axis=1) if post_cols else np.full(len(fits), np.nan)
    per_rep_post = per_rep_post[np.isfinite(per_rep_post)]
    post_se = float(per_rep_post.std(ddof=1) / math.sqrt(per_rep_post.size)) if per_rep_post.size > 1 else float("nan")
    return McSummary(
        scenario=scenario or config.timing, event_times=np.array(ks), mean=mean, mc_se=mc_se,
        ci_lo=mean - 1.96 * mc_se, ci_hi=mean + 1.96 * mc_se, n_by_k=n,
        rejection_rate_positive=rejects / tests if tests else float("nan"), n_tests=tests,
        n_reps_completed=len(fits), post_mean=float(np.nanmean(mean[post_cols])) if post_cols else float("nan"),
        post_mc_se=post_se, failures=list(failures),
    )


def _collect(results, scenario):
    fits, failures = [], []
    for rep, res in enumerate(results):
        r = res[scenario]
        if isinstance(r, str):
            failures.append((rep, r))
        else:
            fits.append(r)
    return fits, failures


def run_monte_carlo(config: ExperimentConfig, source: Callable = simulated_source, workers: int = 1,
                    keep_fits: bool = False):
    """Single-scenario experiment. Returns the summary (and the fits if asked)."""
    results = _run_reps(config, (config.timing,), source, workers)
    fits, failures = _collect(results, config.timing)
    for rep, why in failures:
        log.warning("replication %d failed: %s", rep, why)
    summary = aggregate(fits, config, failures, config.timing)
    return (summary, fits) if keep_fits else summary


def theory_overlay(config: ExperimentConfig) -> Optional[NullPath]:
    """Closed-form null path for the configured means and hazard."""
    p = config.hazard.p
    if not 0 < p < 1:
        return None
    means = config.dgp.means
    if isinstance(means, ConstantMeans):
        return gamma_null_poisson(means.mu, p)
    draws = draw_author_means(replace(config.dgp, n_authors=100_000), np.random.default_rng(config.master_seed))
    lo, hi = config.window
    return treated_weighted_path(draws, p, hi - lo + 1)


def run_scenario_pair(config: ExperimentConfig, source: Callable = simulated_source, workers: int = 1,
                      keep_fits: bool = False):
    """First-detection and random timing on the same panels, with theory overlay."""
    scenarios = ("first_detection", "random")
    results = _run_reps(config, scenarios, source, workers)
    fd_fits, fd_fail = _collect(results, "first_detection")
    rn_fits, rn_fail = _collect(results, "random")
    fd_digest = {f.provenance["rep_index"]: f.provenance["panel_digest"] for f in fd_fits}
    shared = all(fd_digest.get(f.provenance["rep_index"], f.provenance["panel_digest"]) == f.provenance["panel_digest"]
                 for f in rn_fits)
    pair = ScenarioPair(
        aggregate(fd_fits, config, fd_fail, "first_detection"),
        aggregate(rn_fits, config, rn_fail, "random"),
        theory_overlay(config),
        shared,
    )
    return (pair, fd_fits, rn_fits) if keep_fits else pair


def run_hazard_sweep(config: ExperimentConfig, ps: Sequence[float], source: Callable = simulated_source,
                     workers: int = 1) -> List[McSummary]:
    """First-detection experiments over a grid of flag probabilities."""
    out = []
    for p in ps:
        cfg = replace(config, hazard=HazardParams(p, config.hazard.start_month), timing="first_detection")
        out.append(run_monte_carlo(cfg, source, workers))
    return out


# -- placebo suites ----------------------------------------------------------------

@dataclass(frozen=True)
class RandomFlags:
    ps: Tuple[float, ...] = (0.1, 0.2, 0.3)


@dataclass(frozen=True)
class Keywords:
    words: Tuple[str, ...] = ("data", "paper", "find")
    separately: bool = True


@dataclass(frozen=True)
class ShiftedWindow:
    """Re-ingest raw records with every window moved back by ``offset``
    months, then flag with ``flagger(papers, start_month, rng)``."""

    records: object
    base_filter: object
    offset: int = 24
    flagger: Callable = None
    label: str = "shifted_window"


@dataclass
class PlaceboFit:
    label: str
    fit: Optional[EventStudyFit]
    failure: Optional[str] = None
    treated_share: float = float("nan")


def _placebo_fit(label, panel, flagged, window, stack, rng) -> PlaceboFit:
    assignment = first_detection_timing(flagged, window)
    try:
        if not assignment.treated.any():
            raise NoCohortsError("no author was ever flagged")
        full = assign_pseudo_dates(assignment, stack, rng)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            fit = fit_stacked(build_stacks(panel, full, stack), stack)
        return PlaceboFit(label, fit, None, assignment.treated_share)
    except _EXPECTED_FAILURES as exc:
        return PlaceboFit(label, None, f"{type(exc).__name__}: {exc}", assignment.treated_share)


def run_placebo_suite(papers: PaperTable, panel: AuthorPanel, suite, stack: StackConfig,
                      start_month: int, seed: int = 0) -> List[PlaceboFit]:
    """Swap the flag rule (or the window) while keeping first-detection timing.

    ``papers``/``panel`` are ignored for :class:`ShiftedWindow`, which rebuilds
    both from its raw records.
    """
    ss = np.random.SeedSequence(seed)
    if isinstance(suite, ShiftedWindow):
        from .ingest import apply_filter

        filt = suite.base_filter.shifted(suite.offset)
        res = apply_filter(suite.records, filt)
        start = filt.eligible_start
        rngs = [np.random.default_rng(s) for s in ss.spawn(2)]
        flagged = suite.flagger(res.papers, start, rngs[0])
        window = (start, res.panel.n_months - 1)
        return [_placebo_fit(suite.label, res.panel, flagged, window, stack, rngs[1])]

    window = (start_month, panel.n_months - 1)
    fits = []
    if isinstance(suite, RandomFlags):
        for p, s in zip(suite.ps, ss.spawn(len(suite.ps))):
            flag_rng, pseudo_rng = (np.random.default_rng(c) for c in s.spawn(2))
            flagged = bernoulli_flags(papers, HazardParams(p, start_month), flag_rng)
            fits.append(_placebo_fit(f"random_p={p:g}", panel, flagged, window, stack, pseudo_rng))
    elif isinstance(suite, Keywords):
        sets = [("keywords=" + "|".join(suite.words), suite.words)]
        if suite.separately and len(suite.words) > 1:
            sets += [(f"keyword={w}", (w,)) for w in suite.words]
        for (label, words), s in zip(sets, ss.spawn(len(sets))):
            flagged = keyword_flags(papers, words, start_month)
            fits.append(_placebo_fit(label, panel, flagged, window, stack, np.random.default_rng(s)))
    else:
        raise ConfigurationError(f"unknown placebo suite {suite!r}")
    return fits
