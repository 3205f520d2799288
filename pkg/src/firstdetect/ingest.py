"""Paper-level CSV ingestion, calendar presets and result export.

Input CSV columns: ``paper_id, author_id, year_month, categories[, abstract]``
with one row per (paper, author) pair. ``categories`` is semicolon-separated
and ``year_month`` is ``YYYY-MM``.

Filters run in a fixed order: excluded categories, then the activity
threshold, then the observation window.
"""

from __future__ import annotations

import csv
import json
import math
import os
import re
from dataclasses import dataclass, field, replace
from typing import Dict, FrozenSet, List, Optional, Sequence, Tuple

import numpy as np

from . import __version__
from .data import AuthorPanel, PaperTable
from .event_stack import StackedDataset
from .exceptions import ConfigurationError, InputError
from .text_mixture import tokenize

AI_CATEGORIES = frozenset({"cs.CV", "cs.LG", "cs.AI", "cs.IR", "cs.CL"})
REQUIRED_COLUMNS = ("paper_id", "author_id", "year_month", "categories")
_YM = re.compile(r"^\s*(\d{4})-(\d{2})\s*$")


def parse_month(text: str) -> int:
    """``YYYY-MM`` to an absolute month count (year * 12 + month - 1)."""
    m = _YM.match(text)
    if not m or not 1 <= int(m.group(2)) <= 12:
        raise InputError(f"bad year_month {text!r}")
    return int(m.group(1)) * 12 + int(m.group(2)) - 1


def format_month(month: int) -> str:
    return f"{month // 12:04d}-{month % 12 + 1:02d}"


@dataclass(frozen=True)
class IngestFilter:
    """Sample filters in absolute months (see :func:`parse_month`).

    ``introduction`` is the last month before flags may occur; the panel is
    indexed from the start of ``observation_window``.
    """

    activity_window: Tuple[int, int]
    observation_window: Tuple[int, int]
    introduction: int
    min_pubs_in_window: int = 4
    excluded_categories: FrozenSet[str] = AI_CATEGORIES

    def __post_init__(self):
        for name in ("activity_window", "observation_window"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ConfigurationError(f"{name} ends before it starts")
        if self.min_pubs_in_window < 0:
            raise ConfigurationError("min_pubs_in_window must be >= 0")
        lo, hi = self.observation_window
        if not lo <= self.introduction < hi:
            raise ConfigurationError("introduction date must fall inside the observation window, before its end")

    @classmethod
    def from_strings(cls, activity, observation, introduction, **kw) -> "IngestFilter":
        return cls(tuple(map(parse_month, activity)), tuple(map(parse_month, observation)),
                   parse_month(introduction), **kw)

    @property
    def n_months(self) -> int:
        return self.observation_window[1] - self.observation_window[0] + 1

    @property
    def eligible_start(self) -> int:
        """Panel index of the first month in which flags count."""
        return self.introduction + 1 - self.observation_window[0]

    def shifted(self, offset: int) -> "IngestFilter":
        """Every window and the introduction date moved back by ``offset`` months."""
        a, o = self.activity_window, self.observation_window
        return replace(self, activity_window=(a[0] - offset, a[1] - offset),
                       observation_window=(o[0] - offset, o[1] - offset), introduction=self.introduction - offset)

    def to_dict(self) -> dict:
        return {
            "activity_window": [format_month(m) for m in self.activity_window],
            "observation_window": [format_month(m) for m in self.observation_window],
            "introduction": format_month(self.introduction),
            "min_pubs_in_window": self.min_pubs_in_window,
            "excluded_categories": sorted(self.excluded_categories),
        }


PRESETS: Dict[str, IngestFilter] = {
    "main": IngestFilter.from_strings(("2018-01", "2021-12"), ("2022-01", "2024-06"), "2022-12"),
    "pre_chatgpt": IngestFilter.from_strings(("2016-01", "2019-12"), ("2020-01", "2022-06"), "2020-12"),
}


def synthetic_filter(n_months: int, start_month: int, obs_start: str = "2022-01") -> IngestFilter:
    """Filter matching a simulated panel: month 0 is ``obs_start`` and flags
    count from panel month ``start_month``."""
    o = parse_month(obs_start)
    return IngestFilter((o - 48, o - 1), (o, o + n_months - 1), o + start_month - 1)


@dataclass
class RawPaperRecords:
    paper_id: List[str]
    author_id: List[str]
    month: np.ndarray
    categories: List[FrozenSet[str]]
    abstract: Optional[List[str]]

    def __len__(self):
        return len(self.paper_id)


@dataclass
class IngestResult:
    papers: PaperTable
    panel: AuthorPanel
    report: Dict[str, int]
    filter: IngestFilter


def read_papers_csv(path) -> RawPaperRecords:
    """Parse and validate a paper-level CSV; errors carry the line number."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(row for row in fh if not row.startswith("#"))
        cols = reader.fieldnames or []
        missing = [c for c in REQUIRED_COLUMNS if c not in cols]
        if missing:
            raise InputError(f"{path}: missing columns {missing}")
        has_abstract = "abstract" in cols
        pid, aid, months, cats, abstracts = [], [], [], [], [] if has_abstract else None
        for row in reader:
            line = reader.line_num
            if None in row or any(row.get(c) is None for c in REQUIRED_COLUMNS):
                raise InputError(f"{path}:{line}: wrong number of fields")
            p, a = row["paper_id"].strip(), row["author_id"].strip()
            if not p or not a:
                raise InputError(f"{path}:{line}: empty paper_id or author_id")
            try:
                m = parse_month(row["year_month"])
            except ValueError as exc:
                raise InputError(f"{path}:{line}: {exc}") from None
            pid.append(p)
            aid.append(a)
            months.append(m)
            cats.append(frozenset(c.strip() for c in row["categories"].split(";") if c.strip()))
            if has_abstract:
                abstracts.append(row["abstract"] or "")
    return RawPaperRecords(pid, aid, np.array(months, dtype=np.int64), cats, abstracts)


def apply_filter(records: RawPaperRecords, filt: IngestFilter) -> IngestResult:
    """Category, activity and window filters, then the author x month panel.

    Retained authors are sorted by id; papers are ordered by author, then
    month, then file order.
    """
    n = len(records)
    report = {"rows": n}
    ok_cat = np.array([c.isdisjoint(filt.excluded_categories) for c in records.categories], dtype=bool)
    report["dropped_category"] = int(n - ok_cat.sum())

    authors = np.asarray(records.author_id, dtype=object)
    a_lo, a_hi = filt.activity_window
    in_act = ok_cat & (records.month >= a_lo) & (records.month <= a_hi)
    uniq, inv = np.unique(authors, return_inverse=True)
    inv = inv.ravel()
    act_counts = np.bincount(inv[in_act], minlength=uniq.size)
    active = act_counts >= filt.min_pubs_in_window
    seen = np.bincount(inv[ok_cat], minlength=uniq.size) > 0
    report["authors_seen"] = int(seen.sum())
    report["authors_inactive"] = int((seen & ~active).sum())
    keep_author = active & seen if filt.min_pubs_in_window > 0 else seen

    o_lo, o_hi = filt.observation_window
    in_obs = (records.month >= o_lo) & (records.month <= o_hi)
    keep = ok_cat & keep_author[inv] & in_obs
    report["dropped_inactive_author"] = int((ok_cat & ~keep_author[inv]).sum())
    report["dropped_outside_window"] = int((ok_cat & keep_author[inv] & ~in_obs).sum())

    retained = np.flatnonzero(keep_author)
    if retained.size == 0:
        raise InputError("no author passes the filters")
    new_index = np.full(uniq.size, -1)
    new_index[retained] = np.arange(retained.size)
    rows = np.flatnonzero(keep)
    a_idx = new_index[inv[rows]]
    month = records.month[rows] - o_lo
    order = np.lexsort((rows, month, a_idx))
    rows, a_idx, month = rows[order], a_idx[order], month[order]

    tokens = text = None
    if records.abstract is not None:
        text = [records.abstract[r] for r in rows]
        tokens = [tokenize(t) for t in text]
    papers = PaperTable(
        paper_id=np.array([records.paper_id[r] for r in rows], dtype=object),
        author=a_idx, month=month, author_ids=uniq[retained], tokens=tokens, text=text,
    )
    panel = papers.to_panel(filt.n_months)
    report["papers_retained"] = int(rows.size)
    report["authors_retained"] = int(retained.size)
    return IngestResult(papers, panel, report, filt)


def ingest_papers_csv(path, filt: IngestFilter) -> IngestResult:
    return apply_filter(read_papers_csv(path), filt)


def write_synthetic_csv(panel: AuthorPanel, papers: PaperTable, path, filt: IngestFilter,
                        decoys: bool = True, rng: np.random.Generator = None) -> None:
    """Write a paper-level fixture that ingests back to exactly ``panel``.

    Every author gets ``min_pubs_in_window`` papers in the activity window. With
    ``decoys`` the file also carries rows the filters must remove: papers in
    excluded categories and authors one paper short of the activity threshold.
    Rows are written in a shuffled order when ``rng`` is given.
    """
    o_lo = filt.observation_window[0]
    a_lo, a_hi = filt.activity_window
    excluded = sorted(filt.excluded_categories)
    rows = []
    for j in range(len(papers)):
        a = papers.author_ids[papers.author[j]]
        abstract = " ".join(papers.tokens[j]) if papers.tokens is not None else ""
        rows.append((papers.paper_id[j], a, format_month(o_lo + int(papers.month[j])), "math.ST;stat.ME", abstract))
    span = a_hi - a_lo + 1
    for i, a in enumerate(panel.author_ids):
        for r in range(filt.min_pubs_in_window):
            rows.append((f"{a}-act-{r}", a, format_month(a_lo + (i + 7 * r) % span), "stat.ME", ""))
    if decoys:
        for i, a in enumerate(panel.author_ids[: max(1, panel.n_authors // 50)]):
            cat = excluded[i % len(excluded)] if excluded else "cs.LG"
            rows.append((f"{a}-ai-{i}", a, format_month(o_lo + i % filt.n_months), f"stat.ML;{cat}", "data"))
        for i in range(3):
            z = f"Z-inactive-{i}"
            for r in range(max(filt.min_pubs_in_window - 1, 0)):
                rows.append((f"{z}-act-{r}", z, format_month(a_lo + r), "math.PR", ""))
            rows.append((f"{z}-obs", z, format_month(o_lo + i), "math.PR", "data"))
    if rng is not None:
        rows = [rows[i] for i in rng.permutation(len(rows))]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["paper_id", "author_id", "year_month", "categories", "abstract"])
        w.writerows(rows)


@dataclass(frozen=True)
class CsvRoundTripSource:
    """Data source that simulates a panel, writes it as a paper-level CSV
    fixture, and returns what ingestion reads back."""

    workdir: str
    obs_start: str = "2022-01"

    def __call__(self, config, rng):
        from .experiment_runner import simulated_source

        panel, papers = simulated_source(config, rng)
        filt = synthetic_filter(config.dgp.n_months, config.hazard.start_month, self.obs_start)
        path = os.path.join(self.workdir, f"fixture_{os.getpid()}.csv")
        write_synthetic_csv(panel, papers, path, filt)
        res = ingest_papers_csv(path, filt)
        return res.panel, res.papers


# -- stacked dataset round trip ----------------------------------------------------------

STACKED_COLUMNS = ("stack", "author", "month", "k", "treated", "y")


def write_stacked_csv(data: StackedDataset, path, provenance: dict = None) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        _provenance_header(fh, provenance or {})
        w = csv.writer(fh)
        w.writerow(STACKED_COLUMNS)
        ids = data.author_ids
        for s, a, m, k, t, y in zip(data.stack, data.author, data.month, data.k, data.treated, data.y):
            w.writerow((int(s), ids[a], int(m), int(k), int(t), int(y)))


def read_stacked_csv(path) -> StackedDataset:
    cols = {c: [] for c in STACKED_COLUMNS}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(row for row in fh if not row.startswith("#"))
        missing = [c for c in STACKED_COLUMNS if c not in (reader.fieldnames or [])]
        if missing:
            raise InputError(f"{path}: missing columns {missing}")
        for row in reader:
            try:
                for c in STACKED_COLUMNS:
                    cols[c].append(row[c] if c == "author" else int(row[c]))
            except (TypeError, ValueError) as exc:
                raise InputError(f"{path}:{reader.line_num}: {exc}") from None
    if not cols["stack"]:
        raise InputError(f"{path}: no rows")
    stack, month, k = (np.array(cols[c], dtype=np.int64) for c in ("stack", "month", "k"))
    if np.any(k != month - stack):
        raise InputError(f"{path}: event time must equal month - stack")
    ids, author = np.unique(np.array(cols["author"], dtype=object), return_inverse=True)
    return StackedDataset(stack=stack, author=author.ravel().astype(np.int64), month=month, k=k,
                          treated=np.array(cols["treated"], dtype=bool), y=np.array(cols["y"], dtype=np.int64),
                          author_ids=ids)


# -- result export ----------------------------------------------------------------

def _num(x) -> str:
    x = float(x)
    return "nan" if math.isnan(x) else f"{x:.12g}"


def _provenance_header(fh, provenance: dict) -> None:
    for key in sorted(provenance):
        fh.write(f"# {key}: {json.dumps(provenance[key], sort_keys=True)}\n")


def provenance(command: str = "", config: dict = None, seed=None, **extra) -> dict:
    """Provenance block: tool version, command line, config and its hash."""
    import hashlib

    cfg = config or {}
    blob = json.dumps(cfg, sort_keys=True).encode()
    return {"tool": "firstdetect", "version": __version__, "command": command, "config": cfg,
            "config_hash": hashlib.sha256(blob).hexdigest(), "seed": seed, **extra}


@dataclass
class ResultBundle:
    """Fits, Monte Carlo summaries and/or plain rows with their provenance."""

    provenance: dict
    fits: Dict[str, object] = field(default_factory=dict)
    summaries: Dict[str, object] = field(default_factory=dict)
    rows: List[dict] = field(default_factory=list)
    extra: dict = field(default_factory=dict)


def _json_float(x):
    x = float(x)
    return None if math.isnan(x) else x


def fit_to_dict(fit) -> dict:
    return {
        "labels": list(fit.labels),
        "event_times": list(fit.event_times),
        "coef": [_json_float(b) for b in fit.coef],
        "se": [_json_float(s) for s in fit.se],
        "vcov": [[_json_float(v) for v in row] for row in fit.vcov],
        "n_obs": fit.n_obs, "n_dropped": fit.n_dropped, "n_clusters": fit.n_clusters,
        "converged": fit.converged, "iterations": fit.iterations, "deviance": fit.deviance,
        "provenance": fit.provenance,
    }


def summary_to_dict(s) -> dict:
    return {
        "scenario": s.scenario,
        "event_times": [int(k) for k in s.event_times],
        "mean": [_json_float(v) for v in s.mean],
        "mc_se": [_json_float(v) for v in s.mc_se],
        "ci_lo": [_json_float(v) for v in s.ci_lo],
        "ci_hi": [_json_float(v) for v in s.ci_hi],
        "n_by_k": [int(v) for v in s.n_by_k],
        "rejection_rate_positive": _json_float(s.rejection_rate_positive),
        "n_tests": s.n_tests, "n_reps_completed": s.n_reps_completed,
        "post_mean": _json_float(s.post_mean), "post_mc_se": _json_float(s.post_mc_se),
        "failures": [[int(r), why] for r, why in s.failures],
    }


def export_results(bundle: ResultBundle, path, fmt: str = None, z: float = 1.959963984540054) -> None:
    """Write ``bundle`` as CSV or JSON with deterministic field order.

    CSV numbers carry 12 significant digits under a ``#`` provenance header;
    JSON keeps full double precision.
    """
    fmt = fmt or os.path.splitext(str(path))[1].lstrip(".").lower()
    if fmt == "json":
        doc = {
            "provenance": bundle.provenance,
            "fits": {name: fit_to_dict(f) for name, f in bundle.fits.items()},
            "summaries": {name: summary_to_dict(s) for name, s in bundle.summaries.items()},
            "rows": bundle.rows,
            **bundle.extra,
        }
        text = json.dumps(doc, sort_keys=True, indent=1, allow_nan=False, default=_json_default)
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
        return
    if fmt != "csv":
        raise ConfigurationError(f"unknown export format {fmt!r}")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        _provenance_header(fh, bundle.provenance)
        w = csv.writer(fh, lineterminator="\n")
        if bundle.summaries:
            w.writerow(["scenario", "k", "mean", "mc_se", "ci_lo", "ci_hi", "n"])
            for name in sorted(bundle.summaries):
                s = bundle.summaries[name]
                for j, k in enumerate(s.event_times):
                    w.writerow([name, int(k), _num(s.mean[j]), _num(s.mc_se[j]), _num(s.ci_lo[j]),
                                _num(s.ci_hi[j]), int(s.n_by_k[j])])
        elif bundle.fits:
            w.writerow(["fit", "label", "k", "gamma", "se", "ci_lo", "ci_hi"])
            for name in sorted(bundle.fits):
                f = bundle.fits[name]
                for lab, k, b, s in zip(f.labels, f.event_times, f.coef, f.se):
                    w.writerow([name, lab, "" if k is None else int(k), _num(b), _num(s),
                                _num(b - z * s), _num(b + z * s)])
        elif bundle.rows:
            keys = list(bundle.rows[0])
            w.writerow(keys)
            for r in bundle.rows:
                w.writerow([_num(r[c]) if isinstance(r[c], float) else r[c] for c in keys])


def _json_default(obj):
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return _json_float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (set, frozenset, tuple)):
        return sorted(obj) if isinstance(obj, (set, frozenset)) else list(obj)
    raise TypeError(f"cannot serialise {type(obj).__name__}")


# -- detector corpora ----------------------------------------------------------------

def load_corpus(path) -> List[List[str]]:
    """Training corpus as token lists: plain text (one document per line)
    or JSON (a list of strings or of token lists)."""
    if str(path).endswith(".json"):
        with open(path, encoding="utf-8") as fh:
            docs = json.load(fh)
        if not isinstance(docs, list):
            raise InputError(f"{path}: expected a JSON list of documents")
        return [tokenize(d) if isinstance(d, str) else [str(t).lower() for t in d] for d in docs]
    with open(path, encoding="utf-8") as fh:
        return [tokenize(line) for line in fh if line.strip()]


def load_documents(path) -> List[List[List[str]]]:
    """Documents to score, each a list of tokenized sentences.

    Plain text holds one document per line. JSON holds a list whose items are
    raw strings or lists of sentences (token lists).
    """
    from .text_mixture import split_sentences

    if str(path).endswith(".json"):
        with open(path, encoding="utf-8") as fh:
            docs = json.load(fh)
        if not isinstance(docs, list):
            raise InputError(f"{path}: expected a JSON list of documents")
        return [split_sentences(d) if isinstance(d, str) else [[str(t).lower() for t in s] for s in d] for d in docs]
    with open(path, encoding="utf-8") as fh:
        return [split_sentences(line) for line in fh if line.strip()]


def write_panel_csv(panel: AuthorPanel, path, filt: IngestFilter = None, provenance: dict = None) -> None:
    """Author x month counts; month headers are calendar months when ``filt`` is given."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        _provenance_header(fh, provenance or {})
        w = csv.writer(fh, lineterminator="\n")
        if filt is not None:
            months = [format_month(filt.observation_window[0] + t) for t in range(panel.n_months)]
        else:
            months = [str(t) for t in range(panel.n_months)]
        w.writerow(["author_id", *months])
        for a, row in zip(panel.author_ids, panel.counts):
            w.writerow([a, *map(int, row)])
