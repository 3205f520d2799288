"""Command-line entry point: ``firstdetect <subcommand> ...``.

Results land in ``--out`` (default: ``$FIRSTDETECT_OUTPUT_DIR`` or the
current directory). Exit status is 0 on success, 1 on configuration or input
errors, 2 on usage errors.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import shlex
import sys

import numpy as np

from .event_stack import StackConfig, assign_pseudo_dates, build_stacks, fit_stacked
from .exceptions import ConfigurationError, ConvergenceError, InputError, NoCohortsError
from .experiment_runner import (ExperimentConfig, Keywords, RandomFlags, ShiftedWindow, run_monte_carlo,
                                run_placebo_suite, run_scenario_pair)
from .flag_rules import (HazardParams, bernoulli_flags, detector_flags, first_detection_timing, keyword_flags)
from .ingest import (PRESETS, IngestFilter, ResultBundle, apply_filter, export_results, load_corpus,
                     load_documents, parse_month, provenance, read_papers_csv, read_stacked_csv,
                     write_panel_csv, write_stacked_csv)
from .null_theory import gamma_null_poisson
from .panel_dgp import ConstantMeans, DgpConfig, GammaMeans
from .text_mixture import estimate_alpha, fit_word_llr, sentence_llrs

ENV_OUT = "FIRSTDETECT_OUTPUT_DIR"


def _out_dir(args) -> str:
    out = args.out or os.environ.get(ENV_OUT) or "."
    os.makedirs(out, exist_ok=True)
    return out


def _command(argv) -> str:
    return "firstdetect " + " ".join(shlex.quote(a) for a in argv)


# -- simulate ----------------------------------------------------------------

def _experiment_from_args(args) -> ExperimentConfig:
    base = {}
    if args.config:
        with open(args.config, encoding="utf-8") as fh:
            base = json.load(fh)
    cfg = ExperimentConfig.from_dict(base) if base else ExperimentConfig()
    dgp = cfg.dgp
    n_authors = args.authors if args.authors is not None else dgp.n_authors
    n_months = args.months if args.months is not None else dgp.n_months
    means = dgp.means
    if args.means == "constant" or args.mu is not None:
        means = ConstantMeans(args.mu if args.mu is not None else 1.0)
    elif args.means == "gamma":
        means = GammaMeans(args.gamma_shape, args.gamma_scale)
    p = args.p if args.p is not None else cfg.hazard.p
    start = args.start if args.start is not None else cfg.hazard.start_month
    if start >= n_months:
        raise ConfigurationError(f"--start {start} lies outside a {n_months}-month panel")
    st = cfg.stack
    k_lo = args.k_lo if args.k_lo is not None else st.k_report_range[0]
    k_hi = args.k_hi if args.k_hi is not None else st.k_report_range[1]
    pseudo = (start, n_months - 1) if (args.start is not None or args.months is not None or not base) else st.pseudo_window
    stack = StackConfig(pseudo, args.min_cohort if args.min_cohort is not None else st.min_cohort_size,
                        (k_lo, k_hi), st.bin_endpoints)
    return ExperimentConfig(
        dgp=DgpConfig(n_authors, n_months, means, dgp.seed), hazard=HazardParams(p, start),
        timing="random" if args.timing == "random" else "first_detection", stack=stack,
        n_reps=args.reps if args.reps is not None else cfg.n_reps,
        level=args.level if args.level is not None else cfg.level, k_eval_range=cfg.k_eval_range,
        master_seed=args.seed if args.seed is not None else cfg.master_seed,
        alternative=args.alternative or cfg.alternative, treated_share=cfg.treated_share,
    )


def cmd_simulate(args, argv) -> int:
    cfg = _experiment_from_args(args)
    out = _out_dir(args)
    prov = provenance(_command(argv), cfg.to_dict(), cfg.master_seed)
    if args.timing == "pair":
        pair = run_scenario_pair(cfg, workers=args.workers)
        summaries = {"first_detection": pair.first_detection, "random": pair.random}
        extra = {"theory": pair.theory._asdict() if pair.theory else None, "panels_shared": pair.panels_shared}
    else:
        s = run_monte_carlo(cfg, workers=args.workers)
        summaries, extra = {s.scenario: s}, {}
    bundle = ResultBundle(prov, summaries=summaries, extra=extra)
    export_results(bundle, os.path.join(out, f"{args.prefix}_summary.csv"), "csv")
    export_results(bundle, os.path.join(out, f"{args.prefix}_summary.json"), "json")
    for name, s in summaries.items():
        print(f"{name}: reps={s.n_reps_completed} failures={len(s.failures)} "
              f"post_mean={s.post_mean:.6f} rejection_rate_positive={s.rejection_rate_positive:.4f}")
    if extra.get("theory"):
        print(f"theory: gamma0={extra['theory']['gamma0']:.6f} gamma_plus={extra['theory']['gamma_plus']:.6f}")
    return 0


# -- theory ----------------------------------------------------------------

def cmd_theory(args, argv) -> int:
    rows = []
    for mu in args.mu:
        for p in args.p:
            path = gamma_null_poisson(mu, p)
            rows.append({"mu": float(mu), "p": float(p), "gamma0": path.gamma0, "gamma_plus": path.gamma_plus,
                         "mean_k0": path.mean_k0, "mean_kminus1": path.mean_kminus1, "mean_post": path.mean_post})
            print(f"mu={mu:g} p={p:g} gamma0={path.gamma0:.6f} gamma_plus={path.gamma_plus:.6f} "
                  f"mean_k0={path.mean_k0:.6f} mean_kminus1={path.mean_kminus1:.6f}")
    if args.csv:
        export_results(ResultBundle(provenance(_command(argv), {"mu": args.mu, "p": args.p}), rows=rows), args.csv, "csv")
    return 0


# -- ingest / estimate ----------------------------------------------------------------

def _filter_from_args(args) -> IngestFilter:
    explicit = [args.activity, args.observation, args.introduction]
    if args.preset and any(x is not None for x in explicit):
        raise ConfigurationError("--preset conflicts with explicit --activity/--observation/--introduction")
    if any(x is not None for x in explicit):
        if not all(x is not None for x in explicit):
            raise ConfigurationError("--activity, --observation and --introduction must be given together")
        filt = IngestFilter.from_strings(args.activity, args.observation, args.introduction)
    else:
        filt = PRESETS[args.preset or "main"]
    kw = {}
    if args.min_pubs is not None:
        kw["min_pubs_in_window"] = args.min_pubs
    if args.exclude is not None:
        kw["excluded_categories"] = frozenset(args.exclude)
    if kw:
        from dataclasses import replace

        filt = replace(filt, **kw)
    return filt


def _flag(args, papers, start, rng):
    if args.rule == "random":
        return bernoulli_flags(papers, HazardParams(args.p[0] if args.p else 0.2, start), rng)
    if args.rule == "keywords":
        return keyword_flags(papers, args.keywords, start)
    if args.rule == "detector":
        if not (args.human and args.llm):
            raise ConfigurationError("--rule detector needs --human and --llm corpora")
        table = fit_word_llr(load_corpus(args.human), load_corpus(args.llm))
        return detector_flags(papers, table, start, args.cutoff)
    raise ConfigurationError(f"unknown rule {args.rule!r}")


def cmd_ingest(args, argv) -> int:
    filt = _filter_from_args(args)
    out = _out_dir(args)
    records = read_papers_csv(args.papers)
    res = apply_filter(records, filt)
    prov = provenance(_command(argv), {"filter": filt.to_dict(), "rule": args.rule}, args.seed)
    write_panel_csv(res.panel, os.path.join(out, "panel.csv"), filt, prov)
    with open(os.path.join(out, "ingest_report.json"), "w", encoding="utf-8") as fh:
        json.dump({"provenance": prov, "report": res.report}, fh, sort_keys=True, indent=1)
        fh.write("\n")
    for key, val in res.report.items():
        print(f"{key}: {val}")
    if args.rule != "none":
        start = filt.eligible_start
        ss = np.random.SeedSequence(args.seed)
        flag_rng, pseudo_rng = (np.random.default_rng(s) for s in ss.spawn(2))
        flagged = _flag(args, res.papers, start, flag_rng)
        window = (start, res.panel.n_months - 1)
        stack = StackConfig(window, args.min_cohort, (args.k_lo, args.k_hi))
        assignment = assign_pseudo_dates(first_detection_timing(flagged, window), stack, pseudo_rng)
        data = build_stacks(res.panel, assignment, stack)
        write_stacked_csv(data, os.path.join(out, "stacked.csv"), prov)
        print(f"treated_share: {assignment.treated_share:.6f}")
        print(f"stacked_rows: {len(data)}")
    return 0


def cmd_estimate(args, argv) -> int:
    data = read_stacked_csv(args.stacked)
    stack = StackConfig(min_cohort_size=1, k_report_range=(args.k_lo, args.k_hi))
    fit = fit_stacked(data, stack)
    out = _out_dir(args)
    bundle = ResultBundle(provenance(_command(argv), {"stacked": os.path.abspath(args.stacked),
                                                      "k_report_range": [args.k_lo, args.k_hi]}), fits={"stacked": fit})
    export_results(bundle, os.path.join(out, f"{args.prefix}_fit.csv"), "csv")
    export_results(bundle, os.path.join(out, f"{args.prefix}_fit.json"), "json")
    for k, b in sorted(fit.gamma.items()):
        print(f"k={k} gamma={b:.6f} se={fit.se_by_k[k]:.6f}")
    return 0


# -- detect ----------------------------------------------------------------

def cmd_detect(args, argv) -> int:
    if not 0 <= args.cutoff <= 1:
        raise ConfigurationError("--cutoff must lie in [0, 1]")
    table = fit_word_llr(load_corpus(args.human), load_corpus(args.llm))
    docs = load_documents(args.score)
    rows = []
    for i, sents in enumerate(docs):
        est = estimate_alpha(sentence_llrs(sents, table), cutoff=args.cutoff)
        rows.append({"doc": i, "alpha_hat": float(est.alpha_hat), "log_likelihood": float(est.log_likelihood),
                     "n_sentences": est.n_sentences, "flagged": int(est.classified_llm)})
    path = args.output or os.path.join(_out_dir(args), "detect.csv")
    prov = provenance(_command(argv), {"human": args.human, "llm": args.llm, "score": args.score,
                                       "cutoff": args.cutoff, "vocabulary": len(table)})
    export_results(ResultBundle(prov, rows=rows), path, "csv")
    print(f"scored {len(rows)} documents, flagged {sum(r['flagged'] for r in rows)} -> {path}")
    return 0


# -- placebo ----------------------------------------------------------------

def cmd_placebo(args, argv) -> int:
    filt = _filter_from_args(args)
    records = read_papers_csv(args.papers)
    stack_for = lambda start, n: StackConfig((start, n - 1), args.min_cohort, (args.k_lo, args.k_hi))  # noqa: E731
    if args.suite == "shifted":
        if args.human and args.llm:
            table = fit_word_llr(load_corpus(args.human), load_corpus(args.llm))
            flagger = lambda papers, start, rng: detector_flags(papers, table, start, args.cutoff)  # noqa: E731
        else:
            p = args.p[0] if args.p else 0.2
            flagger = lambda papers, start, rng: bernoulli_flags(papers, HazardParams(p, start), rng)  # noqa: E731
        shifted = filt.shifted(args.offset)
        suite = ShiftedWindow(records, filt, args.offset, flagger)
        fits = run_placebo_suite(None, None, suite, stack_for(shifted.eligible_start, shifted.n_months),
                                 shifted.eligible_start, args.seed)
    else:
        res = apply_filter(records, filt)
        start = filt.eligible_start
        suite = RandomFlags(tuple(args.p or (0.1, 0.2, 0.3))) if args.suite == "random" else Keywords(tuple(args.keywords))
        fits = run_placebo_suite(res.papers, res.panel, suite, stack_for(start, res.panel.n_months), start, args.seed)
    out = _out_dir(args)
    prov = provenance(_command(argv), {"filter": filt.to_dict(), "suite": args.suite}, args.seed,
                      failures={pf.label: pf.failure for pf in fits if pf.failure})
    bundle = ResultBundle(prov, fits={pf.label: pf.fit for pf in fits if pf.fit is not None})
    export_results(bundle, os.path.join(out, f"{args.prefix}_placebo.csv"), "csv")
    export_results(bundle, os.path.join(out, f"{args.prefix}_placebo.json"), "json")
    lo, hi = args.post_range
    for pf in fits:
        if pf.fit is None:
            print(f"{pf.label}: failed ({pf.failure})")
            continue
        post = [b for k, b in pf.fit.gamma.items() if lo <= k <= hi and np.isfinite(b)]
        print(f"{pf.label}: treated_share={pf.treated_share:.4f} mean_post={np.mean(post):.6f}")
    return 0


# -- parser ----------------------------------------------------------------

def _add_window_args(p):
    p.add_argument("--preset", choices=sorted(PRESETS))
    p.add_argument("--activity", nargs=2, metavar=("START", "END"), help="YYYY-MM YYYY-MM")
    p.add_argument("--observation", nargs=2, metavar=("START", "END"), help="YYYY-MM YYYY-MM")
    p.add_argument("--introduction", metavar="YYYY-MM", help="last month before flags count")
    p.add_argument("--min-pubs", type=int, help="activity threshold (default 4)")
    p.add_argument("--exclude", nargs="*", help="excluded categories (default: core AI subfields)")


def _add_stack_args(p, k_lo=-11, k_hi=17):
    p.add_argument("--k-lo", type=int, default=k_lo)
    p.add_argument("--k-hi", type=int, default=k_hi)
    p.add_argument("--min-cohort", type=int, default=2)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="firstdetect", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="Monte Carlo under the null")
    p.add_argument("--config", help="JSON experiment config; flags override it")
    p.add_argument("--authors", type=int)
    p.add_argument("--months", type=int)
    p.add_argument("--p", type=float, help="per-paper flag probability")
    p.add_argument("--start", type=int, help="first eligible month (0-based)")
    p.add_argument("--reps", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--means", choices=("constant", "gamma"))
    p.add_argument("--mu", type=float, help="constant author mean")
    p.add_argument("--gamma-shape", type=float, default=2.0)
    p.add_argument("--gamma-scale", type=float, default=0.5)
    p.add_argument("--timing", choices=("pair", "first_detection", "random"), default="pair")
    p.add_argument("--k-lo", type=int)
    p.add_argument("--k-hi", type=int)
    p.add_argument("--min-cohort", type=int)
    p.add_argument("--level", type=float)
    p.add_argument("--alternative", choices=("greater", "two-sided"))
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out")
    p.add_argument("--prefix", default="simulate")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("theory", help="closed-form null path for Poisson output")
    p.add_argument("--mu", type=float, nargs="+", required=True)
    p.add_argument("--p", type=float, nargs="+", required=True)
    p.add_argument("--csv", help="also write the sweep to this CSV")
    p.set_defaults(func=cmd_theory)

    p = sub.add_parser("ingest", help="paper-level CSV -> panel (and stacked data)")
    p.add_argument("--papers", required=True)
    _add_window_args(p)
    p.add_argument("--rule", choices=("none", "random", "keywords", "detector"), default="none")
    p.add_argument("--p", type=float, nargs="+")
    p.add_argument("--keywords", nargs="+", default=["data", "paper", "find"])
    p.add_argument("--human")
    p.add_argument("--llm")
    p.add_argument("--cutoff", type=float, default=0.1)
    p.add_argument("--seed", type=int, default=0)
    _add_stack_args(p)
    p.add_argument("--out")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("estimate", help="stacked PPML fit from a stacked CSV")
    p.add_argument("--stacked", required=True)
    _add_stack_args(p)
    p.add_argument("--out")
    p.add_argument("--prefix", default="estimate")
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("detect", help="score documents with the mixture detector")
    p.add_argument("--human", required=True)
    p.add_argument("--llm", required=True)
    p.add_argument("--score", required=True)
    p.add_argument("--cutoff", type=float, default=0.1)
    p.add_argument("--output", help="CSV path (default <out>/detect.csv)")
    p.add_argument("--out")
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("placebo", help="placebo suites on a paper-level CSV")
    p.add_argument("--papers", required=True)
    _add_window_args(p)
    p.add_argument("--suite", choices=("random", "keywords", "shifted"), required=True)
    p.add_argument("--p", type=float, nargs="+")
    p.add_argument("--keywords", nargs="+", default=["data", "paper", "find"])
    p.add_argument("--offset", type=int, default=24, help="months to shift back (shifted suite)")
    p.add_argument("--human")
    p.add_argument("--llm")
    p.add_argument("--cutoff", type=float, default=0.1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--post-range", type=int, nargs=2, default=(1, 17))
    _add_stack_args(p)
    p.add_argument("--out")
    p.add_argument("--prefix", default="placebo")
    p.set_defaults(func=cmd_placebo)
    return parser


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args, argv)
    except (ConfigurationError, InputError, NoCohortsError, ConvergenceError, OSError) as exc:
        print(f"firstdetect {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
