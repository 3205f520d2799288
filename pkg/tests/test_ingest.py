import csv
import json

import numpy as np
import pytest

from firstdetect import ExperimentConfig, StackConfig, assign_pseudo_dates, build_stacks, fit_stacked
from firstdetect.exceptions import ConfigurationError, InputError
from firstdetect.experiment_runner import _replicate, simulated_source
from firstdetect.flag_rules import HazardParams, bernoulli_flags, first_detection_timing
from firstdetect.ingest import (PRESETS, CsvRoundTripSource, IngestFilter, ResultBundle, export_results,
                                format_month, ingest_papers_csv, load_corpus, load_documents, parse_month,
                                provenance, read_papers_csv, read_stacked_csv, synthetic_filter,
                                write_panel_csv, write_stacked_csv, write_synthetic_csv)

HEADER = "paper_id,author_id,year_month,categories,abstract\n"


def _write(tmp_path, body, name="papers.csv"):
    p = tmp_path / name
    p.write_text(HEADER + body)
    return p


def test_month_codes():
    assert parse_month("2022-12") - parse_month("2022-01") == 11
    assert format_month(parse_month("1999-07")) == "1999-07"
    for bad in ("2022-13", "22-01", "2022/01"):
        with pytest.raises(InputError):
            parse_month(bad)


def test_presets():
    main, pre = PRESETS["main"], PRESETS["pre_chatgpt"]
    assert main.n_months == 30 and main.eligible_start == 12
    assert pre == main.shifted(24)
    assert pre.to_dict()["introduction"] == "2020-12"
    with pytest.raises(ConfigurationError):
        IngestFilter.from_strings(("2018-01", "2021-12"), ("2022-01", "2024-06"), "2024-06")


def _filter(**kw):
    return IngestFilter.from_strings(("2020-01", "2020-12"), ("2021-01", "2021-06"), "2021-02", **kw)


def test_activity_threshold_boundary(tmp_path):
    rows = []
    for a, n in (("four", 4), ("three", 3)):
        rows += [f"{a}-{i},{a},2020-0{i + 1},math.ST," for i in range(n)]
        rows.append(f"{a}-obs,{a},2021-03,math.ST,we find data")
    res = ingest_papers_csv(_write(tmp_path, "\n".join(rows) + "\n"), _filter())
    assert list(res.panel.author_ids) == ["four"]
    assert res.panel.counts.tolist() == [[0, 0, 1, 0, 0, 0]]
    assert res.report["authors_inactive"] == 1
    assert res.papers.tokens[0] == ["we", "find", "data"]


def test_category_filter_runs_before_activity(tmp_path):
    rows = [f"p{i},a,2020-0{i + 1},math.ST," for i in range(3)]
    rows += ["p3,a,2020-05,cs.LG;math.ST,", "p4,a,2021-01,math.ST,"]
    with pytest.raises(InputError, match="no author"):
        ingest_papers_csv(_write(tmp_path, "\n".join(rows) + "\n"), _filter())
    res = ingest_papers_csv(_write(tmp_path, "\n".join(rows) + "\n"), _filter(excluded_categories=frozenset()))
    assert res.panel.counts.sum() == 1


def test_parse_errors_carry_line_numbers(tmp_path):
    with pytest.raises(InputError, match=":3:"):
        read_papers_csv(_write(tmp_path, "p0,a,2020-01,math.ST,\np1,a,2020-99,math.ST,\n"))
    with pytest.raises(InputError, match="missing columns"):
        p = tmp_path / "x.csv"
        p.write_text("paper_id,author_id\n")
        read_papers_csv(p)
    with pytest.raises(InputError, match="empty"):
        read_papers_csv(_write(tmp_path, ",a,2020-01,math.ST,\n"))


def test_synthetic_fixture_round_trip(tmp_path, rng):
    cfg = ExperimentConfig.build(n_authors=120, n_months=12, start_month=4)
    panel, papers = simulated_source(cfg, rng)
    filt = synthetic_filter(12, 4)
    assert filt.eligible_start == 4
    path = tmp_path / "fx.csv"
    write_synthetic_csv(panel, papers, path, filt)
    res = ingest_papers_csv(path, filt)
    assert np.array_equal(res.panel.counts, panel.counts)
    assert np.array_equal(res.panel.author_ids, panel.author_ids)
    assert np.array_equal(res.papers.paper_id, papers.paper_id)
    assert np.array_equal(res.papers.month, papers.month)
    assert res.report["authors_inactive"] == 3
    assert res.report["dropped_category"] == max(1, 120 // 50)
    # shuffled rows still give the same panel
    write_synthetic_csv(panel, papers, path, filt, rng=rng)
    assert np.array_equal(ingest_papers_csv(path, filt).panel.counts, panel.counts)


def test_round_trip_source_matches_direct_source(tmp_path):
    cfg = ExperimentConfig.build(n_authors=200, n_months=14, start_month=5)
    for rep in range(2):
        direct = _replicate(cfg, rep, ("first_detection", "random"), simulated_source)
        via_csv = _replicate(cfg, rep, ("first_detection", "random"), CsvRoundTripSource(str(tmp_path)))
        for sc in direct:
            assert np.array_equal(direct[sc].coef, via_csv[sc].coef, equal_nan=True)
            assert np.array_equal(direct[sc].se, via_csv[sc].se, equal_nan=True)


def test_stacked_csv_round_trip(tmp_path, rng):
    cfg = ExperimentConfig.build(n_authors=150, n_months=12, start_month=4)
    panel, papers = simulated_source(cfg, rng)
    a = first_detection_timing(bernoulli_flags(papers, HazardParams(0.2, 4), rng), (4, 11))
    stack = StackConfig((4, 11), 1, (-3, 5))
    data = build_stacks(panel, assign_pseudo_dates(a, stack, rng), stack)
    path = tmp_path / "stacked.csv"
    write_stacked_csv(data, path, {"seed": 1})
    back = read_stacked_csv(path)
    for c in ("stack", "month", "k", "treated", "y"):
        assert np.array_equal(getattr(back, c), getattr(data, c))
    assert np.array_equal(back.author_ids[back.author], data.author_ids[data.author])
    assert np.array_equal(fit_stacked(back, stack).coef, fit_stacked(data, stack).coef, equal_nan=True)


def test_stacked_csv_rejects_inconsistent_k(tmp_path):
    p = tmp_path / "s.csv"
    p.write_text("stack,author,month,k,treated,y\n3,a,5,1,1,2\n")
    with pytest.raises(InputError, match="event time"):
        read_stacked_csv(p)


def test_export_json_and_csv(tmp_path, rng):
    cfg = ExperimentConfig.build(n_authors=150, n_months=12, start_month=4)
    panel, papers = simulated_source(cfg, rng)
    a = first_detection_timing(bernoulli_flags(papers, HazardParams(0.2, 4), rng), (4, 11))
    stack = StackConfig((4, 11), 1, (-3, 5))
    fit = fit_stacked(build_stacks(panel, assign_pseudo_dates(a, stack, rng), stack), stack)
    fit.coef[0] = np.nan
    bundle = ResultBundle(provenance("firstdetect test", {"a": 1}, 3), fits={"main": fit})
    export_results(bundle, tmp_path / "r.json")
    doc = json.loads((tmp_path / "r.json").read_text())
    assert doc["provenance"]["config_hash"] == provenance("", {"a": 1})["config_hash"]
    assert doc["fits"]["main"]["coef"][0] is None
    assert doc["fits"]["main"]["coef"][1] == fit.coef[1]
    export_results(bundle, tmp_path / "r.csv")
    text = (tmp_path / "r.csv").read_text().splitlines()
    assert text[0].startswith("# command:")
    rows = list(csv.DictReader(line for line in text if not line.startswith("#")))
    assert rows[1]["gamma"] == f"{fit.coef[1]:.12g}"
    # deterministic output
    export_results(bundle, tmp_path / "r2.csv")
    assert (tmp_path / "r2.csv").read_text() == (tmp_path / "r.csv").read_text()
    with pytest.raises(ConfigurationError):
        export_results(bundle, tmp_path / "r.xml")


def test_corpus_loaders(tmp_path):
    (tmp_path / "c.txt").write_text("We find data.\n\nDelve into it!\n")
    assert load_corpus(tmp_path / "c.txt") == [["we", "find", "data"], ["delve", "into", "it"]]
    (tmp_path / "d.json").write_text(json.dumps(["One. Two!", [["a", "B"]]]))
    assert load_documents(tmp_path / "d.json") == [[["one"], ["two"]], [["a", "b"]]]
    (tmp_path / "bad.json").write_text("{}")
    with pytest.raises(InputError):
        load_corpus(tmp_path / "bad.json")


def test_panel_csv_headers(tmp_path, rng):
    cfg = ExperimentConfig.build(n_authors=5, n_months=12, start_month=4)
    panel, _ = simulated_source(cfg, rng)
    write_panel_csv(panel, tmp_path / "p.csv", synthetic_filter(12, 4))
    lines = (tmp_path / "p.csv").read_text().splitlines()
    assert lines[0].split(",")[:3] == ["author_id", "2022-01", "2022-02"]
    assert len(lines) == 6
