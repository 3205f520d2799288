import numpy as np
import pytest
from hypothesis import given, strategies as st

from firstdetect import (AuthorPanel, ConstantMeans, DgpConfig, EmpiricalMeans, GammaMeans, PaperTable,
                         draw_author_means, expand_to_papers, simulate_panel)
from firstdetect.data import default_author_ids
from firstdetect.exceptions import ConfigurationError, InputError


def test_constant_means_are_constant():
    m = draw_author_means(DgpConfig(50, 10, ConstantMeans(1.5)))
    assert np.all(m == 1.5)


def test_gamma_means_moments():
    m = draw_author_means(DgpConfig(200_000, 10, GammaMeans(2.0, 0.5), seed=3))
    assert abs(m.mean() - 1.0) < 0.01
    assert abs(m.var() - 0.5) < 0.01
    assert np.all(m > 0)


def test_empirical_means_pass_through_or_resample(rng):
    vals = (0.5, 1.0, 2.0)
    assert np.array_equal(EmpiricalMeans(vals).draw(3, rng), np.array(vals))
    draws = EmpiricalMeans(vals).draw(1000, rng)
    assert set(np.unique(draws)) <= set(vals)


def test_seeded_draws_reproduce():
    cfg = DgpConfig(100, 10, GammaMeans(), seed=11)
    assert np.array_equal(draw_author_means(cfg), draw_author_means(cfg))


@pytest.mark.parametrize("bad", [DgpConfig(0, 10), DgpConfig(5, 1), DgpConfig(5, 5, ConstantMeans(0.0)),
                                 DgpConfig(5, 5, GammaMeans(-1.0, 1.0)), DgpConfig(5, 5, EmpiricalMeans(()))])
def test_invalid_configs(bad):
    with pytest.raises(ConfigurationError):
        bad.validate()


def test_config_dict_round_trip():
    for means in (GammaMeans(1.5, 0.7), ConstantMeans(2.0), EmpiricalMeans((1.0, 3.0))):
        cfg = DgpConfig(12, 7, means, seed=4)
        assert DgpConfig.from_dict(cfg.to_dict()) == cfg


def test_panel_means_match_poisson(rng):
    panel = simulate_panel(np.full(20_000, 1.3), 5, rng)
    assert panel.counts.shape == (20_000, 5)
    assert abs(panel.counts.mean() - 1.3) < 0.02
    assert abs(panel.counts.var() - 1.3) < 0.03


def test_author_ids_sort_in_row_order():
    ids = default_author_ids(1234)
    assert list(ids) == sorted(ids)
    assert len(set(ids)) == 1234


def test_panel_rejects_bad_counts():
    with pytest.raises(InputError):
        AuthorPanel(np.array([[1, -1], [0, 0]]), default_author_ids(2))
    with pytest.raises(InputError):
        AuthorPanel(np.array([[1.5, 0], [0, 0]]), default_author_ids(2))
    with pytest.raises(InputError):
        AuthorPanel(np.array([[1], [0]]), default_author_ids(2))


@given(st.lists(st.lists(st.integers(0, 4), min_size=3, max_size=3), min_size=1, max_size=8))
def test_expand_then_aggregate_is_identity(rows):
    panel = AuthorPanel(np.array(rows), default_author_ids(len(rows)))
    papers = expand_to_papers(panel)
    assert len(papers) == panel.counts.sum()
    assert len(set(papers.paper_id)) == len(papers)
    assert np.array_equal(papers.to_panel(panel.n_months).counts, panel.counts)
    # author-major, month-minor
    key = papers.author * panel.n_months + papers.month
    assert np.all(np.diff(key) >= 0)
    assert not papers.flagged.any()


def test_paper_rows_are_events(rng):
    panel = simulate_panel(np.full(3, 2.0), 4, rng)
    papers = expand_to_papers(panel)
    ev = papers[0]
    assert ev.author_id == panel.author_ids[papers.author[0]]
    assert ev.flagged is False
    assert len(list(papers)) == len(papers)


def test_paper_table_length_checks():
    with pytest.raises(InputError):
        PaperTable(np.array(["a", "b"]), np.array([0]), np.array([0, 1]), default_author_ids(1))
