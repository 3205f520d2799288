"""Unigram mixture detector.

Word log-likelihood ratios come from paired human / LLM corpora. A document is
a list of sentences, each drawn wholly from one of the two unigram models, and
the LLM share ``alpha`` is fitted by maximising

    l(alpha) = sum_s log(alpha * exp(L_s) + 1 - alpha),

where ``L_s`` is the summed word LLR of sentence ``s``. ``l`` is concave on
[0, 1].
"""

from __future__ import annotations

import math
import re
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, List, Mapping, NamedTuple, Sequence

import numpy as np

from .exceptions import ConfigurationError, InputError

_TOKEN_SPLIT = re.compile(r"[^0-9a-z]+")
_SENTENCE_SPLIT = re.compile(r"[.?!]+")
_INVPHI = (math.sqrt(5.0) - 1.0) / 2.0


def tokenize(text: str) -> List[str]:
    """Lowercase and split on runs of non-alphanumeric characters."""
    return [t for t in _TOKEN_SPLIT.split(text.lower()) if t]


def split_sentences(text: str) -> List[List[str]]:
    """Split on ``.``, ``?`` and ``!``, tokenize, and drop empty sentences."""
    out = []
    for chunk in _SENTENCE_SPLIT.split(text):
        toks = tokenize(chunk)
        if toks:
            out.append(toks)
    return out


@dataclass(frozen=True)
class WordLLRTable:
    """Immutable map word -> log(f_llm(word) / f_human(word))."""

    entries: Mapping[str, float]

    @property
    def vocabulary(self) -> frozenset:
        return frozenset(self.entries)

    def __getitem__(self, word):
        return self.entries[word]

    def __len__(self):
        return len(self.entries)

    def get(self, word, default=0.0):
        return self.entries.get(word, default)


class MixtureEstimate(NamedTuple):
    alpha_hat: float
    log_likelihood: float
    n_sentences: int
    classified_llm: bool


class SyntheticDocument(NamedTuple):
    sentences: List[List[str]]
    from_llm: np.ndarray


def _count(corpus: Iterable[Sequence[str]]) -> Counter:
    c = Counter()
    for doc in corpus:
        c.update(doc)
    return c


def fit_word_llr(human_corpus: Iterable[Sequence[str]], llm_corpus: Iterable[Sequence[str]]) -> WordLLRTable:
    """Relative-frequency log ratios for words seen in both corpora.

    Each corpus is an iterable of token lists. Totals are taken over the full
    corpus, including words that end up excluded from the table.
    """
    human = _count(human_corpus)
    llm = _count(llm_corpus)
    n_h, n_l = sum(human.values()), sum(llm.values())
    if n_h == 0 or n_l == 0:
        raise InputError("both corpora must contain at least one token")
    shared = sorted(set(human) & set(llm))
    entries = {w: math.log(llm[w] / n_l) - math.log(human[w] / n_h) for w in shared}
    return WordLLRTable(entries)


def sentence_llrs(document: Sequence[Sequence[str]], table: WordLLRTable) -> np.ndarray:
    """Summed word LLR per sentence; out-of-vocabulary tokens contribute 0."""
    get = table.entries.get
    return np.array([math.fsum(get(w, 0.0) for w in sent) for sent in document], dtype=float)


def mixture_loglik(alpha: float, llrs: np.ndarray) -> float:
    """l(alpha), evaluated with logaddexp so large |L_s| cannot overflow."""
    llrs = np.asarray(llrs, dtype=float)
    with np.errstate(divide="ignore"):
        la, lb = np.log(alpha), np.log1p(-alpha)
    return float(np.sum(np.logaddexp(la + llrs, lb)))


def mixture_score(alpha: float, llrs: np.ndarray) -> float:
    """Derivative of l at ``alpha``."""
    llrs = np.asarray(llrs, dtype=float)
    pos = llrs > 0
    out = np.empty_like(llrs)
    # at the boundaries an extreme sentence makes the score infinite
    with np.errstate(divide="ignore"):
        e = np.exp(-llrs[pos])
        out[pos] = (1.0 - e) / (alpha + (1.0 - alpha) * e)
        m = np.expm1(llrs[~pos])
        out[~pos] = m / (1.0 + alpha * m)
    return float(out.sum())


def _golden_bracket(f, lo, hi, width):
    a, b = lo, hi
    c = b - _INVPHI * (b - a)
    d = a + _INVPHI * (b - a)
    fc, fd = f(c), f(d)
    while b - a > width:
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - _INVPHI * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + _INVPHI * (b - a)
            fd = f(d)
    return a, b


def estimate_alpha(llrs, cutoff: float = 0.1, tol: float = 1e-6) -> MixtureEstimate:
    """Maximum-likelihood mixture share on [0, 1].

    The boundaries are settled from the sign of the score first. A flat
    likelihood resolves to 0. Interior optima are bracketed by golden-section
    search and then polished by bisection on the score to well below ``tol``.
    """
    llrs = np.asarray(llrs, dtype=float).ravel()
    if not np.all(np.isfinite(llrs)):
        raise InputError("sentence LLRs must be finite")
    n = llrs.size
    if n == 0:
        return MixtureEstimate(0.0, 0.0, 0, False)
    if mixture_score(0.0, llrs) <= 0.0:
        alpha = 0.0
    elif mixture_score(1.0, llrs) >= 0.0:
        alpha = 1.0
    else:
        a, b = _golden_bracket(lambda x: mixture_loglik(x, llrs), 0.0, 1.0, max(tol, 1e-4))
        # concavity keeps the root of the score inside the golden bracket,
        # up to one bracket width on either side
        a, b = max(0.0, a - (b - a)), min(1.0, b + (b - a))
        for _ in range(200):
            if b - a <= 1e-4 * tol:
                break
            mid = 0.5 * (a + b)
            if mixture_score(mid, llrs) > 0.0:
                a = mid
            else:
                b = mid
        alpha = 0.5 * (a + b)
    ll = mixture_loglik(alpha, llrs)
    return MixtureEstimate(alpha, ll, n, alpha > cutoff)


def classify(estimate: MixtureEstimate, cutoff: float = 0.1) -> bool:
    """True iff the fitted share strictly exceeds ``cutoff``."""
    if not 0.0 <= cutoff <= 1.0:
        raise ConfigurationError("cutoff must lie in [0, 1]")
    return estimate.alpha_hat > cutoff


def score_document(text_or_sentences, table: WordLLRTable, cutoff: float = 0.1) -> MixtureEstimate:
    """Estimate and classify one document given raw text or tokenized sentences."""
    if not 0.0 <= cutoff <= 1.0:
        raise ConfigurationError("cutoff must lie in [0, 1]")
    sents = split_sentences(text_or_sentences) if isinstance(text_or_sentences, str) else text_or_sentences
    return estimate_alpha(sentence_llrs(sents, table), cutoff=cutoff)


def _as_distribution(dist: Mapping[str, float]):
    words = sorted(dist)
    probs = np.array([dist[w] for w in words], dtype=float)
    if np.any(probs < 0) or not np.isclose(probs.sum(), 1.0):
        raise ConfigurationError("unigram probabilities must be non-negative and sum to 1")
    return words, probs / probs.sum()


def synth_paired_corpus(dist_human: Mapping[str, float], dist_llm: Mapping[str, float], alpha: float,
                        n_sentences: int, sentence_length: int, rng: np.random.Generator) -> SyntheticDocument:
    """Draw a document whose sentences come from ``dist_llm`` w.p. ``alpha``."""
    if not 0.0 <= alpha <= 1.0:
        raise ConfigurationError("alpha must lie in [0, 1]")
    if set(dist_human) != set(dist_llm):
        raise ConfigurationError("both unigram models must share one vocabulary")
    words, ph = _as_distribution(dist_human)
    _, pl = _as_distribution(dist_llm)
    vocab = np.array(words, dtype=object)
    from_llm = rng.random(n_sentences) < alpha
    draws_h = rng.choice(len(vocab), size=(n_sentences, sentence_length), p=ph)
    draws_l = rng.choice(len(vocab), size=(n_sentences, sentence_length), p=pl)
    idx = np.where(from_llm[:, None], draws_l, draws_h)
    return SyntheticDocument([list(vocab[row]) for row in idx], from_llm)
