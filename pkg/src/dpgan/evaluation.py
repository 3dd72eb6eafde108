"""Diversity counts, smoothed BLEU, rank-binned frequency cosine and reward histograms."""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .discriminators import batch_word_rewards, classifier_scores
from .errors import ContractViolation


def _tokens(sentence):
    return tuple(sentence.split()) if isinstance(sentence, str) else tuple(sentence)


def ngrams(tokens, n):
    return [tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1)]


@dataclass(frozen=True)
class DiversityReport:
    token_count: int = 0
    distinct_unigrams: int = 0
    distinct_bigrams: int = 0
    distinct_trigrams: int = 0
    distinct_sentences: int = 0

    def as_row(self):
        return {"Token": self.token_count, "Dist-1": self.distinct_unigrams,
                "Dist-2": self.distinct_bigrams, "Dist-3": self.distinct_trigrams,
                "Dist-S": self.distinct_sentences}


def diversity_report(sentences):
    """Token count and pooled distinct 1/2/3-gram and sentence counts.

    ``sentences`` is an iterable of token sequences (or whitespace-joined
    strings).  N-grams do not cross sentence boundaries.
    """
    seen = [set(), set(), set()]
    whole = set()
    total = 0
    for s in sentences:
        toks = _tokens(s)
        total += len(toks)
        whole.add(toks)
        for n in (1, 2, 3):
            seen[n - 1].update(ngrams(toks, n))
    whole.discard(())
    return DiversityReport(total, len(seen[0]), len(seen[1]), len(seen[2]), len(whole))


def bleu(candidate, references, max_n=4, smoothing_eps=1e-9):
    """Sentence BLEU with uniform weights; zero n-gram matches count as ``smoothing_eps``."""
    if max_n < 1:
        raise ContractViolation("max_n must be >= 1")
    cand = _tokens(candidate)
    refs = [_tokens(r) for r in references]
    if not cand:
        return 0.0
    if not refs:
        raise ContractViolation("bleu needs at least one reference")
    log_p = 0.0
    for n in range(1, max_n + 1):
        counts = Counter(ngrams(cand, n))
        total = sum(counts.values())
        max_ref = Counter()
        for r in refs:
            for g, c in Counter(ngrams(r, n)).items():
                max_ref[g] = max(max_ref[g], c)
        clipped = sum(min(c, max_ref[g]) for g, c in counts.items())
        p = clipped / total if clipped > 0 else smoothing_eps
        log_p += math.log(p) / max_n
    c = len(cand)
    r = min((len(x) for x in refs), key=lambda L: (abs(L - c), L))
    bp = 1.0 if c > r else math.exp(1.0 - r / c)
    return min(1.0, bp * math.exp(log_p))


# ---------------------------------------------------------------------------
# frequency profile

DEFAULT_BINS = ((1, 500), (501, 1000), (1001, 1500), (1501, 2000))


@dataclass
class FrequencyProfile:
    ranked_words: list
    reference_counts: np.ndarray
    generated_counts: np.ndarray
    bins: tuple
    cosines: np.ndarray
    bin_sizes: list = field(default_factory=list)


def _cosine(a, b):
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(np.clip(a @ b / (na * nb), 0.0, 1.0))


def frequency_cosine(reference_corpus, generated_corpus, bins=DEFAULT_BINS):
    """Cosine between reference and generated word-frequency vectors in rank bins.

    Words are ranked by frequency in the reference only (ties by first
    occurrence); ``bins`` are inclusive 1-based rank ranges.
    """
    ref = Counter()
    for s in reference_corpus:
        ref.update(_tokens(s))
    if not ref:
        raise ContractViolation("frequency_cosine: empty reference corpus")
    bins = tuple(tuple(b) for b in bins)
    prev = 0
    for lo, hi in bins:
        if lo <= prev or hi < lo:
            raise ContractViolation(f"rank bins must be ordered and disjoint, got {bins}")
        prev = hi
    generated = Counter()
    for s in generated_corpus:
        generated.update(_tokens(s))
    ranked = sorted(ref, key=lambda w: -ref[w])
    r = np.array([ref[w] for w in ranked], dtype=float)
    g = np.array([generated.get(w, 0) for w in ranked], dtype=float)
    cos, sizes = [], []
    for lo, hi in bins:
        sl = slice(lo - 1, min(hi, len(ranked)))
        sizes.append(max(0, sl.stop - sl.start))
        cos.append(_cosine(r[sl], g[sl]))
    return FrequencyProfile(ranked, r, g, bins, np.array(cos), sizes)


# ---------------------------------------------------------------------------
# reward distributions

@dataclass
class Histogram:
    counts: np.ndarray
    edges: np.ndarray
    mean: float
    std: float
    cv: float


@dataclass
class RewardHistogramReport:
    values: dict          # (discriminator, source) -> per-sample values
    histograms: dict      # (discriminator, source) -> Histogram
    n_bins: int

    def rows(self):
        """Flat rows ``(discriminator, source, bin, low, high, count)``."""
        out = []
        for (disc, src), h in self.histograms.items():
            for i, c in enumerate(h.counts):
                out.append((disc, src, i, float(h.edges[i]), float(h.edges[i + 1]), int(c)))
        return out

    def summary_rows(self):
        return [(disc, src, len(self.values[(disc, src)]), h.mean, h.std, h.cv)
                for (disc, src), h in self.histograms.items()]


def _stats(values):
    m = float(np.mean(values))
    s = float(np.std(values))
    return m, s, (s / abs(m) if m != 0 else float("inf") if s > 0 else 0.0)


def reward_histograms(values_by_cell, n_bins=50):
    """Histograms sharing one fixed-width range per discriminator."""
    hists = {}
    for disc in dict.fromkeys(d for d, _ in values_by_cell):
        cells = {k: np.asarray(v, dtype=float) for k, v in values_by_cell.items() if k[0] == disc}
        pooled = np.concatenate(list(cells.values()))
        lo, hi = float(pooled.min()), float(pooled.max())
        for key, vals in cells.items():
            counts, edges = np.histogram(vals, bins=n_bins, range=(lo, hi) if hi > lo else None)
            hists[key] = Histogram(counts, edges, *_stats(vals))
    return RewardHistogramReport(dict(values_by_cell), hists, n_bins)


def reward_histogram(real_samples, gen_samples, lm_d, classifier_d, n_bins=50):
    """Sentence-level LM reward and classifier score for real and generated sentences."""
    if not real_samples or not gen_samples:
        raise ContractViolation("reward_histogram: need real and generated samples")
    values = {}
    for name, samples in (("real", real_samples), ("generated", gen_samples)):
        values[("lm", name)] = np.array([r.mean() for r in batch_word_rewards(lm_d, samples)])
        values[("classifier", name)] = classifier_scores(classifier_d, samples)
    return reward_histograms(values, n_bins)
