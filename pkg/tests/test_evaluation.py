import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dpgan.discriminators import ClassifierDiscriminator, LMDiscriminator
from dpgan.errors import ContractViolation
from dpgan.evaluation import (DiversityReport, bleu, diversity_report, frequency_cosine,
                              reward_histogram, reward_histograms)

from oracles import bleu_oracle, recount


def test_hand_examples():
    assert diversity_report(["the cat", "the cat"]) == DiversityReport(4, 2, 1, 0, 1)
    r = diversity_report(["a b c"])
    assert (r.distinct_bigrams, r.distinct_trigrams) == (2, 1)


def test_empty_corpus_all_zero():
    assert diversity_report([]) == DiversityReport()
    assert diversity_report([[]]) == DiversityReport()


def test_ngrams_do_not_cross_sentences():
    r = diversity_report([["a"], ["b"]])
    assert r.distinct_bigrams == 0


@settings(max_examples=60, deadline=None)
@given(st.lists(st.lists(st.sampled_from("abcdef"), max_size=7), max_size=30))
def test_diversity_matches_recount(corpus):
    r = diversity_report(corpus)
    assert (r.token_count, r.distinct_unigrams, r.distinct_bigrams, r.distinct_trigrams,
            r.distinct_sentences) == recount(corpus)


def test_duplicating_corpus_doubles_tokens_only():
    rng = np.random.default_rng(0)
    corpus = [list(rng.choice(list("abcd"), size=rng.integers(1, 6))) for _ in range(40)]
    a, b = diversity_report(corpus), diversity_report(corpus + corpus)
    assert b.token_count == 2 * a.token_count
    assert b.as_row() | {"Token": 0} == a.as_row() | {"Token": 0}


# --- BLEU ---------------------------------------------------------------------

def test_bleu_identity_and_floor():
    ref = "the cat sat on the mat".split()
    assert bleu(ref, [ref]) == pytest.approx(1.0, abs=1e-12)
    assert bleu("x y z w q r".split(), [ref]) == pytest.approx(1e-9, rel=1e-9)
    assert bleu([], [ref]) == 0.0


def test_bleu_two_sentence_hand_case():
    cand = "the cat the cat".split()
    refs = ["the cat sat".split(), "a cat the dog".split()]
    # p1: the 2 (max ref count 1 -> 1), cat 2 (-> 1): 2/4; p2: "the cat" x2 (max 1), "cat the" x1 (1): 2/3
    # p3: "the cat the" 0, "cat the cat" 0 -> eps; p4: 0 -> eps.  c = 4, closest ref length 4 -> bp 1
    eps = 1e-9
    want = math.exp((math.log(0.5) + math.log(2 / 3) + 2 * math.log(eps)) / 4)
    assert bleu(cand, refs) == pytest.approx(want, rel=1e-9)
    assert bleu(cand, refs) == pytest.approx(bleu_oracle(cand, refs), rel=1e-9)


def test_bleu_brevity_penalty():
    ref = "a b c d e f".split()
    cand = "a b c".split()
    assert bleu(cand, [ref], max_n=1) == pytest.approx(math.exp(1 - 6 / 3), rel=1e-12)


@settings(max_examples=80, deadline=None)
@given(st.lists(st.sampled_from("abcd"), max_size=8),
       st.lists(st.lists(st.sampled_from("abcde"), min_size=1, max_size=8), min_size=1, max_size=3))
def test_bleu_matches_oracle(cand, refs):
    assert abs(bleu(cand, refs) - bleu_oracle(cand, refs)) < 1e-9


def test_bleu_requires_reference():
    with pytest.raises(ContractViolation):
        bleu(["a"], [])


# --- frequency cosine ---------------------------------------------------------------

def test_frequency_cosine_hand_case():
    ref = ["a a a b b c"]
    gen = ["a b b c c c"]
    prof = frequency_cosine(ref, gen, bins=((1, 2), (3, 3)))
    assert prof.ranked_words == ["a", "b", "c"]
    assert prof.cosines[0] == pytest.approx(7 / math.sqrt(65), abs=1e-12)
    assert prof.cosines[1] == pytest.approx(1.0, abs=1e-12)


def test_frequency_self_similarity_and_disjoint_bin():
    ref = ["a a a b b c d"]
    prof = frequency_cosine(ref, ref, bins=((1, 2), (3, 4)))
    np.testing.assert_allclose(prof.cosines, 1.0)
    prof = frequency_cosine(ref, ["a b"], bins=((1, 2), (3, 4)))
    assert prof.cosines[1] == 0.0


def test_frequency_empty_reference_rejected():
    with pytest.raises(ContractViolation):
        frequency_cosine([], ["a"])


def test_frequency_bins_beyond_vocabulary():
    prof = frequency_cosine(["a b"], ["a"], bins=((1, 500), (501, 1000)))
    assert prof.bin_sizes == [2, 0]
    assert prof.cosines[1] == 0.0


# --- reward histograms ----------------------------------------------------------------

def test_identical_scores_single_bin():
    rep = reward_histograms({("classifier", "real"): [0.7] * 10}, n_bins=5)
    h = rep.histograms[("classifier", "real")]
    assert (h.counts > 0).sum() == 1 and h.std == 0.0


def test_untrained_classifier_centred_at_half():
    V = 10
    c = ClassifierDiscriminator(V, 3, 4)
    c.params["head.W"].data[:] = 0.0
    c.params["head.b"].data[:] = 0.0
    real, gen = [[5, 6], [7, 8, 9]], [[9], [6, 6, 6]]
    rep = reward_histogram(real, gen, LMDiscriminator(V, 3, 4), c, n_bins=10)
    for src in ("real", "generated"):
        assert rep.histograms[("classifier", src)].mean == 0.5
    assert len(rep.rows()) == 4 * 10
    assert len(rep.summary_rows()) == 4
