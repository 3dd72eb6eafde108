from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dpgan.corpus import (BOS, EOS, EOSENT, PAD, RESERVED, UNK, Dataset, ModeSpec, TextPair,
                          Vocabulary, batch_iter, build_vocabulary, detokenize, encode_pair,
                          load_pairs, make_batch, random_chain_mode, read_raw_corpus, save_pairs,
                          split_dataset, split_dialogue, split_review, synth_corpus, tokenize,
                          with_markers)
from dpgan.errors import ContractViolation, ValidationError


def test_tokenize_example():
    assert tokenize("Food is good. Love it!") == [["food", "is", "good", "."], ["love", "it", "!"]]


def test_tokenize_empty():
    assert tokenize("") == []


def test_tokenize_keeps_inner_punctuation_in_sentence():
    assert tokenize("3.5 stars? yes") == [["3", ".", "5", "stars", "?"], ["yes"]]


@settings(max_examples=100, deadline=None)
@given(st.text(alphabet="abc XY.!?,'", max_size=60))
def test_detokenize_round_trip_preserves_token_multiset(text):
    sents = tokenize(text)
    again = tokenize(detokenize(sents))
    assert Counter(t for s in again for t in s) == Counter(t for s in sents for t in s)


def test_split_review():
    assert split_review([["a", "."], ["b", "."], ["c", "."]]) == (["a", "."], [["b", "."], ["c", "."]])
    assert split_review([["a", "."]]) is None


def test_split_dialogue_uses_two_previous_sentences_and_filters_short():
    ctx = [["hi", "."], ["how", "are", "you", "?"], ["fine", "."]]
    long_resp = [["i", "am", "doing", "very", "well", "today", "."]]
    src, tgt = split_dialogue(ctx, long_resp, 5)
    assert src == ["how", "are", "you", "?", "fine", "."]
    assert tgt == [long_resp[0]]
    assert split_dialogue(ctx, [["ok", "then", "."]], 5) is None


def test_vocabulary_reserved_block():
    v = Vocabulary(["x"])
    assert v.id_to_token[:5] == list(RESERVED)
    assert (PAD, UNK, BOS, EOS, EOSENT) == (0, 1, 2, 3, 4)
    assert len({PAD, UNK, BOS, EOS, EOSENT}) == 5


def test_build_vocabulary_frequency_and_unk():
    v = build_vocabulary([["a", "a", "b"]], max_size=len(RESERVED) + 1)
    assert v.words == ["a"]
    assert v.encode(["a", "b"]) == [5, UNK]


def test_build_vocabulary_no_unk_when_large_enough():
    v = build_vocabulary([["p", "q", "r"]], max_size=100)
    assert UNK not in v.encode(["p", "q", "r"])


def test_build_vocabulary_too_small():
    with pytest.raises(ContractViolation):
        build_vocabulary([["a"]], max_size=4)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.lists(st.sampled_from(list("abcdefgh")), max_size=8), max_size=10),
       st.integers(5, 12))
def test_build_vocabulary_matches_recount(corpus, max_size):
    v = build_vocabulary(corpus, max_size)
    # independent recount: frequency descending, first occurrence ascending
    first, counts = {}, {}
    for s in corpus:
        for t in s:
            first.setdefault(t, len(first))
            counts[t] = counts.get(t, 0) + 1
    ranked = sorted(counts, key=lambda t: (-counts[t], first[t]))
    assert v.words == ranked[: max_size - 5]
    assert len(v) <= max_size


def test_vocabulary_save_load_bijection(tmp_path):
    v = Vocabulary(["b", "a", "c"])
    v.save(tmp_path / "v.txt")
    lines = (tmp_path / "v.txt").read_text().splitlines()
    assert lines == list(RESERVED) + ["b", "a", "c"]
    w = Vocabulary.load(tmp_path / "v.txt")
    assert w == v
    assert all(w.token_to_id[w.id_to_token[i]] == i for i in range(len(w)))


def test_text_pair_rejects_empty():
    with pytest.raises(ContractViolation):
        TextPair((), ((5,),))
    with pytest.raises(ContractViolation):
        TextPair((5,), ((5,), ()))


def two_modes(weights=(0.5, 0.5)):
    rng = np.random.default_rng(0)
    return [random_chain_mode("a", ["a1", "a2", "a3"], rng, weight=weights[0]),
            random_chain_mode("b", ["b1", "b2", "b3"], rng, weight=weights[1])]


def test_synth_corpus_deterministic():
    a, b = synth_corpus(two_modes(), 50, seed=3), synth_corpus(two_modes(), 50, seed=3)
    assert a.pairs == b.pairs
    assert a.vocab == b.vocab


def test_synth_corpus_mode_counts_binomial():
    ds = synth_corpus(two_modes(), 10_000, seed=1)
    n_a = sum(p.mode == "a" for p in ds)
    sigma = np.sqrt(10_000 * 0.25)
    assert abs(n_a - 5000) < 3 * sigma


def test_synth_corpus_deterministic_chain():
    tokens = ["x", "y", "."]
    trans = np.array([[0, 1, 0], [0, 0, 1], [0, 0, 1.0]])
    mode = ModeSpec("d", tokens, np.array([1.0, 0, 0]), trans, n_target_sentences=(2, 2))
    ds = synth_corpus([mode], 20, seed=5)
    assert len({p.target for p in ds}) == 1


def test_synth_corpus_invalid_rows():
    tokens = ["x", "."]
    mode = ModeSpec("bad", tokens, np.array([1.0, 0]), np.array([[0.5, 0.4], [0, 1.0]]))
    with pytest.raises(ValidationError, match="rows"):
        synth_corpus([mode], 3)


def test_synth_ids_within_vocab():
    ds = synth_corpus(two_modes(), 200, seed=0)
    top = max(max(p.source) for p in ds)
    top = max(top, max(t for p in ds for s in p.target for t in s))
    assert top < len(ds.vocab)
    assert min(t for p in ds for s in p.target for t in s) >= len(RESERVED)


def test_continued_mode_targets_start_from_successor():
    rng = np.random.default_rng(0)
    mode = random_chain_mode("c", [f"w{i}" for i in range(10)], rng, continued=True,
                             n_target_sentences=(1, 1))
    ds = synth_corpus([mode], 200, seed=0)
    trans = np.asarray(mode.transitions)
    for p in ds:
        words = [ds.vocab.id_to_token[i] for i in p.source if ds.vocab.id_to_token[i] != "."]
        first = ds.vocab.id_to_token[p.target[0][0]]
        assert trans[mode.tokens.index(words[-1]), mode.tokens.index(first)] > 0


def test_hub_chain_rows_are_distributions():
    mode = random_chain_mode("h", [f"w{i}" for i in range(20)], np.random.default_rng(1),
                             n_hubs=2, hub_mass=0.4)
    mode.validate()
    assert np.allclose(np.asarray(mode.transitions)[:, :2].sum(axis=1), 0.4)


def test_batch_sizes_and_masks():
    ds = synth_corpus(two_modes(), 10, seed=0)
    batches = list(batch_iter(ds, 4, seed=0))
    assert [len(b) for b in batches] == [4, 4, 2]
    for b in batches:
        want = sum(len(s) + 1 for i in b.index for s in ds[i].target)
        assert b.n_tokens == want
        assert b.src_mask.sum() == sum(len(ds[i].source) for i in b.index)
        assert (b.tgt[b.tgt_mask == 0] == PAD).all()


def test_batch_order_reproducible():
    ds = synth_corpus(two_modes(), 30, seed=0)
    a = [b.index.tolist() for b in batch_iter(ds, 7, seed=9)]
    b = [b.index.tolist() for b in batch_iter(ds, 7, seed=9)]
    assert a == b
    assert sorted(sum(a, [])) == list(range(30))


def test_with_markers_truncates():
    out = with_markers([[5, 6, 7], [8], [9]], max_sentences=2, max_words=3)
    assert out == [[5, 6, EOSENT], [8, EOS]]


def test_padding_invariance_of_batch_content():
    pairs = [TextPair((5, 6), ((7, 8),)), TextPair((5,), ((6,), (7, 8, 9)))]
    b1 = make_batch(pairs[:1])
    b2 = make_batch(pairs)
    assert b2.texts()[0] == b1.texts()[0]


def test_split_dataset_disjoint_and_reproducible():
    pairs = list(range(100))
    a = split_dataset(pairs, (0.8, 0.1, 0.1), seed=4)
    b = split_dataset(pairs, (0.8, 0.1, 0.1), seed=4)
    assert [len(a[k]) for k in ("train", "valid", "test")] == [80, 10, 10]
    assert all(a[k].pairs == b[k].pairs for k in a)
    seen = [x for k in a for x in a[k]]
    assert sorted(seen) == pairs


def test_save_load_pairs(tmp_path):
    ds = synth_corpus(two_modes(), 20, seed=0)
    save_pairs(tmp_path / "p.jsonl", ds)
    back = load_pairs(tmp_path / "p.jsonl", ds.vocab)
    assert back.pairs == ds.pairs


def test_read_raw_corpus_review(tmp_path):
    f = tmp_path / "r.txt"
    f.write_text("Great food. Love it!\nOne sentence only.\n\nA. B. C.\n", encoding="utf-8")
    pairs, report = read_raw_corpus(f, "review")
    assert len(pairs) == 2
    assert report.skipped == [(2, "fewer than two sentences"), (3, "blank")]


def test_read_raw_corpus_errors_name_line(tmp_path):
    f = tmp_path / "bad.txt"
    f.write_bytes(b"fine. ok.\n\xff\xfe broken\n")
    with pytest.raises(ValidationError, match=":2:"):
        read_raw_corpus(f, "review")
    g = tmp_path / "d.txt"
    g.write_text("no tab here\n", encoding="utf-8")
    with pytest.raises(ValidationError, match=":1:"):
        read_raw_corpus(g, "dialogue")


def test_encode_pair_unknown_words():
    v = Vocabulary(["a"])
    p = encode_pair(v, ["a", "z"], [["z"]])
    assert p.source == (5, UNK) and p.target == ((UNK,),)
