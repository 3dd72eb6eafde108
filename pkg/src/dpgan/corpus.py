"""Tokenisation, vocabularies, source/target pairs, batching and synthetic corpora."""

from __future__ import annotations

import json
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ContractViolation, ValidationError

PAD, UNK, BOS, EOS, EOSENT = 0, 1, 2, 3, 4
RESERVED = ("<pad>", "<unk>", "<bos>", "<eos>", "<eos_sent>")
MARKERS = (EOS, EOSENT)

_SENTENCE_END = re.compile(r"(?<=[.!?])(?:\s+|$)")
_TOKEN = re.compile(r"[^\W_]+(?:'[^\W_]+)*|_|[^\w\s]")


def tokenize(text):
    """Lowercased sentences of word/punctuation tokens.

    A sentence ends at ``.``, ``!`` or ``?`` followed by whitespace or the end of
    the text.
    """
    sentences = []
    for chunk in _SENTENCE_END.split(text.lower()):
        tokens = _TOKEN.findall(chunk)
        if tokens:
            sentences.append(tokens)
    return sentences


def detokenize(sentences):
    return " ".join(" ".join(s) for s in sentences)


def is_word(token):
    return bool(re.match(r"[^\W_]", token))


class Vocabulary:
    """Token <-> id table.  Ids 0..4 are always PAD, UNK, BOS, EOS, EOSent."""

    def __init__(self, tokens=()):
        self.id_to_token = list(RESERVED)
        self.token_to_id = {t: i for i, t in enumerate(RESERVED)}
        for tok in tokens:
            if tok in self.token_to_id:
                raise ValidationError(f"duplicate vocabulary token {tok!r}")
            self.token_to_id[tok] = len(self.id_to_token)
            self.id_to_token.append(tok)

    def __len__(self):
        return len(self.id_to_token)

    def __contains__(self, token):
        return token in self.token_to_id

    def __eq__(self, other):
        return isinstance(other, Vocabulary) and self.id_to_token == other.id_to_token

    @property
    def words(self):
        return self.id_to_token[len(RESERVED):]

    def encode(self, tokens):
        return [self.token_to_id.get(t, UNK) for t in tokens]

    def decode(self, ids, strip_markers=True):
        out = []
        for i in ids:
            if strip_markers and i in (PAD, BOS, EOS, EOSENT):
                continue
            out.append(self.id_to_token[i])
        return out

    def save(self, path):
        Path(path).write_text("".join(t + "\n" for t in self.id_to_token), encoding="utf-8")

    @classmethod
    def load(cls, path):
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        if tuple(lines[: len(RESERVED)]) != RESERVED:
            raise ValidationError(f"{path}: vocabulary file must start with the reserved block {RESERVED}")
        return cls(lines[len(RESERVED):])


def build_vocabulary(corpus, max_size=50_000):
    """Keep the ``max_size - 5`` most frequent tokens (``max_size`` counts the
    reserved block); ties go to the token seen first."""
    if max_size < len(RESERVED):
        raise ContractViolation(f"max_size {max_size} is smaller than the {len(RESERVED)} reserved ids")
    counts = Counter()
    for sentence in corpus:
        counts.update(sentence)
    for tok in RESERVED:
        counts.pop(tok, None)
    # Counter keeps first-insertion order and sorted() is stable
    ranked = sorted(counts, key=lambda t: -counts[t])
    return Vocabulary(ranked[: max_size - len(RESERVED)])


@dataclass(frozen=True)
class TextPair:
    source: tuple
    target: tuple
    mode: str | None = None

    def __post_init__(self):
        if not self.source:
            raise ContractViolation("TextPair source is empty")
        if not self.target or any(len(s) == 0 for s in self.target):
            raise ContractViolation("TextPair target has an empty sentence")


@dataclass
class Dataset:
    pairs: list
    split: str = "train"
    vocab: Vocabulary | None = None

    def __len__(self):
        return len(self.pairs)

    def __iter__(self):
        return iter(self.pairs)

    def __getitem__(self, i):
        return self.pairs[i]

    def subset(self, indices, split=None):
        return Dataset([self.pairs[i] for i in indices], split or self.split, self.vocab)

    def sources(self):
        return [p.source for p in self.pairs]

    def targets(self):
        return [p.target for p in self.pairs]


def split_review(sentences):
    """First sentence is the source, the rest the target; ``None`` if fewer than two."""
    sentences = [s for s in sentences if s]
    if len(sentences) < 2:
        return None
    return sentences[0], sentences[1:]


def split_dialogue(context_sentences, response_sentences, min_response_words=5):
    """Last two context sentences form the source; the response is a one-sentence target."""
    context = [s for s in context_sentences if s]
    response = [t for s in response_sentences for t in s]
    if not context or not response:
        return None
    if min_response_words and sum(map(is_word, response)) < min_response_words:
        return None
    source = [t for s in context[-2:] for t in s]
    return source, [response]


def encode_pair(vocab, source_tokens, target_sentences, mode=None):
    return TextPair(tuple(vocab.encode(source_tokens)),
                    tuple(tuple(vocab.encode(s)) for s in target_sentences), mode)


def split_dataset(pairs, ratios=(0.8, 0.1, 0.1), seed=0, vocab=None):
    """Shuffle under ``seed`` and cut into train/valid/test by ``ratios``."""
    if len(ratios) != 3 or min(ratios) < 0 or sum(ratios) <= 0:
        raise ValidationError(f"split ratios must be three non-negative numbers, got {ratios}")
    n = len(pairs)
    order = np.random.default_rng(seed).permutation(n)
    total = float(sum(ratios))
    n_train = int(round(n * ratios[0] / total))
    n_valid = min(n - n_train, int(round(n * ratios[1] / total)))
    cuts = {"train": order[:n_train], "valid": order[n_train:n_train + n_valid],
            "test": order[n_train + n_valid:]}
    return {name: Dataset([pairs[i] for i in sorted(idx)], name, vocab) for name, idx in cuts.items()}


# ---------------------------------------------------------------------------
# dataset files

def save_pairs(path, dataset):
    vocab = dataset.vocab
    with open(path, "w", encoding="utf-8") as fh:
        for p in dataset.pairs:
            rec = {"source": " ".join(vocab.decode(p.source, strip_markers=False)),
                   "target": [" ".join(vocab.decode(s, strip_markers=False)) for s in p.target]}
            if p.mode is not None:
                rec["mode"] = p.mode
            fh.write(json.dumps(rec, sort_keys=True, ensure_ascii=False) + "\n")


def load_pairs(path, vocab, split=None):
    pairs = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                pairs.append(encode_pair(vocab, rec["source"].split(),
                                         [s.split() for s in rec["target"]], rec.get("mode")))
            except (ValueError, KeyError, TypeError, AttributeError) as exc:
                raise ValidationError(f"{path}:{lineno}: malformed pair record ({exc})") from None
    return Dataset(pairs, split or Path(path).stem, vocab)


# ---------------------------------------------------------------------------
# batching

@dataclass
class Batch:
    src: np.ndarray        # (B, m) int
    src_mask: np.ndarray   # (B, m) float
    tgt: np.ndarray        # (B, T, K) int, markers included
    tgt_mask: np.ndarray   # (B, T, K) float
    index: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    def __len__(self):
        return self.src.shape[0]

    @property
    def n_tokens(self):
        return int(self.tgt_mask.sum())

    def texts(self):
        return array_to_texts(self.tgt, self.tgt_mask)


def with_markers(sentences, max_sentences=None, max_words=None):
    """Append EOSent to each sentence and EOS to the last, truncating to the limits.

    ``max_words`` counts the marker, so at most ``max_words - 1`` content words survive.
    """
    sentences = list(sentences)[:max_sentences] if max_sentences else list(sentences)
    out = []
    for i, s in enumerate(sentences):
        words = list(s)[: max_words - 1] if max_words else list(s)
        out.append(words + [EOS if i == len(sentences) - 1 else EOSENT])
    return out


def pad_sources(sources):
    m = max(len(s) for s in sources)
    src = np.full((len(sources), m), PAD, dtype=np.int64)
    mask = np.zeros((len(sources), m))
    for i, s in enumerate(sources):
        if not len(s):
            raise ContractViolation("empty source sequence")
        src[i, : len(s)] = s
        mask[i, : len(s)] = 1.0
    return src, mask


def texts_to_array(texts, n_sentences=None, n_words=None):
    """Pad texts (lists of id sentences) to ``(B, T, K)`` ids plus mask."""
    T = max([len(t) for t in texts] + [1]) if n_sentences is None else n_sentences
    K = max([len(s) for t in texts for s in t] + [1]) if n_words is None else n_words
    arr = np.full((len(texts), T, K), PAD, dtype=np.int64)
    mask = np.zeros((len(texts), T, K))
    for b, text in enumerate(texts):
        for t, sent in enumerate(text):
            arr[b, t, : len(sent)] = sent
            mask[b, t, : len(sent)] = 1.0
    return arr, mask


def array_to_texts(arr, mask):
    texts = []
    for b in range(arr.shape[0]):
        text = []
        for t in range(arr.shape[1]):
            n = int(mask[b, t].sum())
            if n:
                text.append([int(x) for x in arr[b, t, :n]])
        texts.append(text)
    return texts


def make_batch(pairs, max_sentences=None, max_words=None, index=None):
    src, src_mask = pad_sources([p.source for p in pairs])
    texts = [with_markers(p.target, max_sentences, max_words) for p in pairs]
    tgt, tgt_mask = texts_to_array(texts)
    idx = np.arange(len(pairs)) if index is None else np.asarray(index)
    return Batch(src, src_mask, tgt, tgt_mask, idx)


def batch_iter(dataset, batch_size, seed=None, shuffle=True, max_sentences=None, max_words=None):
    """One epoch of padded batches; the order is a permutation drawn from ``seed``."""
    if len(dataset) == 0:
        raise ContractViolation("batch_iter over an empty dataset")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    order = rng.permutation(len(dataset)) if shuffle else np.arange(len(dataset))
    for start in range(0, len(order), batch_size):
        idx = order[start:start + batch_size]
        yield make_batch([dataset[i] for i in idx], max_sentences, max_words, idx)


# ---------------------------------------------------------------------------
# synthetic corpora

@dataclass
class ModeSpec:
    """A first-order Markov chain that writes sentences.

    Each sentence starts from ``initial`` and follows ``transitions`` until a
    token in ``terminals`` is emitted or ``max_len`` tokens are produced.  With
    ``continued`` set, every sentence after the first in a pair instead starts
    from the successors of the previous sentence's last word (terminals
    excluded), so targets depend on their source.
    """
    name: str
    tokens: list
    initial: np.ndarray
    transitions: np.ndarray
    terminals: tuple = (".",)
    weight: float = 1.0
    n_target_sentences: tuple = (2, 2)
    max_len: int = 12
    continued: bool = False

    def validate(self):
        n = len(self.tokens)
        init = np.asarray(self.initial, dtype=float)
        trans = np.asarray(self.transitions, dtype=float)
        if init.shape != (n,) or trans.shape != (n, n):
            raise ValidationError(f"mode {self.name!r}: chain shapes do not match {n} tokens")
        if (init < 0).any() or abs(init.sum() - 1.0) > 1e-9:
            raise ValidationError(f"mode {self.name!r}: initial distribution must sum to 1")
        bad = np.flatnonzero((np.abs(trans.sum(axis=1) - 1.0) > 1e-9) | (trans < 0).any(axis=1))
        if bad.size:
            raise ValidationError(f"mode {self.name!r}: transition rows {bad.tolist()} are not distributions")
        if self.weight <= 0:
            raise ValidationError(f"mode {self.name!r}: weight must be positive")
        if not any(t in self.tokens for t in self.terminals):
            raise ValidationError(f"mode {self.name!r}: no terminal token in the chain")

    def sample_sentence(self, rng, after=None):
        init = np.asarray(self.initial, dtype=float)
        trans = np.asarray(self.transitions, dtype=float)
        if after is not None and self.continued:
            row = trans[self.tokens.index(after)].copy()
            row[[i for i, t in enumerate(self.tokens) if t in self.terminals]] = 0.0
            init = row / row.sum() if row.sum() > 0 else init
        state = _draw(rng, init)
        out = [self.tokens[state]]
        while self.tokens[state] not in self.terminals and len(out) < self.max_len:
            state = _draw(rng, trans[state])
            out.append(self.tokens[state])
        return out


def _last_word(sentence, terminals):
    words = [t for t in sentence if t not in terminals]
    return words[-1] if words else None


def _draw(rng, p):
    # inverse-CDF draw; deterministic (no sampling) for one-hot rows
    return int(min(np.searchsorted(np.cumsum(p), rng.random(), side="right"), len(p) - 1))


def synth_corpus(modes, n_pairs, seed=0, split="train"):
    """Source/target pairs sampled from a weighted mixture of Markov chains."""
    modes = list(modes)
    if not modes:
        raise ValidationError("synth_corpus needs at least one mode")
    for m in modes:
        m.validate()
    vocab_tokens = []
    for m in modes:
        for t in m.tokens:
            if t not in vocab_tokens:
                vocab_tokens.append(t)
    vocab = Vocabulary(vocab_tokens)
    rng = np.random.default_rng(seed)
    weights = np.array([m.weight for m in modes], dtype=float)
    weights /= weights.sum()
    pairs = []
    for _ in range(n_pairs):
        mode = modes[_draw(rng, weights)]
        lo, hi = mode.n_target_sentences
        n_tgt = int(rng.integers(lo, hi + 1))
        source = mode.sample_sentence(rng)
        target, prev = [], source
        for _ in range(n_tgt):
            prev = mode.sample_sentence(rng, after=_last_word(prev, mode.terminals))
            target.append(prev)
        pairs.append(encode_pair(vocab, source, target, mode.name))
    return Dataset(pairs, split, vocab)


def random_chain_mode(name, words, rng, terminal=".", branching=4, stop_prob=0.15,
                      weight=1.0, n_target_sentences=(2, 2), max_len=12, continued=False,
                      n_hubs=0, hub_mass=0.0):
    """A sparse random chain over ``words``: each word has ``branching`` successors
    and ends the sentence with probability ``stop_prob``.

    With ``n_hubs > 0`` the first ``n_hubs`` words are generic successors shared
    by every word, jointly taking ``hub_mass`` of each row.  Such chains have a
    few dominant bigrams and a long tail of rare ones.
    """
    if not 0.0 <= hub_mass < 1.0 - stop_prob or (hub_mass > 0) != (n_hubs > 0):
        raise ValidationError(f"invalid hub settings n_hubs={n_hubs} hub_mass={hub_mass}")
    tokens = list(words) + [terminal]
    n = len(tokens)
    trans = np.zeros((n, n))
    hub_w = rng.dirichlet(np.ones(n_hubs)) if n_hubs else np.zeros(0)
    for i in range(n):
        pool = np.arange(n_hubs, n - 1)
        succ = rng.choice(pool, size=min(branching, len(pool)), replace=False)
        trans[i, succ] = (1.0 - stop_prob - hub_mass) * rng.dirichlet(np.ones(len(succ)))
        trans[i, :n_hubs] += hub_mass * hub_w
        trans[i, n - 1] += stop_prob
    initial = np.zeros(n)
    starts = rng.choice(n - 1, size=min(branching, n - 1), replace=False)
    initial[starts] = rng.dirichlet(np.ones(len(starts)))
    return ModeSpec(name, tokens, initial, trans, (terminal,), weight, n_target_sentences,
                    max_len, continued)


# ---------------------------------------------------------------------------
# raw corpus files

@dataclass
class ReadReport:
    n_lines: int = 0
    n_pairs: int = 0
    skipped: list = field(default_factory=list)   # (line number, reason)


def read_raw_corpus(path, mode="review", min_response_words=None):
    """Token-level pairs from a raw text file plus a report of skipped lines.

    Review mode: one document per line.  Dialogue mode: ``context<TAB>response``.
    """
    if mode not in ("review", "dialogue"):
        raise ValidationError(f"unknown corpus mode {mode!r}")
    if min_response_words is None:
        min_response_words = 5 if mode == "dialogue" else 0
    report = ReadReport()
    pairs = []
    with open(path, "rb") as fh:
        for lineno, raw in enumerate(fh, 1):
            report.n_lines += 1
            try:
                line = raw.decode("utf-8").rstrip("\r\n")
            except UnicodeDecodeError as exc:
                raise ValidationError(f"{path}:{lineno}: not valid UTF-8 ({exc.reason})") from None
            if not line.strip():
                report.skipped.append((lineno, "blank"))
                continue
            if mode == "review":
                result = split_review(tokenize(line))
                reason = "fewer than two sentences"
                if result is not None and min_response_words and \
                        sum(is_word(t) for s in result[1] for t in s) < min_response_words:
                    result, reason = None, "target too short"
            else:
                if line.count("\t") != 1:
                    raise ValidationError(
                        f"{path}:{lineno}: expected exactly one tab between context and response")
                context, response = line.split("\t")
                result = split_dialogue(tokenize(context), tokenize(response), min_response_words)
                reason = "response too short or empty context"
            if result is None:
                report.skipped.append((lineno, reason))
                continue
            pairs.append(result)
    report.n_pairs = len(pairs)
    return pairs, report
