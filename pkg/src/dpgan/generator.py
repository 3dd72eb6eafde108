"""Sequence-to-sequence generator with a two-level (sentence, word) LSTM decoder.

The encoder LSTM reads the source.  A sentence-level LSTM, started from the
encoder's final state, produces one representation per output sentence from the
word decoder's last hidden state of the previous sentence.  The word-level LSTM
starts each sentence from that representation and attends bilinearly over the
encoder states when predicting every word.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import numerics as nx
from .corpus import BOS, EOS, EOSENT, PAD, pad_sources, texts_to_array
from .errors import ContractViolation
from .layers import Model, lstm_shapes, lstm_step, run_lstm

_NEG = -1e30
_BANNED = (PAD, BOS)


class GeneratorModel(Model):
    kind = "generator"

    def __init__(self, vocab_size, embedding_dim=32, hidden_dim=64, seed=0, init_scale=0.08):
        dims = {"vocab": int(vocab_size), "embedding": int(embedding_dim), "hidden": int(hidden_dim)}
        self.dims = dims
        super().__init__(self._init(np.random.default_rng(seed), init_scale), dims)

    def _expected_shapes(self):
        V, E, H = self.dims["vocab"], self.dims["embedding"], self.dims["hidden"]
        shapes = {"embed": (V, E)}
        shapes.update(lstm_shapes("encoder", E, H))
        shapes.update(lstm_shapes("sentence", H, H))
        shapes.update(lstm_shapes("word", E, H))
        shapes.update({"attn.W": (H, H), "combine.W": (2 * H, H), "combine.b": (H,),
                       "out.W": (H, V), "out.b": (V,)})
        return shapes


@dataclass(frozen=True)
class GenerationConfig:
    max_sentences: int = 3
    max_words: int = 12
    mode: str = "greedy"
    temperature: float = 1.0
    seed: int | None = None

    def __post_init__(self):
        if self.max_sentences < 0:
            raise ContractViolation("max_sentences must be >= 0")
        if self.max_words < 1:
            raise ContractViolation("max_words must be >= 1")
        if self.temperature <= 0:
            raise ContractViolation("temperature must be positive")
        if self.mode not in ("greedy", "sample"):
            raise ContractViolation(f"unknown generation mode {self.mode!r}")


@dataclass
class Encoded:
    states: nx.Tensor     # (B, m, H)
    proj: nx.Tensor       # (B, m, H) = states @ attn.W
    bias: np.ndarray      # (B, 1, m): 0 on real tokens, -1e30 on padding
    final: tuple          # (h, c) after the last real source token

    def take(self, rows):
        return Encoded(nx.Tensor(self.states.data[rows]), nx.Tensor(self.proj.data[rows]),
                       self.bias[rows], tuple(nx.Tensor(t.data[rows]) for t in self.final))


@dataclass
class DecoderState:
    """Recurrent state between decoding steps (no-graph use only)."""
    enc: Encoded
    sent: tuple            # sentence-level (h, c)
    word: tuple | None     # word-level (h, c) inside the current sentence
    last_word_h: nx.Tensor  # word decoder's final hidden state of the previous sentence

    def take(self, rows):
        pick = lambda pair: None if pair is None else tuple(nx.Tensor(t.data[rows]) for t in pair)
        return DecoderState(self.enc.take(rows), pick(self.sent), pick(self.word),
                            nx.Tensor(self.last_word_h.data[rows]))


def encode_batch(model, src, src_mask):
    P = model.params
    model.check_ids(src)
    B = src.shape[0]
    H = model.dims["hidden"]
    zeros = nx.Tensor(np.zeros((B, H)))
    xs = nx.embedding(P["embed"], src)
    states, final = run_lstm(P["encoder.W"], P["encoder.b"], xs, src_mask, zeros, zeros)
    enc = nx.stack(states, axis=1)
    proj = nx.matmul(enc, P["attn.W"])
    bias = np.where(src_mask > 0, 0.0, _NEG)[:, None, :]
    return Encoded(enc, proj, bias, final)


def encode(model, source):
    """Encoder states ``(m, H)`` and the initial decoder state for one source."""
    if len(source) == 0:
        raise ContractViolation("encode: empty source")
    src, mask = pad_sources([list(source)])
    enc = encode_batch(model, src, mask)
    return enc.states.data[0], initial_state(model, enc)


def initial_state(model, enc):
    B = enc.states.shape[0]
    return DecoderState(enc, enc.final, None, nx.Tensor(np.zeros((B, model.dims["hidden"]))))


def readout(model, hidden, enc):
    """Logits ``(B, N, V)`` for decoder hidden states ``(B, N, H)``."""
    P = model.params
    scores = nx.matmul(hidden, nx.transpose(enc.proj, (0, 2, 1))) + enc.bias
    context = nx.matmul(nx.softmax(scores), enc.states)
    mixed = nx.tanh(nx.matmul(nx.concat([hidden, context], axis=-1), P["combine.W"]) + P["combine.b"])
    return nx.matmul(mixed, P["out.W"]) + P["out.b"]


def begin_sentence(model, state, active=None):
    P = model.params
    h, c = lstm_step(P["sentence.W"], P["sentence.b"], state.last_word_h, *state.sent)
    if active is not None:
        m = np.asarray(active, dtype=float)[:, None]
        h, c = nx.blend(m, h, state.sent[0]), nx.blend(m, c, state.sent[1])
    return replace(state, sent=(h, c), word=(h, nx.Tensor(np.zeros(h.shape))))


def word_step(model, state, tokens, active=None):
    """Feed ``tokens`` to the word decoder; returns the new state and next-word log-probs ``(B, V)``."""
    P = model.params
    x = nx.embedding(P["embed"], np.asarray(tokens))
    h_new, c_new = lstm_step(P["word.W"], P["word.b"], x, *state.word)
    logp = nx.log_softmax(readout(model, nx.reshape(h_new, (h_new.shape[0], 1, h_new.shape[1])),
                                  state.enc)).data[:, 0]
    if active is not None:
        m = np.asarray(active, dtype=float)[:, None]
        h_new, c_new = nx.blend(m, h_new, state.word[0]), nx.blend(m, c_new, state.word[1])
    return replace(state, word=(h_new, c_new)), logp


def end_sentence(state):
    return replace(state, last_word_h=state.word[0])


def decoder_logits(model, src, src_mask, tgt, tgt_mask):
    """Teacher-forced logits ``(B, T*K, V)`` for padded targets ``(B, T, K)``."""
    P = model.params
    model.check_ids(tgt)
    enc = encode_batch(model, src, src_mask)
    B, T, K = tgt.shape
    H = model.dims["hidden"]
    zeros = nx.Tensor(np.zeros((B, H)))
    inputs = np.concatenate([np.full((B, T, 1), BOS), tgt[:, :, :-1]], axis=2)
    h_s, c_s = enc.final
    last = zeros
    hidden = []
    for t in range(T):
        sent_mask = tgt_mask[:, t, :1]
        length = int(np.flatnonzero(tgt_mask[:, t].any(axis=0)).max() + 1) if tgt_mask[:, t].any() else 0
        if length == 0:
            hidden.extend([zeros] * K)
            continue
        h_new, c_new = lstm_step(P["sentence.W"], P["sentence.b"], last, h_s, c_s)
        h_s, c_s = nx.blend(sent_mask, h_new, h_s), nx.blend(sent_mask, c_new, c_s)
        xs = nx.embedding(P["embed"], inputs[:, t, :length])
        states, (h_w, _) = run_lstm(P["word.W"], P["word.b"], xs, tgt_mask[:, t, :length], h_s, zeros)
        # padded steps carry the previous state; their log-probs are masked downstream
        hidden.extend(states)
        hidden.extend([zeros] * (K - length))
        last = h_w
    return readout(model, nx.stack(hidden, axis=1), enc)


def sequence_log_probs(model, src, src_mask, tgt, tgt_mask):
    """Differentiable per-word ``log G(y_tk | history)`` as a ``(B, T, K)`` tensor."""
    B, T, K = tgt.shape
    logits = decoder_logits(model, src, src_mask, tgt, tgt_mask)
    return nx.reshape(nx.target_log_prob(logits, tgt.reshape(B, T * K)), (B, T, K))


def log_prob_of(model, source, text):
    """Per-word log-probabilities of ``text`` (sentences of ids, markers included)."""
    return batch_log_prob_of(model, [source], [text])[0]


def batch_log_prob_of(model, sources, texts):
    if any(len(s) == 0 for t in texts for s in t):
        raise ContractViolation("log_prob_of: empty sentence")
    src, src_mask = pad_sources([list(s) for s in sources])
    if not any(len(t) for t in texts):
        return [[] for _ in texts]
    tgt, mask = texts_to_array(texts)
    lp = sequence_log_probs(model, src, src_mask, tgt, mask).data
    return [[lp[b, t, :len(sent)].tolist() for t, sent in enumerate(text)] for b, text in enumerate(texts)]


def mle_loss(model, batch):
    """Mean negative log-likelihood over real target tokens of ``batch``."""
    if batch.tgt_mask.sum() <= 0:
        raise ContractViolation("mle_loss: batch has no real target tokens")
    B, T, K = batch.tgt.shape
    logits = decoder_logits(model, batch.src, batch.src_mask, batch.tgt, batch.tgt_mask)
    return nx.masked_cross_entropy(logits, batch.tgt.reshape(B, T * K), batch.tgt_mask.reshape(B, T * K))


@dataclass
class GeneratedText:
    sentences: list     # id lists, end markers included
    log_probs: list     # aligned per-word log G values

    @property
    def n_words(self):
        return sum(len(s) for s in self.sentences)


def _choose(logp, config, rng):
    allowed = logp.copy()
    allowed[:, list(_BANNED)] = -np.inf
    if config.mode == "greedy":
        return allowed.argmax(axis=1)
    z = allowed / config.temperature
    z -= z.max(axis=1, keepdims=True)
    p = np.exp(z)
    cdf = np.cumsum(p, axis=1)
    u = rng.random(len(p)) * cdf[:, -1]
    return np.minimum((cdf <= u[:, None]).sum(axis=1), p.shape[1] - 1)


def continue_sentence(model, state, tokens, n_words, config, rng, active=None):
    """Decode until an end marker or ``config.max_words`` words, starting after ``tokens``.

    ``tokens`` is the last emitted word per row (BOS at a sentence start) and
    ``n_words`` the words already in the current sentence.  Returns the final
    state, per-row word lists, log-prob lists and whether each row emitted EOS.
    """
    B = len(tokens)
    active = np.ones(B, dtype=bool) if active is None else active.copy()
    words = [[] for _ in range(B)]
    lps = [[] for _ in range(B)]
    ended_text = np.zeros(B, dtype=bool)
    for _ in range(config.max_words - n_words):
        if not active.any():
            break
        state, logp = word_step(model, state, tokens, active)
        choice = _choose(logp, config, rng)
        for b in np.flatnonzero(active):
            words[b].append(int(choice[b]))
            lps[b].append(float(logp[b, choice[b]]))
        ended_text |= active & (choice == EOS)
        active &= (choice != EOS) & (choice != EOSENT)
        tokens = np.where(active, choice, PAD)
    return state, words, lps, ended_text


def generate_batch(model, sources, config, rng=None):
    """Generate one text per source; sampling draws from ``rng`` (or ``config.seed``)."""
    if rng is None:
        rng = np.random.default_rng(config.seed)
    B = len(sources)
    out = [GeneratedText([], []) for _ in range(B)]
    if B == 0 or config.max_sentences == 0:
        return out
    src, src_mask = pad_sources([list(s) for s in sources])
    state = initial_state(model, encode_batch(model, src, src_mask))
    alive = np.ones(B, dtype=bool)
    for _ in range(config.max_sentences):
        if not alive.any():
            break
        state = begin_sentence(model, state, alive)
        state, words, lps, eos = continue_sentence(
            model, state, np.full(B, BOS), 0, config, rng, alive)
        for b in np.flatnonzero(alive):
            out[b].sentences.append(words[b])
            out[b].log_probs.append(lps[b])
        state = end_sentence(state)
        alive &= ~eos
    return out


def generate(model, source, config, rng=None):
    if len(source) == 0:
        raise ContractViolation("generate: empty source")
    return generate_batch(model, [source], config, rng)[0]


def teacher_state(model, source, sentences):
    """Decoder state for one source after consuming complete ``sentences``."""
    src, src_mask = pad_sources([list(source)])
    state = initial_state(model, encode_batch(model, src, src_mask))
    for sent in sentences:
        state = begin_sentence(model, state)
        state = feed_words(model, state, [BOS] + list(sent[:-1]))
        state = end_sentence(state)
    return state


def feed_words(model, state, tokens):
    """Teacher-force ``tokens`` through the word decoder (same tokens on every row)."""
    B = state.sent[0].shape[0]
    for tok in tokens:
        state, _ = word_step(model, state, np.full(B, tok))
    return state
