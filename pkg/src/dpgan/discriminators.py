"""Language-model discriminator (cross-entropy reward) and the binary-classifier baseline."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from . import numerics as nx
from .corpus import BOS, texts_to_array
from .errors import ContractViolation
from .layers import Model, lstm_shapes, run_lstm

_TINY = np.finfo(np.float64).tiny
_ALMOST_ONE = np.nextafter(1.0, 0.0)


class LMDiscriminator(Model):
    """Unidirectional LSTM language model over target sentences (no source input)."""

    kind = "lm_discriminator"

    def __init__(self, vocab_size, embedding_dim=32, hidden_dim=64, seed=0, init_scale=0.08):
        self.dims = {"vocab": int(vocab_size), "embedding": int(embedding_dim), "hidden": int(hidden_dim)}
        super().__init__(self._init(np.random.default_rng(seed), init_scale), self.dims)

    def _expected_shapes(self):
        V, E, H = self.dims["vocab"], self.dims["embedding"], self.dims["hidden"]
        shapes = {"embed": (V, E)}
        shapes.update(lstm_shapes("lstm", E, H))
        shapes.update({"out.W": (H, V), "out.b": (V,)})
        return shapes


class ClassifierDiscriminator(Model):
    """LSTM sentence encoder -> linear -> sigmoid probability of being real."""

    kind = "classifier"

    def __init__(self, vocab_size, embedding_dim=32, hidden_dim=64, seed=0, init_scale=0.08):
        self.dims = {"vocab": int(vocab_size), "embedding": int(embedding_dim), "hidden": int(hidden_dim)}
        super().__init__(self._init(np.random.default_rng(seed), init_scale), self.dims)

    def _expected_shapes(self):
        V, E, H = self.dims["vocab"], self.dims["embedding"], self.dims["hidden"]
        shapes = {"embed": (V, E)}
        shapes.update(lstm_shapes("lstm", E, H))
        shapes.update({"head.W": (H, 1), "head.b": (1,)})
        return shapes


def _sentence_array(sentences):
    if not sentences:
        raise ContractViolation("no sentences given")
    if any(len(s) == 0 for s in sentences):
        raise ContractViolation("empty sentence")
    arr, mask = texts_to_array([[list(s)] for s in sentences])
    return arr[:, 0], mask[:, 0]


def _encode_sentences(model, arr, mask, inputs):
    P = model.params
    N = arr.shape[0]
    zeros = nx.Tensor(np.zeros((N, model.dims["hidden"])))
    xs = nx.embedding(P["embed"], inputs)
    return run_lstm(P["lstm.W"], P["lstm.b"], xs, mask, zeros, zeros)


# ---------------------------------------------------------------------------
# language-model discriminator

def lm_log_probs(d, arr, mask):
    """``log D(y_k | y_<k)`` for padded sentences ``(N, L)``, as a differentiable tensor."""
    d.check_ids(arr)
    P = d.params
    N, L = arr.shape
    inputs = np.concatenate([np.full((N, 1), BOS), arr[:, :-1]], axis=1)
    states, _ = _encode_sentences(d, arr, mask, inputs)
    logits = nx.matmul(nx.stack(states, axis=1), P["out.W"]) + P["out.b"]
    return nx.target_log_prob(logits, arr)


def lm_step_distributions(d, sentence):
    """Full next-word distributions ``(L, V)`` along one sentence (for diagnostics/tests)."""
    arr, mask = _sentence_array([sentence])
    P = d.params
    inputs = np.concatenate([[[BOS]], arr[:, :-1]], axis=1)
    states, _ = _encode_sentences(d, arr, mask, inputs)
    logits = nx.matmul(nx.stack(states, axis=1), P["out.W"]) + P["out.b"]
    return np.exp(nx.log_softmax(logits).data[0])


def lm_word_rewards(d, sentence):
    """Cross-entropy reward ``-log D(y_k | y_<k)`` for each word of one sentence."""
    return batch_word_rewards(d, [sentence])[0]


def batch_word_rewards(d, sentences):
    arr, mask = _sentence_array(sentences)
    lp = lm_log_probs(d, arr, mask).data
    return [-lp[i, : len(s)] for i, s in enumerate(sentences)]


def text_word_rewards(d, texts):
    """Word rewards for each sentence of each text, as ``(B, T, K)`` array plus mask."""
    flat = [s for text in texts for s in text]
    tgt, mask = texts_to_array(texts)
    out = np.zeros(tgt.shape)
    if not flat:
        return out, mask
    rewards = batch_word_rewards(d, flat)
    i = 0
    for b, text in enumerate(texts):
        for t, s in enumerate(text):
            out[b, t, : len(s)] = rewards[i]
            i += 1
    return out, mask


def lm_text_reward(d, text):
    """Average word reward over every word of every sentence in ``text``."""
    if not text or not any(len(s) for s in text):
        raise ContractViolation("lm_text_reward: empty text")
    rewards = batch_word_rewards(d, list(text))
    return float(np.concatenate(rewards).mean())


def lm_text_rewards(d, texts):
    return np.array([lm_text_reward(d, t) for t in texts])


@dataclass
class LMLoss:
    loss: nx.Tensor
    mean_real: float
    mean_generated: float


def lm_discriminator_loss(d, real_texts, gen_texts):
    """``J = -(mean R(real) - mean R(generated))`` with ``R`` the per-text average word reward."""
    if not real_texts or not gen_texts:
        raise ContractViolation("lm_discriminator_loss: empty batch")
    texts = list(real_texts) + list(gen_texts)
    if any(not any(len(s) for s in t) for t in texts):
        raise ContractViolation("lm_discriminator_loss: empty text")
    sentences, coef, owner = [], [], []
    n_real, n_gen = len(real_texts), len(gen_texts)
    for i, text in enumerate(texts):
        n_words = sum(len(s) for s in text)
        # d J / d(log D) for every word of this text
        weight = (1.0 / n_real if i < n_real else -1.0 / n_gen) / n_words
        for s in text:
            sentences.append(list(s))
            coef.append(weight)
            owner.append(i)
    arr, mask = _sentence_array(sentences)
    lp = lm_log_probs(d, arr, mask)
    W = np.asarray(coef)[:, None] * mask
    loss = nx.tensor_sum(nx.mul(lp, W))
    per_sentence = -(lp.data * mask).sum(axis=1)
    per_text = np.zeros(len(texts))
    np.add.at(per_text, owner, per_sentence)
    per_text /= np.array([sum(len(s) for s in t) for t in texts])
    return LMLoss(loss, float(per_text[:n_real].mean()), float(per_text[n_real:].mean()))


def _supplier(source):
    return source if callable(source) else (lambda: source)


def train_lm_discriminator(d, real_source, gen_source, steps, optimizer):
    """``steps`` clipped Adagrad updates on ``J``; returns the per-step loss trace.

    ``real_source``/``gen_source`` are lists of texts or zero-argument callables
    returning a fresh batch each step.
    """
    real_source, gen_source = _supplier(real_source), _supplier(gen_source)
    trace = []
    params = d.parameters()
    for _ in range(steps):
        with nx.Graph() as g:
            out = lm_discriminator_loss(d, real_source(), gen_source())
        grads = nx.backward(g, out.loss, params)
        optimizer.step(grads)
        trace.append(out)
    return trace


# ---------------------------------------------------------------------------
# classifier discriminator

def classifier_logits(c, arr, mask):
    c.check_ids(arr)
    P = c.params
    _, (h, _) = _encode_sentences(c, arr, mask, arr)
    return nx.reshape(nx.matmul(h, P["head.W"]) + P["head.b"], (arr.shape[0],))


def classifier_scores(c, sentences):
    arr, mask = _sentence_array(sentences)
    z = classifier_logits(c, arr, mask).data
    # float64 sigmoid rounds to exactly 0 or 1 for large |z|; keep it strictly inside
    return np.clip(expit(z), _TINY, _ALMOST_ONE)


def classifier_score(c, sentence):
    """Probability that ``sentence`` is real text."""
    return float(classifier_scores(c, [sentence])[0])


def classifier_loss(c, sentences, labels):
    """Mean binary cross-entropy."""
    arr, mask = _sentence_array(sentences)
    z = classifier_logits(c, arr, mask)
    y = np.asarray(labels, dtype=float)
    ll = nx.add(nx.mul(nx.log_sigmoid(z), y), nx.mul(nx.log_sigmoid(nx.mul(z, -1.0)), 1.0 - y))
    return nx.mul(nx.tensor_sum(ll), -1.0 / len(y))


def classifier_accuracy(c, real, generated):
    scores = classifier_scores(c, list(real) + list(generated))
    labels = np.r_[np.ones(len(real)), np.zeros(len(generated))]
    return float(((scores > 0.5) == (labels > 0.5)).mean())


@dataclass
class ClassifierReport:
    accuracy: float
    losses: list = field(default_factory=list)


def train_classifier(c, real, generated, steps, optimizer, heldout=None, batch_size=None, rng=None):
    """Binary cross-entropy training (real = 1, generated = 0).

    Without ``heldout`` the last fifth of each input list is held out for the
    reported accuracy and never trained on.
    """
    real, generated = list(real), list(generated)
    if heldout is None:
        cut_r, cut_g = len(real) - max(1, len(real) // 5), len(generated) - max(1, len(generated) // 5)
        heldout = (real[cut_r:], generated[cut_g:])
        real, generated = real[:cut_r], generated[:cut_g]
    sentences = real + generated
    labels = np.r_[np.ones(len(real)), np.zeros(len(generated))]
    rng = np.random.default_rng(0) if rng is None else rng
    params = c.parameters()
    losses = []
    for _ in range(steps):
        if batch_size and batch_size < len(sentences):
            idx = rng.choice(len(sentences), size=batch_size, replace=False)
            batch, y = [sentences[i] for i in idx], labels[idx]
        else:
            batch, y = sentences, labels
        with nx.Graph() as g:
            loss = classifier_loss(c, batch, y)
        optimizer.step(nx.backward(g, loss, params))
        losses.append(loss.item())
    return ClassifierReport(classifier_accuracy(c, *heldout), losses)
