"""Sentence- and word-level rewards, discounted returns, and Monte Carlo rollout returns."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import generator as gen
from .corpus import EOS, EOSENT, texts_to_array
from .discriminators import classifier_scores, text_word_rewards
from .errors import ContractViolation, ValidationError

MODES = ("S", "W", "SW")


def sentence_reward(word_rewards):
    """Mean of the word rewards of one sentence."""
    w = np.asarray(word_rewards, dtype=float)
    if w.size == 0:
        raise ContractViolation("sentence_reward: empty sentence")
    return float(w.mean())


def _check(gamma, mode):
    if not 0.0 < gamma <= 1.0:
        raise ValidationError(f"discount must lie in (0, 1], got {gamma}")
    if mode not in MODES:
        raise ValidationError(f"reward mode must be one of {MODES}, got {mode!r}")


def assemble_returns(word_rewards, sentence_reward_value, gamma=1.0, mode="SW"):
    """Returns ``R_k = sum_{i>=k} gamma^(i-1) * R(sentence) * R(word_i)`` for one sentence.

    Mode ``S`` replaces every word reward with 1, mode ``W`` the sentence reward.
    """
    _check(gamma, mode)
    w = np.asarray(word_rewards, dtype=float)
    if mode == "S":
        w = np.ones_like(w)
    s = 1.0 if mode == "W" else float(sentence_reward_value)
    terms = gamma ** np.arange(len(w)) * s * w
    return np.cumsum(terms[::-1])[::-1]


@dataclass
class RewardBundle:
    word_rewards: np.ndarray       # (B, T, K)
    sentence_rewards: np.ndarray   # (B, T)
    returns: np.ndarray            # (B, T, K)
    mask: np.ndarray               # (B, T, K)
    gamma: float = 1.0
    mode: str = "SW"

    def pg_weights(self):
        """Per-word coefficients ``gamma^(k-1) * R_{t,k}`` of ``log G`` in the update."""
        K = self.returns.shape[-1]
        return (self.gamma ** np.arange(K)) * self.returns * self.mask

    def mean_text_reward(self):
        """Per-text average word reward (the discriminator's ``R(Y)``)."""
        n = self.mask.sum(axis=(1, 2))
        return (self.word_rewards * self.mask).sum(axis=(1, 2)) / np.maximum(n, 1)


def returns_from_rewards(word_rewards, mask, gamma=1.0, mode="SW", sentence_rewards=None):
    """Vectorised ``assemble_returns`` over padded ``(B, T, K)`` rewards."""
    _check(gamma, mode)
    w = np.asarray(word_rewards, dtype=float) * mask
    counts = mask.sum(axis=2)
    if sentence_rewards is None:
        sentence_rewards = np.divide(w.sum(axis=2), counts, out=np.zeros(counts.shape), where=counts > 0)
    sentence_rewards = np.asarray(sentence_rewards, dtype=float)
    word_part = mask if mode == "S" else w
    sent_part = np.ones_like(sentence_rewards) if mode == "W" else sentence_rewards
    K = mask.shape[-1]
    terms = (gamma ** np.arange(K)) * sent_part[..., None] * word_part
    returns = np.cumsum(terms[..., ::-1], axis=-1)[..., ::-1] * mask
    return RewardBundle(w, sentence_rewards, returns, mask, gamma, mode)


def lm_reward_bundle(d, texts, gamma=1.0, mode="SW", n_words=None):
    """Cross-entropy rewards from a (frozen) LM discriminator for a batch of texts."""
    w, mask = text_word_rewards(d, texts)
    if n_words is not None and n_words > w.shape[2]:
        pad = n_words - w.shape[2]
        w = np.pad(w, ((0, 0), (0, 0), (0, pad)))
        mask = np.pad(mask, ((0, 0), (0, 0), (0, pad)))
    return returns_from_rewards(w, mask, gamma, mode)


# ---------------------------------------------------------------------------
# Monte Carlo search with a classifier discriminator

def _complete(prefix, max_words):
    return bool(prefix) and (prefix[-1] in (EOS, EOSENT) or len(prefix) >= max_words)


def mcs_rollout_returns(generator, classifier, source, prefix, n_rollouts, seed=None,
                        max_words=12, previous_sentences=(), rng=None):
    """Mean classifier score over ``n_rollouts`` generator completions of ``prefix``.

    A complete prefix (ends in a marker or has ``max_words`` words) is scored
    directly without sampling.
    """
    if n_rollouts < 1:
        raise ContractViolation("n_rollouts must be >= 1")
    prefix = list(prefix)
    if not prefix:
        raise ContractViolation("mcs_rollout_returns: empty prefix")
    if _complete(prefix, max_words):
        return float(classifier_scores(classifier, [prefix])[0])
    rng = np.random.default_rng(seed) if rng is None else rng
    state = gen.teacher_state(generator, source, previous_sentences)
    state = gen.begin_sentence(generator, state)
    state = gen.feed_words(generator, state, [gen.BOS] + prefix[:-1])
    completions = _rollout(generator, state, prefix, n_rollouts, max_words, rng)
    return float(classifier_scores(classifier, completions).mean())


def _rollout(generator, state, prefix, n, max_words, rng):
    config = gen.GenerationConfig(max_sentences=1, max_words=max_words, mode="sample")
    rep = state.take(np.zeros(n, dtype=np.int64))
    _, words, _, _ = gen.continue_sentence(
        generator, rep, np.full(n, prefix[-1]), len(prefix), config, rng)
    return [prefix + w for w in words]


def seqgan_returns(generator, classifier, sources, texts, n_rollouts, rng, max_words=12, gamma=1.0):
    """Per-word rollout returns for each text, as a ``RewardBundle`` (mode ``"MCS"``).

    The return of word ``k`` is the mean classifier score of completions of the
    prefix ending at ``k``; the final word's return is the score of the sentence.
    """
    if n_rollouts < 1:
        raise ContractViolation("n_rollouts must be >= 1")
    tgt, mask = texts_to_array(texts)
    returns = np.zeros(tgt.shape)
    sent_scores = np.zeros(tgt.shape[:2])
    for b, (source, text) in enumerate(zip(sources, texts)):
        state = gen.teacher_state(generator, source, [])
        for t, sent in enumerate(text):
            sent = list(sent)
            state = gen.begin_sentence(generator, state)
            state, _ = gen.word_step(generator, state, [gen.BOS])
            candidates, owners = [], []
            for k in range(1, len(sent) + 1):
                prefix = sent[:k]
                if k > 1:
                    state, _ = gen.word_step(generator, state, [sent[k - 2]])
                if _complete(prefix, max_words) or k == len(sent):
                    candidates.append(prefix)
                    owners.append(k - 1)
                    continue
                for c in _rollout(generator, state, prefix, n_rollouts, max_words, rng):
                    candidates.append(c)
                    owners.append(k - 1)
            scores = classifier_scores(classifier, candidates)
            sums = np.bincount(owners, weights=scores, minlength=len(sent))
            counts = np.bincount(owners, minlength=len(sent))
            returns[b, t, : len(sent)] = sums / counts
            sent_scores[b, t] = returns[b, t, len(sent) - 1]
            state = gen.end_sentence(state)
    return RewardBundle(np.zeros(tgt.shape), sent_scores, returns * mask, mask, gamma, "MCS")
