"""Adversarial reinforcement training of the generator, with MLE, PG-BLEU and SeqGAN baselines."""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field, fields

import numpy as np

from . import numerics as nx
from .corpus import MARKERS, batch_iter, make_batch, pad_sources, texts_to_array
from .discriminators import (ClassifierDiscriminator, LMDiscriminator, classifier_loss,
                             lm_discriminator_loss)
from .errors import ContractViolation, ValidationError
from .evaluation import bleu
from .generator import GenerationConfig, generate_batch, mle_loss, sequence_log_probs
from .rewards import MODES, lm_reward_bundle, returns_from_rewards, seqgan_returns

log = logging.getLogger(__name__)

BASELINES = ("none", "mle", "pg_bleu", "seqgan")


@dataclass
class TrainConfig:
    n_iterations: int = 10            # N: adversarial iterations
    generator_steps: int = 1          # M: generator sub-iterations per iteration
    discriminator_steps: int = 5      # K_steps: discriminator sub-iterations per iteration
    gamma: float = 1.0
    reward_mode: str = "SW"
    baseline: str = "none"
    batch_size: int = 32
    learning_rate: float = 0.1
    epsilon: float = 1e-10
    clip_norm: float = 5.0
    max_sentences: int = 3
    max_words: int = 12
    temperature: float = 1.0
    pretrain_generator_epochs: int = 10
    pretrain_discriminator_epochs: int = 1
    n_rollouts: int = 16
    seqgan_teacher_forcing: bool = True
    reward_baseline: bool = False     # subtract the batch-mean return (extension, off by default)
    bleu_eps: float = 1e-9
    seed: int = 0

    def __post_init__(self):
        for name in ("n_iterations", "generator_steps", "discriminator_steps",
                     "pretrain_generator_epochs", "pretrain_discriminator_epochs"):
            if getattr(self, name) < 0:
                raise ValidationError(f"{name} must be >= 0")
        if self.baseline not in BASELINES:
            raise ValidationError(f"baseline must be one of {BASELINES}")
        if self.reward_mode not in MODES:
            raise ValidationError(f"reward_mode must be one of {MODES}")
        if not 0.0 < self.gamma <= 1.0:
            raise ValidationError("gamma must lie in (0, 1]")
        if self.batch_size < 1 or self.n_rollouts < 1:
            raise ValidationError("batch_size and n_rollouts must be positive")

    def sampling(self):
        return GenerationConfig(self.max_sentences, self.max_words, "sample", self.temperature)


@dataclass
class RunLog:
    """Append-only list of step records."""
    records: list = field(default_factory=list)

    def append(self, kind, **values):
        rec = {"kind": kind, **values}
        self.records.append(rec)
        return rec

    def kinds(self):
        return [r["kind"] for r in self.records]

    def of_kind(self, kind):
        return [r for r in self.records if r["kind"] == kind]

    def to_jsonl(self, with_timing=False):
        lines = []
        for r in self.records:
            rec = r if with_timing else {k: v for k, v in r.items() if k != "seconds"}
            lines.append(json.dumps(rec, sort_keys=True))
        return "".join(line + "\n" for line in lines)


@dataclass
class StepResult:
    loss: float
    mean_reward: float
    bundle: object = None


def make_optimizer(model, config):
    return nx.Adagrad(model.parameters(), config.learning_rate, config.epsilon, config.clip_norm)


# ---------------------------------------------------------------------------
# generator updates

def policy_gradient_loss(G, sources, texts, weights):
    """Surrogate ``-(1/B) sum gamma^(k-1) R_{t,k} log G(y_{t,k})`` with ``weights`` held fixed."""
    src, src_mask = pad_sources([list(s) for s in sources])
    tgt, mask = texts_to_array(texts)
    if weights.shape != tgt.shape:
        raise ContractViolation(f"reward weights {weights.shape} do not match texts {tgt.shape}")
    lp = sequence_log_probs(G, src, src_mask, tgt, mask)
    return nx.mul(nx.tensor_sum(nx.mul(lp, weights * mask)), -1.0 / len(texts))


def apply_policy_gradient(G, sources, texts, bundle, optimizer, subtract_baseline=False):
    returns = bundle.returns
    if subtract_baseline:
        m = bundle.mask
        returns = (returns - (returns * m).sum() / max(m.sum(), 1.0)) * m
    weights = (bundle.gamma ** np.arange(returns.shape[-1])) * returns * bundle.mask
    with nx.Graph() as g:
        loss = policy_gradient_loss(G, sources, texts, weights)
    optimizer.step(nx.backward(g, loss, G.parameters()))
    return loss.item()


def _sample(G, sources, config, rng):
    outs = generate_batch(G, sources, config.sampling(), rng)
    keep = [i for i, o in enumerate(outs) if o.sentences and any(len(s) for s in o.sentences)]
    return [sources[i] for i in keep], [outs[i].sentences for i in keep]


def _batch_sources(batch):
    return [list(row[m > 0]) for row, m in zip(batch.src, batch.src_mask)]


def policy_gradient_step(G, D, batch, config, optimizer, rng):
    """Sample from ``G``, score with the frozen LM discriminator ``D``, ascend the reward."""
    sources, texts = _sample(G, _batch_sources(batch), config, rng)
    if not texts:
        log.warning("policy_gradient_step: every sample was empty; step skipped")
        return None
    bundle = lm_reward_bundle(D, texts, config.gamma, config.reward_mode)
    loss = apply_policy_gradient(G, sources, texts, bundle, optimizer, config.reward_baseline)
    return StepResult(loss, float(bundle.mean_text_reward().mean()), bundle)


def teacher_forcing_step(G, D, batch, config, optimizer):
    """The policy-gradient update applied to real target text."""
    texts = batch.texts()
    bundle = lm_reward_bundle(D, texts, config.gamma, config.reward_mode)
    loss = apply_policy_gradient(G, _batch_sources(batch), texts, bundle, optimizer,
                                 config.reward_baseline)
    return StepResult(loss, float(bundle.mean_text_reward().mean()), bundle)


def mle_step(G, batch, optimizer):
    with nx.Graph() as g:
        loss = mle_loss(G, batch)
    optimizer.step(nx.backward(g, loss, G.parameters()))
    return loss.item()


def _words(text):
    return [w for s in text for w in s if w not in MARKERS]


def bleu_bundle(texts, references, config):
    """Mode-S bundle whose sentence rewards are the BLEU of each whole sample."""
    _, mask = texts_to_array(texts)
    scores = np.array([bleu(_words(t), [_words(r)], 4, config.bleu_eps) for t, r in zip(texts, references)])
    sent = np.repeat(scores[:, None], mask.shape[1], axis=1)
    return returns_from_rewards(np.ones(mask.shape), mask, config.gamma, "S", sentence_rewards=sent)


def pg_bleu_step(G, batch, config, optimizer, rng):
    sources = _batch_sources(batch)
    refs = batch.texts()
    outs = generate_batch(G, sources, config.sampling(), rng)
    keep = [i for i, o in enumerate(outs) if o.sentences]
    if not keep:
        log.warning("pg_bleu_step: every sample was empty; step skipped")
        return None
    texts = [outs[i].sentences for i in keep]
    bundle = bleu_bundle(texts, [refs[i] for i in keep], config)
    loss = apply_policy_gradient(G, [sources[i] for i in keep], texts, bundle, optimizer,
                                 config.reward_baseline)
    return StepResult(loss, float(bundle.sentence_rewards[:, 0].mean()), bundle)


def seqgan_step(G, C, batch, config, optimizer, rng, real=False):
    """Policy-gradient update with Monte Carlo rollout returns from classifier ``C``."""
    if real:
        sources, texts = _batch_sources(batch), batch.texts()
    else:
        sources, texts = _sample(G, _batch_sources(batch), config, rng)
    if not texts:
        log.warning("seqgan_step: every sample was empty; step skipped")
        return None
    bundle = seqgan_returns(G, C, sources, texts, config.n_rollouts, rng, config.max_words, config.gamma)
    loss = apply_policy_gradient(G, sources, texts, bundle, optimizer, config.reward_baseline)
    m = bundle.mask[:, :, 0] > 0
    return StepResult(loss, float(bundle.sentence_rewards[m].mean()), bundle)


# ---------------------------------------------------------------------------
# discriminator updates

def lm_discriminator_step(D, real_texts, gen_texts, optimizer):
    with nx.Graph() as g:
        out = lm_discriminator_loss(D, real_texts, gen_texts)
    optimizer.step(nx.backward(g, out.loss, D.parameters()))
    return out


def classifier_step(C, real_sentences, gen_sentences, optimizer):
    labels = np.r_[np.ones(len(real_sentences)), np.zeros(len(gen_sentences))]
    with nx.Graph() as g:
        loss = classifier_loss(C, list(real_sentences) + list(gen_sentences), labels)
    optimizer.step(nx.backward(g, loss, C.parameters()))
    return loss.item()


def _sentences(texts):
    return [s for t in texts for s in t if s]


# ---------------------------------------------------------------------------
# pretraining

def pretrain_generator(G, dataset, epochs, optimizer, rng, config, valid=None, runlog=None):
    """``epochs`` passes of MLE; records mean training (and validation) NLL per epoch."""
    runlog = RunLog() if runlog is None else runlog
    for epoch in range(epochs):
        t0 = time.perf_counter()
        losses, weights = [], []
        for batch in batch_iter(dataset, config.batch_size, rng, True, config.max_sentences, config.max_words):
            losses.append(mle_step(G, batch, optimizer))
            weights.append(batch.n_tokens)
        rec = {"epoch": epoch, "loss": float(np.average(losses, weights=weights))}
        if valid is not None and len(valid):
            rec["valid_nll"] = evaluate_nll(G, valid, config)
        runlog.append("pretrain_generator", seconds=time.perf_counter() - t0, **rec)
    return G


def evaluate_nll(G, dataset, config, batch_size=None):
    total, count = 0.0, 0
    for batch in batch_iter(dataset, batch_size or config.batch_size, None, False,
                            config.max_sentences, config.max_words):
        n = batch.n_tokens
        total += mle_loss(G, batch).item() * n
        count += n
    return total / count


def pretrain_discriminator(D, G, dataset, epochs, optimizer, rng, config, runlog=None):
    """Train ``D`` against fresh generator samples for ``epochs`` passes over the data."""
    runlog = RunLog() if runlog is None else runlog
    for epoch in range(epochs):
        for batch in batch_iter(dataset, config.batch_size, rng, True, config.max_sentences, config.max_words):
            t0 = time.perf_counter()
            _, gen_texts = _sample(G, _batch_sources(batch), config, rng)
            if not gen_texts:
                continue
            if isinstance(D, LMDiscriminator):
                out = lm_discriminator_step(D, batch.texts(), gen_texts, optimizer)
                runlog.append("pretrain_discriminator", epoch=epoch, loss=out.loss.item(),
                              mean_reward_real=out.mean_real, mean_reward_generated=out.mean_generated,
                              seconds=time.perf_counter() - t0)
            else:
                loss = classifier_step(D, _sentences(batch.texts()), _sentences(gen_texts), optimizer)
                runlog.append("pretrain_discriminator", epoch=epoch, loss=loss,
                              seconds=time.perf_counter() - t0)
    return D


# ---------------------------------------------------------------------------
# Algorithm 1

class AdversarialTrainer:
    """Holds the full training state so runs can be checkpointed and resumed."""

    def __init__(self, G, D, dataset, config, rng=None, g_optimizer=None, d_optimizer=None, runlog=None):
        if config.baseline == "none" and not isinstance(D, LMDiscriminator):
            raise ContractViolation("DP-GAN training needs an LMDiscriminator")
        if config.baseline == "seqgan" and not isinstance(D, ClassifierDiscriminator):
            raise ContractViolation("SeqGAN training needs a ClassifierDiscriminator")
        if len(dataset) == 0:
            raise ContractViolation("empty training dataset")
        self.G, self.D, self.dataset, self.config = G, D, dataset, config
        self.rng = np.random.default_rng(config.seed) if rng is None else rng
        self.g_opt = g_optimizer or make_optimizer(G, config)
        self.d_opt = d_optimizer or (make_optimizer(D, config) if D is not None else None)
        self.log = RunLog() if runlog is None else runlog
        self.iteration = 0
        self.g_updates = 0
        self.d_updates = 0

    def _real_batch(self):
        n = len(self.dataset)
        idx = np.sort(self.rng.choice(n, size=min(self.config.batch_size, n), replace=False))
        return make_batch([self.dataset[i] for i in idx], self.config.max_sentences,
                          self.config.max_words, idx)

    def _record(self, kind, j, t0, **values):
        self.log.append(kind, iteration=self.iteration, sub=j, g_updates=self.g_updates,
                        d_updates=self.d_updates, seconds=time.perf_counter() - t0, **values)

    def _generator_phase(self):
        cfg = self.config
        frozen = self.D.copy() if self.D is not None else None
        for j in range(cfg.generator_steps):
            t0 = time.perf_counter()
            if cfg.baseline == "mle":
                loss = mle_step(self.G, self._real_batch(), self.g_opt)
                self.g_updates += 1
                self._record("mle", j, t0, loss=loss)
                continue
            if cfg.baseline == "pg_bleu":
                res = pg_bleu_step(self.G, self._real_batch(), cfg, self.g_opt, self.rng)
                self._after_g("policy_gradient", j, t0, res, "mean_reward_generated")
                continue
            if cfg.baseline == "seqgan":
                res = seqgan_step(self.G, frozen, self._real_batch(), cfg, self.g_opt, self.rng)
                self._after_g("policy_gradient", j, t0, res, "mean_reward_generated")
                if cfg.seqgan_teacher_forcing:
                    t0 = time.perf_counter()
                    res = seqgan_step(self.G, frozen, self._real_batch(), cfg, self.g_opt, self.rng, real=True)
                    self._after_g("teacher_forcing", j, t0, res, "mean_reward_real")
                continue
            res = policy_gradient_step(self.G, frozen, self._real_batch(), cfg, self.g_opt, self.rng)
            self._after_g("policy_gradient", j, t0, res, "mean_reward_generated")
            t0 = time.perf_counter()
            res = teacher_forcing_step(self.G, frozen, self._real_batch(), cfg, self.g_opt)
            self._after_g("teacher_forcing", j, t0, res, "mean_reward_real")

    def _after_g(self, kind, j, t0, res, reward_key):
        if res is None:
            self._record(kind, j, t0, skipped=True)
            return
        self.g_updates += 1
        self._record(kind, j, t0, loss=res.loss, **{reward_key: res.mean_reward})

    def _discriminator_phase(self):
        cfg = self.config
        if cfg.baseline in ("mle", "pg_bleu"):
            return
        for j in range(cfg.discriminator_steps):
            t0 = time.perf_counter()
            batch = self._real_batch()
            _, gen_texts = _sample(self.G, _batch_sources(batch), cfg, self.rng)
            if not gen_texts:
                self._record("discriminator", j, t0, skipped=True)
                continue
            if cfg.baseline == "seqgan":
                loss = classifier_step(self.D, _sentences(batch.texts()), _sentences(gen_texts), self.d_opt)
                self.d_updates += 1
                self._record("discriminator", j, t0, loss=loss)
            else:
                out = lm_discriminator_step(self.D, batch.texts(), gen_texts, self.d_opt)
                self.d_updates += 1
                self._record("discriminator", j, t0, loss=out.loss.item(),
                             mean_reward_real=out.mean_real, mean_reward_generated=out.mean_generated)

    def run(self, until=None, callback=None):
        """Run iterations up to ``until`` (default ``config.n_iterations``)."""
        until = self.config.n_iterations if until is None else until
        while self.iteration < until:
            self._generator_phase()
            self._discriminator_phase()
            self.iteration += 1
            if callback is not None:
                callback(self)
        return self.G, self.D, self.log


def adversarial_train(G, D, dataset, config, rng=None, runlog=None):
    """Alternate ``M`` generator sub-iterations and ``K_steps`` discriminator ones for ``N`` rounds."""
    trainer = AdversarialTrainer(G, D, dataset, config, rng=rng, runlog=runlog)
    return trainer.run()


def config_dict(config):
    return {f.name: getattr(config, f.name) for f in fields(config)}

