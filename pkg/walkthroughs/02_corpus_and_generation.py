"""Tokenise reviews, build a vocabulary, pretrain a tiny generator with MLE and decode."""

import numpy as np

from dpgan.corpus import Dataset, build_vocabulary, encode_pair, split_review, tokenize
from dpgan.generator import GenerationConfig, GeneratorModel, generate
from dpgan.training import TrainConfig, make_optimizer, pretrain_generator

reviews = [
    "The soup was hot. The bread was fresh. We will come back.",
    "Service was slow. The soup was cold. Never again.",
    "Great coffee. Friendly staff. The bread was fresh.",
    "The room was clean. The bed was soft. Good value.",
] * 10

sentences = [tokenize(r) for r in reviews]
vocab = build_vocabulary([s for doc in sentences for s in doc], max_size=100)
pairs = [encode_pair(vocab, src, tgt) for src, tgt in (split_review(doc) for doc in sentences)]
data = Dataset(pairs, vocab=vocab)
print(len(vocab), "vocabulary entries,", len(data), "pairs")

cfg = TrainConfig(batch_size=8, max_sentences=3, max_words=8)
G = GeneratorModel(len(vocab), 16, 32, seed=0)
runlog = pretrain_generator(G, data, 15, make_optimizer(G, cfg), np.random.default_rng(0), cfg)

source = vocab.encode(tokenize("The soup was hot.")[0])
for mode in ("greedy", "sample"):
    out = generate(G, source, GenerationConfig(3, 8, mode, seed=1))
    print(mode, "->", " | ".join(" ".join(vocab.decode(s)) for s in out.sentences))
