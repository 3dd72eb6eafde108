"""Language-model rewards versus classifier rewards on the same sentences."""

import numpy as np

from dpgan.discriminators import (ClassifierDiscriminator, LMDiscriminator, classifier_scores,
                                  lm_word_rewards)
from dpgan.generator import GeneratorModel
from dpgan.rewards import assemble_returns, mcs_rollout_returns, sentence_reward

V = 12
D = LMDiscriminator(V, 8, 16, seed=1)
C = ClassifierDiscriminator(V, 8, 16, seed=2)
G = GeneratorModel(V, 8, 16, seed=0)

sentence = [5, 7, 9, 4]                      # ends with the end-of-sentence id
words = lm_word_rewards(D, sentence)         # -log D(word | prefix), one per word
print("word rewards    ", np.round(words, 3))
print("sentence reward ", round(sentence_reward(words), 3))
for mode in ("S", "W", "SW"):
    print(f"returns {mode:<2} g=0.5", np.round(assemble_returns(words, sentence_reward(words), 0.5, mode), 3))

# the classifier scores one probability per sentence; partial sentences need rollouts
print("classifier score", classifier_scores(C, [sentence])[0])
print("rollout estimate for prefix [5, 7]:",
      mcs_rollout_returns(G, C, [6, 8], [5, 7], n_rollouts=64, seed=0, max_words=6))
