"""Diversity-promoting adversarial text generation on a small numpy autodiff engine."""

__version__ = "0.1.0"

from .errors import (CheckpointError, ConfigError, ContractViolation, DPGANError, KindMismatch,
                     ShapeError, ValidationError)
from .numerics import Adagrad, Graph, Tensor, adagrad_step, apply_primitive, backward
from .corpus import (Dataset, TextPair, Vocabulary, batch_iter, build_vocabulary, split_review,
                     synth_corpus, tokenize)
from .generator import GenerationConfig, GeneratorModel, generate, log_prob_of, mle_loss
from .discriminators import (ClassifierDiscriminator, LMDiscriminator, classifier_score,
                             lm_discriminator_loss, lm_text_reward, lm_word_rewards,
                             train_classifier, train_lm_discriminator)
from .rewards import RewardBundle, assemble_returns, mcs_rollout_returns, sentence_reward
from .training import (AdversarialTrainer, RunLog, TrainConfig, adversarial_train, pg_bleu_step,
                       policy_gradient_step, pretrain_generator, seqgan_step, teacher_forcing_step)
from .evaluation import bleu, diversity_report, frequency_cosine, reward_histogram
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
