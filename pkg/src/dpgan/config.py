"""Flat ``section.key = value`` run configuration with a fixed schema and presets.

Lines are ``key = value``; ``#`` starts a comment; blank lines are ignored.
Every key must appear in ``SCHEMA``.  Unknown keys, duplicate keys and values
that fail to parse are all collected and reported together in one
``ConfigError``.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

from .errors import ConfigError, ContractViolation
from .evaluation import DEFAULT_BINS
from .generator import GenerationConfig
from .training import BASELINES, TrainConfig
from .rewards import MODES


def _bool(text):
    low = text.strip().lower()
    if low in ("true", "yes", "1", "on"):
        return True
    if low in ("false", "no", "0", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _bins(text):
    """``"1-500,501-1000"`` -> ``((1, 500), (501, 1000))``."""
    out = []
    prev = 0
    for part in text.split(","):
        lo, hi = (int(x) for x in part.strip().split("-"))
        if lo <= prev or hi < lo:
            raise ValueError("bins must be 1-based, ordered and disjoint")
        out.append((lo, hi))
        prev = hi
    return tuple(out)


def _ratios(text):
    vals = tuple(float(x) for x in text.split(","))
    if len(vals) != 3 or min(vals) < 0 or sum(vals) <= 0:
        raise ValueError("expected three non-negative ratios")
    return vals


def _choice(*options):
    def parse(text):
        text = text.strip()
        if text not in options:
            raise ValueError(f"expected one of {options}")
        return text
    return parse


def _positive(kind):
    def parse(text):
        v = kind(text)
        if v <= 0:
            raise ValueError("must be positive")
        return v
    return parse


def _non_negative(kind):
    def parse(text):
        v = kind(text)
        if v < 0:
            raise ValueError("must be non-negative")
        return v
    return parse


def _auto(parse):
    """``auto`` maps to ``None`` (mode-dependent default)."""
    def wrapped(text):
        return None if text.strip() == "auto" else parse(text)
    return wrapped


def _gamma(text):
    v = float(text)
    if not 0.0 < v <= 1.0:
        raise ValueError("must lie in (0, 1]")
    return v


def _fmt_bins(bins):
    return ",".join(f"{lo}-{hi}" for lo, hi in bins)


# key -> (parser, default, formatter)
SCHEMA = {
    "run.seed": (int, 0, str),
    "corpus.mode": (_choice("review", "dialogue"), "review", str),
    "corpus.max_vocab": (_positive(int), 1000, str),
    "corpus.split": (_ratios, (0.8, 0.1, 0.1), lambda v: ",".join(repr(x) for x in v)),
    "corpus.min_response_words": (_auto(_non_negative(int)), None, lambda v: "auto" if v is None else str(v)),
    "model.embedding_dim": (_positive(int), 32, str),
    "model.hidden_dim": (_positive(int), 64, str),
    "model.init_scale": (_positive(float), 0.08, repr),
    "train.n_iterations": (_non_negative(int), 10, str),
    "train.generator_steps": (_non_negative(int), 1, str),
    "train.discriminator_steps": (_non_negative(int), 5, str),
    "train.gamma": (_gamma, 1.0, repr),
    "train.reward_mode": (_choice(*MODES), "SW", str),
    "train.baseline": (_choice(*BASELINES), "none", str),
    "train.batch_size": (_positive(int), 32, str),
    "train.learning_rate": (_positive(float), 0.1, repr),
    "train.epsilon": (_positive(float), 1e-10, repr),
    "train.clip_norm": (_positive(float), 5.0, repr),
    "train.pretrain_generator_epochs": (_non_negative(int), 10, str),
    "train.pretrain_discriminator_epochs": (_non_negative(int), 1, str),
    "train.n_rollouts": (_positive(int), 16, str),
    "train.seqgan_teacher_forcing": (_bool, True, lambda v: str(v).lower()),
    "train.reward_baseline": (_bool, False, lambda v: str(v).lower()),
    "train.bleu_eps": (_positive(float), 1e-9, repr),
    "train.checkpoint_every": (_non_negative(int), 0, str),
    "generate.max_sentences": (_non_negative(int), 3, str),
    "generate.max_words": (_positive(int), 12, str),
    "generate.mode": (_choice("greedy", "sample"), "greedy", str),
    "generate.temperature": (_positive(float), 1.0, repr),
    "evaluate.bins": (_bins, DEFAULT_BINS, _fmt_bins),
    "evaluate.n_bins": (_positive(int), 50, str),
    "evaluate.bleu_max_n": (_positive(int), 4, str),
}

_TRAIN_KEYS = ("n_iterations", "generator_steps", "discriminator_steps", "gamma", "reward_mode",
               "baseline", "batch_size", "learning_rate", "epsilon", "clip_norm",
               "pretrain_generator_epochs", "pretrain_discriminator_epochs", "n_rollouts",
               "seqgan_teacher_forcing", "reward_baseline", "bleu_eps")


@dataclass(frozen=True)
class RunConfig:
    values: dict

    def __getitem__(self, key):
        return self.values[key]

    @property
    def seed(self):
        return self.values["run.seed"]

    def replace(self, **updates):
        """Copy with dotted keys given as ``section__key=value`` keyword arguments."""
        new = dict(self.values)
        bad = []
        for name, value in updates.items():
            key = name.replace("__", ".")
            if key not in SCHEMA:
                bad.append(key)
            new[key] = value
        if bad:
            raise ConfigError(f"unknown config keys: {', '.join(bad)}", bad)
        return RunConfig(new)

    def train_config(self):
        v = self.values
        kw = {k: v["train." + k] for k in _TRAIN_KEYS}
        try:
            return TrainConfig(max_sentences=v["generate.max_sentences"],
                               max_words=v["generate.max_words"],
                               temperature=v["generate.temperature"],
                               seed=v["run.seed"], **kw)
        except ContractViolation as exc:
            raise ConfigError(str(exc)) from None

    def generation_config(self, seed=None):
        v = self.values
        try:
            return GenerationConfig(v["generate.max_sentences"], v["generate.max_words"],
                                    v["generate.mode"], v["generate.temperature"],
                                    v["run.seed"] if seed is None else seed)
        except ContractViolation as exc:
            raise ConfigError(str(exc)) from None

    def model_dims(self):
        v = self.values
        return {"embedding_dim": v["model.embedding_dim"], "hidden_dim": v["model.hidden_dim"],
                "init_scale": v["model.init_scale"]}

    def to_text(self):
        """Canonical text form (sorted keys); parses back to an equal config."""
        return "".join(f"{k} = {SCHEMA[k][2](self.values[k])}\n" for k in sorted(self.values))


def defaults():
    return RunConfig({k: spec[1] for k, spec in SCHEMA.items()})


def parse_config(text, base=None, source="<config>"):
    values = dict((base or defaults()).values)
    errors, seen = [], set()
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            errors.append((f"line {lineno}", "expected 'key = value'"))
            continue
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in SCHEMA:
            errors.append((key, "unknown key"))
            continue
        if key in seen:
            errors.append((key, "duplicate key"))
            continue
        seen.add(key)
        try:
            values[key] = SCHEMA[key][0](value)
        except (ValueError, TypeError) as exc:
            errors.append((key, f"bad value {value!r}: {exc}"))
    if errors:
        detail = "; ".join(f"{k}: {why}" for k, why in errors)
        raise ConfigError(f"{source}: invalid configuration ({detail})", [k for k, _ in errors])
    cfg = RunConfig(values)
    cfg.train_config()
    return cfg


def load_config(path, base=None):
    try:
        text = Path(path).read_text(encoding="utf-8")
    except UnicodeDecodeError as exc:
        raise ConfigError(f"{path}: not UTF-8 text ({exc})") from None
    return parse_config(text, base, str(path))


DESK = defaults()

PAPER = parse_config("""
corpus.max_vocab = 50000
model.embedding_dim = 128
model.hidden_dim = 256
train.batch_size = 64
train.learning_rate = 0.1
train.n_iterations = 1
train.generator_steps = 1000
train.discriminator_steps = 5000
train.pretrain_generator_epochs = 10
generate.max_sentences = 6
generate.max_words = 40
""", source="paper preset")

PRESETS = {"desk": DESK, "paper": PAPER}
