"""Command-line entry points: prepare, pretrain, train, generate, evaluate, analyze-*.

Exit codes: 0 success, 2 configuration error, 3 I/O or checkpoint error,
4 contract violation (bad input data, wrong checkpoint kind).
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .checkpoint import (atomic_write, from_model, load_checkpoint, restore_trainer,
                         save_checkpoint, trainer_checkpoints)
from .config import PRESETS, load_config
from .corpus import (MARKERS, Dataset, TextPair, Vocabulary, build_vocabulary, load_pairs,
                     read_raw_corpus, save_pairs, split_dataset, tokenize)
from .discriminators import ClassifierDiscriminator, LMDiscriminator
from .errors import ConfigError, ContractViolation, DPGANError, KindMismatch
from .evaluation import bleu, diversity_report, frequency_cosine, reward_histogram
from .generator import GeneratorModel, generate_batch
from .training import (AdversarialTrainer, RunLog, make_optimizer, pretrain_discriminator,
                       pretrain_generator)

log = logging.getLogger("dpgan")

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_CONTRACT = 0, 2, 3, 4

GENERATOR_FILE = "generator.dpgn"
DISCRIMINATOR_FILE = "discriminator.dpgn"
STATE_DIR = "state"


class UsageError(DPGANError):
    """Refusal that maps to the I/O exit code (e.g. an existing manifest)."""


# ---------------------------------------------------------------------------
# small helpers

def fingerprint(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_tsv(path, header, rows):
    lines = ["\t".join(header)]
    for row in rows:
        lines.append("\t".join(_cell(v) for v in row))
    atomic_write(path, "\n".join(lines) + "\n")


def _cell(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def read_generated(path):
    """One text per line; sentences separated by tabs, tokens by spaces."""
    texts = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\n")
            texts.append([s.split() for s in line.split("\t") if s.split()] if line else [])
    return texts


def format_generated(texts):
    return "".join("\t".join(" ".join(s) for s in t) + "\n" for t in texts)


def read_reference(path):
    """Reference sentences from a prepared ``.jsonl`` split or a generated-format text file."""
    path = Path(path)
    if path.suffix == ".jsonl":
        out = []
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                if line.strip():
                    try:
                        out.append([s.split() for s in json.loads(line)["target"]])
                    except (ValueError, KeyError, TypeError) as exc:
                        raise ContractViolation(f"{path}:{lineno}: malformed record ({exc})") from None
        return out
    return read_generated(path)


def _flat(texts):
    return [s for t in texts for s in t]


class Run:
    """Output directory with its manifest and config for one command invocation."""

    def __init__(self, args, verb):
        self.verb = verb
        self.out = Path(args.out_dir)
        self.force = args.force
        self.config = _load_config(args)
        self.out.mkdir(parents=True, exist_ok=True)

    def path(self, name):
        return self.out / name

    def write_manifest(self, inputs, artifacts, extra=None):
        """Record config, seed, input fingerprints and planned artifacts before any work."""
        target = self.path("manifest.json")
        if target.exists() and not self.force:
            raise UsageError(f"{target} already exists; pass --force to overwrite")
        manifest = {
            "version": __version__, "command": self.verb, "seed": self.config.seed,
            "config": self.config.to_text().splitlines(),
            "inputs": {str(p): fingerprint(p) for p in inputs},
            "artifacts": sorted(artifacts),
        }
        manifest.update(extra or {})
        atomic_write(target, json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _load_config(args):
    name = args.config
    if name is None:
        cfg = PRESETS["desk"]
    elif name in PRESETS:
        cfg = PRESETS[name]
    else:
        cfg = load_config(name)
    if args.seed is not None:
        cfg = cfg.replace(run__seed=args.seed)
    return cfg


def _load_data(data_dir, splits=("train", "valid")):
    data_dir = Path(data_dir)
    vocab = Vocabulary.load(data_dir / "vocab.txt")
    return vocab, {s: load_pairs(data_dir / f"{s}.jsonl", vocab, s) for s in splits}


def _write_runlog(run, runlog, append=False):
    """Deterministic records in ``runlog.jsonl``; wall-clock timings in ``timings.jsonl``."""
    body = runlog.to_jsonl()
    timing = "".join(json.dumps({"index": i, "kind": r["kind"], "seconds": r.get("seconds")},
                                sort_keys=True) + "\n" for i, r in enumerate(runlog.records))
    if append:
        body = _read(run.path("runlog.jsonl")) + body
    atomic_write(run.path("runlog.jsonl"), body)
    atomic_write(run.path("timings.jsonl"), timing)


def _read(path):
    return Path(path).read_text(encoding="utf-8") if Path(path).exists() else ""


def _new_discriminator(kind, vocab_size, cfg, seed):
    dims = cfg.model_dims()
    cls = ClassifierDiscriminator if kind == "seqgan" else LMDiscriminator
    return cls(vocab_size, dims["embedding_dim"], dims["hidden_dim"], seed, dims["init_scale"])


# ---------------------------------------------------------------------------
# verbs

def cmd_prepare(args):
    run = Run(args, "prepare")
    cfg = run.config
    names = ["train.jsonl", "valid.jsonl", "test.jsonl", "vocab.txt", "skipped.tsv"]
    run.write_manifest([args.corpus], names)
    pairs, report = read_raw_corpus(args.corpus, cfg["corpus.mode"], cfg["corpus.min_response_words"])
    splits = split_dataset(pairs, cfg["corpus.split"], cfg.seed)
    train_tokens = [t for src, tgt in splits["train"] for t in [src, *tgt]]
    vocab = build_vocabulary(train_tokens, cfg["corpus.max_vocab"])
    vocab.save(run.path("vocab.txt"))
    for name, ds in splits.items():
        encoded = Dataset([TextPair(tuple(vocab.encode(s)), tuple(tuple(vocab.encode(x)) for x in t))
                           for s, t in ds], name, vocab)
        save_pairs(run.path(f"{name}.jsonl"), encoded)
    write_tsv(run.path("skipped.tsv"), ["line", "reason"], report.skipped)
    print(f"prepared {report.n_pairs} pairs from {report.n_lines} lines "
          f"({len(report.skipped)} skipped); vocabulary {len(vocab)}; "
          + ", ".join(f"{k} {len(v)}" for k, v in splits.items()))
    return EXIT_OK


def _pretrain(run, vocab, data, with_discriminator):
    """Pretrain a fresh generator (and discriminator) per the run's config."""
    cfg = run.config
    tc = cfg.train_config()
    dims = cfg.model_dims()
    rng = np.random.default_rng(cfg.seed)
    G = GeneratorModel(len(vocab), dims["embedding_dim"], dims["hidden_dim"], cfg.seed, dims["init_scale"])
    g_opt = make_optimizer(G, tc)
    runlog = RunLog()
    pretrain_generator(G, data["train"], tc.pretrain_generator_epochs, g_opt, rng, tc,
                       valid=data.get("valid"), runlog=runlog)
    D = d_opt = None
    if with_discriminator and tc.baseline in ("none", "seqgan"):
        D = _new_discriminator(tc.baseline, len(vocab), cfg, cfg.seed + 1)
        d_opt = make_optimizer(D, tc)
        pretrain_discriminator(D, G, data["train"], tc.pretrain_discriminator_epochs, d_opt, rng, tc,
                               runlog=runlog)
    return G, g_opt, D, d_opt, rng, runlog


def cmd_pretrain(args):
    run = Run(args, "pretrain")
    tc = run.config.train_config()
    has_d = tc.baseline in ("none", "seqgan")
    names = [GENERATOR_FILE, "runlog.jsonl", "timings.jsonl"] + ([DISCRIMINATOR_FILE] if has_d else [])
    data_dir = Path(args.data)
    run.write_manifest([data_dir / "vocab.txt", data_dir / "train.jsonl", data_dir / "valid.jsonl"], names)
    vocab, data = _load_data(data_dir)
    G, g_opt, D, d_opt, rng, runlog = _pretrain(run, vocab, data, True)
    save_checkpoint(run.path(GENERATOR_FILE), from_model(G, g_opt, g_opt.steps, rng, vocab))
    if D is not None:
        save_checkpoint(run.path(DISCRIMINATOR_FILE), from_model(D, d_opt, d_opt.steps))
    _write_runlog(run, runlog)
    print(f"pretrained generator: {g_opt.steps} updates")
    return EXIT_OK


def cmd_train(args):
    run = Run(args, "train")
    cfg = run.config
    tc = cfg.train_config()
    data_dir = Path(args.data)
    has_d = tc.baseline in ("none", "seqgan")
    state = run.path(STATE_DIR)
    if args.resume:
        g_ck = load_checkpoint(state / GENERATOR_FILE, "generator")
        d_ck = load_checkpoint(state / DISCRIMINATOR_FILE) if has_d else None
        vocab, data = _load_data(data_dir, ("train",))
        prior = RunLog([json.loads(x) for x in _read(run.path("runlog.jsonl")).splitlines() if x])
        trainer = restore_trainer(g_ck, d_ck, data["train"], tc, runlog=prior)
    else:
        names = [GENERATOR_FILE, "runlog.jsonl", "timings.jsonl", f"{STATE_DIR}/{GENERATOR_FILE}"]
        if has_d:
            names += [DISCRIMINATOR_FILE, f"{STATE_DIR}/{DISCRIMINATOR_FILE}"]
        inputs = [data_dir / "vocab.txt", data_dir / "train.jsonl", data_dir / "valid.jsonl"]
        inputs += [Path(p) for p in (args.init_generator, args.init_discriminator) if p]
        run.write_manifest(inputs, names)
        vocab, data = _load_data(data_dir)
        trainer = _fresh_trainer(run, args, vocab, data, has_d)
        state.mkdir(exist_ok=True)
        _save_state(run, trainer, vocab)

    every = cfg["train.checkpoint_every"]

    def checkpoint(tr):
        if every and tr.iteration % every == 0:
            _save_state(run, tr, vocab)
            _write_runlog(run, tr.log)

    trainer.run(callback=checkpoint)
    _save_state(run, trainer, vocab)
    g, d = trainer_checkpoints(trainer, vocab)
    save_checkpoint(run.path(GENERATOR_FILE), g)
    if d is not None:
        save_checkpoint(run.path(DISCRIMINATOR_FILE), d)
    _write_runlog(run, trainer.log)
    print(f"trained {trainer.iteration} iterations: {trainer.g_updates} generator and "
          f"{trainer.d_updates} discriminator updates")
    return EXIT_OK


def _fresh_trainer(run, args, vocab, data, has_d):
    cfg = run.config
    tc = cfg.train_config()
    if args.init_generator:
        g_ck = load_checkpoint(args.init_generator, "generator")
        if g_ck.vocab is not None and g_ck.vocab != vocab.id_to_token:
            raise ContractViolation(f"{args.init_generator}: vocabulary differs from {args.data}")
        G = g_ck.model()
        g_opt = g_ck.restore_optimizer(G) if g_ck.optimizer else make_optimizer(G, tc)
        rng = np.random.default_rng(cfg.seed)
        runlog = RunLog()
        D = d_opt = None
        if has_d:
            expected = "classifier" if tc.baseline == "seqgan" else "lm_discriminator"
            if args.init_discriminator:
                d_ck = load_checkpoint(args.init_discriminator, expected)
                D = d_ck.model()
                d_opt = d_ck.restore_optimizer(D) if d_ck.optimizer else make_optimizer(D, tc)
            else:
                D = _new_discriminator(tc.baseline, len(vocab), cfg, cfg.seed + 1)
                d_opt = make_optimizer(D, tc)
                pretrain_discriminator(D, G, data["train"], tc.pretrain_discriminator_epochs, d_opt,
                                       rng, tc, runlog=runlog)
    else:
        G, g_opt, D, d_opt, rng, runlog = _pretrain(run, vocab, data, has_d)
    return AdversarialTrainer(G, D, data["train"], tc, rng=rng, g_optimizer=g_opt,
                              d_optimizer=d_opt, runlog=runlog)


def _save_state(run, trainer, vocab):
    g, d = trainer_checkpoints(trainer, vocab)
    save_checkpoint(run.path(STATE_DIR) / GENERATOR_FILE, g)
    if d is not None:
        save_checkpoint(run.path(STATE_DIR) / DISCRIMINATOR_FILE, d)


def _read_sources(path, vocab):
    sources = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            tokens = [t for s in tokenize(line.rstrip("\n")) for t in s]
            sources.append(vocab.encode(tokens) if tokens else None)
    return sources


def generate_texts(G, vocab, sources, gen_config):
    """Decoded token texts for each source (``None`` sources give empty texts)."""
    rng = np.random.default_rng(gen_config.seed)
    keep = [i for i, s in enumerate(sources) if s]
    outs = generate_batch(G, [sources[i] for i in keep], gen_config, rng) if keep else []
    texts = [[] for _ in sources]
    for i, o in zip(keep, outs):
        texts[i] = [s for s in (vocab.decode([w for w in sent if w not in MARKERS]) for sent in o.sentences) if s]
    return texts


def cmd_generate(args):
    run = Run(args, "generate")
    ck = load_checkpoint(args.checkpoint, "generator")
    output = Path(args.output) if args.output else run.path("generated.txt")
    run.write_manifest([args.checkpoint, args.input], [str(output)])
    vocab = ck.vocabulary()
    G = ck.model()
    sources = _read_sources(args.input, vocab)
    texts = generate_texts(G, vocab, sources, run.config.generation_config())
    atomic_write(output, format_generated(texts))
    print(f"generated {len(texts)} texts -> {output}")
    return EXIT_OK


def evaluate_files(generated, reference, references=None, bins=None, max_n=4):
    gen = read_generated(generated)
    ref = read_reference(reference)
    report = diversity_report(_flat(gen))
    profile = frequency_cosine(_flat(ref), _flat(gen), bins) if bins else frequency_cosine(_flat(ref), _flat(gen))
    scores = None
    if references:
        refs = read_reference(references)
        if len(refs) != len(gen):
            raise ContractViolation(f"{references}: {len(refs)} references for {len(gen)} generated texts")
        scores = [bleu([t for s in g for t in s], [[t for s in r for t in s]], max_n) for g, r in zip(gen, refs)]
    return report, profile, scores


def _frequency_rows(profile):
    return [(f"{lo}-{hi}", n, c) for (lo, hi), n, c in zip(profile.bins, profile.bin_sizes, profile.cosines)]


def cmd_evaluate(args):
    run = Run(args, "evaluate")
    cfg = run.config
    names = ["diversity.tsv", "frequency.tsv"] + (["bleu.tsv"] if args.references else [])
    run.write_manifest([p for p in (args.generated, args.reference, args.references) if p], names)
    report, profile, scores = evaluate_files(args.generated, args.reference, args.references,
                                             cfg["evaluate.bins"], cfg["evaluate.bleu_max_n"])
    row = report.as_row()
    write_tsv(run.path("diversity.tsv"), list(row), [list(row.values())])
    write_tsv(run.path("frequency.tsv"), ["bin", "n_words", "cosine"], _frequency_rows(profile))
    if scores is not None:
        write_tsv(run.path("bleu.tsv"), ["index", "bleu"], list(enumerate(scores)))
    summary = "  ".join(f"{k} {v}" for k, v in row.items())
    summary += "  cosine " + " ".join(f"{c:.3f}" for c in profile.cosines)
    if scores:
        summary += f"  BLEU {np.mean(scores):.4f}"
    print(summary)
    return EXIT_OK


def cmd_analyze_frequency(args):
    run = Run(args, "analyze-frequency")
    run.write_manifest([args.generated, args.reference], ["frequency.tsv"])
    gen = read_generated(args.generated)
    ref = read_reference(args.reference)
    profile = frequency_cosine(_flat(ref), _flat(gen), run.config["evaluate.bins"])
    write_tsv(run.path("frequency.tsv"), ["bin", "n_words", "cosine"], _frequency_rows(profile))
    print("cosine per rank bin: " + " ".join(f"{c:.4f}" for c in profile.cosines))
    return EXIT_OK


def cmd_analyze_rewards(args):
    run = Run(args, "analyze-rewards")
    g_ck = load_checkpoint(args.generator, "generator")
    lm = load_checkpoint(args.lm, "lm_discriminator").model()
    clf = load_checkpoint(args.classifier, "classifier").model()
    run.write_manifest([args.generator, args.lm, args.classifier, args.corpus],
                       ["reward_histogram.tsv", "reward_summary.tsv"])
    vocab = g_ck.vocabulary()
    data = load_pairs(args.corpus, vocab)
    if args.limit:
        data = data.subset(range(min(args.limit, len(data))))
    G = g_ck.model()
    gen_cfg = run.config.generation_config()
    outs = generate_batch(G, data.sources(), gen_cfg, np.random.default_rng(gen_cfg.seed))
    gen = [list(s) for o in outs for s in o.sentences if [w for w in s if w not in MARKERS]]
    real = [list(s) for t in data.targets() for s in t]
    report = reward_histogram(real, gen, lm, clf, run.config["evaluate.n_bins"])
    write_tsv(run.path("reward_histogram.tsv"),
              ["discriminator", "source", "bin", "low", "high", "count"], report.rows())
    write_tsv(run.path("reward_summary.tsv"),
              ["discriminator", "source", "n", "mean", "std", "cv"], report.summary_rows())
    for disc, src, n, mean, std, cv in report.summary_rows():
        print(f"{disc:10s} {src:9s} n={n:5d} mean={mean:.4f} std={std:.4f} cv={cv:.4f}")
    return EXIT_OK


# ---------------------------------------------------------------------------

def _global_flags(suppress):
    # flags are accepted before or after the verb; the sub-parser copy must not
    # reset values given before it
    common = argparse.ArgumentParser(add_help=False)
    kw = {"default": argparse.SUPPRESS} if suppress else {}
    common.add_argument("--config", help="config file, or a preset name (desk, paper)", **kw)
    common.add_argument("--seed", type=int, help="overrides run.seed", **kw)
    common.add_argument("--out-dir", help="directory for artifacts and the manifest",
                        **(kw or {"default": "."}))
    common.add_argument("--force", action="store_true", help="overwrite an existing manifest", **kw)
    return common


def build_parser():
    p = argparse.ArgumentParser(prog="dpgan", description=__doc__.splitlines()[0],
                                parents=[_global_flags(False)])
    common = _global_flags(True)
    sub = p.add_subparsers(dest="verb", required=True)

    s = sub.add_parser("prepare", parents=[common], help="split a raw corpus and build the vocabulary")
    s.add_argument("corpus")
    s.set_defaults(func=cmd_prepare)

    s = sub.add_parser("pretrain", parents=[common], help="MLE-pretrain the generator (and discriminator)")
    s.add_argument("--data", required=True, help="directory written by prepare")
    s.set_defaults(func=cmd_pretrain)

    s = sub.add_parser("train", parents=[common], help="adversarial training (or a baseline)")
    s.add_argument("--data", required=True)
    s.add_argument("--init-generator")
    s.add_argument("--init-discriminator")
    s.add_argument("--resume", action="store_true", help="continue from <out-dir>/state")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("generate", parents=[common], help="generate one text per input line")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--input", required=True)
    s.add_argument("--output")
    s.set_defaults(func=cmd_generate)

    s = sub.add_parser("evaluate", parents=[common], help="diversity, frequency cosine and BLEU tables")
    s.add_argument("--generated", required=True)
    s.add_argument("--reference", required=True)
    s.add_argument("--references", help="per-line references for BLEU")
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("analyze-rewards", parents=[common], help="LM reward vs classifier score histograms")
    s.add_argument("--generator", required=True)
    s.add_argument("--lm", required=True)
    s.add_argument("--classifier", required=True)
    s.add_argument("--corpus", required=True, help="prepared .jsonl split")
    s.add_argument("--limit", type=int, default=0)
    s.set_defaults(func=cmd_analyze_rewards)

    s = sub.add_parser("analyze-frequency", parents=[common], help="rank-binned frequency cosine")
    s.add_argument("--generated", required=True)
    s.add_argument("--reference", required=True)
    s.set_defaults(func=cmd_analyze_frequency)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except KindMismatch as exc:
        print(f"refused: {exc}", file=sys.stderr)
        return EXIT_CONTRACT
    except (OSError, UsageError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ContractViolation as exc:
        print(f"contract violation: {exc}", file=sys.stderr)
        return EXIT_CONTRACT
    except DPGANError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
