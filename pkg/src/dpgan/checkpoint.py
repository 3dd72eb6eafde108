"""Binary checkpoints: model parameters plus optimizer, RNG and training-step state.

Layout (all integers little-endian)::

    b"DPGN" | u32 version | u64 header length | UTF-8 JSON header
            | float64 tensor data in header order | u32 CRC-32 of all previous bytes

The header lists each tensor's name and shape; optimizer accumulators follow
the parameters in the same order.  Loading validates magic, version, lengths
and checksum before building anything, so a damaged file never yields a
partially loaded model.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import numerics as nx
from .corpus import Vocabulary
from .discriminators import ClassifierDiscriminator, LMDiscriminator
from .errors import CheckpointError, KindMismatch
from .generator import GeneratorModel

MAGIC = b"DPGN"
VERSION = 1
_PREFIX = struct.Struct("<4sIQ")
_CRC = struct.Struct("<I")

MODEL_KINDS = {cls.kind: cls for cls in (GeneratorModel, LMDiscriminator, ClassifierDiscriminator)}


@dataclass
class Checkpoint:
    kind: str
    dims: dict
    arrays: dict                      # parameter name -> float64 array, in model order
    step: int = 0
    optimizer: dict | None = None     # learning_rate, epsilon, clip_norm, steps, accumulators
    rng_state: dict | None = None
    vocab: list | None = None         # full id_to_token list, reserved block included
    extra: dict = field(default_factory=dict)

    def model(self):
        cls = MODEL_KINDS.get(self.kind)
        if cls is None:
            raise CheckpointError(f"unknown model kind {self.kind!r}")
        try:
            return cls.from_arrays(self.dims, {k: v.copy() for k, v in self.arrays.items()})
        except ValueError as exc:
            raise CheckpointError(f"checkpoint does not describe a valid {self.kind}: {exc}") from None

    def vocabulary(self):
        if self.vocab is None:
            raise CheckpointError(f"{self.kind} checkpoint carries no vocabulary")
        return Vocabulary(self.vocab[5:])

    def restore_optimizer(self, model):
        """An ``Adagrad`` bound to ``model`` with the saved accumulators and step count."""
        if self.optimizer is None:
            raise CheckpointError("checkpoint carries no optimizer state")
        o = self.optimizer
        opt = nx.Adagrad(model.parameters(), o["learning_rate"], o["epsilon"], o["clip_norm"])
        opt.state.accumulators = [a.copy() for a in o["accumulators"]]
        opt.steps = o["steps"]
        return opt

    def restore_rng(self):
        if self.rng_state is None:
            raise CheckpointError("checkpoint carries no RNG state")
        rng = np.random.default_rng()
        rng.bit_generator.state = self.rng_state
        return rng


def from_model(model, optimizer=None, step=0, rng=None, vocab=None, extra=None):
    opt = None
    if optimizer is not None:
        opt = {"learning_rate": optimizer.state.learning_rate, "epsilon": optimizer.state.epsilon,
               "clip_norm": optimizer.clip_norm, "steps": optimizer.steps,
               "accumulators": [a.copy() for a in optimizer.state.accumulators]}
    return Checkpoint(
        kind=model.kind, dims=dict(model.dims),
        arrays={k: p.data.copy() for k, p in model.params.items()},
        step=int(step), optimizer=opt,
        rng_state=None if rng is None else rng.bit_generator.state,
        vocab=None if vocab is None else list(vocab.id_to_token),
        extra=dict(extra or {}))


def encode(ckpt):
    names = list(ckpt.arrays)
    tensors = [[n, list(ckpt.arrays[n].shape)] for n in names]
    header = {"kind": ckpt.kind, "dims": ckpt.dims, "tensors": tensors, "step": ckpt.step,
              "rng_state": ckpt.rng_state, "vocab": ckpt.vocab, "extra": ckpt.extra,
              "optimizer": None}
    blobs = [np.asarray(ckpt.arrays[n], dtype="<f8").tobytes() for n in names]
    if ckpt.optimizer is not None:
        o = ckpt.optimizer
        accs = o["accumulators"]
        if len(accs) != len(names):
            raise CheckpointError("optimizer accumulators do not match the parameter list")
        for n, a in zip(names, accs):
            if a.shape != ckpt.arrays[n].shape:
                raise CheckpointError(f"accumulator for {n} has shape {a.shape}")
        header["optimizer"] = {k: o[k] for k in ("learning_rate", "epsilon", "clip_norm", "steps")}
        blobs += [np.asarray(a, dtype="<f8").tobytes() for a in accs]
    head = json.dumps(header, sort_keys=True).encode("utf-8")
    body = _PREFIX.pack(MAGIC, VERSION, len(head)) + head + b"".join(blobs)
    return body + _CRC.pack(zlib.crc32(body))


def decode(data, source="<bytes>"):
    if len(data) < _PREFIX.size + _CRC.size:
        raise CheckpointError(f"{source}: truncated checkpoint ({len(data)} bytes)")
    magic, version, head_len = _PREFIX.unpack_from(data)
    if magic != MAGIC:
        raise CheckpointError(f"{source}: not a checkpoint (bad magic {magic!r})")
    if version != VERSION:
        raise CheckpointError(f"{source}: checkpoint format version {version}, expected {VERSION}")
    body, (crc,) = data[:-_CRC.size], _CRC.unpack(data[-_CRC.size:])
    if zlib.crc32(body) != crc:
        raise CheckpointError(f"{source}: checksum mismatch (corrupt or truncated file)")
    start = _PREFIX.size
    try:
        header = json.loads(body[start:start + head_len].decode("utf-8"))
        tensors = [(n, tuple(s)) for n, s in header["tensors"]]
    except (UnicodeDecodeError, ValueError, KeyError, TypeError) as exc:
        raise CheckpointError(f"{source}: unreadable header ({exc})") from None
    offset = start + head_len
    shapes = list(tensors) * (2 if header.get("optimizer") is not None else 1)
    needed = sum(8 * int(np.prod(s)) for _, s in shapes)
    if len(body) - offset != needed:
        raise CheckpointError(f"{source}: expected {needed} bytes of tensor data, found {len(body) - offset}")
    values = []
    for _, shape in shapes:
        n = int(np.prod(shape))
        values.append(np.frombuffer(body, dtype="<f8", count=n, offset=offset).reshape(shape).astype(np.float64))
        offset += 8 * n
    arrays = {name: values[i] for i, (name, _) in enumerate(tensors)}
    opt = header.get("optimizer")
    if opt is not None:
        opt = dict(opt, accumulators=values[len(tensors):])
    return Checkpoint(header["kind"], header["dims"], arrays, header["step"], opt,
                      header.get("rng_state"), header.get("vocab"), header.get("extra") or {})


def atomic_write(path, data):
    """Write ``data`` (bytes or str) to a sibling temp file, then rename over ``path``."""
    path = Path(path)
    if isinstance(data, str):
        data = data.encode("utf-8")
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_checkpoint(path, ckpt):
    atomic_write(path, encode(ckpt))


def load_checkpoint(path, expected_kind=None):
    """Read and validate a checkpoint; refuse if its kind differs from ``expected_kind``."""
    data = Path(path).read_bytes()
    ckpt = decode(data, str(path))
    if expected_kind is not None and ckpt.kind != expected_kind:
        raise KindMismatch(path, expected_kind, ckpt.kind)
    return ckpt


# ---------------------------------------------------------------------------
# adversarial training state

def trainer_checkpoints(trainer, vocab=None):
    """Generator and (optional) discriminator checkpoints capturing everything a
    resumed ``AdversarialTrainer`` needs to continue bit-identically."""
    counters = {"iteration": trainer.iteration, "g_updates": trainer.g_updates,
                "d_updates": trainer.d_updates}
    g = from_model(trainer.G, trainer.g_opt, trainer.iteration, trainer.rng, vocab, counters)
    d = None
    if trainer.D is not None:
        d = from_model(trainer.D, trainer.d_opt, trainer.iteration, extra=counters)
    return g, d


def restore_trainer(g_ckpt, d_ckpt, dataset, config, runlog=None):
    from .training import AdversarialTrainer

    G = g_ckpt.model()
    D = d_ckpt.model() if d_ckpt is not None else None
    trainer = AdversarialTrainer(
        G, D, dataset, config, rng=g_ckpt.restore_rng(), g_optimizer=g_ckpt.restore_optimizer(G),
        d_optimizer=d_ckpt.restore_optimizer(D) if D is not None else None, runlog=runlog)
    counters = g_ckpt.extra
    try:
        trainer.iteration = int(counters["iteration"])
        trainer.g_updates = int(counters["g_updates"])
        trainer.d_updates = int(counters["d_updates"])
    except KeyError as exc:
        raise CheckpointError(f"generator checkpoint lacks trainer counter {exc}") from None
    return trainer
