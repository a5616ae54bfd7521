"""Training loop, optimizers and model checkpoints."""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import struct
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import models
from .data import KgDataset
from .errors import CheckpointError, NonFiniteLossError
from .evaluation import evaluate
from .losses import loss, pair_losses  # noqa: F401  loss is part of the trainer surface
from .models import LossContext, ModelParams
from .sampler import BatchGenerator, SamplerConfig

logger = logging.getLogger(__name__)

# keys printed by the tuner and stored in golden presets
GOLDEN_KEYS = ("L1_flag", "batch_size", "epochs", "hidden_size", "learning_rate", "margin",
               "opt", "samp")


@dataclass
class HyperParams:
    L1_flag: bool = False
    batch_size: int = 128
    epochs: int = 100
    hidden_size: int = 50
    learning_rate: float = 0.01
    margin: float = 1.0
    opt: str = "sgd"
    samp: str = "bern"
    loss_kind: str = "margin"
    lambda_reg: float = 1e-5
    seed: int = 0

    def golden(self) -> dict:
        return {k: getattr(self, k) for k in GOLDEN_KEYS}

    def replace(self, **changes) -> "HyperParams":
        return HyperParams(**{**asdict(self), **changes})

    @classmethod
    def keys(cls):
        return [f.name for f in fields(cls)]


@dataclass
class TrainRecord:
    losses: list[float] = field(default_factory=list)
    seconds: list[float] = field(default_factory=list)
    validation: list[tuple[int, object]] = field(default_factory=list)

    def __len__(self):
        return len(self.losses)


class SGD:
    def __init__(self, lr):
        self.lr = lr

    def step(self, params: ModelParams, grads):
        for name, (ids, g) in grads.items():
            params[name][ids] -= self.lr * g


class Adam:
    """Lazy Adam: moments and bias-correction step counts advance only on touched rows."""

    def __init__(self, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.t: dict[str, np.ndarray] = {}

    def step(self, params: ModelParams, grads):
        for name, (ids, g) in grads.items():
            if name not in self.m:
                self.m[name] = np.zeros_like(params[name])
                self.v[name] = np.zeros_like(params[name])
                self.t[name] = np.zeros(len(params[name]), dtype=np.int64)
            m, v, t = self.m[name], self.v[name], self.t[name]
            t[ids] += 1
            m[ids] = self.beta1 * m[ids] + (1 - self.beta1) * g
            v[ids] = self.beta2 * v[ids] + (1 - self.beta2) * g * g
            shape = (-1,) + (1,) * (g.ndim - 1)
            steps = t[ids].reshape(shape)
            m_hat = m[ids] / (1 - self.beta1 ** steps)
            v_hat = v[ids] / (1 - self.beta2 ** steps)
            params[name][ids] -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def make_optimizer(name: str, lr: float):
    if name == "sgd":
        return SGD(lr)
    if name == "adam":
        return Adam(lr)
    raise ValueError(f"unknown optimizer {name!r}")


def _offending_rows(params: ModelParams, model, batch, ctx) -> dict[str, np.ndarray]:
    """Non-finite parameter rows, or else the rows behind non-finite pair losses."""
    out = {}
    for name, arr in params.tensors.items():
        bad = ~np.isfinite(arr.reshape(len(arr), -1)).all(axis=1)
        if bad.any():
            out[name] = np.flatnonzero(bad)
    if out:
        return out
    pos, neg = batch.positives, batch.negatives
    s_pos = model.score(params, pos[:, 0], pos[:, 1], pos[:, 2])
    s_neg = model.score(params, neg[:, 0], neg[:, 1], neg[:, 2])
    bad = ~np.isfinite(pair_losses(ctx.kind, s_pos, s_neg, ctx.margin))
    return models.touched_rows(model, np.concatenate([pos[bad], neg[bad]]))


def train(d: KgDataset, kind: str, hp: HyperParams, cfg: SamplerConfig | None = None,
          eval_every: int | None = None, eval_max_triples: int = 500, params: ModelParams | None = None,
          on_epoch=None):
    """Fit a model of ``kind`` on the train split.

    ``cfg`` supplies the sampler's concurrency settings; its strategy, batch
    size and seed are taken from ``hp``. Every ``eval_every`` epochs the
    first ``eval_max_triples`` valid triples are ranked and the report is
    stored in the returned record.

    Returns ``(params, record)``.
    """
    if hp.epochs < 1:
        raise ValueError("epochs must be >= 1")
    if hp.learning_rate < 0:
        raise ValueError("learning_rate must be >= 0")
    cfg = cfg or SamplerConfig()
    cfg = SamplerConfig(strategy=hp.samp, batch_size=hp.batch_size,
                        reject_train_positives=cfg.reject_train_positives, seed=hp.seed,
                        workers=cfg.workers, queue_capacity=cfg.queue_capacity)
    model = models.get_model(kind, L1_flag=hp.L1_flag)
    if params is None:
        params = model.init_params(d.n_entities, d.n_relations, hp.hidden_size, seed=hp.seed)
    ctx = LossContext(hp.loss_kind, hp.margin, hp.lambda_reg)
    opt = make_optimizer(hp.opt, hp.learning_rate)
    eval_every = eval_every or hp.epochs
    record = TrainRecord()

    total, count = 0.0, 0
    current = 0
    started = time.perf_counter()
    with BatchGenerator(d, cfg, hp.epochs) as gen:
        for batch in gen:
            with np.errstate(over="ignore", invalid="ignore"):
                value, grads = models.loss_and_grad(params, batch.positives, batch.negatives,
                                                    ctx, model)
                if not np.isfinite(value):
                    raise NonFiniteLossError(batch.epoch, batch.batch_index,
                                             _offending_rows(params, model, batch, ctx))
                opt.step(params, grads)
                model.project(params, {name: ids for name, (ids, _) in grads.items()})
            total += value
            count += len(batch)
            if count == len(d.train):
                record.losses.append(total / count)
                record.seconds.append(time.perf_counter() - started)
                logger.info("epoch %d/%d  loss %.6f  %.2fs", current + 1, hp.epochs,
                            record.losses[-1], record.seconds[-1])
                if len(d.valid) and (current + 1) % eval_every == 0:
                    report = evaluate(params, d, "valid", max_triples=eval_max_triples)
                    record.validation.append((current + 1, report))
                if on_epoch is not None:
                    on_epoch(current, params, record)
                total, count = 0.0, 0
                current += 1
                started = time.perf_counter()
    return params, record


def write_loss_csv(record: TrainRecord, path) -> Path:
    """Write ``epoch,mean_loss``. Floats use repr so reruns compare byte for byte."""
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "mean_loss"])
        for i, value in enumerate(record.losses, start=1):
            w.writerow([i, repr(float(value))])
    return path


def write_timing_csv(record: TrainRecord, path) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "seconds"])
        for i, value in enumerate(record.seconds, start=1):
            w.writerow([i, f"{value:.6f}"])
    return path


def read_loss_csv(path) -> TrainRecord:
    record = TrainRecord()
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            record.losses.append(float(row["mean_loss"]))
    return record


# -- checkpoints ---------------------------------------------------------

MODEL_MAGIC = b"KGM1"


def dumps_params(params: ModelParams) -> bytes:
    header = {
        "kind": params.kind, "n_entities": params.n_entities, "n_relations": params.n_relations,
        "dim": params.dim, "settings": params.settings,
        "tensors": [[name, list(arr.shape)] for name, arr in params.tensors.items()],
    }
    raw = json.dumps(header, sort_keys=True).encode("utf-8")
    parts = [struct.pack("<I", len(raw)), raw]
    parts += [np.ascontiguousarray(arr, dtype="<f8").tobytes() for arr in params.tensors.values()]
    payload = b"".join(parts)
    return MODEL_MAGIC + payload + hashlib.blake2b(payload, digest_size=8).digest()


def loads_params(blob: bytes) -> ModelParams:
    if blob[:4] != MODEL_MAGIC:
        raise CheckpointError(f"not a model checkpoint (tag {blob[:4]!r})")
    payload, digest = blob[4:-8], blob[-8:]
    if len(blob) < 16 or hashlib.blake2b(payload, digest_size=8).digest() != digest:
        raise CheckpointError("checkpoint checksum mismatch")
    (size,) = struct.unpack_from("<I", payload)
    header = json.loads(payload[4:4 + size])
    pos = 4 + size
    tensors = {}
    for name, shape in header["tensors"]:
        n = int(np.prod(shape)) * 8
        tensors[name] = np.frombuffer(payload[pos:pos + n], dtype="<f8").reshape(shape).astype(float)
        pos += n
    if pos != len(payload):
        raise CheckpointError("checkpoint size does not match its header")
    return ModelParams(header["kind"], header["n_entities"], header["n_relations"], header["dim"],
                       tensors, header["settings"])


def save_params(params: ModelParams, path) -> Path:
    path = Path(path)
    path.write_bytes(dumps_params(params))
    return path


def load_params(path) -> ModelParams:
    try:
        blob = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    return loads_params(blob)
