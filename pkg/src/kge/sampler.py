"""Negative sampling and the concurrent mini-batch pipeline.

Producer threads build batches for disjoint shards of each epoch's
permutation and push them into a bounded queue; the trainer consumes from it.
All workers finish epoch ``e`` before any of them starts ``e + 1``, so the
queue never interleaves epochs.
"""

from __future__ import annotations

import math
import queue
import threading
from dataclasses import dataclass

import numpy as np

from .data import KgDataset, Triple

MAX_REJECTIONS = 100
STRATEGIES = ("uniform", "bern")


@dataclass(frozen=True)
class SamplerConfig:
    strategy: str = "bern"
    batch_size: int = 128
    reject_train_positives: bool = False
    seed: int = 0
    workers: int = 1
    queue_capacity: int = 8

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ValueError(f"strategy must be one of {STRATEGIES}, got {self.strategy!r}")
        for name in ("batch_size", "workers", "queue_capacity"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")


@dataclass(frozen=True)
class Batch:
    positives: np.ndarray
    negatives: np.ndarray
    epoch: int
    batch_index: int

    def __len__(self):
        return len(self.positives)


def permutation_rng(seed: int, epoch: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(epoch,)))


def worker_rng(seed: int, worker_id: int, epoch: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(epoch, worker_id + 1)))


class NegativeSampler:
    """Corrupts the head or the tail of positive triples.

    ``saturation`` counts corruptions that exhausted the rejection bound and
    were returned although they are train positives.
    """

    def __init__(self, dataset: KgDataset, cfg: SamplerConfig):
        self.dataset = dataset
        self.cfg = cfg
        self.n_entities = dataset.n_entities
        self.saturation = 0
        self._lock = threading.Lock()
        if cfg.strategy == "bern":
            self.head_prob = dataset.head_prob
        else:
            self.head_prob = np.full(dataset.n_relations, 0.5)

    def _replacements(self, original, rng):
        # uniform over every entity except the original, so the slot really changes
        if self.n_entities == 1:
            return original.copy()
        draw = rng.integers(0, self.n_entities - 1, size=original.shape)
        return draw + (draw >= original)

    def corrupt_batch(self, positives: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        positives = np.asarray(positives, dtype=np.int64).reshape(-1, 3)
        corrupt_head = rng.random(len(positives)) < self.head_prob[positives[:, 1]]
        slot = np.where(corrupt_head, 0, 2)
        negatives = positives.copy()
        rows = np.arange(len(positives))
        negatives[rows, slot] = self._replacements(positives[rows, slot], rng)
        if not self.cfg.reject_train_positives:
            return negatives
        train = self.dataset.train_keys
        pending = np.flatnonzero(np.isin(self.dataset.keys(negatives), train))
        for _ in range(MAX_REJECTIONS - 1):
            if not len(pending):
                break
            negatives[pending, slot[pending]] = self._replacements(positives[pending, slot[pending]], rng)
            pending = pending[np.isin(self.dataset.keys(negatives[pending]), train)]
        if len(pending):
            with self._lock:
                self.saturation += len(pending)
        return negatives

    def corrupt(self, triple, rng: np.random.Generator) -> Triple:
        return Triple(*map(int, self.corrupt_batch(np.array([triple]), rng)[0]))


def corrupt(t, d: KgDataset, cfg: SamplerConfig, rng: np.random.Generator) -> Triple:
    """Single-triple convenience wrapper around ``NegativeSampler``."""
    return NegativeSampler(d, cfg).corrupt(t, rng)


def n_batches(n_train: int, batch_size: int) -> int:
    return math.ceil(n_train / batch_size)


def epoch_batches(d: KgDataset, cfg: SamplerConfig, epoch: int, worker_id: int = 0,
                  sampler: NegativeSampler | None = None):
    """Yield this worker's share of one epoch, in batch-index order."""
    sampler = sampler or NegativeSampler(d, cfg)
    order = permutation_rng(cfg.seed, epoch).permutation(len(d.train))
    rng = worker_rng(cfg.seed, worker_id, epoch)
    for b in range(worker_id, n_batches(len(d.train), cfg.batch_size), cfg.workers):
        pos = d.train[order[b * cfg.batch_size:(b + 1) * cfg.batch_size]]
        neg = sampler.corrupt_batch(pos, rng)
        pos.flags.writeable = False
        neg.flags.writeable = False
        yield Batch(pos, neg, epoch, b)


_DONE = object()


class BatchGenerator:
    """Runs ``cfg.workers`` producer threads over ``epochs`` epochs.

    Iterate to consume batches. ``close()`` (or leaving a ``with`` block)
    cancels the producers and joins them.
    """

    def __init__(self, d: KgDataset, cfg: SamplerConfig, epochs: int, start_epoch: int = 0):
        if len(d.train) == 0:
            raise ValueError("train split is empty")
        self.d = d
        self.cfg = cfg
        self.epochs = range(start_epoch, start_epoch + epochs)
        self.sampler = NegativeSampler(d, cfg)
        self.queue: queue.Queue = queue.Queue(maxsize=cfg.queue_capacity)
        self._cancel = threading.Event()
        self._barrier = threading.Barrier(cfg.workers)
        self._errors: list[BaseException] = []
        self._threads = [threading.Thread(target=self._produce, args=(w,), daemon=True,
                                          name=f"kge-batch-{w}")
                         for w in range(cfg.workers)]
        self._started = False

    def _put(self, item) -> bool:
        while not self._cancel.is_set():
            try:
                self.queue.put(item, timeout=0.05)
                return True
            except queue.Full:
                continue
        return False

    def _produce(self, worker_id):
        try:
            for epoch in self.epochs:
                for batch in epoch_batches(self.d, self.cfg, epoch, worker_id, self.sampler):
                    if not self._put(batch):
                        return
                self._barrier.wait()
        except threading.BrokenBarrierError:
            return
        except BaseException as exc:  # surfaced to the consumer
            self._errors.append(exc)
            self._barrier.abort()
        finally:
            self._put(_DONE)

    def start(self):
        if not self._started:
            self._started = True
            for th in self._threads:
                th.start()
        return self

    def __iter__(self):
        self.start()
        finished = 0
        try:
            while finished < len(self._threads):
                item = self.queue.get()
                if item is _DONE:
                    finished += 1
                    continue
                yield item
            if self._errors:
                raise self._errors[0]
        finally:
            self.close()

    def close(self):
        self._cancel.set()
        self._barrier.abort()
        while True:
            try:
                self.queue.get_nowait()
            except queue.Empty:
                break
        for th in self._threads:
            if th.is_alive():
                th.join()

    def __enter__(self):
        return self.start()

    def __exit__(self, *exc):
        self.close()


def batch_stream(d: KgDataset, cfg: SamplerConfig, epochs: int = 1, start_epoch: int = 0):
    """Iterate over every batch of ``epochs`` epochs produced concurrently."""
    return iter(BatchGenerator(d, cfg, epochs, start_epoch))
