"""Triple datasets: parsing, ordinal encoding, filter index and disk cache."""

from __future__ import annotations

import hashlib
import logging
import os
import struct
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .errors import CacheError, DatasetError

logger = logging.getLogger(__name__)

SPLITS = ("train", "valid", "test")
DEFAULT_FILES = {"train": "train.txt", "valid": "valid.txt", "test": "test.txt"}

CACHE_MAGIC = b"KGC1"
CACHE_DIR = ".kgcache"


class Triple(NamedTuple):
    head: int
    relation: int
    tail: int


@dataclass(frozen=True)
class Vocab:
    """Dense 0-based ids for entity and relation labels, kept in first-seen order."""

    entities: tuple[str, ...]
    relations: tuple[str, ...]

    @cached_property
    def entity_to_id(self) -> dict[str, int]:
        return {label: i for i, label in enumerate(self.entities)}

    @cached_property
    def relation_to_id(self) -> dict[str, int]:
        return {label: i for i, label in enumerate(self.relations)}

    @property
    def n_entities(self) -> int:
        return len(self.entities)

    @property
    def n_relations(self) -> int:
        return len(self.relations)

    def encode(self, head: str, relation: str, tail: str) -> Triple:
        return Triple(self.entity_to_id[head], self.relation_to_id[relation],
                      self.entity_to_id[tail])

    def decode(self, triple) -> tuple[str, str, str]:
        h, r, t = (int(x) for x in triple)
        return self.entities[h], self.relations[r], self.entities[t]


def encode_key(triples: np.ndarray, n_entities: int, n_relations: int) -> np.ndarray:
    """Pack (h, r, t) rows into one int64 each, for fast membership tests."""
    triples = np.asarray(triples, dtype=np.int64).reshape(-1, 3)
    return (triples[:, 0] * n_relations + triples[:, 1]) * n_entities + triples[:, 2]


def bern_stats(train) -> dict[int, tuple[float, float]]:
    """Per-relation (tails per head, heads per tail) over the given triples.

    >>> bern_stats([(0, 0, 1), (0, 0, 2), (3, 0, 1)])
    {0: (1.5, 1.5)}
    """
    train = np.asarray(train, dtype=np.int64).reshape(-1, 3)
    stats = {}
    for r in np.unique(train[:, 1]):
        rows = train[train[:, 1] == r]
        n = len(rows)
        stats[int(r)] = (n / len(np.unique(rows[:, 0])), n / len(np.unique(rows[:, 2])))
    return stats


@dataclass(frozen=True, eq=False)
class KgDataset:
    """An encoded knowledge graph with its three splits.

    Arrays are ``int64`` of shape ``(n, 3)`` holding ``(head, relation, tail)``
    ids and are marked read-only, so a dataset can be shared between threads.
    """

    name: str
    vocab: Vocab
    train: np.ndarray
    valid: np.ndarray
    test: np.ndarray
    bern: dict[int, tuple[float, float]] = field(default_factory=dict)

    def __post_init__(self):
        for split in SPLITS:
            arr = np.ascontiguousarray(getattr(self, split), dtype=np.int64).reshape(-1, 3)
            arr.flags.writeable = False
            object.__setattr__(self, split, arr)

    @property
    def n_entities(self) -> int:
        return self.vocab.n_entities

    @property
    def n_relations(self) -> int:
        return self.vocab.n_relations

    def split(self, name: str) -> np.ndarray:
        if name not in SPLITS:
            raise ValueError(f"unknown split {name!r}")
        return getattr(self, name)

    def keys(self, triples) -> np.ndarray:
        return encode_key(triples, self.n_entities, self.n_relations)

    @cached_property
    def filter_index(self) -> frozenset[Triple]:
        """Every known fact across train, valid and test, deduplicated."""
        rows = np.concatenate([self.train, self.valid, self.test])
        return frozenset(Triple(*map(int, row)) for row in rows)

    @cached_property
    def train_keys(self) -> np.ndarray:
        return np.unique(self.keys(self.train))

    @cached_property
    def known_tails(self) -> dict[tuple[int, int], np.ndarray]:
        """(head, relation) -> sorted array of every known tail."""
        return _group(self.filter_index, key=lambda t: (t.head, t.relation), value=2)

    @cached_property
    def known_heads(self) -> dict[tuple[int, int], np.ndarray]:
        """(relation, tail) -> sorted array of every known head."""
        return _group(self.filter_index, key=lambda t: (t.relation, t.tail), value=0)

    @cached_property
    def head_prob(self) -> np.ndarray:
        """Bernoulli head-corruption probability per relation (0.5 without stats)."""
        p = np.full(self.n_relations, 0.5)
        for r, (tph, hpt) in self.bern.items():
            p[r] = tph / (tph + hpt)
        return p

    @cached_property
    def unseen_entities(self) -> int:
        """Number of entities that never occur in the train split."""
        seen = np.zeros(self.n_entities, dtype=bool)
        seen[self.train[:, 0]] = True
        seen[self.train[:, 2]] = True
        return int((~seen).sum())

    def summary(self) -> str:
        return (f"{self.name}: {self.n_entities} entities, {self.n_relations} relations, "
                f"train/valid/test = {len(self.train)}/{len(self.valid)}/{len(self.test)}, "
                f"{self.unseen_entities} entities absent from train")

    def equals(self, other: "KgDataset") -> bool:
        return (self.name == other.name and self.vocab == other.vocab
                and all(np.array_equal(self.split(s), other.split(s)) for s in SPLITS)
                and self.bern == other.bern)


def _group(facts, key, value):
    groups: dict = {}
    for fact in facts:
        groups.setdefault(key(fact), []).append(fact[value])
    return {k: np.array(sorted(v), dtype=np.int64) for k, v in groups.items()}


def from_labels(splits: dict[str, list[tuple[str, str, str]]], name: str = "custom") -> KgDataset:
    """Build a dataset from labelled triples, assigning ids in first-seen order."""
    ent: dict[str, int] = {}
    rel: dict[str, int] = {}
    encoded = {}
    for split in SPLITS:
        rows = []
        for h, r, t in splits.get(split, ()):
            hid = ent.setdefault(h, len(ent))
            rid = rel.setdefault(r, len(rel))
            tid = ent.setdefault(t, len(ent))
            rows.append((hid, rid, tid))
        encoded[split] = np.array(rows, dtype=np.int64).reshape(-1, 3)
    vocab = Vocab(tuple(ent), tuple(rel))
    return KgDataset(name, vocab, encoded["train"], encoded["valid"], encoded["test"],
                     bern_stats(encoded["train"]))


def read_triples(path) -> list[tuple[str, str, str]]:
    path = Path(path)
    if not path.is_file():
        raise DatasetError(f"missing split file: {path}")
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\r\n")
            if not line.strip():
                continue
            fields = line.split("\t")
            if len(fields) != 3:
                raise DatasetError(
                    f"{path}:{lineno}: expected 3 TAB-separated fields, got {len(fields)}")
            rows.append((fields[0], fields[1], fields[2]))
    return rows


def parse_dataset(dir_path, names: dict[str, str] | None = None) -> KgDataset:
    """Parse ``train``/``valid``/``test`` TSV files found in ``dir_path``.

    ``names`` overrides the per-split file names (defaults ``train.txt`` etc).
    The train file is required; a missing valid or test file is an empty split.
    """
    dir_path = Path(dir_path)
    files = {**DEFAULT_FILES, **(names or {})}
    labelled = {}
    for split in SPLITS:
        path = dir_path / files[split]
        if split != "train" and not path.is_file():
            logger.warning("no %s split (%s); treating it as empty", split, path)
            labelled[split] = []
            continue
        labelled[split] = read_triples(path)
    d = from_labels(labelled, name=dir_path.resolve().name)
    if d.unseen_entities:
        logger.warning("%d entities appear only in valid/test", d.unseen_entities)
    logger.info(d.summary())
    return d


# -- cache ---------------------------------------------------------------

def _checksum(payload: bytes) -> bytes:
    return hashlib.blake2b(payload, digest_size=8).digest()


def _pack_strings(labels) -> bytes:
    parts = [struct.pack("<I", len(labels))]
    for label in labels:
        raw = label.encode("utf-8")
        parts.append(struct.pack("<I", len(raw)))
        parts.append(raw)
    return b"".join(parts)


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise CacheError("truncated cache payload")
        chunk = self.buf[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def strings(self) -> tuple[str, ...]:
        (n,) = self.unpack("<I")
        out = []
        for _ in range(n):
            (size,) = self.unpack("<I")
            out.append(self.take(size).decode("utf-8"))
        return tuple(out)


def dumps_cache(d: KgDataset) -> bytes:
    parts = [_pack_strings([d.name]), _pack_strings(d.vocab.entities),
             _pack_strings(d.vocab.relations)]
    for split in SPLITS:
        arr = d.split(split)
        parts.append(struct.pack("<Q", len(arr)))
        parts.append(arr.astype("<i8").tobytes())
    parts.append(struct.pack("<I", len(d.bern)))
    for r in sorted(d.bern):
        tph, hpt = d.bern[r]
        parts.append(struct.pack("<Idd", r, tph, hpt))
    payload = b"".join(parts)
    return CACHE_MAGIC + payload + _checksum(payload)


def loads_cache(blob: bytes) -> KgDataset:
    if len(blob) < len(CACHE_MAGIC) + 8:
        raise CacheError("truncated cache file")
    magic = blob[:len(CACHE_MAGIC)]
    if magic != CACHE_MAGIC:
        raise CacheError(f"cache version mismatch: found {magic!r}, expected {CACHE_MAGIC!r}")
    payload, digest = blob[len(CACHE_MAGIC):-8], blob[-8:]
    if _checksum(payload) != digest:
        raise CacheError("cache checksum mismatch")
    rd = _Reader(payload)
    (name,) = rd.strings()
    vocab = Vocab(rd.strings(), rd.strings())
    splits = {}
    for split in SPLITS:
        (n,) = rd.unpack("<Q")
        splits[split] = np.frombuffer(rd.take(n * 24), dtype="<i8").reshape(n, 3).astype(np.int64)
    (n_stats,) = rd.unpack("<I")
    bern = {}
    for _ in range(n_stats):
        r, tph, hpt = rd.unpack("<Idd")
        bern[r] = (tph, hpt)
    if rd.pos != len(payload):
        raise CacheError("trailing bytes in cache payload")
    return KgDataset(name, vocab, splits["train"], splits["valid"], splits["test"], bern)


def save_cache(d: KgDataset, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(dumps_cache(d))
    os.replace(tmp, path)
    return path


def load_cache(path) -> KgDataset:
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as exc:
        raise CacheError(f"cannot read cache {path}: {exc}") from exc
    return loads_cache(blob)


def cache_path(dir_path) -> Path:
    dir_path = Path(dir_path).resolve()
    return dir_path / CACHE_DIR / f"{dir_path.name}.bin"


def load_dataset(dir_path, names: dict[str, str] | None = None, use_cache: bool = True) -> KgDataset:
    """Parse a dataset directory, going through the on-disk cache when it is fresh.

    A cache is stale when any split file is newer than it; stale or unreadable
    caches are rebuilt.
    """
    dir_path = Path(dir_path)
    if not dir_path.is_dir():
        raise DatasetError(f"dataset directory not found: {dir_path}")
    if not use_cache:
        return parse_dataset(dir_path, names)
    cpath = cache_path(dir_path)
    files = {**DEFAULT_FILES, **(names or {})}
    sources = [dir_path / f for f in files.values() if (dir_path / f).is_file()]
    if cpath.is_file() and sources:
        newest = max(s.stat().st_mtime_ns for s in sources)
        if cpath.stat().st_mtime_ns >= newest:
            try:
                return load_cache(cpath)
            except CacheError as exc:
                logger.warning("ignoring cache %s: %s", cpath, exc)
    d = parse_dataset(dir_path, names)
    try:
        save_cache(d, cpath)
    except OSError as exc:
        logger.warning("could not write cache %s: %s", cpath, exc)
    return d


def write_triples(path, rows) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for h, r, t in rows:
            fh.write(f"{h}\t{r}\t{t}\n")


def make_modular_kg(out_dir, n_entities: int = 100, steps=(1, 5), holdout: float = 0.1,
                    seed: int = 0) -> Path:
    """Write a planted modular-translation graph: facts ``(i, +k, (i + k) mod n)``.

    A ``holdout`` fraction of the facts is split evenly between valid and test.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    facts = [(f"e{i}", f"+{k}", f"e{(i + k) % n_entities}")
             for k in steps for i in range(n_entities)]
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(facts))
    n_held = int(round(holdout * len(facts)))
    held, kept = order[:n_held], order[n_held:]
    half = n_held // 2
    write_triples(out_dir / "train.txt", [facts[i] for i in sorted(kept)])
    write_triples(out_dir / "valid.txt", [facts[i] for i in held[:half]])
    write_triples(out_dir / "test.txt", [facts[i] for i in held[half:]])
    return out_dir
