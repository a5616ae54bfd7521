"""Link-prediction evaluation: raw and filtered ranks, mean rank and hits@k."""

from __future__ import annotations

import csv
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import KgDataset, Triple
from .models import ModelParams, model_for

HITS_KS = (1, 3, 5, 10)


@dataclass(frozen=True)
class RankOutcome:
    triple: Triple
    head_rank_raw: int
    head_rank_filtered: int
    tail_rank_raw: int
    tail_rank_filtered: int


@dataclass
class MetricsReport:
    split: str
    n_triples: int
    mean_rank_raw: float
    mean_rank_filtered: float
    hits_raw: dict[int, float] = field(default_factory=dict)
    hits_filtered: dict[int, float] = field(default_factory=dict)

    @property
    def n_ranks(self) -> int:
        return 2 * self.n_triples

    def rows(self):
        """(metric, raw, filtered) rows in a fixed order."""
        yield "mean_rank", self.mean_rank_raw, self.mean_rank_filtered
        for k in sorted(self.hits_raw):
            yield f"hits@{k}", self.hits_raw[k], self.hits_filtered[k]

    def __str__(self):
        parts = [f"{name} {raw:.4f}/{flt:.4f}" for name, raw, flt in self.rows()]
        return f"[{self.split}, {self.n_triples} triples, raw/filtered] " + "  ".join(parts)


def rank_from_scores(scores, true_index: int, exclude=()) -> int:
    """1 + number of competitors scoring strictly higher than the true entity.

    Entities listed in ``exclude`` (other than the true one) are not counted;
    ties count in the true entity's favour.
    """
    scores = np.asarray(scores)
    better = scores > scores[true_index]
    exclude = np.unique(np.asarray(exclude, dtype=np.int64))
    if exclude.size:
        exclude = exclude[exclude != true_index]
        return 1 + int(better.sum()) - int(better[exclude].sum())
    return 1 + int(better.sum())


def tail_scores(params: ModelParams, h: int, r: int, model=None) -> np.ndarray:
    model = model or model_for(params)
    return model.score(params, h, r, np.arange(params.n_entities))


def head_scores(params: ModelParams, r: int, t: int, model=None) -> np.ndarray:
    model = model or model_for(params)
    return model.score(params, np.arange(params.n_entities), r, t)


def rank_triple(params: ModelParams, t, d: KgDataset, model=None) -> RankOutcome:
    model = model or model_for(params)
    h, r, tail = (int(x) for x in t)
    ts = tail_scores(params, h, r, model)
    hs = head_scores(params, r, tail, model)
    return RankOutcome(
        Triple(h, r, tail),
        head_rank_raw=rank_from_scores(hs, h),
        head_rank_filtered=rank_from_scores(hs, h, d.known_heads.get((r, tail), ())),
        tail_rank_raw=rank_from_scores(ts, tail),
        tail_rank_filtered=rank_from_scores(ts, tail, d.known_tails.get((h, r), ())),
    )


def rank_all(params: ModelParams, d: KgDataset, triples, workers: int = 1) -> list[RankOutcome]:
    """Rank every triple, partitioning the work over ``workers`` threads."""
    triples = np.asarray(triples, dtype=np.int64).reshape(-1, 3)
    model = model_for(params)
    d.known_heads, d.known_tails  # build lazily-cached indexes before threads share them

    def run(chunk):
        return [rank_triple(params, t, d, model) for t in chunk]

    if workers <= 1 or len(triples) < 2:
        return run(triples)
    chunks = np.array_split(triples, min(workers, len(triples)))
    with ThreadPoolExecutor(max_workers=workers) as pool:
        parts = list(pool.map(run, chunks))
    return [o for part in parts for o in part]


def summarize(outcomes: list[RankOutcome], split: str = "test", ks=HITS_KS) -> MetricsReport:
    if not outcomes:
        raise ValueError("no ranks to summarize")
    raw = np.array([(o.head_rank_raw, o.tail_rank_raw) for o in outcomes], dtype=float).ravel()
    flt = np.array([(o.head_rank_filtered, o.tail_rank_filtered) for o in outcomes],
                   dtype=float).ravel()
    return MetricsReport(
        split=split,
        n_triples=len(outcomes),
        mean_rank_raw=float(raw.mean()),
        mean_rank_filtered=float(flt.mean()),
        hits_raw={k: float(np.mean(raw <= k)) for k in ks},
        hits_filtered={k: float(np.mean(flt <= k)) for k in ks},
    )


def evaluate(params: ModelParams, d: KgDataset, split: str = "test", workers: int = 1,
             ks=HITS_KS, max_triples: int | None = None, return_ranks: bool = False):
    """Rank every triple of ``split`` by head and by tail prediction.

    Mean rank and hits@k pool the head and tail ranks. The report does not
    depend on ``workers``.
    """
    triples = d.split(split)
    if max_triples is not None:
        triples = triples[:max_triples]
    if len(triples) == 0:
        raise ValueError(f"split {split!r} is empty")
    outcomes = rank_all(params, d, triples, workers)
    report = summarize(outcomes, split, ks)
    return (report, outcomes) if return_ranks else report


def write_metrics_csv(report: MetricsReport, path) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["metric", "raw", "filtered"])
        for name, raw, flt in report.rows():
            w.writerow([name, repr(float(raw)), repr(float(flt))])
    return path


def read_metrics_csv(path, split: str = "test") -> MetricsReport:
    rows = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            rows[row["metric"]] = (float(row["raw"]), float(row["filtered"]))
    mr = rows.pop("mean_rank")
    hits = {int(k.split("@")[1]): v for k, v in rows.items()}
    return MetricsReport(split, 0, mr[0], mr[1],
                         {k: v[0] for k, v in hits.items()}, {k: v[1] for k, v in hits.items()})


def write_ranks_csv(outcomes: list[RankOutcome], path, vocab=None) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["head", "relation", "tail", "head_rank_raw", "head_rank_filtered",
                    "tail_rank_raw", "tail_rank_filtered"])
        for o in outcomes:
            labels = vocab.decode(o.triple) if vocab is not None else o.triple
            w.writerow([*labels, o.head_rank_raw, o.head_rank_filtered,
                        o.tail_rank_raw, o.tail_rank_filtered])
    return path
