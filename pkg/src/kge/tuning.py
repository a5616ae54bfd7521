"""Hyperparameter search with a tree-structured Parzen estimator (TPE).

The first ``n_startup`` suggestions are uniform draws. After that the
finished trials are split at the ``gamma`` quantile of their objective into
a good and a bad set; each dimension gets an independent density per set and
the candidate (drawn from the good densities) with the largest good/bad
density ratio is suggested.
"""

from __future__ import annotations

import itertools
import json
import logging
import math
import sys
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Callable

import numpy as np

from .errors import ConfigError, NoResultError, NonFiniteLossError

logger = logging.getLogger(__name__)

N_STARTUP = 10
GAMMA = 0.25
N_CANDIDATES = 24


# -- domains -------------------------------------------------------------

@dataclass(frozen=True)
class Categorical:
    choices: tuple

    def __post_init__(self):
        if not self.choices:
            raise ConfigError("search_space", "categorical domain is empty")

    @property
    def values(self):
        return self.choices

    def contains(self, x) -> bool:
        return any(x == c and type(x) is type(c) for c in self.choices)


@dataclass(frozen=True)
class IntGrid(Categorical):
    """An ordered set of admissible integers, e.g. batch sizes."""

    def __post_init__(self):
        super().__post_init__()
        object.__setattr__(self, "choices", tuple(int(v) for v in self.choices))


@dataclass(frozen=True)
class Uniform:
    low: float
    high: float

    def __post_init__(self):
        if not (math.isfinite(self.low) and math.isfinite(self.high) and self.low < self.high):
            raise ConfigError("search_space", f"need finite low < high, got [{self.low}, {self.high}]")

    # TPE works in an internal coordinate; identity here, log for LogUniform
    def to_internal(self, x):
        return np.asarray(x, dtype=float)

    def from_internal(self, z):
        return float(z)

    @property
    def bounds(self):
        return float(self.to_internal(self.low)), float(self.to_internal(self.high))

    def contains(self, x) -> bool:
        return isinstance(x, float) and self.low <= x <= self.high


@dataclass(frozen=True)
class LogUniform(Uniform):
    def __post_init__(self):
        super().__post_init__()
        if self.low <= 0:
            raise ConfigError("search_space", "log-uniform domain needs low > 0")

    def to_internal(self, x):
        return np.log(np.asarray(x, dtype=float))

    def from_internal(self, z):
        return float(min(max(math.exp(z), self.low), self.high))


SearchSpace = dict  # name -> Categorical | IntGrid | Uniform | LogUniform


def default_space() -> SearchSpace:
    return {
        "L1_flag": Categorical((True, False)),
        "batch_size": IntGrid((64, 128, 256)),
        "epochs": IntGrid((10, 50, 100)),
        "hidden_size": IntGrid((16, 32, 64)),
        "learning_rate": LogUniform(1e-4, 1e-1),
        "margin": Uniform(0.1, 2.0),
        "opt": Categorical(("sgd", "adam")),
        "samp": Categorical(("uniform", "bern")),
    }


def in_space(space: SearchSpace, point: dict) -> bool:
    return point.keys() == space.keys() and all(space[k].contains(v) for k, v in point.items())


# -- densities -----------------------------------------------------------

def _norm_cdf(x):
    return 0.5 * (1.0 + np.vectorize(math.erf)(np.asarray(x) / math.sqrt(2.0)))


class _Parzen:
    """Mixture of Gaussians truncated to [low, high], plus a broad prior component."""

    def __init__(self, points, low, high):
        width = high - low
        prior_mu = 0.5 * (low + high)
        mus = np.append(np.asarray(points, dtype=float), prior_mu)
        order = np.argsort(mus, kind="stable")
        s = mus[order]
        ext = np.concatenate([[low], s, [high]])
        sig = np.maximum(ext[1:-1] - ext[:-2], ext[2:] - ext[1:-1])
        sig = np.clip(sig, width / min(100.0, len(s) + 1.0), width)
        sigmas = np.empty_like(sig)
        sigmas[order] = sig
        sigmas[-1] = width  # the prior keeps its full width
        self.mus, self.sigmas = mus, sigmas
        self.low, self.high = low, high
        self.weights = np.full(len(mus), 1.0 / len(mus))
        self.mass = _norm_cdf((high - mus) / sigmas) - _norm_cdf((low - mus) / sigmas)

    def sample(self, rng, size):
        comp = rng.choice(len(self.mus), size=size, p=self.weights)
        out = np.empty(size)
        for i, c in enumerate(comp):
            for _ in range(100):
                z = rng.normal(self.mus[c], self.sigmas[c])
                if self.low <= z <= self.high:
                    break
            out[i] = min(max(z, self.low), self.high)
        return out

    def log_pdf(self, z):
        z = np.atleast_1d(np.asarray(z, dtype=float))[:, None]
        dens = (np.exp(-0.5 * ((z - self.mus) / self.sigmas) ** 2)
                / (self.sigmas * math.sqrt(2 * math.pi) * self.mass))
        return np.log(np.maximum((dens * self.weights).sum(axis=1), 1e-300))


class _Counts:
    """Smoothed frequencies over a finite set of choices."""

    def __init__(self, choices, observed):
        counts = np.ones(len(choices))
        for x in observed:
            counts[_index(choices, x)] += 1
        self.choices = choices
        self.p = counts / counts.sum()

    def sample(self, rng, size):
        return rng.choice(len(self.choices), size=size, p=self.p)

    def log_pdf(self, idx):
        return np.log(self.p[np.asarray(idx)])


def _index(choices, x):
    for i, c in enumerate(choices):
        if x == c and type(x) is type(c):
            return i
    raise ValueError(f"{x!r} not in {choices!r}")


def _model(domain, values):
    if isinstance(domain, Categorical):
        return _Counts(domain.choices, values)
    low, high = domain.bounds
    return _Parzen(domain.to_internal(values) if values else [], low, high)


# -- trials --------------------------------------------------------------

@dataclass
class Trial:
    number: int
    assignment: dict[str, Any]
    objective: float | None = None
    status: str = "done"
    duration: float = 0.0
    error: str = ""

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, line: str) -> "Trial":
        return cls(**json.loads(line))


def sample_uniform(space: SearchSpace, rng: np.random.Generator) -> dict:
    point = {}
    for name, domain in space.items():
        if isinstance(domain, Categorical):
            point[name] = domain.choices[int(rng.integers(len(domain.choices)))]
        else:
            low, high = domain.bounds
            point[name] = domain.from_internal(rng.uniform(low, high))
    return point


def _is_finite(space: SearchSpace) -> bool:
    return all(isinstance(d, Categorical) for d in space.values())


def _key(point: dict):
    return tuple(sorted((k, type(v).__name__, v) for k, v in point.items()))


def _unvisited(space: SearchSpace, seen: set, rng, limit: int = 100_000):
    """A uniform draw among the grid points not tried yet, or None when exhausted."""
    names = list(space)
    size = math.prod(len(space[n].choices) for n in names)
    if size <= limit:
        fresh = [dict(zip(names, combo))
                 for combo in itertools.product(*(space[n].choices for n in names))]
        fresh = [p for p in fresh if _key(p) not in seen]
        return fresh[int(rng.integers(len(fresh)))] if fresh else None
    for _ in range(100):
        point = sample_uniform(space, rng)
        if _key(point) not in seen:
            return point
    return None


def suggest(space: SearchSpace, history: list[Trial], rng: np.random.Generator,
            n_startup: int = N_STARTUP, gamma: float = GAMMA,
            n_candidates: int = N_CANDIDATES) -> dict:
    """Next assignment to try, given the trials so far.

    In an all-categorical space an assignment is not suggested twice while
    untried ones remain: the objective is deterministic, so a repeat is wasted.
    """
    finite = _is_finite(space)
    seen = {_key(t.assignment) for t in history} if finite else set()
    done = [t for t in history if t.status == "done" and t.objective is not None
            and math.isfinite(t.objective)]
    if len(done) < max(n_startup, 1):
        if finite and seen:
            return _unvisited(space, seen, rng) or sample_uniform(space, rng)
        return sample_uniform(space, rng)
    ranked = sorted(done, key=lambda t: t.objective)
    n_good = max(1, math.ceil(gamma * len(ranked)))
    good, bad = ranked[:n_good], ranked[n_good:]

    score = np.zeros(n_candidates)
    columns = {}
    for name, domain in space.items():
        l_model = _model(domain, [t.assignment[name] for t in good])
        g_model = _model(domain, [t.assignment[name] for t in bad])
        draws = l_model.sample(rng, n_candidates)
        score += l_model.log_pdf(draws) - g_model.log_pdf(draws)
        columns[name] = draws
    points = []
    for i in range(n_candidates):
        point = {}
        for name, domain in space.items():
            value = columns[name][i]
            if isinstance(domain, Categorical):
                point[name] = domain.choices[int(value)]
            else:
                point[name] = domain.from_internal(value)
        points.append(point)
    order = np.argsort(-score, kind="stable")
    if not finite:
        return points[order[0]]
    for i in order:
        if _key(points[i]) not in seen:
            return points[i]
    return _unvisited(space, seen, rng) or points[order[0]]


def suggestion_rng(seed: int, n_trials: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(n_trials,)))


def load_trials(path) -> list[Trial]:
    path = Path(path)
    if not path.is_file():
        return []
    with open(path, encoding="utf-8") as fh:
        return [Trial.from_json(line) for line in fh if line.strip()]


def format_golden(assignment: dict) -> str:
    return "Found Golden Setting:\n" + repr(dict(sorted(assignment.items())))


def training_objective(d, kind, base_hp, cfg=None, workers: int = 1):
    """Filtered mean rank on the valid split after training with the assignment."""
    from .evaluation import evaluate
    from .training import train

    def objective(assignment):
        hp = base_hp.replace(**assignment)
        params, _ = train(d, kind, hp, cfg)
        return evaluate(params, d, "valid", workers=workers).mean_rank_filtered

    return objective


def tune(d=None, kind: str = "transe", space: SearchSpace | None = None, budget: int = 20,
         base_hp=None, objective: Callable[[dict], float] | None = None, seed: int = 0,
         trials_path=None, cfg=None, stream="stdout", **tpe):
    """Run ``budget`` sequential trials and return ``(best, history)``.

    ``objective`` maps an assignment to a value to minimize; by default the
    model is trained on ``d`` and scored by filtered mean rank on valid.
    Trials found in ``trials_path`` count towards the budget, so an
    interrupted search resumes where it stopped. The golden setting is
    printed to ``stream`` (the current stdout by default, nothing if None).
    """
    if budget < 1:
        raise ConfigError("budget", "must be >= 1")
    space = space or default_space()
    if objective is None:
        from .training import HyperParams
        if d is None:
            raise ConfigError("dataset", "a dataset is required when no objective is given")
        objective = training_objective(d, kind, base_hp or HyperParams(), cfg)
    history = load_trials(trials_path) if trials_path else []
    log = open(trials_path, "a", encoding="utf-8") if trials_path else None
    try:
        while len(history) < budget:
            assignment = suggest(space, history, suggestion_rng(seed, len(history)), **tpe)
            trial = Trial(len(history), assignment)
            start = time.perf_counter()
            try:
                value = float(objective(assignment))
                if not math.isfinite(value):
                    raise NonFiniteLossError(-1, -1, {})
                trial.objective = value
            except NonFiniteLossError as exc:
                trial.status, trial.error = "failed", str(exc)
            trial.duration = time.perf_counter() - start
            history.append(trial)
            if log:
                log.write(trial.to_json() + "\n")
                log.flush()
            logger.info("trial %d %s objective=%s %s", trial.number, trial.status,
                        trial.objective, assignment)
    finally:
        if log:
            log.close()
    done = [t for t in history if t.status == "done"]
    if not done:
        raise NoResultError(f"all {len(history)} trials failed")
    best = min(done, key=lambda t: t.objective)
    if stream == "stdout":
        stream = sys.stdout
    if stream is not None:
        print(format_golden(best.assignment), file=stream)
    return best, history
