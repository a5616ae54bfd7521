"""2-D projections of embeddings (PCA, exact t-SNE) and plot/CSV export."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .errors import ConfigError, UserError

MAX_POINTS = 5000
EXAGGERATION = 12.0
EXAGGERATION_ITERS = 250
MOMENTUM_START, MOMENTUM_FINAL = 0.5, 0.8
TSNE_LR = "auto"
TSNE_LR_MIN = 50.0
SEARCH_STEPS = 50
SEARCH_TOL = 1e-5


@dataclass
class ProjectionResult:
    labels: list[str]
    coords: np.ndarray
    method: str
    final_objective: float
    kinds: list[str] = field(default_factory=list)
    initial_objective: float | None = None
    components: np.ndarray | None = None

    def __post_init__(self):
        if len(self.labels) != len(self.coords):
            raise ValueError("labels and coords differ in length")
        if not self.kinds:
            self.kinds = ["entity"] * len(self.labels)


# -- PCA -----------------------------------------------------------------

def _pca(X):
    mean = X.mean(axis=0)
    Xc = X - mean
    cov = Xc.T @ Xc / max(len(X) - 1, 1)
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals)[::-1]
    evals = np.clip(evals[order], 0.0, None)
    evecs = evecs[:, order[:2]]
    # sign convention: the largest-magnitude loading of each component is positive
    pivot = np.argmax(np.abs(evecs), axis=0)
    evecs = evecs * np.sign(evecs[pivot, [0, 1]])
    total = evals.sum()
    ratio = float(evals[:2].sum() / total) if total > 0 else 0.0
    return mean, evecs, evals, ratio


def pca_2d(X, labels=None, kinds=None) -> ProjectionResult:
    """Project onto the two leading principal directions.

    ``final_objective`` holds the explained-variance ratio; a rank-0 input
    projects to the origin with ratio 0.
    """
    X = check_array(X, dtype=float)
    if X.shape[0] < 2 or X.shape[1] < 2:
        raise ConfigError("proj", f"PCA needs N >= 2 and d >= 2, got {X.shape}")
    mean, comps, evals, ratio = _pca(X)
    coords = (X - mean) @ comps if ratio > 0 else np.zeros((len(X), 2))
    labels = list(labels) if labels is not None else [str(i) for i in range(len(X))]
    return ProjectionResult(labels, coords, "pca", ratio, list(kinds or []), components=comps)


# -- t-SNE ---------------------------------------------------------------

def squared_distances(X):
    sq = np.sum(X * X, axis=1)
    D = sq[:, None] + sq[None, :] - 2.0 * X @ X.T
    np.fill_diagonal(D, 0.0)
    return np.maximum(D, 0.0)


def _entropy_bits(d_row, beta):
    """Entropy (bits) and probabilities of exp(-beta * d_row), normalized."""
    w = np.exp(-beta * d_row)
    total = w.sum()
    p = w / total
    h = math.log(total) + beta * float(np.dot(d_row, p))
    return h / math.log(2.0), p


def conditional_affinities(X, perplexity):
    """Row-stochastic P(j | i) with per-point bandwidths matched to ``perplexity``.

    Each bandwidth is found by bisection on log(beta), at most 50 steps, stopping
    once the entropy is within 1e-5 bits of log2(perplexity).

    Returns ``(P, betas, entropies)``.
    """
    D = squared_distances(np.asarray(X, dtype=float))
    n = len(D)
    target = math.log2(perplexity)
    P = np.zeros((n, n))
    betas = np.empty(n)
    entropies = np.empty(n)
    for i in range(n):
        row = np.delete(D[i], i)
        row = row - row.min()
        scale = row.mean()
        centre = -math.log(scale) if scale > 0 else 0.0
        lo, hi = centre - 40.0, centre + 40.0
        log_beta = centre
        h, p = _entropy_bits(row, math.exp(log_beta))
        for _ in range(SEARCH_STEPS):
            if abs(h - target) < SEARCH_TOL:
                break
            if h > target:
                lo = log_beta
            else:
                hi = log_beta
            log_beta = 0.5 * (lo + hi)
            h, p = _entropy_bits(row, math.exp(log_beta))
        P[i, np.arange(n) != i] = p
        betas[i] = math.exp(log_beta)
        entropies[i] = h
    return P, betas, entropies


def joint_affinities(X, perplexity):
    P, _, _ = conditional_affinities(X, perplexity)
    P = P + P.T
    return P / P.sum()


def _q_matrix(Y):
    num = 1.0 / (1.0 + squared_distances(Y))
    np.fill_diagonal(num, 0.0)
    return num, num / num.sum()


def kl_divergence(P, Y):
    _, Q = _q_matrix(Y)
    mask = P > 0
    return float(np.sum(P[mask] * np.log(P[mask] / np.maximum(Q[mask], 1e-300))))


def _check_perplexity(n, perplexity):
    if n > MAX_POINTS:
        raise ConfigError("max_points", f"exact t-SNE is limited to {MAX_POINTS} points, got {n}")
    if not 2 <= perplexity <= (n - 1) / 3:
        raise ConfigError("perplexity",
                          f"must lie in [2, (N-1)/3] = [2, {(n - 1) / 3:.2f}] for N={n}")


def tsne_2d(X, perplexity=30.0, iters=1000, seed=0, labels=None, kinds=None,
            learning_rate=TSNE_LR) -> ProjectionResult:
    """Exact t-SNE to two dimensions, initialized from PCA.

    Early exaggeration (x12) and momentum 0.5 hold for the first 250
    iterations, then momentum rises to 0.8. Per-coordinate gains follow the
    usual delta-bar-delta rule. ``learning_rate="auto"`` uses
    ``max(N / (4 * 12), 50)``; a fixed 200 overshoots on a few hundred points.
    """
    X = check_array(X, dtype=float)
    n = len(X)
    _check_perplexity(n, perplexity)
    if learning_rate == "auto":
        learning_rate = max(n / (4.0 * EXAGGERATION), TSNE_LR_MIN)
    if not learning_rate > 0:
        raise ConfigError("learning_rate", f"t-SNE learning rate must be > 0, got {learning_rate}")
    P = joint_affinities(X, perplexity)
    P = np.maximum(P, 1e-12)
    P /= P.sum()

    rng = np.random.default_rng(seed)
    init = pca_2d(X).coords if X.shape[1] >= 2 else np.hstack([X - X.mean(0), np.zeros((n, 1))])
    std = init[:, 0].std()
    if std > 0:
        Y = init / std * 1e-4
    else:
        Y = rng.normal(scale=1e-4, size=(n, 2))
    initial_kl = kl_divergence(P, Y)

    update = np.zeros_like(Y)
    gains = np.ones_like(Y)
    for it in range(iters):
        exaggerate = it < EXAGGERATION_ITERS
        momentum = MOMENTUM_START if exaggerate else MOMENTUM_FINAL
        PP = P * EXAGGERATION if exaggerate else P
        num, Q = _q_matrix(Y)
        W = (PP - Q) * num
        grad = 4.0 * (W.sum(axis=1)[:, None] * Y - W @ Y)
        same = (grad > 0) == (update > 0)
        gains = np.where(same, gains * 0.8, gains + 0.2)
        np.maximum(gains, 0.01, out=gains)
        update = momentum * update - learning_rate * gains * grad
        Y = Y + update
        Y -= Y.mean(axis=0)

    labels = list(labels) if labels is not None else [str(i) for i in range(n)]
    return ProjectionResult(labels, Y, "tsne", kl_divergence(P, Y), list(kinds or []),
                            initial_objective=initial_kl)


def subsample(n, max_points, seed=0):
    """Sorted indices of a seeded uniform subsample (all indices when n <= max_points)."""
    if n <= max_points:
        return np.arange(n)
    return np.sort(np.random.default_rng(seed).choice(n, size=max_points, replace=False))


# -- estimators ----------------------------------------------------------

class PCAProjector(TransformerMixin, BaseEstimator):
    """Two-component PCA with a deterministic sign convention."""

    def fit(self, X, y=None):
        X = check_array(X, dtype=float)
        if X.shape[0] < 2 or X.shape[1] < 2:
            raise ValueError(f"PCA needs N >= 2 and d >= 2, got {X.shape}")
        self.mean_, self.components_, evals, self.explained_variance_ratio_ = _pca(X)
        self.explained_variance_ = evals[:2]
        return self

    def transform(self, X):
        check_is_fitted(self, "components_")
        X = check_array(X, dtype=float)
        return (X - self.mean_) @ self.components_


class TSNEProjector(TransformerMixin, BaseEstimator):
    """Exact t-SNE. Like other t-SNE estimators it only offers ``fit_transform``."""

    def __init__(self, perplexity=30.0, n_iter=1000, learning_rate=TSNE_LR, random_state=0):
        self.perplexity = perplexity
        self.n_iter = n_iter
        self.learning_rate = learning_rate
        self.random_state = random_state

    def fit(self, X, y=None):
        res = tsne_2d(X, self.perplexity, self.n_iter, self.random_state,
                      learning_rate=self.learning_rate)
        self.embedding_ = res.coords
        self.kl_divergence_ = res.final_objective
        self.initial_kl_divergence_ = res.initial_objective
        return self

    def fit_transform(self, X, y=None):
        return self.fit(X).embedding_


# -- export --------------------------------------------------------------

W, H, PAD = 480, 320, 48


def _svg(body, title):
    return (f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" '
            f'viewBox="0 0 {W} {H}">\n<rect width="{W}" height="{H}" fill="white"/>\n'
            f'<text x="{W / 2}" y="20" text-anchor="middle" font-size="14">{escape(title)}</text>\n'
            + "\n".join(body) + "\n</svg>\n")


def _scaler(values, lo_px, hi_px):
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        return lambda v: (lo_px + hi_px) / 2
    lo, hi = float(values.min()), float(values.max())
    if hi == lo:
        lo, hi = lo - 1.0, hi + 1.0
    return lambda v: lo_px + (float(v) - lo) / (hi - lo) * (hi_px - lo_px)


def _axes():
    return [f'<line x1="{PAD}" y1="{H - PAD}" x2="{W - PAD}" y2="{H - PAD}" stroke="black"/>',
            f'<line x1="{PAD}" y1="{PAD}" x2="{PAD}" y2="{H - PAD}" stroke="black"/>']


def line_svg(ys, title="training loss"):
    xs = np.arange(1, len(ys) + 1)
    sx, sy = _scaler(xs, PAD, W - PAD), _scaler(ys, H - PAD, PAD)
    body = _axes()
    if len(ys):
        pts = " ".join(f"{sx(x):.2f},{sy(y):.2f}" for x, y in zip(xs, ys))
        body.append(f'<polyline points="{pts}" fill="none" stroke="steelblue" stroke-width="2"/>')
    return _svg(body, title)


def bar_svg(names, raw, filtered, title):
    sy = _scaler([0.0, *raw, *filtered], H - PAD, PAD)
    slot = (W - 2 * PAD) / max(len(names), 1)
    body = _axes()
    for i, name in enumerate(names):
        x0 = PAD + i * slot
        for j, (value, colour) in enumerate(((raw[i], "lightgray"), (filtered[i], "steelblue"))):
            top = sy(value)
            body.append(f'<rect x="{x0 + slot * (0.1 + 0.4 * j):.2f}" y="{top:.2f}" '
                        f'width="{slot * 0.4:.2f}" height="{H - PAD - top:.2f}" fill="{colour}"/>')
        body.append(f'<text x="{x0 + slot / 2:.2f}" y="{H - PAD + 16}" text-anchor="middle" '
                    f'font-size="11">{escape(name)}</text>')
    return _svg(body, title + " (raw / filtered)")


def scatter_svg(proj: ProjectionResult, title="embeddings"):
    sx = _scaler(proj.coords[:, 0] if len(proj.coords) else [], PAD, W - PAD)
    sy = _scaler(proj.coords[:, 1] if len(proj.coords) else [], H - PAD, PAD)
    colours = {"entity": "steelblue", "relation": "darkorange"}
    body = []
    for (x, y), label, kind in zip(proj.coords, proj.labels, proj.kinds):
        body.append(f'<circle cx="{sx(x):.2f}" cy="{sy(y):.2f}" r="3" '
                    f'fill="{colours.get(kind, "gray")}"><title>{escape(label)}</title></circle>')
    return _svg(body, f"{title} ({proj.method})")


def write_embedding_csv(proj: ProjectionResult, path) -> Path:
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["label", "x", "y", "kind"])
        for (x, y), label, kind in zip(proj.coords, proj.labels, proj.kinds):
            w.writerow([label, repr(float(x)), repr(float(y)), kind])
    return path


def export_plots(record=None, report=None, proj: ProjectionResult | None = None, out_dir=".") -> list[Path]:
    """Write the CSV data and one SVG per available panel; returns the paths written."""
    from .evaluation import write_metrics_csv
    from .training import write_loss_csv

    out = Path(out_dir)
    written = []
    try:
        out.mkdir(parents=True, exist_ok=True)
        if record is not None:
            written.append(write_loss_csv(record, out / "loss.csv"))
            (out / "loss.svg").write_text(line_svg(record.losses))
            written.append(out / "loss.svg")
        if report is not None:
            written.append(write_metrics_csv(report, out / "metrics.csv"))
            ks = sorted(report.hits_raw)
            (out / "mean_rank.svg").write_text(bar_svg(
                ["mean rank"], [report.mean_rank_raw], [report.mean_rank_filtered], "mean rank"))
            (out / "hits.svg").write_text(bar_svg(
                [f"hits@{k}" for k in ks], [report.hits_raw[k] for k in ks],
                [report.hits_filtered[k] for k in ks], "hit ratios"))
            written += [out / "mean_rank.svg", out / "hits.svg"]
        if proj is not None:
            written.append(write_embedding_csv(proj, out / "embedding_2d.csv"))
            (out / "embedding.svg").write_text(scatter_svg(proj))
            written.append(out / "embedding.svg")
    except OSError as exc:
        raise UserError(f"cannot write plots to {out}: {exc}") from exc
    return written
