"""scikit-learn style front end: ``KGEModel(...).fit(triples)``.

``X`` is either a :class:`~kge.data.KgDataset` or an integer array of shape
``(n, 3)`` with ``(head, relation, tail)`` ids.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from . import models
from .data import KgDataset, Vocab, bern_stats
from .evaluation import HITS_KS, evaluate, rank_all, summarize
from .sampler import SamplerConfig
from .training import HyperParams, train


def check_triples(X, n_entities=None, n_relations=None) -> np.ndarray:
    """Validate an ``(n, 3)`` array of non-negative ids, optionally bounded."""
    X = check_array(X, dtype=None, ensure_2d=True)
    if X.dtype.kind not in "iu":
        if X.dtype.kind != "f" or not np.all(X == np.round(X)):
            raise ValueError("triple ids must be integers")
    X = X.astype(np.int64)
    if X.shape[1] != 3:
        raise ValueError(f"expected triples of shape (n, 3), got {X.shape}")
    if (X < 0).any():
        raise ValueError("ids must be non-negative")
    if n_entities is not None and (X[:, [0, 2]] >= n_entities).any():
        raise ValueError(f"entity id out of range (n_entities={n_entities})")
    if n_relations is not None and (X[:, 1] >= n_relations).any():
        raise ValueError(f"relation id out of range (n_relations={n_relations})")
    return X


def as_dataset(X) -> KgDataset:
    if isinstance(X, KgDataset):
        return X
    X = check_triples(X)
    n_ent = int(max(X[:, 0].max(), X[:, 2].max())) + 1
    n_rel = int(X[:, 1].max()) + 1
    vocab = Vocab(tuple(map(str, range(n_ent))), tuple(map(str, range(n_rel))))
    empty = np.zeros((0, 3), dtype=np.int64)
    return KgDataset("array", vocab, X, empty, empty, bern_stats(X))


class KGEModel(BaseEstimator):
    """Knowledge graph embedding estimator.

    Parameters mirror the tunable hyperparameters; ``loss_kind=None`` picks
    the model family's usual loss. Fitted attributes are ``params_``,
    ``record_`` (loss per epoch) and ``dataset_``.
    """

    def __init__(self, model="transe", L1_flag=False, batch_size=128, epochs=100, hidden_size=50,
                 learning_rate=0.01, margin=1.0, opt="sgd", samp="bern", loss_kind=None,
                 lambda_reg=1e-5, seed=0, workers=1):
        self.model = model
        self.L1_flag = L1_flag
        self.batch_size = batch_size
        self.epochs = epochs
        self.hidden_size = hidden_size
        self.learning_rate = learning_rate
        self.margin = margin
        self.opt = opt
        self.samp = samp
        self.loss_kind = loss_kind
        self.lambda_reg = lambda_reg
        self.seed = seed
        self.workers = workers

    def _hyper(self):
        loss_kind = self.loss_kind or models.get_model(self.model).default_loss
        return HyperParams(L1_flag=self.L1_flag, batch_size=self.batch_size, epochs=self.epochs,
                           hidden_size=self.hidden_size, learning_rate=self.learning_rate,
                           margin=self.margin, opt=self.opt, samp=self.samp, loss_kind=loss_kind,
                           lambda_reg=self.lambda_reg, seed=self.seed)

    def fit(self, X, y=None):
        d = as_dataset(X)
        self.dataset_ = d
        self.params_, self.record_ = train(d, self.model, self._hyper(),
                                           SamplerConfig(workers=self.workers))
        self.n_entities_ = d.n_entities
        self.n_relations_ = d.n_relations
        return self

    def score_samples(self, X):
        """Plausibility of each triple (higher is more plausible)."""
        check_is_fitted(self, "params_")
        X = check_triples(X, self.n_entities_, self.n_relations_)
        return models.score(self.params_, X)

    def predict(self, X):
        """Most plausible tail id for each ``(head, relation)`` row."""
        check_is_fitted(self, "params_")
        X = check_array(X, dtype=np.int64)
        if X.shape[1] != 2:
            raise ValueError(f"expected (head, relation) pairs of shape (n, 2), got {X.shape}")
        model = models.model_for(self.params_)
        cands = np.arange(self.n_entities_)
        return np.array([int(np.argmax(model.score(self.params_, h, r, cands))) for h, r in X])

    def evaluate(self, X=None, split="test", workers=1, ks=HITS_KS):
        """Link-prediction report on a split of the fitted dataset or on extra triples."""
        check_is_fitted(self, "params_")
        if X is None:
            return evaluate(self.params_, self.dataset_, split, workers=workers, ks=ks)
        X = check_triples(X, self.n_entities_, self.n_relations_)
        d = self.dataset_
        known = KgDataset(d.name, d.vocab, d.train, np.concatenate([d.valid, X]), d.test, d.bern)
        return summarize(rank_all(self.params_, known, X, workers), split, ks)

    def score(self, X, y=None):
        """Filtered hits@10 on ``X``; higher is better, as model selection expects."""
        return self.evaluate(X).hits_filtered[10]
