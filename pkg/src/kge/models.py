"""Scoring functions, analytic gradients and parameter constraints.

Every model scores a triple so that higher means more plausible; distance
based models return the negated distance. ``score`` broadcasts: ``h``, ``r``
and ``t`` may be id arrays of equal shape or scalars, which is how the
evaluator scores one query against every candidate entity at once.

Gradients are sparse: a mapping from parameter name to ``(row_ids, rows)``
where ``row_ids`` is sorted and unique and untouched rows are absent.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import losses
from .errors import ConfigError, UnknownModelError

VAR_MIN = 0.05
VAR_MAX = 5.0


@dataclass
class ModelParams:
    """Named embedding tensors of one model instance."""

    kind: str
    n_entities: int
    n_relations: int
    dim: int
    tensors: dict[str, np.ndarray]
    settings: dict = field(default_factory=dict)

    def __getitem__(self, name):
        return self.tensors[name]

    def copy(self) -> "ModelParams":
        return ModelParams(self.kind, self.n_entities, self.n_relations, self.dim,
                           {k: v.copy() for k, v in self.tensors.items()}, dict(self.settings))

    def equals(self, other: "ModelParams") -> bool:
        return (self.kind == other.kind and self.settings == other.settings
                and self.tensors.keys() == other.tensors.keys()
                and all(np.array_equal(v, other.tensors[k]) for k, v in self.tensors.items()))


def _dot(a, b):
    return np.sum(a * b, axis=-1)


def _matvec(m, x):
    return np.einsum("...ij,...j->...i", m, x)


def _xavier(rng, shape):
    receptive = int(np.prod(shape[:-2])) if len(shape) > 2 else 1
    fan_in, fan_out = shape[-2] * receptive, shape[-1] * receptive
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape)


def _unit_rows(x):
    norms = np.linalg.norm(x, axis=-1, keepdims=True)
    return np.divide(x, norms, out=np.zeros_like(x), where=norms > 0)


def accumulate(pairs) -> tuple[np.ndarray, np.ndarray]:
    """Sum per-sample gradient rows that share a row id."""
    ids = np.concatenate([np.broadcast_to(np.asarray(i).reshape(-1), (len(g),)) for i, g in pairs])
    rows = np.concatenate([g for _, g in pairs])
    uniq, inv = np.unique(ids, return_inverse=True)
    out = np.zeros((len(uniq),) + rows.shape[1:])
    np.add.at(out, inv, rows)
    return uniq, out


class Model:
    """Base class. Subclasses declare their tensors and the score algebra."""

    name = ""
    family = ""
    default_loss = "margin"
    # parameter name -> the id space that indexes its rows ("entity" | "relation")
    tensors: dict[str, str] = {}

    def __init__(self, L1_flag: bool = False, var_min: float = VAR_MIN, var_max: float = VAR_MAX):
        self.p = 1 if L1_flag else 2
        self.var_min = var_min
        self.var_max = var_max

    @property
    def settings(self) -> dict:
        return {"L1_flag": self.p == 1}

    def row_shape(self, name, dim):
        return (dim,)

    def shapes(self, n_entities, n_relations, dim) -> dict[str, tuple[int, ...]]:
        count = {"entity": n_entities, "relation": n_relations}
        return {name: (count[axis],) + self.row_shape(name, dim)
                for name, axis in self.tensors.items()}

    def init_params(self, n_entities, n_relations, dim, seed=0) -> ModelParams:
        if dim < 1:
            raise ConfigError("hidden_size", f"must be >= 1, got {dim}")
        if n_entities < 1 or n_relations < 1:
            raise ConfigError("dataset", "empty entity or relation vocabulary")
        rng = np.random.default_rng(seed)
        tensors = {name: _xavier(rng, shape)
                   for name, shape in self.shapes(n_entities, n_relations, dim).items()}
        params = ModelParams(self.name, n_entities, n_relations, dim, tensors, self.settings)
        self.project(params)
        return params

    def score(self, P, h, r, t):
        raise NotImplementedError

    def score_grad(self, P, h, r, t, c):
        """Per-sample gradients of ``sum(c * score)``.

        Returns ``{name: [(ids, rows), ...]}`` with one row per sample.
        """
        raise NotImplementedError

    def project(self, P, touched=None):
        """Apply hard constraints in place, to ``touched`` rows or to all rows."""

    def embeddings(self, P):
        """Entity and relation matrices for visualisation (relation may be None)."""
        return P["ent"], P["rel"]


def _rows(touched, name):
    if touched is None:
        return slice(None)
    ids = touched.get(name)
    return ids if ids is not None else np.zeros(0, dtype=np.int64)


class _Translational(Model):
    family = "translational"

    def _norm(self, v):
        return np.sum(np.abs(v), axis=-1) if self.p == 1 else np.sqrt(_dot(v, v))

    def _dscore(self, v, c):
        """c * d(-||v||)/dv, with subgradient 0 at kinks."""
        if self.p == 1:
            g = -np.sign(v)
        else:
            n = np.sqrt(_dot(v, v))[..., None]
            g = -np.divide(v, n, out=np.zeros_like(v), where=n > 0)
        return c[:, None] * g


class TransE(_Translational):
    name = "transe"
    tensors = {"ent": "entity", "rel": "relation"}

    def score(self, P, h, r, t):
        return -self._norm(P["ent"][h] + P["rel"][r] - P["ent"][t])

    def score_grad(self, P, h, r, t, c):
        g = self._dscore(P["ent"][h] + P["rel"][r] - P["ent"][t], c)
        return {"ent": [(h, g), (t, -g)], "rel": [(r, g)]}

    def project(self, P, touched=None):
        rows = _rows(touched, "ent")
        P["ent"][rows] = _unit_rows(P["ent"][rows])


class TransH(_Translational):
    name = "transh"
    tensors = {"ent": "entity", "rel": "relation", "norm": "relation"}

    def score(self, P, h, r, t):
        u = P["ent"][h] - P["ent"][t]
        w = P["norm"][r]
        return -self._norm(u - _dot(w, u)[..., None] * w + P["rel"][r])

    def score_grad(self, P, h, r, t, c):
        u = P["ent"][h] - P["ent"][t]
        w = P["norm"][r]
        wu = _dot(w, u)[:, None]
        g = self._dscore(u - wu * w + P["rel"][r], c)
        wg = _dot(w, g)[:, None]
        du = g - wg * w
        dw = -wg * u - wu * g
        return {"ent": [(h, du), (t, -du)], "rel": [(r, g)], "norm": [(r, dw)]}

    def project(self, P, touched=None):
        for name in ("ent", "norm"):
            rows = _rows(touched, name)
            P[name][rows] = _unit_rows(P[name][rows])


class TransR(_Translational):
    name = "transr"
    tensors = {"ent": "entity", "rel": "relation", "proj": "relation"}

    def row_shape(self, name, dim):
        return (dim, dim) if name == "proj" else (dim,)

    def score(self, P, h, r, t):
        m = P["proj"][r]
        return -self._norm(_matvec(m, P["ent"][h]) + P["rel"][r] - _matvec(m, P["ent"][t]))

    def score_grad(self, P, h, r, t, c):
        u = P["ent"][h] - P["ent"][t]
        m = P["proj"][r]
        g = self._dscore(_matvec(m, P["ent"][h]) + P["rel"][r] - _matvec(m, P["ent"][t]), c)
        du = np.einsum("nij,ni->nj", m, g)
        dm = g[:, :, None] * u[:, None, :]
        return {"ent": [(h, du), (t, -du)], "rel": [(r, g)], "proj": [(r, dm)]}


class TransD(_Translational):
    name = "transd"
    tensors = {"ent": "entity", "rel": "relation", "ent_proj": "entity", "rel_proj": "relation"}

    def score(self, P, h, r, t):
        eh, et, rp = P["ent"][h], P["ent"][t], P["rel_proj"][r]
        a = _dot(P["ent_proj"][h], eh)[..., None]
        b = _dot(P["ent_proj"][t], et)[..., None]
        return -self._norm(eh + a * rp + P["rel"][r] - et - b * rp)

    def score_grad(self, P, h, r, t, c):
        eh, et, rp = P["ent"][h], P["ent"][t], P["rel_proj"][r]
        hp, tp = P["ent_proj"][h], P["ent_proj"][t]
        a = _dot(hp, eh)[:, None]
        b = _dot(tp, et)[:, None]
        g = self._dscore(eh + a * rp + P["rel"][r] - et - b * rp, c)
        rg = _dot(rp, g)[:, None]
        return {
            "ent": [(h, g + rg * hp), (t, -(g + rg * tp))],
            "ent_proj": [(h, rg * eh), (t, -rg * et)],
            "rel": [(r, g)],
            "rel_proj": [(r, (a - b) * g)],
        }


class RESCAL(Model):
    name = "rescal"
    family = "bilinear"
    tensors = {"ent": "entity", "rel": "relation"}

    def row_shape(self, name, dim):
        return (dim, dim) if name == "rel" else (dim,)

    def score(self, P, h, r, t):
        return _dot(P["ent"][h], _matvec(P["rel"][r], P["ent"][t]))

    def score_grad(self, P, h, r, t, c):
        eh, et, m = P["ent"][h], P["ent"][t], P["rel"][r]
        cc = c[:, None]
        return {
            "ent": [(h, cc * _matvec(m, et)), (t, cc * np.einsum("nij,ni->nj", m, eh))],
            "rel": [(r, c[:, None, None] * eh[:, :, None] * et[:, None, :])],
        }

    def embeddings(self, P):
        return P["ent"], None


class DistMult(Model):
    name = "distmult"
    family = "bilinear"
    default_loss = "softplus"
    tensors = {"ent": "entity", "rel": "relation"}

    def score(self, P, h, r, t):
        # h * t first so swapping head and tail is bitwise symmetric
        return np.sum(P["rel"][r] * (P["ent"][h] * P["ent"][t]), axis=-1)

    def score_grad(self, P, h, r, t, c):
        eh, er, et = P["ent"][h], P["rel"][r], P["ent"][t]
        cc = c[:, None]
        return {"ent": [(h, cc * er * et), (t, cc * eh * er)], "rel": [(r, cc * eh * et)]}


class ComplEx(Model):
    name = "complex"
    family = "complex"
    default_loss = "softplus"
    tensors = {"ent_re": "entity", "ent_im": "entity", "rel_re": "relation", "rel_im": "relation"}

    def score(self, P, h, r, t):
        a, b = P["ent_re"][h], P["ent_im"][h]
        c, d = P["rel_re"][r], P["rel_im"][r]
        e, f = P["ent_re"][t], P["ent_im"][t]
        return np.sum(a * c * e - b * d * e + a * d * f + b * c * f, axis=-1)

    def score_grad(self, P, h, r, t, w):
        a, b = P["ent_re"][h], P["ent_im"][h]
        c, d = P["rel_re"][r], P["rel_im"][r]
        e, f = P["ent_re"][t], P["ent_im"][t]
        w = w[:, None]
        return {
            "ent_re": [(h, w * (c * e + d * f)), (t, w * (a * c - b * d))],
            "ent_im": [(h, w * (c * f - d * e)), (t, w * (a * d + b * c))],
            "rel_re": [(r, w * (a * e + b * f))],
            "rel_im": [(r, w * (a * f - b * e))],
        }

    def embeddings(self, P):
        return (np.hstack([P["ent_re"], P["ent_im"]]),
                np.hstack([P["rel_re"], P["rel_im"]]))


class KG2E(Model):
    """Diagonal Gaussian embeddings scored by -KL(N_h - N_t || N_r)."""

    name = "kg2e"
    family = "gaussian"
    tensors = {"ent_mu": "entity", "ent_var": "entity", "rel_mu": "relation", "rel_var": "relation"}

    @property
    def settings(self):
        return {"L1_flag": self.p == 1, "var_min": self.var_min, "var_max": self.var_max}

    def init_params(self, n_entities, n_relations, dim, seed=0):
        params = super().init_params(n_entities, n_relations, dim, seed)
        params.tensors["ent_var"][:] = 1.0
        params.tensors["rel_var"][:] = 1.0
        self.project(params)
        return params

    def score(self, P, h, r, t):
        mu = P["ent_mu"][h] - P["ent_mu"][t]
        s1 = P["ent_var"][h] + P["ent_var"][t]
        mu_r, s2 = P["rel_mu"][r], P["rel_var"][r]
        dim = s1.shape[-1]
        kl = 0.5 * (np.sum(s1 / s2, axis=-1) + np.sum((mu_r - mu) ** 2 / s2, axis=-1)
                    - dim + np.sum(np.log(s2) - np.log(s1), axis=-1))
        return -kl

    def score_grad(self, P, h, r, t, c):
        mu = P["ent_mu"][h] - P["ent_mu"][t]
        s1 = P["ent_var"][h] + P["ent_var"][t]
        mu_r, s2 = P["rel_mu"][r], P["rel_var"][r]
        diff = mu_r - mu
        cc = -c[:, None]  # score = -KL
        d_mu = cc * (-diff / s2)
        d_s1 = cc * 0.5 * (1.0 / s2 - 1.0 / s1)
        d_s2 = cc * 0.5 * (1.0 / s2 - (s1 + diff ** 2) / s2 ** 2)
        return {
            "ent_mu": [(h, d_mu), (t, -d_mu)],
            "ent_var": [(h, d_s1), (t, d_s1)],
            "rel_mu": [(r, -d_mu)],
            "rel_var": [(r, d_s2)],
        }

    def project(self, P, touched=None):
        for name in ("ent_var", "rel_var"):
            rows = _rows(touched, name)
            P[name][rows] = np.clip(P[name][rows], self.var_min, self.var_max)

    def embeddings(self, P):
        return P["ent_mu"], P["rel_mu"]


MODELS: dict[str, type[Model]] = {
    cls.name: cls for cls in (TransE, TransH, TransR, TransD, RESCAL, DistMult, ComplEx, KG2E)
}


def registered() -> list[str]:
    return list(MODELS)


def get_model(kind: str, **settings) -> Model:
    try:
        cls = MODELS[kind.lower()]
    except KeyError:
        raise UnknownModelError(kind, MODELS) from None
    return cls(**settings)


def model_for(params: ModelParams) -> Model:
    return get_model(params.kind, **params.settings)


def init_params(kind: str, n_entities: int, n_relations: int, dim: int, seed: int = 0,
                **settings) -> ModelParams:
    return get_model(kind, **settings).init_params(n_entities, n_relations, dim, seed)


def score(params: ModelParams, triples) -> np.ndarray:
    triples = np.asarray(triples, dtype=np.int64).reshape(-1, 3)
    return model_for(params).score(params, triples[:, 0], triples[:, 1], triples[:, 2])


@dataclass(frozen=True)
class LossContext:
    kind: str = "margin"
    margin: float = 1.0
    lambda_reg: float = 0.0


def touched_rows(model: Model, triples: np.ndarray) -> dict[str, np.ndarray]:
    """Unique row ids per tensor referenced by a set of triples."""
    ents = np.unique(np.concatenate([triples[:, 0], triples[:, 2]]))
    rels = np.unique(triples[:, 1])
    return {name: ents if axis == "entity" else rels for name, axis in model.tensors.items()}


def loss_and_grad(params: ModelParams, pos, neg, ctx: LossContext = LossContext(),
                  model: Model | None = None):
    """Summed batch loss and its sparse gradient.

    Only pairs with a non-zero loss slope contribute; a batch where every
    margin is already satisfied (and no regularizer applies) yields ``{}``.
    """
    model = model or model_for(params)
    pos = np.asarray(pos, dtype=np.int64).reshape(-1, 3)
    neg = np.asarray(neg, dtype=np.int64).reshape(-1, 3)
    s_pos = model.score(params, pos[:, 0], pos[:, 1], pos[:, 2])
    s_neg = model.score(params, neg[:, 0], neg[:, 1], neg[:, 2])
    c_pos, c_neg = losses.slopes(ctx.kind, s_pos, s_neg, ctx.margin)

    reg = ctx.kind == "softplus" and ctx.lambda_reg > 0
    touched = touched_rows(model, np.concatenate([pos, neg])) if reg else {}
    value = losses.loss(ctx.kind, s_pos, s_neg, ctx.margin, ctx.lambda_reg,
                        [params[k][ids] for k, ids in touched.items()])

    triples = np.concatenate([pos, neg])
    coef = np.concatenate([c_pos, c_neg])
    keep = coef != 0
    grads: dict[str, tuple[np.ndarray, np.ndarray]] = {}
    if keep.any():
        tr = triples[keep]
        parts = model.score_grad(params, tr[:, 0], tr[:, 1], tr[:, 2], coef[keep])
        grads = {name: accumulate(pairs) for name, pairs in parts.items()}
    for name, ids in touched.items():
        extra = 2.0 * ctx.lambda_reg * params[name][ids]
        if name in grads:
            grads[name] = accumulate([grads[name], (ids, extra)])
        else:
            grads[name] = (ids, extra)
    return value, grads


def grad(params: ModelParams, pos, neg, ctx: LossContext = LossContext()):
    """Sparse gradient of the summed batch loss (see ``loss_and_grad``)."""
    return loss_and_grad(params, pos, neg, ctx)[1]
