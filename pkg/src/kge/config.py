"""Run configuration: defaults, golden presets, JSON files and overrides.

Every accepted key is declared once in ``KEYS``; the CLI derives its flags
from the same table. Resolution order, lowest to highest precedence:
built-in defaults, the model's golden preset (only with ``golden``), the
JSON config file, explicit overrides.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Any

from . import models
from .errors import ConfigError
from .evaluation import HITS_KS
from .losses import LOSS_KINDS
from .sampler import STRATEGIES, SamplerConfig
from .training import GOLDEN_KEYS, HyperParams


@dataclass(frozen=True)
class Key:
    name: str
    type: type
    default: Any
    help: str
    choices: tuple = ()
    minimum: float | None = None
    exclusive: bool = False  # minimum is a strict bound
    nullable: bool = False

    @property
    def flag(self) -> str:
        return "--" + self.name.replace("_", "-")


KEYS: tuple[Key, ...] = (
    Key("dataset", str, None, "dataset directory holding train.txt/valid.txt/test.txt", nullable=True),
    Key("model", str, "transe", "model kind", choices=tuple(models.MODELS)),
    Key("out", str, "runs", "output directory"),
    Key("golden", bool, False, "start from the model's golden preset"),
    # hyperparameters
    Key("L1_flag", bool, False, "use the L1 norm in translational distances (else L2)"),
    Key("batch_size", int, 128, "positive triples per mini-batch", minimum=1),
    Key("epochs", int, 100, "training epochs", minimum=1),
    Key("hidden_size", int, 50, "embedding dimension", minimum=1),
    Key("learning_rate", float, 0.01, "optimizer step size", minimum=0.0, exclusive=True),
    Key("margin", float, 1.0, "margin of the ranking loss", minimum=0.0),
    Key("opt", str, "sgd", "optimizer", choices=("sgd", "adam")),
    Key("samp", str, "bern", "negative sampling strategy", choices=STRATEGIES),
    Key("loss_kind", str, None, "loss (default: margin, softplus for distmult/complex)",
        choices=LOSS_KINDS, nullable=True),
    Key("lambda_reg", float, 1e-5, "L2 weight of the softplus loss", minimum=0.0),
    Key("seed", int, 0, "random seed", minimum=0),
    # sampler
    Key("workers", int, 1, "batch producer threads", minimum=1),
    Key("queue_capacity", int, 8, "bounded batch queue size", minimum=1),
    Key("reject_train_positives", bool, False, "resample negatives that are train facts"),
    # evaluation
    Key("eval_workers", int, 1, "evaluation threads", minimum=1),
    Key("eval_every", int, None, "validate every N epochs (default: once at the end)",
        minimum=1, nullable=True),
    Key("hits_ks", list, list(HITS_KS), "k values reported for hits@k"),
    Key("split", str, "test", "split to evaluate", choices=("valid", "test")),
    # projection
    Key("proj", str, "tsne", "projection method", choices=("pca", "tsne")),
    Key("perplexity", float, 30.0, "t-SNE perplexity", minimum=2.0),
    Key("max_points", int, 1000, "subsample embeddings to at most this many points", minimum=2),
    Key("tsne_iters", int, 1000, "t-SNE iterations", minimum=1),
    # tuning
    Key("budget", int, 20, "number of tuning trials", minimum=1),
)

KEY_MAP = {k.name: k for k in KEYS}


def defaults() -> dict:
    return {k.name: (list(k.default) if isinstance(k.default, list) else k.default) for k in KEYS}


def check_value(key: Key, value):
    """Return the validated value or raise ``ConfigError`` naming the key."""
    if value is None:
        if key.nullable:
            return None
        raise ConfigError(key.name, "must not be null")
    if key.type is bool:
        if not isinstance(value, bool):
            raise ConfigError(key.name, f"expected true/false, got {value!r}")
    elif key.type is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(key.name, f"expected an integer, got {value!r}")
    elif key.type is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(key.name, f"expected a number, got {value!r}")
        value = float(value)
        if value != value or value in (float("inf"), float("-inf")):
            raise ConfigError(key.name, "must be finite")
    elif key.type is str:
        if not isinstance(value, str):
            raise ConfigError(key.name, f"expected a string, got {value!r}")
    elif key.type is list:
        if (not isinstance(value, (list, tuple)) or not value
                or any(isinstance(v, bool) or not isinstance(v, int) or v < 1 for v in value)):
            raise ConfigError(key.name, f"expected a non-empty list of positive integers, got {value!r}")
        value = sorted(set(value))
    if key.choices and value not in key.choices:
        if key.name == "model":
            raise models.UnknownModelError(value, models.MODELS)
        raise ConfigError(key.name, f"must be one of {list(key.choices)}, got {value!r}")
    if key.minimum is not None:
        bad = value <= key.minimum if key.exclusive else value < key.minimum
        if bad:
            op = ">" if key.exclusive else ">="
            raise ConfigError(key.name, f"must be {op} {key.minimum}, got {value!r}")
    return value


def validate(values: dict) -> dict:
    unknown = sorted(set(values) - set(KEY_MAP))
    if unknown:
        raise ConfigError(unknown[0], f"unknown key; accepted keys: {', '.join(KEY_MAP)}")
    return {name: check_value(KEY_MAP[name], value) for name, value in values.items()}


# -- golden presets ------------------------------------------------------

def preset_path(kind: str) -> Path:
    return Path(str(resources.files("kge") / "presets" / f"{kind}.json"))


def load_preset(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        data = json.load(fh)
    if set(data) != set(GOLDEN_KEYS):
        raise ConfigError("preset", f"{path} must hold exactly the keys {list(GOLDEN_KEYS)}")
    return validate(data)


def save_preset(values: dict, path) -> Path:
    path = Path(path)
    data = {k: values[k] for k in GOLDEN_KEYS}
    path.write_text(json.dumps(data, indent=None) + "\n", encoding="utf-8")
    return path


def preset_dict(kind: str) -> dict:
    kind = check_value(KEY_MAP["model"], kind)
    return load_preset(preset_path(kind))


def golden_preset(kind: str) -> HyperParams:
    """Shipped hyperparameters for ``kind``, on top of the built-in defaults."""
    values = defaults()
    values.update(preset_dict(kind))
    values["model"] = kind
    return RunConfig(values).hyper


# -- run configuration ---------------------------------------------------

@dataclass(frozen=True)
class RunConfig:
    values: dict

    def __getattr__(self, name):
        try:
            return self.__dict__["values"][name]
        except KeyError:
            raise AttributeError(name) from None

    @property
    def loss(self) -> str:
        return self.values["loss_kind"] or models.get_model(self.values["model"]).default_loss

    @property
    def hyper(self) -> HyperParams:
        v = self.values
        return HyperParams(**{k: v[k] for k in HyperParams.keys() if k != "loss_kind"},
                           loss_kind=self.loss)

    @property
    def sampler(self) -> SamplerConfig:
        v = self.values
        return SamplerConfig(strategy=v["samp"], batch_size=v["batch_size"],
                             reject_train_positives=v["reject_train_positives"], seed=v["seed"],
                             workers=v["workers"], queue_capacity=v["queue_capacity"])

    def to_dict(self) -> dict:
        return dict(self.values)


def read_config_file(path) -> dict:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError("config", f"cannot read {path}: {exc}") from exc
    if not text.strip():
        return {}
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError("config", f"{path} is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError("config", f"{path} must hold a JSON object")
    return data


def load_config(path=None, cli_overrides: dict | None = None) -> RunConfig:
    """Resolve defaults, golden preset, file and overrides into a validated config."""
    file_values = validate(read_config_file(path)) if path else {}
    overrides = validate({k: v for k, v in (cli_overrides or {}).items() if v is not None})
    values = defaults()
    model = overrides.get("model", file_values.get("model", values["model"]))
    golden = overrides.get("golden", file_values.get("golden", False))
    if golden:
        values.update(preset_dict(model))
    values.update(file_values)
    values.update(overrides)
    return RunConfig(validate(values))
