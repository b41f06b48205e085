"""Flat ``key = value`` run configuration shared by the config file and the CLI.

Keys are grouped by prefix (``data.``, ``model.``, ``pretrain.``, ``finetune.``,
``eval.``) plus the single top-level ``seed`` that drives every random stream.
Precedence is CLI flag > ``FAIRCL_SEED`` (seed only) > config file > default.
"""
from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable

from faircl.data import COMPOSITE, SyntheticCorpusConfig
from faircl.model import ModelConfig
from faircl.train import TrainConfig

SEED_ENV = "FAIRCL_SEED"


class ConfigValueError(ValueError):
    """Unknown key or unparseable value; the message names the key and source."""


def parse_bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


@dataclass(frozen=True)
class Key:
    name: str
    parse: Callable[[str], Any]
    default: Any
    help: str


def _k(name, parse, default, help):
    return name, Key(name, parse, default, help)


_TRAIN_SHARED = [
    ("epochs", int, "training epochs"),
    ("batch_size", int, "utterances per batch"),
    ("lr", float, "peak learning rate"),
    ("lr_min", float, "final learning rate of the cosine schedule"),
    ("beta1", float, "AdamW first-moment decay"),
    ("beta2", float, "AdamW second-moment decay"),
    ("eps", float, "AdamW denominator epsilon"),
    ("weight_decay", float, "decoupled weight decay"),
    ("clip_norm", float, "global gradient-norm clip (0 disables)"),
]

_PRETRAIN_ONLY = [
    ("objective", str, "fairasr (InfoNCE + lambda * FSC) or infonce"),
    ("lam", float, "weight of the fairness term"),
    ("grl_alpha", float, "gradient reversal strength"),
    ("shared_embedding_space", parse_bool, "share one projection head between both terms"),
    ("temperature", float, "contrastive temperature"),
    ("fsc_attribute", str, "attribute defining fairness groups, or 'composite'"),
    ("time_mask_width", int, "max time-mask width (frames)"),
    ("n_time_masks", int, "time masks per view"),
    ("freq_mask_width", int, "max frequency-mask width (bins)"),
    ("n_freq_masks", int, "frequency masks per view"),
]

_FINETUNE_ONLY = [
    ("freeze_encoder", parse_bool, "train only the recurrent head"),
    ("blank", int, "CTC blank index"),
]

_DATA_HELP = {
    "n_utterances": "synthetic corpus size",
    "vocab_size": "token vocabulary size including blank",
    "min_tokens": "shortest transcript",
    "max_tokens": "longest transcript",
    "frames_per_token": "frames rendered per token",
    "n_mels": "mel bins of synthetic spectrograms",
    "signature_strength": "norm of the per-cohort spectral offset",
    "noise_std": "i.i.d. noise standard deviation",
    "attributes": "demographic schema, e.g. gender,age_band or age_band:2",
    "category_skew": "category k is drawn with weight skew**k (1 = balanced)",
}

_MODEL_HELP = {
    "n_mels": "input mel bins (also used when extracting audio features)",
    "vocab_size": "output vocabulary including blank",
    "n_blocks": "encoder blocks",
    "model_dim": "encoder width",
    "ff_dim": "feed-forward inner width",
    "conv_kernel": "depthwise convolution kernel (odd)",
    "subsample_factor": "frames stacked by the front end",
    "use_attention": "include self-attention in each block",
    "proj_hidden": "projection head hidden width",
    "proj_dim": "projection output width",
    "normalize_projections": "l2-normalize projections",
}


def _build_keys() -> dict[str, Key]:
    keys = dict([_k("seed", int, 0, "seed for data, split, init, shuffling and augmentation")])
    syn = SyntheticCorpusConfig()
    for name, help in _DATA_HELP.items():
        default = 80 if name == "n_mels" else getattr(syn, name)
        parse = str if isinstance(default, str) else type(default)
        keys.update([_k(f"data.{name}", parse, default, help)])
    keys.update([_k("data.test_fraction", float, 0.2, "held-out fraction, stratified by eval.attributes")])
    mdl = ModelConfig()
    for name, help in _MODEL_HELP.items():
        default = getattr(mdl, name)
        parse = parse_bool if isinstance(default, bool) else type(default)
        keys.update([_k(f"model.{name}", parse, default, help)])
    tc = TrainConfig()
    for name, parse, help in _TRAIN_SHARED + _PRETRAIN_ONLY:
        keys.update([_k(f"pretrain.{name}", parse, getattr(tc, name), help)])
    for name, parse, help in _TRAIN_SHARED + _FINETUNE_ONLY:
        default = 60 if name == "epochs" else getattr(tc, name)
        keys.update([_k(f"finetune.{name}", parse, default, help)])
    keys.update([
        _k("eval.attributes", str, "", "attributes to report (empty = every attribute in the data)"),
        _k("eval.probe_attribute", str, COMPOSITE, "label for the demographic probe"),
        _k("eval.probe_steps", int, 500, "probe gradient steps"),
        _k("eval.probe_lr", float, 0.1, "probe learning rate"),
        _k("eval.projection", str, "2d", "export-embeddings output: 2d (PCA) or raw"),
    ])
    return keys


KEYS: dict[str, Key] = _build_keys()


def coerce(name: str, raw: str, source: str = "") -> Any:
    where = f"{source}: " if source else ""
    if name not in KEYS:
        raise ConfigValueError(f"{where}unknown config key '{name}'")
    try:
        return KEYS[name].parse(raw)
    except ValueError as exc:
        raise ConfigValueError(f"{where}bad value for '{name}': {exc}") from None


def read_config_file(path) -> dict[str, Any]:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigValueError(f"{p}: cannot read config: {exc.strerror}") from None
    out: dict[str, Any] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigValueError(f"{p}:{lineno}: expected 'key = value'")
        key, raw = (s.strip() for s in line.split("=", 1))
        out[key] = coerce(key, raw, f"{p}:{lineno}")
    return out


class RunConfig:
    """Resolved values for every key, with builders for the module configs."""

    def __init__(self, values: dict[str, Any]):
        self.values = dict(values)

    @classmethod
    def resolve(cls, file_values: dict[str, Any] | None = None,
                cli_values: dict[str, Any] | None = None,
                env: dict[str, str] | None = None) -> "RunConfig":
        env = os.environ if env is None else env
        values = {k: key.default for k, key in KEYS.items()}
        values.update(file_values or {})
        if env.get(SEED_ENV, "").strip():
            values["seed"] = coerce("seed", env[SEED_ENV], SEED_ENV)
        values.update(cli_values or {})
        return cls(values)

    def __getitem__(self, name: str) -> Any:
        return self.values[name]

    def section(self, prefix: str) -> dict[str, Any]:
        n = len(prefix) + 1
        return {k[n:]: v for k, v in self.values.items() if k.startswith(prefix + ".")}

    def corpus_config(self) -> SyntheticCorpusConfig:
        d = self.section("data")
        d.pop("test_fraction")
        return SyntheticCorpusConfig(seed=self["seed"], **d)

    def model_config(self) -> ModelConfig:
        return ModelConfig(**self.section("model"))

    def pretrain_config(self, **override) -> TrainConfig:
        kw = {**self.section("pretrain"), **override}
        return TrainConfig(stage="pretrain", seed=self["seed"], **kw)

    def finetune_config(self) -> TrainConfig:
        return TrainConfig(stage="finetune", seed=self["seed"], **self.section("finetune"))

    def dump(self) -> str:
        """Every resolved key as a config file (sorted, reloadable)."""
        return "".join(f"{k} = {_fmt(v)}\n" for k, v in sorted(self.values.items()))


def _fmt(v: Any) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    return repr(v) if isinstance(v, float) else str(v)
