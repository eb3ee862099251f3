"""Flat ``key = value`` configuration files for the CLI.

Keys mirror the dataclass field names of the training, loss, encoder, and
synthesis configs. Lines starting with ``#`` and blank lines are ignored;
unknown keys are an error so typos fail loudly.
"""

from __future__ import annotations

from .encoder import EncoderConfig
from .errors import ConfigError
from .objectives import LossConfig
from .synth import SynthConfig
from .trainer import TrainConfig


def parse_kv_file(path) -> dict[str, str]:
    out: dict[str, str] = {}
    try:
        with open(path, "r", encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                line = line.strip()
                if not line or line.startswith("#"):
                    continue
                if "=" not in line:
                    raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {line!r}")
                key, value = line.split("=", 1)
                out[key.strip()] = value.strip()
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    return out


def _convert(key: str, raw: str, kind):
    try:
        if kind is bool:
            if raw.lower() in ("true", "1", "yes"):
                return True
            if raw.lower() in ("false", "0", "no"):
                return False
            raise ValueError(raw)
        return kind(raw)
    except ValueError as e:
        raise ConfigError(f"config key {key!r}: cannot parse {raw!r} as {kind.__name__}") from e


_TRAIN_FIELDS = {
    "learning_rate": float, "warmup_steps": int, "pretrain_epochs": int,
    "feature_epochs": int, "validate_every": int, "patience": int,
    "groups_per_batch": int, "dev_groups": int, "mean_momentum": float,
}
_LOSS_FIELDS = {
    "margin_final": float, "margin_warm_steps": int, "alpha": float,
    "bce_weight": float, "tau": float, "topk_positives": int,
    "var_weight": float, "cov_weight": float,
}
_ENCODER_FIELDS = {"n_layers": int, "hidden_dim": int, "max_tokens": int}
_SYNTH_FIELDS = {
    "n_communities": int, "authors_per_community": int, "comments_per_author": int,
    "sentences_per_comment": int, "feature_inventory_size": int,
    "author_perturbation": float, "comment_share_prob": float, "vocab_size": int,
}
_SPLIT_FIELDS = {"heldout_per_dialect": int, "train_authors_cap": int}


def build_train_configs(kv: dict[str, str], seed: int) -> tuple[TrainConfig, EncoderConfig]:
    cfg = TrainConfig(rng_seed=seed)
    loss = LossConfig()
    enc = EncoderConfig()
    for key, raw in kv.items():
        if key in _TRAIN_FIELDS:
            setattr(cfg, key, _convert(key, raw, _TRAIN_FIELDS[key]))
        elif key in _LOSS_FIELDS:
            setattr(loss, key, _convert(key, raw, _LOSS_FIELDS[key]))
        elif key in _ENCODER_FIELDS:
            setattr(enc, key, _convert(key, raw, _ENCODER_FIELDS[key]))
        else:
            raise ConfigError(f"unknown training config key {key!r}")
    cfg.loss = loss
    cfg.validate()
    enc.validate()
    return cfg, enc


def build_synth_config(kv: dict[str, str], seed: int) -> tuple[SynthConfig, dict[str, int]]:
    cfg = SynthConfig(seed=seed)
    split = {"heldout_per_dialect": 2, "train_authors_cap": 200}
    for key, raw in kv.items():
        if key in _SYNTH_FIELDS:
            setattr(cfg, key, _convert(key, raw, _SYNTH_FIELDS[key]))
        elif key in _SPLIT_FIELDS:
            split[key] = _convert(key, raw, int)
        elif key == "community_feature_priors":
            if raw.lower() != "auto":
                cfg.community_feature_priors = _parse_priors(raw)
        else:
            raise ConfigError(f"unknown synthesis config key {key!r}")
    cfg.validate()
    return cfg, split


def _parse_priors(raw: str) -> list[list[float]]:
    """Per-community vectors separated by '|', entries by ','."""
    try:
        return [[float(x) for x in row.split(",")] for row in raw.split("|")]
    except ValueError as e:
        raise ConfigError(f"cannot parse community_feature_priors: {raw!r}") from e
