"""Run configuration: flat key=value files and per-dataset presets.

Presets bundle the published hyperparameter recipes (optimizer
constants, dropout keep probabilities, vocabulary budgets) so a whole
configuration is one flag; later sources win, so a preset can be
combined with a config file and command-line overrides.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json

from .encoder import EncoderConfig
from .training import TrainConfig

_COMMON = {
    "lr": 5e-4,
    "batch_size": 32,
    "clip_norm": 10.0,
    "blocks": 2,
    "heads": 4,
    "pos_prob": 0.5,
    "ner_weight": 1.0,
}

PRESETS: dict[str, dict] = {
    # gold-only chemical-disease runs
    "cdr": dict(_COMMON, adam_eps=1e-4, adam_beta1=0.1, adam_beta2=0.9,
                noise_eta=0.1, keep_word=0.85, keep_interior=0.95,
                keep_final=0.35, bpe_budget=2500, d=128),
    # chemical-disease plus weakly labeled abstracts
    "cdr+data": dict(_COMMON, adam_eps=1e-4, adam_beta1=0.1, adam_beta2=0.9,
                     noise_eta=0.1, keep_word=0.95, keep_interior=0.95,
                     keep_final=0.5, bpe_budget=10000, d=128),
    # chemical-protein, sentence-level annotations
    "cpr": dict(_COMMON, adam_eps=1e-8, adam_beta1=0.1, adam_beta2=0.9,
                noise_eta=1.0, keep_word=0.5, keep_interior=1.0,
                keep_final=0.85, bpe_budget=7500, d=200),
    # the large distantly supervised build
    "ctd": dict(_COMMON, adam_eps=1e-4, adam_beta1=0.1, adam_beta2=0.9,
                noise_eta=0.1, keep_word=0.95, keep_interior=0.95,
                keep_final=0.5, bpe_budget=50000, d=128),
    # conventional Adam constants, for when beta1=0.1 misbehaves
    "standard-adam": {"adam_beta1": 0.9, "adam_beta2": 0.999, "adam_eps": 1e-8},
    # small recipe for the bundled synthetic corpus experiments
    "synthetic": dict(_COMMON, adam_beta1=0.9, adam_beta2=0.999, adam_eps=1e-8,
                      lr=2e-3, batch_size=16, noise_eta=0.01, keep_word=0.95,
                      keep_interior=1.0, keep_final=1.0, bpe_budget=220,
                      d=48, blocks=2, heads=4, max_positions=128),
}

_ENC_FIELDS = {f.name: f.type for f in dataclasses.fields(EncoderConfig)}
_TRAIN_FIELDS = {f.name: f.type for f in dataclasses.fields(TrainConfig)}
_EXTRA_FIELDS = {"bpe_budget": int}  # consumed by the CLI, not the configs


def parse_config_file(path) -> dict:
    """Read 'key=value' lines; '#' starts a comment."""
    out: dict[str, str] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected key=value, got {line!r}")
            key, _, value = line.partition("=")
            out[key.strip()] = value.strip()
    return out


def _coerce(key: str, value):
    if not isinstance(value, str):
        return value
    for fields in (_TRAIN_FIELDS, _ENC_FIELDS, _EXTRA_FIELDS):
        if key in fields:
            t = fields[key]
            t = t if isinstance(t, str) else t.__name__
            if "bool" in str(t):
                return value.lower() in ("1", "true", "yes")
            if "int" in str(t):
                return int(value)
            if "float" in str(t):
                return float(value)
            return value
    raise KeyError(f"unknown configuration key: {key}")


def merge_settings(*sources: dict) -> dict:
    """Later sources override earlier ones; values are type-coerced."""
    merged: dict = {}
    for source in sources:
        for key, value in source.items():
            merged[key] = _coerce(key, value)
    return merged


def resolve_presets(spec: str | None) -> dict:
    """Comma-separated preset names merged left to right."""
    out: dict = {}
    for name in (spec.split(",") if spec else []):
        name = name.strip()
        if name not in PRESETS:
            raise KeyError(f"unknown preset {name!r}; choices: {sorted(PRESETS)}")
        out.update(PRESETS[name])
    return out


def split_settings(settings: dict, vocab_size: int) -> tuple[EncoderConfig, "TrainConfig", dict]:
    """Partition a flat settings dict into the two config objects."""
    enc_kwargs = {k: v for k, v in settings.items() if k in _ENC_FIELDS}
    train_kwargs = {k: v for k, v in settings.items() if k in _TRAIN_FIELDS}
    extra = {k: v for k, v in settings.items()
             if k not in _ENC_FIELDS and k not in _TRAIN_FIELDS}
    # the trainer owns the dropout schedule; mirror it into the encoder
    for key in ("keep_word", "keep_interior", "keep_final"):
        if key in train_kwargs:
            enc_kwargs[key] = train_kwargs[key]
    enc = EncoderConfig(vocab_size=vocab_size, **enc_kwargs)
    train = TrainConfig(**train_kwargs)
    return enc, train, extra


def settings_digest(settings: dict) -> str:
    blob = json.dumps(settings, sort_keys=True, default=str).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()[:16]
