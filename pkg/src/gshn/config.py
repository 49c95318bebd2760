"""Flat ``key=value`` configuration with typed defaults."""

from __future__ import annotations

import hashlib
from pathlib import Path

from .fusion import FusionMode
from .model import LossWeights, ModelConfig
from .numerics import ConfigurationError
from .spiking import LifConfig
from .stl import StlConfig

DEFAULTS: dict[str, object] = {
    "data.path": "",
    "data.n_train": 2000,
    "data.n_val": 200,
    "data.n_test": 200,
    "data.d": 16,
    "data.noise_sigma": 0.1,
    "data.seed": 0,
    "train.epochs": 20,
    "train.freeze_epochs": 5,
    "train.max_items": 0,
    "train.eval_split": "val",
    "loss.itm": 1.0,
    "loss.mlm": 1.0,
    "loss.cl": 1.0,
    "loss.stl": 1.0,
    "opt.momentum": 0.9,
    "opt.visual_lr": 1e-2,
    "opt.visual_wd": 5e-4,
    "opt.text_optimizer": "sgd",
    "opt.text_lr": 1e-4,
    "opt.text_wd": 1e-2,
    "model.d_model": 64,
    "model.gat_layers": 2,
    "model.capacity": 256,
    "model.n_layers": 2,
    "model.n_heads": 4,
    "model.ffn_dim": 128,
    "model.max_text": 16,
    "model.seq_cap": 96,
    "snn.T": 10,
    "snn.v_threshold": 1.0,
    "snn.v_rest": 0.0,
    "snn.v_reset": 0.0,
    "snn.decay": 0.5,
    "snn.reset_mode": "hard",
    "snn.surrogate_scale": 2.0,
    "snn.tdbn": True,
    "fusion.mode": "trainable",
    "smu.trainable": True,
    "stl.mask_prob": 0.05,
    "stl.gamma": 2.0,
    "stl.alpha": 0.25,
    "cl.temperature": 0.07,
    "mlm.ratio": 0.15,
    "batch.size": 16,
    "batch.refresh_every": 1,
    "batch.similarity": "itm",
    "batch.shortlist": 32,
}


def _coerce(key: str, raw):
    default = DEFAULTS[key]
    if isinstance(raw, type(default)) and not isinstance(default, bool):
        return raw
    if isinstance(default, bool):
        if isinstance(raw, bool):
            return raw
        text = str(raw).strip().lower()
        if text in ("1", "true", "yes", "on"):
            return True
        if text in ("0", "false", "no", "off"):
            return False
        raise ConfigurationError(f"{key}: expected a boolean, got {raw!r}")
    try:
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
    except (TypeError, ValueError):
        raise ConfigurationError(f"{key}: cannot parse {raw!r}") from None
    return str(raw).strip()


class Config(dict):
    """Resolved configuration: defaults overlaid with user values."""

    def __init__(self, values: dict | None = None) -> None:
        super().__init__(DEFAULTS)
        for k, v in (values or {}).items():
            self.set(k, v)
        self.validate()

    def set(self, key: str, value) -> None:
        if key not in DEFAULTS:
            raise ConfigurationError(f"unknown config key {key!r}")
        self[key] = _coerce(key, value)

    def with_overrides(self, overrides: dict) -> "Config":
        merged = dict(self)
        merged.update(overrides)
        return Config(merged)

    def validate(self) -> None:
        if not 0 <= self["train.freeze_epochs"] < self["train.epochs"]:
            raise ConfigurationError("need 0 <= train.freeze_epochs < train.epochs")
        for k in ("loss.itm", "loss.mlm", "loss.cl", "loss.stl"):
            if self[k] < 0:
                raise ConfigurationError(f"{k} must be >= 0")
        if self["batch.similarity"] not in ("cosine", "itm"):
            raise ConfigurationError("batch.similarity must be cosine or itm")
        if self["batch.size"] < 2:
            raise ConfigurationError("batch.size must be >= 2")
        if self["batch.refresh_every"] < 1:
            raise ConfigurationError("batch.refresh_every must be >= 1")
        if self["opt.text_optimizer"] not in ("sgd", "adamw"):
            raise ConfigurationError("opt.text_optimizer must be sgd or adamw")
        FusionMode.parse(self["fusion.mode"])
        self.model_config()

    def lines(self) -> list[str]:
        return [f"{k}={_fmt(self[k])}" for k in sorted(self)]

    def digest(self) -> str:
        return hashlib.sha256("\n".join(self.lines()).encode()).hexdigest()

    def diff(self, other: "Config") -> list[str]:
        return sorted(k for k in self if self[k] != other[k])

    def model_config(self) -> ModelConfig:
        lif = LifConfig(self["snn.v_threshold"], self["snn.v_rest"], self["snn.v_reset"],
                        self["snn.decay"], self["snn.reset_mode"], self["snn.surrogate_scale"])
        stl = StlConfig(self["stl.mask_prob"], self["stl.gamma"], self["stl.alpha"])
        return ModelConfig(
            d_in=self["data.d"], d_model=self["model.d_model"],
            gat_layers=self["model.gat_layers"], capacity=self["model.capacity"],
            T=self["snn.T"], lif=lif, tdbn=self["snn.tdbn"],
            fusion_mode=self["fusion.mode"], smu_trainable=self["smu.trainable"],
            n_layers=self["model.n_layers"], n_heads=self["model.n_heads"],
            ffn_dim=self["model.ffn_dim"], max_text=self["model.max_text"],
            seq_cap=self["model.seq_cap"], temperature=self["cl.temperature"],
            mlm_ratio=self["mlm.ratio"], stl=stl)

    def loss_weights(self) -> LossWeights:
        return LossWeights(self["loss.itm"], self["loss.mlm"], self["loss.cl"], self["loss.stl"])


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    return repr(v) if isinstance(v, float) else str(v)


def parse_config_text(text: str) -> dict[str, str]:
    out = {}
    for no, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigurationError(f"config line {no}: expected key=value")
        out[key.strip()] = value.strip()
    return out


def load_config(path, overrides: dict | None = None) -> Config:
    values = parse_config_text(Path(path).read_text(encoding="utf-8"))
    values.update(overrides or {})
    return Config(values)
