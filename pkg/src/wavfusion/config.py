"""Experiment configuration: every hyperparameter of a run, a key=value file
format for persistence, and validation."""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass
from pathlib import Path

from .errors import ConfigError
from .model import FUSION_MODES, GATE_INPUTS, MODALITIES

ENV_OUT_DIR = "WAVFUSION_OUT_DIR"

PRECISIONS = ("float64", "float32")
OPTIMIZERS = ("adam",)


@dataclass
class ExperimentConfig:
    # model
    d: int = 64
    heads: int = 4
    n_shallow: int = 9
    n_deep: int = 3
    lvc_centers: int = 8
    conv_kernel: int = 3
    lvc_enabled: bool = True
    gate_input: str = "f1f2"          # gate input pairing: f1f2 | f1f1
    fusion_mode: str = "per_layer"    # per_layer | final_layer | concat
    # objective
    alpha: float = 0.5
    balance: float = 1.0              # weight of the margin loss
    strict_cosine: bool = False
    # optimizer
    optimizer: str = "adam"
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    freeze_shallow: bool = False
    # loop
    batch_size: int = 8
    epochs: int = 20
    seed: int = 0
    stop_train_acc: float = 0.0       # early exit threshold; 0 disables
    modalities: str = "avt"
    precision: str = "float64"
    num_classes: int = 0              # 0: infer from the dataset
    # data
    train_frac: float = 0.8
    val_frac: float = 0.1
    test_frac: float = 0.1
    data_dir: str = ""
    out_dir: str = ""

    def validate(self) -> "ExperimentConfig":
        if self.d < 1 or self.heads < 1 or self.d % self.heads != 0:
            raise ConfigError(f"model width {self.d} must be a positive multiple of heads={self.heads}")
        if self.n_shallow < 0 or self.n_deep < 0 or self.n_shallow + self.n_deep < 1:
            raise ConfigError("layer counts must be non-negative and sum to at least 1")
        if self.lvc_centers < 1:
            raise ConfigError(f"lvc_centers must be positive; got {self.lvc_centers}")
        if self.conv_kernel < 1 or self.conv_kernel % 2 == 0:
            raise ConfigError(f"conv_kernel must be odd; got {self.conv_kernel}")
        if self.gate_input not in GATE_INPUTS:
            raise ConfigError(f"gate_input must be one of {GATE_INPUTS}; got {self.gate_input!r}")
        if self.fusion_mode not in FUSION_MODES:
            raise ConfigError(f"fusion_mode must be one of {FUSION_MODES}; got {self.fusion_mode!r}")
        if self.fusion_mode == "concat" and self.n_deep != 0:
            raise ConfigError("concat fusion requires n_deep=0")
        if not 0.0 < self.alpha <= 2.0:
            raise ConfigError(f"alpha must lie in (0, 2]; got {self.alpha}")
        if self.balance < 0.0:
            raise ConfigError(f"balance must be non-negative; got {self.balance}")
        if self.optimizer not in OPTIMIZERS:
            raise ConfigError(f"optimizer must be one of {OPTIMIZERS}; got {self.optimizer!r}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be at least 1; got {self.batch_size}")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be at least 1; got {self.epochs}")
        mods = set(self.modalities)
        if not mods or not mods <= set(MODALITIES):
            raise ConfigError(f"modalities must be a non-empty subset of 'atv'; got {self.modalities!r}")
        if "a" not in mods and len(mods) > 1:
            raise ConfigError(f"multimodal mode {self.modalities!r} requires the audio stream")
        if self.precision not in PRECISIONS:
            raise ConfigError(f"precision must be one of {PRECISIONS}; got {self.precision!r}")
        if self.num_classes < 0:
            raise ConfigError("num_classes must be non-negative (0 = infer)")
        for name in ("train_frac", "val_frac", "test_frac"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1]")
        return self

    def mask(self) -> tuple:
        return tuple(m for m in MODALITIES if m in set(self.modalities))

    def resolved_out_dir(self) -> Path:
        if self.out_dir:
            return Path(self.out_dir)
        return Path(os.environ.get(ENV_OUT_DIR, "runs"))

    def to_text(self) -> str:
        lines = []
        for f in dataclasses.fields(self):
            lines.append(f"{f.name} = {getattr(self, f.name)}")
        return "\n".join(lines) + "\n"


def _coerce(name: str, kind, raw: str):
    raw = raw.strip()
    try:
        if kind is bool:
            low = raw.lower()
            if low in ("true", "1", "yes", "on"):
                return True
            if low in ("false", "0", "no", "off"):
                return False
            raise ValueError(raw)
        return kind(raw)
    except ValueError:
        raise ConfigError(f"config key {name!r}: cannot parse {raw!r} as {kind.__name__}") from None


def parse_config_text(text: str, base: ExperimentConfig | None = None) -> ExperimentConfig:
    cfg = dataclasses.replace(base) if base else ExperimentConfig()
    kinds = {f.name: f.type for f in dataclasses.fields(cfg)}
    types = {"int": int, "float": float, "str": str, "bool": bool}
    for lineno, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ConfigError(f"config line {lineno}: expected key = value, got {line!r}")
        key, raw = (part.strip() for part in body.split("=", 1))
        if key not in kinds:
            raise ConfigError(f"config line {lineno}: unknown key {key!r}")
        kind = types[kinds[key]] if isinstance(kinds[key], str) else kinds[key]
        setattr(cfg, key, _coerce(key, kind, raw))
    return cfg


def load_config(path, base: ExperimentConfig | None = None) -> ExperimentConfig:
    return parse_config_text(Path(path).read_text(encoding="utf-8"), base)


def save_config(path, cfg: ExperimentConfig) -> None:
    Path(path).write_text(cfg.to_text(), encoding="utf-8")
