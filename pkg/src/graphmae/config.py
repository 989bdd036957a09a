"""Flat ``key = value`` run configuration files.

Lines are ``key = value``; ``#`` starts a comment. Dotted keys group related
settings (``encoder.kind``, ``probe.lr``). Unknown keys are rejected so a typo
never silently falls back to a default. Hyperparameter names follow the
node/graph tables: mask_ratio, replace_rate, gamma, hidden_size,
weight_decay, max_epoch, batch_size, pooling.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

from .errors import ParseError, ValidationError
from .evaluation import POOLINGS, ProbeConfig
from .graph import FeatureSpec
from .layers import KINDS
from .loss import LossConfig
from .masking import MaskConfig
from .training import OptimConfig, RunConfig


def _bool(v: str) -> bool:
    low = v.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {v!r}")


def _int_list(v: str) -> list[int]:
    return [int(tok) for tok in v.replace(",", " ").split()]


def _kind(v: str) -> str:
    v = v.strip().lower()
    if v not in KINDS:
        raise ValueError(f"expected one of {KINDS}, got {v!r}")
    return v


def _choice(*options):
    def parse(v: str) -> str:
        v = v.strip().lower()
        if v not in options:
            raise ValueError(f"expected one of {options}, got {v!r}")
        return v

    return parse


# key -> parser; defaults live on the dataclasses
KEYS = {
    "task": _choice("node", "graph"),
    "data.edges": str,
    "data.features": str,
    "data.labels": str,
    "data.graphset": str,
    "data.synthetic": _choice("sbm"),
    "sbm.blocks": _int_list,
    "sbm.p_in": float,
    "sbm.p_out": float,
    "sbm.dim": int,
    "sbm.mean_scale": float,
    "sbm.noise": float,
    "sbm.seed": int,
    "sbm.graphs": int,
    "sbm.nodes": int,
    "normalize_features": _bool,
    "split.train": float,
    "split.val": float,
    "split.test": float,
    "split.train_per_class": int,
    "split.seed": int,
    "mask_ratio": float,
    "replace_rate": float,
    "criterion": _choice("sce", "mse"),
    "gamma": float,
    "eps_norm": float,
    "hidden_size": int,
    "num_layers": int,
    "encoder.kind": _kind,
    "encoder.heads": int,
    "decoder.kind": _kind,
    "decoder.heads": int,
    "negative_slope": float,
    "remask": _bool,
    "lr": float,
    "beta1": float,
    "beta2": float,
    "adam_eps": float,
    "weight_decay": float,
    "max_epoch": int,
    "batch_size": int,
    "seed": int,
    "probe.lr": float,
    "probe.epochs": int,
    "probe.weight_decay": float,
    "probe.repeats": int,
    "probe.standardize": _bool,
    "pooling": _choice(*POOLINGS),
    "folds": int,
    "eval.repeats": int,
}

PATH_KEYS = ("data.edges", "data.features", "data.labels", "data.graphset")


class ConfigError(ValidationError):
    pass


@dataclass
class ConfigFile:
    values: dict = field(default_factory=dict)
    base_dir: Path = field(default_factory=Path.cwd)

    def get(self, key, default=None):
        return self.values.get(key, default)

    @property
    def task(self) -> str:
        return self.values.get("task", "node")

    def path(self, key) -> Optional[Path]:
        v = self.values.get(key)
        if v is None:
            return None
        p = Path(v)
        return p if p.is_absolute() else self.base_dir / p

    def run_config(self, seed: Optional[int] = None) -> RunConfig:
        v = self.values
        graph_task = self.task == "graph"
        default_kind = "gin" if graph_task else "gat"
        try:
            return RunConfig(
                mask=MaskConfig(v.get("mask_ratio", 0.5), v.get("replace_rate", 0.0 if graph_task else 0.05)),
                loss=LossConfig(v.get("criterion", "sce"), v.get("gamma", 1.0 if graph_task else 3.0),
                                v.get("eps_norm", 1e-12)),
                optim=OptimConfig(
                    lr=v.get("lr", 0.00015 if graph_task else 0.001),
                    beta1=v.get("beta1", 0.9),
                    beta2=v.get("beta2", 0.999),
                    eps=v.get("adam_eps", 1e-8),
                    weight_decay=v.get("weight_decay", 0.0),
                    max_epoch=v.get("max_epoch", 100 if graph_task else 200),
                ),
                encoder_kind=v.get("encoder.kind", default_kind),
                decoder_kind=v.get("decoder.kind", default_kind),
                hidden_size=v.get("hidden_size", 64),
                num_layers=v.get("num_layers", 2),
                heads=v.get("encoder.heads", 4),
                out_heads=v.get("decoder.heads", 1),
                negative_slope=v.get("negative_slope", 0.2),
                remask=v.get("remask", True),
                batch_size=v.get("batch_size", 32),
                seed=v.get("seed", 0) if seed is None else int(seed),
            )
        except ValidationError as exc:
            raise ConfigError(str(exc)) from None

    def probe_config(self) -> ProbeConfig:
        v = self.values
        graph_task = self.task == "graph"
        try:
            return ProbeConfig(
                lr=v.get("probe.lr", 0.01),
                epochs=v.get("probe.epochs", 300),
                weight_decay=v.get("probe.weight_decay", 1e-4),
                repeats=v.get("probe.repeats", 1 if graph_task else 20),
                standardize=v.get("probe.standardize", True),
            )
        except ValidationError as exc:
            raise ConfigError(str(exc)) from None

    def feature_spec(self) -> FeatureSpec:
        v = self.values
        return FeatureSpec(v.get("sbm.dim", 16), v.get("sbm.mean_scale", 1.0), v.get("sbm.noise", 0.1))

    def normalize_features(self) -> bool:
        return self.values.get("normalize_features", self.task == "node")

    def with_value(self, key, value) -> "ConfigFile":
        vals = dict(self.values)
        vals[key] = value
        return replace(self, values=vals)


def parse_config_text(text: str, base_dir=None, source="<config>") -> ConfigFile:
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParseError(f"expected 'key = value', got {raw.strip()!r}", lineno, source)
        key, _, val = (part.strip() for part in line.partition("="))
        if key not in KEYS:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        try:
            values[key] = KEYS[key](val)
        except ValueError as exc:
            raise ConfigError(f"{source}:{lineno}: bad value for {key!r}: {exc}") from None
    cfg = ConfigFile(values, Path(base_dir) if base_dir is not None else Path.cwd())
    cfg.run_config()
    cfg.probe_config()
    return cfg


def load_config(path) -> ConfigFile:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_config_text(text, path.parent, str(path))
