"""Run configuration: defaults, ``key = value`` config files, flag overrides.

Precedence is flag > config file > built-in default. The fully resolved
configuration is echoed to the run log (stderr) before any work starts and
written next to the run outputs so evaluation commands can reuse it.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from pathlib import Path

from .errors import ConfigError
from .model import HyperParams


@dataclass
class RunConfig:
    # paths
    interactions: str | None = None
    visual: str | None = None
    text: str | None = None
    out: str | None = None
    checkpoint: str | None = None
    # reproducibility
    seed: int = 0
    # splitting / filtering
    kcore: int = 0
    # optimization
    batch_size: int = 2048
    max_epochs: int = 1000
    base_lr: float = 0.001
    patience: int = 20
    # model
    id_dim: int = 64
    reduction: int = 8
    graph_layers: int = 2
    branch_channels: int = 8
    attention_reduction: int = 4
    dilations: tuple[int, ...] = (6, 12, 18)
    # alignment
    lambda_cl: float = 0.01
    lambda_mmd: float = 0.15
    lambda_reg: float = 1e-4
    temperature: float = 0.2
    bandwidths: tuple[float, ...] = (1.0, 1.5, 2.0)
    symmetric_infonce: bool = False
    # evaluation
    eval_ks: tuple[int, ...] = (10, 20)
    # ablation
    variant: str = "full"

    def hyperparams(self) -> HyperParams:
        return HyperParams(
            lambda_cl=self.lambda_cl, lambda_mmd=self.lambda_mmd,
            lambda_reg=self.lambda_reg, reduction=self.reduction,
            id_dim=self.id_dim, graph_layers=self.graph_layers,
            branch_channels=self.branch_channels,
            attention_reduction=self.attention_reduction,
            dilations=tuple(self.dilations),
            bandwidths=tuple(self.bandwidths),
            temperature=self.temperature,
            symmetric_infonce=self.symmetric_infonce,
        )

    def lines(self) -> list[str]:
        out = []
        for f in fields(self):
            value = getattr(self, f.name)
            out.append(f"{f.name} = {format_value(value)}")
        return out


def format_value(value) -> str:
    if isinstance(value, (tuple, list)):
        return "[" + ", ".join(format_value(v) for v in value) + "]"
    if isinstance(value, bool):
        return "true" if value else "false"
    if value is None:
        return "none"
    return str(value)


def _parse_scalar(text: str):
    low = text.lower()
    if low == "true":
        return True
    if low == "false":
        return False
    if low == "none":
        return None
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        pass
    return text.strip("\"'")


def parse_value(text: str):
    text = text.strip()
    if text.startswith("[") and text.endswith("]"):
        inner = text[1:-1].strip()
        if not inner:
            return ()
        return tuple(_parse_scalar(part.strip()) for part in inner.split(","))
    return _parse_scalar(text)


def parse_config_file(path) -> dict:
    values = {}
    known = {f.name for f in fields(RunConfig)}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            stripped = line.split("#", 1)[0].strip()
            if not stripped:
                continue
            if "=" not in stripped:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
            key, _, raw = stripped.partition("=")
            key = key.strip()
            if key not in known:
                raise ConfigError(f"{path}:{lineno}: unknown option {key!r}")
            values[key] = parse_value(raw)
    return values


def resolve_config(config_path: str | None, flag_values: dict) -> RunConfig:
    """Layer config-file entries over defaults, then non-None flags on top."""
    cfg = RunConfig()
    if config_path is not None:
        if not Path(config_path).exists():
            raise ConfigError(f"config file not found: {config_path}")
        for key, value in parse_config_file(config_path).items():
            setattr(cfg, key, value)
    for key, value in flag_values.items():
        if value is not None:
            setattr(cfg, key, value)
    _coerce_types(cfg)
    return cfg


def _coerce_types(cfg: RunConfig) -> None:
    cfg.dilations = tuple(int(v) for v in cfg.dilations)
    cfg.bandwidths = tuple(float(v) for v in cfg.bandwidths)
    cfg.eval_ks = tuple(int(v) for v in cfg.eval_ks)
    if isinstance(cfg.symmetric_infonce, str):
        cfg.symmetric_infonce = cfg.symmetric_infonce.lower() == "true"
