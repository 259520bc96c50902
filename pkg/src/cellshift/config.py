"""Run configuration: a flat key-value file with sections, fully defaulted.

Every run echoes its resolved configuration back to disk; parsing that
echo must reproduce the configuration exactly.
"""

from __future__ import annotations

import configparser
import dataclasses
import io
from dataclasses import dataclass
from pathlib import Path

from .errors import ConfigError

_SECTIONS = {
    "run": ("data_dir", "out_dir", "seed"),
    "train": ("epochs", "steps_per_epoch", "batch_size", "set_size", "sampling",
              "variant", "pooling", "prior", "prior_mix", "prior_mask_rate",
              "learning_rate", "adam_beta1", "adam_beta2", "flow_weight",
              "training_mode", "holdout"),
    "model": ("gene_tokens", "cell_width", "phi_width", "summary_width",
              "latent_width", "encoder_blocks", "n_heads", "decoder_hidden",
              "mmd_weight", "mmd_bandwidths", "cond_width", "backbone_blocks",
              "time_features"),
    "generate": ("euler_steps",),
}


@dataclass(frozen=True)
class RunConfig:
    # run
    data_dir: str = "data"
    out_dir: str = "runs/run0"
    seed: int = 0
    # training
    epochs: int = 32
    steps_per_epoch: int = 150
    batch_size: int = 16
    set_size: int = 32
    sampling: str = "proportional"
    variant: str = "xx"
    pooling: str = "seed"
    prior: str = "control"
    prior_mix: float = 0.5
    prior_mask_rate: float = 0.15
    learning_rate: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    flow_weight: float = 1.0
    training_mode: str = "joint"
    holdout: tuple[tuple[int, int], ...] = ()
    # model widths/depths
    gene_tokens: int = 4
    cell_width: int = 32
    phi_width: int = 32
    summary_width: int = 32
    latent_width: int = 24
    encoder_blocks: int = 2
    n_heads: int = 1
    decoder_hidden: int = 96
    mmd_weight: float = 1.0
    mmd_bandwidths: tuple[float, ...] = (1.0, 2.0, 4.0, 8.0)
    cond_width: int = 16
    backbone_blocks: int = 4
    time_features: int = 16
    # generation
    euler_steps: int = 1

    def __post_init__(self):
        if self.variant not in ("xx", "xv", "vx", "vv"):
            raise ConfigError(f"variant must be one of xx/xv/vx/vv, got {self.variant!r}")
        if self.pooling not in ("mean", "token", "seed"):
            raise ConfigError(f"unknown pooling {self.pooling!r}")
        if self.prior not in ("control", "gaussmix", "maskctrl", "maskmix"):
            raise ConfigError(f"unknown prior {self.prior!r}")
        if self.sampling not in ("proportional", "uniform"):
            raise ConfigError(f"unknown sampling strategy {self.sampling!r}")
        if self.training_mode not in ("joint", "staged"):
            raise ConfigError(f"unknown training mode {self.training_mode!r}")
        for name in ("epochs", "steps_per_epoch", "batch_size", "set_size", "euler_steps"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")

    def to_dict(self) -> dict:
        doc = dataclasses.asdict(self)
        doc["holdout"] = [list(pair) for pair in self.holdout]
        doc["mmd_bandwidths"] = list(self.mmd_bandwidths)
        return doc

    def replace(self, **kwargs) -> "RunConfig":
        return dataclasses.replace(self, **kwargs)

    def to_ini(self) -> str:
        parser = configparser.ConfigParser()
        for section, names in _SECTIONS.items():
            parser[section] = {}
            for name in names:
                parser[section][name] = _format_value(getattr(self, name))
        buf = io.StringIO()
        parser.write(buf)
        return buf.getvalue()

    @classmethod
    def from_ini(cls, text: str) -> "RunConfig":
        parser = configparser.ConfigParser()
        try:
            parser.read_string(text)
        except configparser.Error as exc:
            raise ConfigError(f"unparseable config: {exc}") from exc
        types = {f.name: f.type for f in dataclasses.fields(cls)}
        values = {}
        for section in parser.sections():
            if section not in _SECTIONS:
                raise ConfigError(f"unknown config section [{section}]")
            for name, raw in parser[section].items():
                if name not in _SECTIONS[section]:
                    raise ConfigError(f"unknown key {name!r} in section [{section}]")
                values[name] = _parse_value(name, types[name], raw)
        return cls(**values)

    @classmethod
    def load(cls, path) -> "RunConfig":
        return cls.from_ini(Path(path).read_text())

    def save(self, path) -> None:
        Path(path).write_text(self.to_ini())


def _format_value(value) -> str:
    if isinstance(value, tuple):
        if value and isinstance(value[0], tuple):
            return ",".join(f"{a}:{b}" for a, b in value)
        return ",".join(repr(float(v)) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _parse_value(name: str, annotation: str, raw: str):
    raw = raw.strip()
    try:
        if annotation == "int":
            return int(raw)
        if annotation == "float":
            return float(raw)
        if annotation == "str":
            return raw
        if annotation == "tuple[float, ...]":
            return tuple(float(x) for x in raw.split(",") if x.strip())
        if annotation == "tuple[tuple[int, int], ...]":
            pairs = []
            for chunk in raw.split(","):
                chunk = chunk.strip()
                if not chunk:
                    continue
                a, b = chunk.split(":")
                pairs.append((int(a), int(b)))
            return tuple(pairs)
    except ValueError as exc:
        raise ConfigError(f"bad value for {name!r}: {raw!r}") from exc
    raise ConfigError(f"unhandled config field type {annotation!r} for {name!r}")


def parse_holdout(text: str) -> tuple[tuple[int, int], ...]:
    """Parse a 'ct:pert,ct:pert' id-pair list (CLI flag format)."""
    return _parse_value("holdout", "tuple[tuple[int, int], ...]", text)
