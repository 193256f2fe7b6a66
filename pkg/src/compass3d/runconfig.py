"""Run configuration: one TOML file with nested sections, schema-validated.

Sections map 1:1 onto the component configs ([synth], [model], [loss],
[train]) plus a top-level seed. Unknown sections or keys are rejected by
name. CLI flags override file values; the resolved config is echoed into
every artifact a command writes.
"""

from __future__ import annotations

import dataclasses
import sys
from dataclasses import dataclass, field, asdict
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .losses import LossConfig
from .model import ModelConfig
from .synth.dataset import SynthConfig
from .train import TrainConfig


class ConfigError(ValueError):
    """Invalid run configuration (unknown key, bad value, bad TOML)."""


@dataclass
class RunConfig:
    seed: int = 7
    synth: SynthConfig = field(default_factory=SynthConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    train: TrainConfig = field(default_factory=TrainConfig)

    def validate(self) -> "RunConfig":
        try:
            self.synth.validate()
            self.model.validate()
            self.loss.validate()
            self.train.validate()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        return self

    def echo(self) -> dict:
        return {
            "seed": self.seed,
            "synth": asdict(self.synth) | {"pairs": list(self.synth.pairs)},
            "model": self.model.to_dict(),
            "loss": asdict(self.loss),
            "train": asdict(self.train),
        }


# model.vocab is derived (from the query bank or the dataset manifest),
# never configured by hand
_EXCLUDED_KEYS = {"model": {"vocab"}}


def _apply_section(obj, section: str, data: dict):
    fields = {f.name: f for f in dataclasses.fields(obj)}
    banned = _EXCLUDED_KEYS.get(section, set())
    for key, value in data.items():
        if key not in fields or key in banned:
            known = sorted(set(fields) - banned)
            raise ConfigError(
                f"unknown key {key!r} in [{section}]; known keys: {known}")
        if fields[key].type in ("tuple", tuple) or isinstance(getattr(obj, key), tuple):
            value = tuple(value)
        setattr(obj, key, value)


def load_config(path=None, overrides: dict | None = None) -> RunConfig:
    """Build a RunConfig from an optional TOML file plus override mapping.

    `overrides` entries use dotted keys ("train.epochs", "seed") and win
    over file values.
    """
    cfg = RunConfig()
    synth_seed_explicit = False
    if path is not None:
        try:
            with open(path, "rb") as fh:
                data = tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"bad TOML in {path}: {exc}") from exc
        top = dict(data)
        if "seed" in top:
            cfg.seed = int(top.pop("seed"))
        for section in ("synth", "model", "loss", "train"):
            block = top.pop(section, None)
            if block is not None:
                if not isinstance(block, dict):
                    raise ConfigError(f"[{section}] must be a table")
                if section == "synth" and "seed" in block:
                    synth_seed_explicit = True
                _apply_section(getattr(cfg, section), section, block)
        if top:
            raise ConfigError(f"unknown top-level keys: {sorted(top)}")
    for dotted, value in (overrides or {}).items():
        if value is None:
            continue
        if dotted == "seed":
            cfg.seed = int(value)
            continue
        section, _, key = dotted.partition(".")
        if not key:
            raise ConfigError(f"bad override key {dotted!r}")
        if dotted == "synth.seed":
            synth_seed_explicit = True
        _apply_section(getattr(cfg, section), section, {key: value})
    # the synth seed rides on the top-level seed unless set explicitly
    if not synth_seed_explicit:
        cfg.synth.seed = cfg.seed
    return cfg.validate()
