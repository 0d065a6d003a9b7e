"""``key = value`` run configuration covering training, model and spotting knobs.

Example::

    # training
    lr = 0.01
    epochs = 100
    window_seconds = 2.2
    gcn_hidden = 16
    thr_ap = 0.4
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

from .model import ModelConfig
from .spotting import SpotConfig
from .training import TrainConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    train: TrainConfig = field(default_factory=TrainConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    spot: SpotConfig = field(default_factory=SpotConfig)

    def to_text(self) -> str:
        lines = []
        for section in (self.train, self.model, self.spot):
            for f in dataclasses.fields(section):
                value = getattr(section, f.name)
                if isinstance(value, tuple):
                    value = ",".join(str(v) for v in value)
                lines.append(f"{f.name} = {value}")
        return "\n".join(lines) + "\n"


def _coerce(raw: str, like):
    if isinstance(like, bool):
        return raw.lower() in ("1", "true", "yes")
    if isinstance(like, int):
        return int(raw)
    if isinstance(like, float):
        return float(raw)
    if isinstance(like, tuple):
        return tuple(int(x) for x in raw.split(",") if x.strip())
    return raw


def parse_config(text: str) -> RunConfig:
    values: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        values[key.strip()] = value.strip()

    defaults = RunConfig()
    sections = {}
    for name in ("train", "model", "spot"):
        section = getattr(defaults, name)
        kwargs = {}
        for f in dataclasses.fields(section):
            if f.name in values:
                raw = values.pop(f.name)
                try:
                    kwargs[f.name] = _coerce(raw, getattr(section, f.name))
                except ValueError as exc:
                    raise ConfigError(f"{f.name}: cannot parse {raw!r}") from exc
        try:
            sections[name] = dataclasses.replace(section, **kwargs)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc
    if values:
        raise ConfigError(f"unknown config keys: {', '.join(sorted(values))}")
    return RunConfig(**sections)


def load_config(path: str | Path | None) -> RunConfig:
    if path is None:
        return RunConfig()
    return parse_config(Path(path).read_text(encoding="utf-8"))
