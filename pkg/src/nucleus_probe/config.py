"""Run configuration: a line-oriented ``key = value`` file overridable by flags."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

from . import __version__
from .numeric_core import UsageError


@dataclass
class RunConfig:
    train: Optional[str] = None
    dev: Optional[str] = None
    language: str = "xx"
    repr: str = "ud"
    recursive: bool = True  # pipeline: also train the composing parser
    seed: int = 1
    epochs: int = 30
    out: str = "run"
    reattach_policy: str = "right-neighbour"
    aux_lemmas: list[str] = field(default_factory=list)  # empty: every auxiliary counts
    tasks: list[str] = field(default_factory=lambda: ["transitivity", "agreement"])
    classifiers: list[str] = field(default_factory=lambda: ["mlp1", "linear"])
    exploration: float = 0.1
    word_dropout: float = 0.25
    lr: float = 1e-3
    lstm_layers: int = 2
    lstm_hidden: int = 125
    mlp_hidden: int = 100
    probe_hidden: int = 100
    probe_epochs: int = 20
    probe_batch: int = 32
    probe_lr: float = 1e-3
    cbow_dim: int = 100
    cbow_window: int = 5
    cbow_min_count: int = 5
    cbow_negatives: int = 5
    cbow_epochs: int = 5
    punct_in_las: bool = True
    sd_mode: str = "sample"

    @classmethod
    def field_types(cls) -> dict[str, Any]:
        defaults = cls()
        return {f.name: type(getattr(defaults, f.name)) if getattr(defaults, f.name) is not None else str
                for f in dataclasses.fields(cls)}

    def update(self, values: dict[str, Any]) -> "RunConfig":
        types = self.field_types()
        for k, v in values.items():
            key = k.replace("-", "_")
            if key not in types:
                raise UsageError(f"unknown configuration key {k!r}")
            setattr(self, key, coerce(v, types[key], k) if isinstance(v, str) else v)
        self.validate()
        return self

    def validate(self) -> None:
        if self.repr not in ("ud", "ms"):
            raise UsageError(f"repr must be ud or ms, got {self.repr!r}")
        if self.reattach_policy not in ("right-neighbour", "maux"):
            raise UsageError(f"unknown reattach policy {self.reattach_policy!r}")
        if self.epochs < 1:
            raise UsageError("epochs must be positive")

    def echo(self) -> str:
        lines = [f"toolkit_version = {__version__}"]
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if isinstance(v, list):
                v = ",".join(v)
            elif isinstance(v, bool):
                v = "true" if v else "false"
            lines.append(f"{f.name} = {'' if v is None else v}")
        return "\n".join(lines) + "\n"


def coerce(raw: str, typ, key: str):
    raw = raw.strip()
    try:
        if typ is bool:
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if typ is list:
            return [x.strip() for x in raw.split(",") if x.strip()]
        if typ is int:
            return int(raw)
        if typ is float:
            return float(raw)
    except ValueError as exc:
        raise UsageError(f"bad value for {key}: {raw!r}") from exc
    return raw or None


def parse_config_text(text: str, source: str = "<config>") -> dict[str, str]:
    out = {}
    for k, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise UsageError(f"{source}:{k}: expected key = value")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def load_config(path: Optional[str], overrides: Optional[dict[str, Any]] = None) -> RunConfig:
    cfg = RunConfig()
    if path:
        p = Path(path)
        if not p.is_file():
            raise UsageError(f"config file not found: {path}")
        values = parse_config_text(p.read_text(encoding="utf-8"), str(p))
        values.pop("toolkit_version", None)
        cfg.update(values)
    if overrides:
        cfg.update({k: v for k, v in overrides.items() if v is not None})
    return cfg
