"""Flat ``key = value`` run configuration with command-line overrides.

One namespace covers the generator, the trainer and the run itself. Blank
lines and ``#`` comments are ignored. Values are parsed against the type of
the field they set, so unknown keys and malformed values fail early.
"""
from __future__ import annotations

from dataclasses import dataclass, field, fields
from pathlib import Path

from .pipeline import TrainConfig
from .synthgen import GenConfig


class ConfigError(ValueError):
    pass


FAMILIES = {"both": (False, True), "injected": (True,), "clean": (False,)}


@dataclass
class RunSettings:
    n_train: int = 600
    n_val: int = 200
    dataset: str = ""           # directory holding train.jsonl / val.jsonl
    checkpoint: str = ""
    out: str = "runs/default"
    families: str = "both"     # SAP families for sweep/localize: both, injected, clean
    repeats: int = 3
    thetas: str = "0.2,0.5,0.7"
    ious: str = "0.2,0.5,0.7"
    normalize: str = "none"     # localize: "none" (sigmoid s as is) or "max" (s / max s)


@dataclass
class RunConfig:
    gen: GenConfig = field(default_factory=GenConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    run: RunSettings = field(default_factory=RunSettings)

    def __post_init__(self):
        if self.run.families not in FAMILIES:
            raise ConfigError(f"families must be one of {sorted(FAMILIES)}, got {self.run.families!r}")
        if self.run.normalize not in ("none", "max"):
            raise ConfigError(f"normalize must be 'none' or 'max', got {self.run.normalize!r}")
        for key in ("thetas", "ious"):
            floats(getattr(self.run, key), key)

    @property
    def injected_families(self) -> tuple[bool, ...]:
        return FAMILIES[self.run.families]

    def as_dict(self) -> dict:
        out = {}
        for part in (self.gen, self.train, self.run):
            for f in fields(part):
                if f.name != "motifs":
                    out[f.name] = getattr(part, f.name)
        return out

    def echo(self) -> str:
        return "".join(f"{k} = {_format(v)}\n" for k, v in sorted(self.as_dict().items()))


# seed is shared; every other key lives in exactly one section
_SECTIONS = (("gen", GenConfig), ("train", TrainConfig), ("run", RunSettings))


def _field_types() -> dict[str, tuple[list[str], type]]:
    table: dict[str, tuple[list[str], type]] = {}
    for section, cls in _SECTIONS:
        hints = {f.name: f.type for f in fields(cls)}
        for name, tp in hints.items():
            if name == "motifs":
                continue
            if name in table:
                table[name][0].append(section)
            else:
                table[name] = ([section], tp)
    return table


_TYPES = _field_types()
_PARSERS = {"int": int, "float": float, "str": str}


def _parse_value(key: str, raw: str):
    tp = _TYPES[key][1]
    tp = tp if isinstance(tp, str) else tp.__name__
    raw = raw.strip()
    if tp == "bool":
        low = raw.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"{key}: expected a boolean, got {raw!r}")
    try:
        return _PARSERS[tp](raw)
    except (KeyError, ValueError):
        raise ConfigError(f"{key}: cannot parse {raw!r} as {tp}") from None


def floats(text: str, key: str = "value") -> tuple[float, ...]:
    try:
        vals = tuple(float(x) for x in text.split(",") if x.strip())
    except ValueError:
        raise ConfigError(f"{key}: expected comma-separated numbers, got {text!r}") from None
    if not vals or any(not 0.0 <= v <= 1.0 for v in vals):
        raise ConfigError(f"{key}: values must lie in [0, 1], got {text!r}")
    return vals


def _format(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    return repr(v) if isinstance(v, float) else str(v)


def parse_text(text: str, source: str = "<config>") -> dict:
    values = {}
    for no, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{no}: expected key = value")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in _TYPES:
            raise ConfigError(f"{source}:{no}: unknown key {key!r}")
        values[key] = _parse_value(key, raw)
    return values


def parse_override(item: str) -> tuple[str, object]:
    if "=" not in item:
        raise ConfigError(f"override {item!r}: expected key=value")
    key, raw = (s.strip() for s in item.split("=", 1))
    if key not in _TYPES:
        raise ConfigError(f"override: unknown key {key!r}")
    return key, _parse_value(key, raw)


# the synthetic benchmark (C=6, up to 3 labels) admits at most K = C - L_max
RUN_DEFAULTS = {"K": 3}


def build(values: dict) -> RunConfig:
    values = {**RUN_DEFAULTS, **values}
    parts = {}
    for section, cls in _SECTIONS:
        names = {f.name for f in fields(cls)}
        kw = {k: v for k, v in values.items() if k in names}
        try:
            parts[section] = cls(**kw)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{section} config: {exc}") from None
    return RunConfig(**parts)


def load(path: str | Path | None = None, overrides: dict | None = None) -> RunConfig:
    values = parse_text(Path(path).read_text(), str(path)) if path else {}
    values.update(overrides or {})
    return build(values)


def replace(cfg: RunConfig, **changes) -> RunConfig:
    values = cfg.as_dict()
    values.update(changes)
    return build(values)


__all__ = ["ConfigError", "RunConfig", "RunSettings", "build", "floats", "load",
           "parse_override", "parse_text", "replace"]
