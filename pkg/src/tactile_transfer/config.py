"""``key = value`` configuration files.

Blank lines and ``#`` comments are ignored.  Training keys are either global
(``epochs = 50``) or scoped to one network (``mvb.epochs = 120``); scoped keys
win.  Unknown keys and values violating a type's invariants are rejected.
"""

from __future__ import annotations

import dataclasses
from pathlib import Path

from .contact import SamplingRanges
from .nn import TrainHyper

NETS = ("svb", "mvb", "mvd", "s2mpn", "m2mpn")
VAE_NETS = ("svb", "mvb", "mvd")
HYPER_KEYS = {f.name: f.type for f in dataclasses.fields(TrainHyper)}
RANGE_KEYS = tuple(f"{name}_{end}" for name in ("u", "v", "force", "radius", "angle") for end in ("min", "max"))
GLOBAL_KEYS = ("seed", "data", "models")


class ConfigError(ValueError):
    pass


def parse_lines(text: str, source: str = "<config>") -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key or not value:
            raise ConfigError(f"{source}:{lineno}: empty key or value")
        if key in out:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        _check_key(key, f"{source}:{lineno}")
        out[key] = value
    return out


def _check_key(key: str, where: str) -> None:
    if key in GLOBAL_KEYS or key in HYPER_KEYS or key in RANGE_KEYS:
        return
    net, _, name = key.partition(".")
    if net in NETS and (name in HYPER_KEYS or name == "hidden"):
        return
    if net in VAE_NETS and name == "latent_dim":
        return
    raise ConfigError(f"{where}: unknown key {key!r}")


def read_config(path) -> dict[str, str]:
    p = Path(path)
    return parse_lines(p.read_text(), str(p))


def _convert(key: str, value: str, typ) -> object:
    if typ in ("str", str):
        return value
    try:
        if typ in ("int", int):
            return int(value)
        return float(value)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {value!r}") from None


def hyper_for(net: str, values: dict[str, str], base: TrainHyper) -> TrainHyper:
    updates = {}
    for name, typ in HYPER_KEYS.items():
        for key in (name, f"{net}.{name}"):
            if key in values:
                updates[name] = _convert(key, values[key], typ)
    try:
        return dataclasses.replace(base, **updates)
    except ValueError as exc:
        raise ConfigError(f"{net}: {exc}") from exc


def hidden_for(net: str, values: dict[str, str]) -> tuple[int, ...] | None:
    raw = values.get(f"{net}.hidden")
    if raw is None:
        return None
    try:
        sizes = tuple(int(s) for s in raw.split(","))
    except ValueError:
        raise ConfigError(f"{net}.hidden: expected comma-separated integers, got {raw!r}") from None
    if not sizes or min(sizes) < 1:
        raise ConfigError(f"{net}.hidden: sizes must be positive")
    return sizes


def latent_for(net: str, values: dict[str, str]) -> int | None:
    raw = values.get(f"{net}.latent_dim")
    if raw is None:
        return None
    n = int(_convert(f"{net}.latent_dim", raw, int))
    if n < 1:
        raise ConfigError(f"{net}.latent_dim must be positive")
    return n


def seed_from(values: dict[str, str], default: int = 0) -> int:
    return int(_convert("seed", values["seed"], int)) if "seed" in values else default


def ranges_from(values: dict[str, str], base: SamplingRanges | None = None) -> SamplingRanges:
    base = base or SamplingRanges()
    kw = {}
    for name in ("u", "v", "force", "radius", "angle"):
        lo, hi = getattr(base, name)
        lo = float(_convert(f"{name}_min", values[f"{name}_min"], float)) if f"{name}_min" in values else lo
        hi = float(_convert(f"{name}_max", values[f"{name}_max"], float)) if f"{name}_max" in values else hi
        kw[name] = (lo, hi)
    try:
        return SamplingRanges(**kw)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def read_ranges(path) -> SamplingRanges:
    values = read_config(path)
    extra = set(values) - set(RANGE_KEYS)
    if extra:
        raise ConfigError(f"{path}: only sampling range keys are allowed, got {sorted(extra)}")
    return ranges_from(values)
