"""Run configuration and its flat ``section.key = value`` text format.

Example::

    # comments start with '#'
    server.rule = fedyogi
    net.fraction_3g = 0.5
    fl.rounds = 50

Every key is ``<section>.<field>`` of one of the section dataclasses below;
unknown keys, duplicate keys and ill-typed values raise :class:`ConfigError`.
"""

from __future__ import annotations

import typing
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Literal, Mapping

from .client import ClientConfig
from .compression import CompressionScheme
from .errors import CodecError, ConfigError
from .server import RULES, ServerHyper


@dataclass(frozen=True)
class ModelConfig:
    kind: Literal["logistic_regression", "mlp_one_hidden"] = "logistic_regression"
    hidden_dim: int = 16


@dataclass(frozen=True)
class DataConfig:
    source: Literal["synthetic", "csv"] = "synthetic"
    path: str = ""
    label_column: str = "label"
    num_classes: int = 10
    input_dim: int = 20
    n_per_class: int = 500
    spread: float = 1.0
    scale_span: float = 1.0
    eval_fraction: float = 0.2

    def __post_init__(self):
        if not 0 <= self.eval_fraction < 1:
            raise ValueError("data.eval_fraction must be in [0, 1)")
        if self.source == "csv" and not self.path:
            raise ValueError("data.source = csv needs data.path")


@dataclass(frozen=True)
class PartitionConfig:
    kind: Literal["dirichlet", "quantity"] = "dirichlet"
    alpha: float = 0.5
    zipf_s: float = 0.0


@dataclass(frozen=True)
class FLConfig:
    num_clients: int = 4
    sampling_ratio: float = 0.5
    rounds: int = 100
    weighting: Literal["uniform", "by_examples"] = "uniform"
    workers: int = 1

    def __post_init__(self):
        if self.num_clients < 1:
            raise ValueError("fl.num_clients must be >= 1")
        if not 0 < self.sampling_ratio <= 1:
            raise ValueError("fl.sampling_ratio must be in (0, 1]")
        if self.rounds < 1:
            raise ValueError("fl.rounds must be >= 1")
        if self.workers < 1:
            raise ValueError("fl.workers must be >= 1")


@dataclass(frozen=True)
class ServerConfig:
    rule: Literal["fedavg", "fedavgm", "fedadagrad", "fedadam", "fedyogi"] = "fedavg"
    lr: float | None = None
    beta1: float = 0.9
    beta2: float = 0.99
    tau: float = 1e-3

    def hyper(self) -> ServerHyper:
        return ServerHyper(lr=self.lr, beta1=self.beta1, beta2=self.beta2, tau=self.tau)


@dataclass(frozen=True)
class CompressConfig:
    kind: Literal["identity", "low_rank", "random_mask", "subsample", "quantize", "rotate_quantize"] = "identity"
    rank: int = 1
    keep_fraction: float = 0.1
    bits: int = 8

    def scheme(self) -> CompressionScheme:
        return CompressionScheme(
            self.kind,
            rank=self.rank if self.kind == "low_rank" else None,
            keep_fraction=self.keep_fraction if self.kind in ("random_mask", "subsample") else None,
            bits=self.bits if self.kind in ("quantize", "rotate_quantize") else None,
        )


@dataclass(frozen=True)
class NetConfig:
    fraction_3g: float = 0.5
    strategy: Literal["uniform", "speed_adaptive"] = "uniform"
    alpha: float = 2.0
    compute_rate: float = 1e4
    availability: float = 1.0


@dataclass(frozen=True)
class RunSection:
    seed: int = 0
    out: str = "runs/latest"
    target_fraction: float = 0.5


@dataclass(frozen=True)
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    data: DataConfig = field(default_factory=DataConfig)
    partition: PartitionConfig = field(default_factory=PartitionConfig)
    fl: FLConfig = field(default_factory=FLConfig)
    client: ClientConfig = field(default_factory=ClientConfig)
    server: ServerConfig = field(default_factory=ServerConfig)
    compress: CompressConfig = field(default_factory=CompressConfig)
    net: NetConfig = field(default_factory=NetConfig)
    run: RunSection = field(default_factory=RunSection)

    def __post_init__(self):
        try:
            self.compress.scheme()
        except CodecError as exc:
            raise ConfigError(str(exc)) from None

    def with_overrides(self, overrides: Mapping[str, Any]) -> RunConfig:
        """Return a copy with dotted-key overrides applied (values may be strings)."""
        grouped: dict[str, dict[str, Any]] = {}
        for key, raw in overrides.items():
            section, name, hint = _lookup(key)
            grouped.setdefault(section, {})[name] = _coerce(key, raw, hint)
        changes = {}
        for section, kv in grouped.items():
            try:
                changes[section] = replace(getattr(self, section), **kv)
            except ValueError as exc:
                raise ConfigError(str(exc)) from None
        return replace(self, **changes)

    def items(self) -> list[tuple[str, Any]]:
        out = []
        for sec in fields(self):
            for f in fields(getattr(self, sec.name)):
                out.append((f"{sec.name}.{f.name}", getattr(getattr(self, sec.name), f.name)))
        return out

    def to_text(self) -> str:
        return "".join(f"{k} = {_format(v)}\n" for k, v in self.items())


def _format(value: Any) -> str:
    if value is None:
        return "auto"
    if isinstance(value, bool):
        return "true" if value else "false"
    return str(value)


def _section_hints(section: str) -> dict[str, Any]:
    cls = {f.name: f for f in fields(RunConfig)}[section].default_factory
    return typing.get_type_hints(cls)


def _lookup(key: str) -> tuple[str, str, Any]:
    section, _, name = key.partition(".")
    if section not in {f.name for f in fields(RunConfig)} or not name:
        raise ConfigError(f"unknown config key {key!r}")
    hints = _section_hints(section)
    if name not in hints:
        raise ConfigError(f"unknown config key {key!r}")
    return section, name, hints[name]


def _coerce(key: str, raw: Any, hint: Any) -> Any:
    origin = typing.get_origin(hint)
    args = typing.get_args(hint)
    if origin is typing.Union or (origin is not None and type(None) in args):
        if isinstance(raw, str) and raw.strip().lower() in ("auto", "none", ""):
            return None
        if raw is None:
            return None
        hint = next(a for a in args if a is not type(None))
        origin = typing.get_origin(hint)
    if origin is Literal:
        value = str(raw).strip()
        if value not in typing.get_args(hint):
            raise ConfigError(f"{key} must be one of {typing.get_args(hint)}, got {value!r}")
        return value
    try:
        if hint is bool:
            if isinstance(raw, bool):
                return raw
            text = str(raw).strip().lower()
            if text in ("true", "yes", "1", "on"):
                return True
            if text in ("false", "no", "0", "off"):
                return False
            raise ValueError(text)
        if hint is int:
            if isinstance(raw, float) and not raw.is_integer():
                raise ValueError(raw)
            return int(str(raw).strip()) if isinstance(raw, str) else int(raw)
        if hint is float:
            return float(raw)
        return str(raw).strip()
    except ValueError:
        raise ConfigError(f"{key}: cannot interpret {raw!r} as {getattr(hint, '__name__', hint)}") from None


def parse_pairs(text: str, source: str = "<config>") -> list[tuple[str, str]]:
    pairs = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {line!r}")
        pairs.append((key.strip(), value.strip()))
    return pairs


def _to_overrides(pairs: list[tuple[str, str]], source: str) -> dict[str, str]:
    out: dict[str, str] = {}
    for key, value in pairs:
        if key in out:
            raise ConfigError(f"{source}: duplicate key {key!r}")
        out[key] = value
    return out


def parse_config(text: str, base: RunConfig | None = None, source: str = "<config>") -> RunConfig:
    try:
        base = base or RunConfig()
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return base.with_overrides(_to_overrides(parse_pairs(text, source), source))


def load_config(path: str | Path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text, source=str(path))


def parse_sweep(text: str, source: str = "<sweep>") -> list[tuple[str, dict[str, str]]]:
    """Parse ``[variant]`` blocks of overrides. Each block becomes one comparison row."""
    variants: list[tuple[str, list[tuple[str, str]]]] = []
    body: list[str] = []

    def flush():
        if variants:
            variants[-1][1].extend(parse_pairs("\n".join(body), source))

    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if stripped.startswith("[") and stripped.endswith("]"):
            flush()
            body = []
            name = stripped[1:-1].strip()
            if not name:
                raise ConfigError(f"{source}:{lineno}: empty variant name")
            if any(name == n for n, _ in variants):
                raise ConfigError(f"{source}:{lineno}: duplicate variant {name!r}")
            variants.append((name, []))
        elif stripped:
            if not variants:
                raise ConfigError(f"{source}:{lineno}: override outside a [variant] block")
            body.append(stripped)
    flush()
    if not variants:
        raise ConfigError(f"{source}: sweep defines no variants")
    out = []
    for name, pairs in variants:
        overrides = _to_overrides(pairs, f"{source} [{name}]")
        for key in overrides:
            _lookup(key)
        out.append((name, overrides))
    return out


def load_sweep(path: str | Path) -> list[tuple[str, dict[str, str]]]:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read sweep {path}: {exc}") from None
    return parse_sweep(text, source=str(path))


__all__ = [
    "RunConfig", "ModelConfig", "DataConfig", "PartitionConfig", "FLConfig", "ServerConfig",
    "CompressConfig", "NetConfig", "RunSection", "parse_config", "load_config", "parse_sweep",
    "load_sweep", "RULES",
]
