# -*- coding: utf-8 -*-
"""
Run configuration: a flat ``key = value`` file whose dotted keys map onto the
fields of ``RunConfig`` (``bins.alpha`` -> ``bins_alpha``).

This layer only parses types. Ranges are checked by the objects built from
the configuration (``make_layout``, ``TrainConfig``, ``KernelSpec``).
"""
from dataclasses import dataclass, fields
from typing import Callable, Dict, List, Mapping, Optional, Union, get_args, get_type_hints

from src.distribution import BinLayout, make_layout
from src.errors import ConfigError
from src.kernel_uq import KernelSpec
from src.matcher import TrainConfig

__all__: List[str] = [
    "RunConfig",
    "AUTO",
    "config_keys",
    "parse_config_text",
    "load_config",
]

AUTO = "auto"
Value = Union[int, float, str, bool, None]


@dataclass
class RunConfig:
    """Every tunable of a run; ``None`` means "auto" where a key allows it."""

    bins_alpha: float = 0.0
    bins_beta: float = 16.0
    bins_count: int = 16
    bins_scheme: str = "uniform"
    train_epochs: int = 200
    train_lr: float = 0.05
    train_seed: int = 42
    tsud_enabled: bool = False
    tsud_keep: float = 0.95
    tsud_start: Optional[int] = None
    matcher_window: int = 5
    matcher_hidden: int = 32
    kernel_family: str = "rbf"
    kernel_bandwidth: Optional[float] = None
    kernel_degree: int = 2
    kernel_offset: float = 1.0
    kernel_knn: int = 50
    kernel_c: float = 1.0
    kernel_floor: float = 1e-12
    kernel_cap: float = 1e6
    bank_cap: int = 100_000
    data_height: int = 64
    data_width: int = 128

    def layout(self) -> BinLayout:
        return make_layout(self.bins_alpha, self.bins_beta, self.bins_count, self.bins_scheme)

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            epochs=self.train_epochs,
            learning_rate=self.train_lr,
            seed=self.train_seed,
            tsud_enabled=self.tsud_enabled,
            tsud_keep_fraction=self.tsud_keep,
            tsud_start_epoch=self.tsud_start,
            hidden=self.matcher_hidden,
            window=self.matcher_window,
        )

    def kernel_spec(self, bandwidth: Optional[float] = None) -> KernelSpec:
        """Kernel spec; ``bandwidth`` replaces an automatic bandwidth."""
        h = self.kernel_bandwidth if self.kernel_bandwidth is not None else bandwidth
        if h is None:
            raise ConfigError("kernel.bandwidth is 'auto' but no bandwidth was selected")
        return KernelSpec(
            family=self.kernel_family,
            bandwidth=h,
            degree=self.kernel_degree,
            offset=self.kernel_offset,
            knn=self.kernel_knn,
            risk_constant=self.kernel_c,
            density_floor=self.kernel_floor,
            cap=self.kernel_cap,
        )


def _parse_bool(text: str) -> bool:
    lowered = text.lower()
    if lowered in ("true", "yes", "on", "1"):
        return True
    if lowered in ("false", "no", "off", "0"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _optional(parse: Callable[[str], Value]) -> Callable[[str], Value]:
    def parse_or_auto(text: str) -> Value:
        return None if text.lower() == AUTO else parse(text)

    return parse_or_auto


_SCALAR_PARSERS: Dict[type, Callable[[str], Value]] = {
    int: int,
    float: float,
    str: str,
    bool: _parse_bool,
}


def _field_parsers() -> Dict[str, Callable[[str], Value]]:
    hints = get_type_hints(RunConfig)
    parsers = {}
    for f in fields(RunConfig):
        inner = [a for a in get_args(hints[f.name]) if a is not type(None)]
        if inner:
            parsers[f.name] = _optional(_SCALAR_PARSERS[inner[0]])
        else:
            parsers[f.name] = _SCALAR_PARSERS[hints[f.name]]
    return parsers


_FIELD_PARSERS = _field_parsers()


def config_keys() -> List[str]:
    """Dotted keys accepted in config files and as flags, in declaration order."""
    return [name.replace("_", ".", 1) for name in _FIELD_PARSERS]


def _field_name(key: str, origin: str) -> str:
    name = key.replace(".", "_", 1)
    if "." not in key or name not in _FIELD_PARSERS:
        raise ConfigError(f"{origin}: unknown config key {key!r}")
    return name


def parse_config_text(text: str, origin: str = "<config>") -> Dict[str, str]:
    """Raw ``key -> value`` strings; comments and blank lines are dropped."""
    entries: Dict[str, str] = {}
    for number, line in enumerate(text.splitlines(), start=1):
        content = line.split("#", 1)[0].strip()
        if not content:
            continue
        key, sep, value = content.partition("=")
        key, value = key.strip(), value.strip()
        if not sep or not key or not value:
            raise ConfigError(f"{origin}:{number}: expected 'key = value', got {line.strip()!r}")
        _field_name(key, f"{origin}:{number}")
        if key in entries:
            raise ConfigError(f"{origin}:{number}: duplicate key {key!r}")
        entries[key] = value
    return entries


def _build(entries: Mapping[str, str], origin: str) -> RunConfig:
    values: Dict[str, Value] = {}
    for key, raw in entries.items():
        name = _field_name(key, origin)
        try:
            values[name] = _FIELD_PARSERS[name](raw)
        except ValueError as exc:
            raise ConfigError(f"{origin}: bad value {raw!r} for {key}: {exc}") from exc
    return RunConfig(**values)  # type: ignore[arg-type]


# impure
def load_config(path: Optional[str] = None, overrides: Optional[Mapping[str, str]] = None) -> RunConfig:
    """Defaults, then the file at ``path``, then ``overrides`` (command-line flags)."""
    entries: Dict[str, str] = {}
    if path is not None:
        with open(path, "r", encoding="utf-8") as f:
            entries.update(parse_config_text(f.read(), path))
    for key, value in (overrides or {}).items():
        _field_name(key, "command line")
        entries[key] = value
    return _build(entries, path or "command line")
