"""Experiment configuration: a flat ``key: value`` text format.

Blank lines and ``#`` comments are ignored. Keys are the field names of
:class:`ExperimentConfig` plus those of the nested check, link and model
records, all flattened into one namespace::

    run_minutes: 60
    n_hosts: 5
    guest_hack_prob: 0
    loss_prob: 0.02
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

from ..attacks import ScenarioCell
from ..controller import CheckConfig
from ..core_time import ValidationMode
from ..simnet import LinkModel, SimulationModel

# mode names are accepted as well as their values
_MODE_ALIASES = {m.name.lower().replace("_", ""): m for m in ValidationMode}


class ConfigError(ValueError):
    pass


class ParseError(ConfigError):
    def __init__(self, message: str, line: int | None = None, field: str | None = None) -> None:
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field is not None:
            where.append(f"field {field!r}")
        super().__init__(f"{', '.join(where)}: {message}" if where else message)
        self.line = line
        self.field = field


class RangeError(ConfigError):
    def __init__(self, message: str, field: str | None = None, line: int | None = None) -> None:
        super().__init__(f"field {field!r}: {message}" if field else message)
        self.field = field
        self.line = line


@dataclass(frozen=True)
class ExperimentConfig:
    run_minutes: int = 30
    n_hosts: int = 6
    guests_per_host: int = 10
    check: CheckConfig = field(default_factory=CheckConfig)
    link: LinkModel = field(default_factory=LinkModel)
    model: SimulationModel = field(default_factory=SimulationModel)
    forgeable_agents: bool = False
    scenario: ScenarioCell | None = None
    seed: int = 0
    timeline_mode: ValidationMode = ValidationMode.ARRIVAL_ORDER
    probe_tolerance_ms: int = 1000

    def __post_init__(self) -> None:
        if self.run_minutes <= 0:
            raise RangeError("must be positive", "run_minutes")
        if self.n_hosts < 1:
            raise RangeError("need at least one host", "n_hosts")
        if self.guests_per_host < 0:
            raise RangeError("must be non-negative", "guests_per_host")
        if not 0 <= self.seed < 1 << 64:
            raise RangeError("must fit in an unsigned 64-bit integer", "seed")
        if self.probe_tolerance_ms < 0:
            raise RangeError("must be non-negative", "probe_tolerance_ms")

    @property
    def horizon_ms(self) -> int:
        return self.run_minutes * 60_000

    def with_(self, **changes) -> ExperimentConfig:
        """Copy with top-level or flattened nested fields replaced."""
        return build_config(changes, base=self)

    def canonical(self, *, include_seed: bool = True) -> dict:
        out = {
            "run_minutes": self.run_minutes,
            "n_hosts": self.n_hosts,
            "guests_per_host": self.guests_per_host,
            "check": dataclasses.asdict(self.check),
            "link": dataclasses.asdict(self.link),
            "model": dataclasses.asdict(self.model),
            "forgeable_agents": self.forgeable_agents,
            "scenario": self.scenario.cell_id if self.scenario else None,
            "timeline_mode": self.timeline_mode.value,
            "probe_tolerance_ms": self.probe_tolerance_ms,
        }
        if include_seed:
            out["seed"] = self.seed
        return out

    def config_hash(self) -> str:
        """Digest of every setting except the seed."""
        blob = json.dumps(self.canonical(include_seed=False), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


_TOP = {f.name for f in dataclasses.fields(ExperimentConfig)} - {"check", "link", "model"}
_NESTED = {
    "check": {f.name: f for f in dataclasses.fields(CheckConfig)},
    "link": {f.name: f for f in dataclasses.fields(LinkModel)},
    "model": {f.name: f for f in dataclasses.fields(SimulationModel)},
}
_OWNER = {name: group for group, names in _NESTED.items() for name in names}

_FLOAT_FIELDS = {"loss_prob", "congestion_factor", "congestion_alpha",
                 "guest_fail_prob", "host_fail_prob", "guest_hack_prob", "host_hack_prob"}
_BOOL_FIELDS = {"forgeable_agents"}

KNOWN_KEYS = frozenset(_TOP) | frozenset(_OWNER)


def _parse_bool(text: str) -> bool:
    low = text.lower()
    if low in ("true", "yes", "on", "1"):
        return True
    if low in ("false", "no", "off", "0"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


def _parse_float(text: str) -> float:
    if "/" in text:
        num, den = text.split("/", 1)
        return float(num) / float(den)
    return float(text)


def _coerce(key: str, value):
    if not isinstance(value, str):
        return value
    text = value.strip()
    if key in _BOOL_FIELDS:
        return _parse_bool(text)
    if key in _FLOAT_FIELDS:
        return _parse_float(text)
    if key == "scenario":
        return None if text.lower() in ("", "none") else ScenarioCell.parse(text)
    if key == "timeline_mode":
        return _MODE_ALIASES.get(text.lower().replace("_", ""), None) or ValidationMode(text.lower())
    return int(text, 0)


def build_config(values: dict, base: ExperimentConfig | None = None,
                 lines: dict[str, int] | None = None) -> ExperimentConfig:
    base = base or ExperimentConfig()
    lines = lines or {}
    top: dict = {}
    nested: dict[str, dict] = {"check": {}, "link": {}, "model": {}}
    for key, raw in values.items():
        line = lines.get(key)
        if key in ("check", "link", "model") and not isinstance(raw, str):
            top[key] = raw
            continue
        if key not in KNOWN_KEYS:
            raise ParseError("unknown key", line, key)
        try:
            value = _coerce(key, raw)
        except ValueError as exc:
            raise ParseError(str(exc), line, key) from None
        if key in _OWNER:
            nested[_OWNER[key]][key] = value
        else:
            top[key] = value
    try:
        for group, changes in nested.items():
            if changes:
                top[group] = dataclasses.replace(top.get(group, getattr(base, group)), **changes)
        return dataclasses.replace(base, **top)
    except RangeError as exc:
        if exc.line is None and exc.field in lines:
            exc.line = lines[exc.field]
        raise
    except ValueError as exc:
        key = next((k for k in values if k in str(exc)), None)
        raise RangeError(str(exc), key, lines.get(key) if key else None) from None


def parse_config(text: str, base: ExperimentConfig | None = None) -> ExperimentConfig:
    values: dict[str, str] = {}
    lines: dict[str, int] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if ":" not in line:
            raise ParseError("expected 'key: value'", lineno)
        key, value = (part.strip() for part in line.split(":", 1))
        if not key:
            raise ParseError("missing key", lineno)
        if key in values:
            raise ParseError("duplicate key", lineno, key)
        values[key] = value
        lines[key] = lineno
    return build_config(values, base, lines)


def load_config(source: str | Path) -> ExperimentConfig:
    """Parse config text, or read it first when given a :class:`Path`."""
    if isinstance(source, Path):
        try:
            source = source.read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}") from None
    return parse_config(source)
