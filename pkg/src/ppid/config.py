"""Operator configuration.

Grammar (UTF-8, one setting per line)::

    # comment
    key = value          # trailing comments allowed
    key = "quoted value"

Integers and ``true``/``false`` are converted for keys that expect them.
Unknown keys are rejected so typos fail loudly.
"""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, fields
from pathlib import Path

from .errors import ConfigurationError
from .params import HeParams, SecurityLevel, select_params
from .queries import DEFAULT_BETA, QueryConfig
from .encoding import QuantizationConfig

ENV_VAR = "PPID_CONFIG"


@dataclass
class Config:
    backend: str = "seal"
    security: int = 128
    beta: int = DEFAULT_BETA
    tps_address: str = "127.0.0.1:7301"
    cs_address: str = "127.0.0.1:7302"
    store_path: str = "ppid-store"
    key_dir: str = "ppid-keys"
    transcript_path: str = ""
    cs_backup: bool = False
    cs_backup_path: str = "ppid-backup"
    timeout: float = 60.0

    def __post_init__(self) -> None:
        try:
            SecurityLevel(int(self.security))
        except ValueError:
            raise ConfigurationError(f"security must be 128, 192 or 256, got {self.security}") from None
        self.query_config()

    def he_params(self) -> HeParams:
        return select_params(int(self.security))

    def query_config(self) -> QueryConfig:
        return QueryConfig(beta=self.beta)

    def quantization(self) -> QuantizationConfig:
        try:
            return QuantizationConfig(self.he_params().plain_modulus, self.beta)
        except ValueError as exc:
            raise ConfigurationError(str(exc)) from exc

    def override(self, **values) -> "Config":
        return dataclasses.replace(self, **{k: v for k, v in values.items() if v is not None})


def _strip_comment(line: str) -> str:
    quoted = False
    for i, ch in enumerate(line):
        if ch == '"':
            quoted = not quoted
        elif ch == "#" and not quoted:
            return line[:i]
    return line


def _convert(name: str, kind, raw: str, where: str):
    if len(raw) >= 2 and raw[0] == raw[-1] == '"':
        raw = raw[1:-1]
    try:
        if kind is bool or kind == "bool":
            if raw.lower() not in ("true", "false"):
                raise ValueError("expected true or false")
            return raw.lower() == "true"
        if kind is int or kind == "int":
            return int(raw)
        if kind is float or kind == "float":
            return float(raw)
    except ValueError as exc:
        raise ConfigurationError(f"{where}: bad value for {name}: {exc}") from None
    return raw


def parse_config(text: str, source: str = "<config>") -> Config:
    types = {f.name: f.type for f in fields(Config)}
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = _strip_comment(line).strip()
        if not line:
            continue
        where = f"{source}:{lineno}"
        key, sep, raw = line.partition("=")
        key = key.strip()
        if not sep or not key:
            raise ConfigurationError(f"{where}: expected key = value")
        if key not in types:
            raise ConfigurationError(f"{where}: unknown key {key!r}")
        values[key] = _convert(key, types[key], raw.strip(), where)
    return Config(**values)


def load_config(path: str | os.PathLike | None = None) -> Config:
    """Read ``path``, else the file named by $PPID_CONFIG, else defaults."""
    path = path or os.environ.get(ENV_VAR)
    if not path:
        return Config()
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text, str(path))
