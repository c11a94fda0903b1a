"""
Gateway configuration.

Loaded from a TOML file; every section is checked strictly, an unknown
section or key is an error. Example:

    [gateway]
    archive_dir = "archive"
    program_dir = "programs"
    ttl = 3600.0
    allowlist = ["kista/", "test/"]
    retry_profile = "default"      # or "aggressive"
    admin_port = 5000

    [retry.coap]                   # overrides the profile
    timeout_s = 0.1
    attempts = 2

    [dsl]
    max_len = 4
    alpha = 0.3
    initial_q = 0.0
    clustering_program = "db/by_type.prog"
    clustering_examples = "db/cluster_by_type.json"
    contexts = "db/contexts.json"
    rules = "programs/rules.json"

    [harness]
    simulate = true
    failure_rate = 0.0
    seed = 0

    [[brokers]]
    address = "127.0.0.1:1883"
    protocol = "mqtt"
"""

from __future__ import annotations

import math
import os

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from dataclasses import dataclass, field, fields
from typing import Any, Dict, Mapping, Optional, Tuple

from gateway.discovery import CONFIG, BrokerEntry
from gateway.errors import ConfigError, GatewayError
from gateway.protocol_adapter import DEFAULT_PORTS, RETRY_PROFILES, Endpoint, Protocol, RetryPolicy

ENV_VAR: str = "GATEWAY_CONFIG"


@dataclass(frozen=True)
class GatewaySection:
    archive_dir: str = "archive"
    program_dir: str = "programs"
    ttl: float = math.inf
    allowlist: Tuple[str, ...] = ()
    retry_profile: str = "default"
    admin_host: str = "127.0.0.1"
    admin_port: int = 5000


@dataclass(frozen=True)
class DslSection:
    max_len: int = 4
    alpha: float = 0.3
    initial_q: float = 0.0
    clustering_program: Optional[str] = None
    clustering_examples: Optional[str] = None
    contexts: Optional[str] = None
    rules: Optional[str] = None


@dataclass(frozen=True)
class HarnessSection:
    simulate: bool = True
    failure_rate: float = 0.0
    seed: int = 0


@dataclass(frozen=True)
class GatewayConfig:
    gateway: GatewaySection = field(default_factory=GatewaySection)
    dsl: DslSection = field(default_factory=DslSection)
    harness: HarnessSection = field(default_factory=HarnessSection)
    retry: Dict[Protocol, RetryPolicy] = field(default_factory=lambda: dict(RETRY_PROFILES["default"]))
    brokers: Tuple[BrokerEntry, ...] = ()
    path: Optional[str] = None

    def resolve(self, path: Optional[str]) -> Optional[str]:
        """Paths in the file are relative to the file's directory."""
        if path is None or os.path.isabs(path) or self.path is None:
            return path
        return os.path.join(os.path.dirname(os.path.abspath(self.path)), path)


def _section(cls, data: Any, name: str):
    if not isinstance(data, Mapping):
        raise ConfigError(f"[{name}] must be a table.")
    known = {f.name: f for f in fields(cls)}
    values: Dict[str, Any] = {}
    for key, value in data.items():
        if key not in known:
            raise ConfigError(f"Unknown key {key!r} in [{name}].")
        default = getattr(cls(), key)
        if isinstance(default, tuple):
            if not isinstance(value, list):
                raise ConfigError(f"{name}.{key} must be a list.")
            value = tuple(value)
        elif isinstance(default, bool):
            if not isinstance(value, bool):
                raise ConfigError(f"{name}.{key} must be true or false.")
        elif isinstance(default, (int, float)):
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise ConfigError(f"{name}.{key} must be a number.")
            if isinstance(default, float):
                value = float(value)
            elif not isinstance(value, int):
                raise ConfigError(f"{name}.{key} must be an integer.")
        elif default is None or isinstance(default, str):
            if not isinstance(value, str):
                raise ConfigError(f"{name}.{key} must be a string.")
        values[key] = value
    return cls(**values)


def _retry(data: Any, profile: str) -> Dict[Protocol, RetryPolicy]:
    if profile not in RETRY_PROFILES:
        raise ConfigError(f"Unknown retry profile {profile!r}; use one of {sorted(RETRY_PROFILES)}.")
    policies = dict(RETRY_PROFILES[profile])
    if not isinstance(data, Mapping):
        raise ConfigError("[retry] must be a table.")
    for name, section in data.items():
        try:
            protocol = Protocol(name)
        except ValueError:
            raise ConfigError(f"Unknown protocol section [retry.{name}].") from None
        if not isinstance(section, Mapping):
            raise ConfigError(f"[retry.{name}] must be a table.")
        unknown = set(section) - {"timeout_s", "attempts"}
        if unknown:
            raise ConfigError(f"Unknown key {sorted(unknown)[0]!r} in [retry.{name}].")
        base = policies[protocol]
        try:
            policies[protocol] = RetryPolicy(
                float(section.get("timeout_s", base.timeout_s)), int(section.get("attempts", base.attempts))
            )
        except (TypeError, ValueError) as e:
            raise ConfigError(f"[retry.{name}]: {e}") from None
    return policies


def _brokers(data: Any) -> Tuple[BrokerEntry, ...]:
    if not isinstance(data, list):
        raise ConfigError("[[brokers]] must be an array of tables.")
    entries = []
    for i, item in enumerate(data):
        if not isinstance(item, Mapping) or "address" not in item:
            raise ConfigError(f"brokers[{i}] needs an address.")
        unknown = set(item) - {"address", "protocol"}
        if unknown:
            raise ConfigError(f"Unknown key {sorted(unknown)[0]!r} in brokers[{i}].")
        try:
            hint = Protocol(item["protocol"]) if "protocol" in item else None
            address = Endpoint.parse(item["address"], DEFAULT_PORTS[hint] if hint else None)
        except (ValueError, GatewayError) as e:
            raise ConfigError(f"brokers[{i}]: {e}") from None
        entries.append(BrokerEntry(address, hint, CONFIG))
    return tuple(entries)


_TOP_LEVEL = {"gateway", "dsl", "harness", "retry", "brokers"}


def parse_config(data: Mapping[str, Any], path: Optional[str] = None) -> GatewayConfig:
    unknown = set(data) - _TOP_LEVEL
    if unknown:
        raise ConfigError(f"Unknown section [{sorted(unknown)[0]}].")
    gateway = _section(GatewaySection, data.get("gateway", {}), "gateway")
    dsl = _section(DslSection, data.get("dsl", {}), "dsl")
    harness = _section(HarnessSection, data.get("harness", {}), "harness")
    if not 0.0 <= harness.failure_rate < 1.0:
        raise ConfigError("harness.failure_rate must be in [0, 1).")
    if not gateway.ttl > 0:
        raise ConfigError("gateway.ttl must be positive.")
    if dsl.max_len < 1 or not 0.0 < dsl.alpha <= 1.0:
        raise ConfigError("dsl.max_len must be >= 1 and dsl.alpha in (0, 1].")
    return GatewayConfig(
        gateway=gateway,
        dsl=dsl,
        harness=harness,
        retry=_retry(data.get("retry", {}), gateway.retry_profile),
        brokers=_brokers(data.get("brokers", [])),
        path=path,
    )


def config_path(path: Optional[str] = None) -> Optional[str]:
    return os.environ.get(ENV_VAR) or path


def load_config(path: Optional[str] = None) -> GatewayConfig:
    """
    Load the configuration; GATEWAY_CONFIG overrides `path`. No path at all
    gives the defaults (no brokers, simulated harness).

    Raises:
        ConfigError: unreadable file, TOML syntax error or unknown key.
    """
    path = config_path(path)
    if path is None:
        return GatewayConfig()
    try:
        with open(path, "rb") as f:
            data = tomllib.load(f)
    except OSError as e:
        raise ConfigError(f"Cannot read config {path}: {e}") from None
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"Invalid TOML in {path}: {e}") from None
    return parse_config(data, path)
