"""
Context placement.

A context groups sensors around one identifying attribute ('loc', 'time',
...). For each attribute it keeps the raw member values, so the aggregate
(count, std, representative) is always recomputed exactly:

    numeric  -> population std, mean
    time     -> population std in seconds, mean instant
    string   -> 0 when homogeneous, modal value

New sensors are placed by pipelines over registry C, each stage mapping
(contexts, sensor) -> contexts.
"""

from __future__ import annotations

import datetime as dt
import json
import logging
import re
import threading
from collections import Counter
from dataclasses import dataclass, field
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from dateutil import parser as date_parser

from gateway.dsl_synthesis import (
    DslFunction,
    DslProgram,
    IoExample,
    Registry,
    Synthesizer,
    ValueKind,
    evaluate,
    register_registry,
)

logger = logging.getLogger(__name__)

STRING: str = "string"
NUMERIC: str = "numeric"
TIME: str = "time"

EPOCH = dt.datetime(1970, 1, 1)
TOLERANCE: float = 1e-9

_ISO_RE = re.compile(r"^\d{4}-\d{2}-\d{2}[T ]\d{2}:\d{2}")


def attribute_type(value: Any) -> str:
    if isinstance(value, dt.datetime):
        return TIME
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        return NUMERIC
    return STRING


def to_seconds(value: dt.datetime) -> float:
    if value.tzinfo is not None:
        value = value.astimezone(dt.timezone.utc).replace(tzinfo=None)
    return (value - EPOCH).total_seconds()


def from_seconds(seconds: float) -> dt.datetime:
    return EPOCH + dt.timedelta(seconds=float(seconds))


def _modal(values: Sequence[Any]) -> Any:
    # Counter keeps first-seen order, so ties go to the earliest value
    return Counter(values).most_common(1)[0][0]


@dataclass(frozen=True)
class AttributeAggregate:
    count: int
    std: float
    representative: Any

    def as_tuple(self) -> Tuple[int, float, Any]:
        return (self.count, self.std, self.representative)


def _center(values: Sequence[Any]) -> Tuple[float, float]:
    """(mean, population std) of numeric or time values, times in seconds."""
    if attribute_type(values[0]) == TIME:
        arr = np.array([to_seconds(v) for v in values], dtype=np.float64)
    else:
        arr = np.array(values, dtype=np.float64)
    return float(np.mean(arr)), float(np.std(arr))


def aggregate(values: Sequence[Any]) -> AttributeAggregate:
    if not values:
        raise ValueError("An aggregate needs at least one value.")
    kind = attribute_type(values[0])
    if kind == STRING:
        mode = _modal(values)
        mismatch = np.array([v != mode for v in values], dtype=np.float64)
        return AttributeAggregate(len(values), float(np.std(mismatch)), mode)
    mean, std = _center(values)
    if len(values) == 1:
        std = 0.0
    representative = from_seconds(mean) if kind == TIME else mean
    return AttributeAggregate(len(values), std, representative)


@dataclass(frozen=True)
class SensorObservation:
    name: str
    values: Dict[str, Any]

    def __post_init__(self):
        if not self.values:
            raise ValueError("A sensor observation needs at least one attribute.")


@dataclass(frozen=True)
class Context:
    id: str
    identifying_key: str
    members: Tuple[str, ...]
    member_values: Dict[str, Tuple[Any, ...]] = field(default_factory=dict)

    def __post_init__(self):
        if not self.members:
            raise ValueError(f"Context {self.id} has no members.")

    @property
    def attributes(self) -> Dict[str, AttributeAggregate]:
        return {key: aggregate(values) for key, values in self.member_values.items() if values}

    @property
    def key_type(self) -> Optional[str]:
        values = self.member_values.get(self.identifying_key)
        return attribute_type(values[0]) if values else None

    def shared_keys(self, sensor: SensorObservation) -> List[str]:
        return [k for k in self.member_values if k in sensor.values]

    def with_sensor(self, sensor: SensorObservation) -> "Context":
        values = {k: v for k, v in self.member_values.items()}
        for key in self.shared_keys(sensor):
            values[key] = values[key] + (sensor.values[key],)
        return Context(self.id, self.identifying_key, self.members + (sensor.name,), values)

    def snapshot(self) -> List[Any]:
        aggregates = {
            key: [agg.count, agg.std, _jsonable(agg.representative)]
            for key, agg in self.attributes.items()
        }
        return [self.identifying_key, aggregates, list(self.members)]


def _jsonable(value: Any) -> Any:
    return value.isoformat() if isinstance(value, dt.datetime) else value


# -------------------------
# Registry C
# -------------------------
def _drop_key_type(contexts: Tuple[Context, ...], kind: str) -> Tuple[Context, ...]:
    return tuple(c for c in contexts if c.key_type != kind)


def exclude_strings(contexts, sensor):
    return _drop_key_type(contexts, STRING)


def exclude_numbers(contexts, sensor):
    return _drop_key_type(contexts, NUMERIC)


def exclude_empty(contexts, sensor):
    return tuple(c for c in contexts if c.shared_keys(sensor))


def exclude_dates(contexts, sensor):
    return _drop_key_type(contexts, TIME)


def within_std(context: Context, sensor: SensorObservation) -> bool:
    """True if every shared attribute of `sensor` lies within the context's spread."""
    for key in context.shared_keys(sensor):
        values = context.member_values[key]
        value = sensor.values[key]
        kind = attribute_type(values[0])
        if attribute_type(value) != kind:
            return False
        if kind == STRING:
            if value != _modal(values):
                return False
            continue
        mean, std = _center(values)
        x = to_seconds(value) if kind == TIME else float(value)
        if abs(x - mean) > std + TOLERANCE:
            return False
    return True


def exclude_outside_std(contexts, sensor):
    return tuple(c for c in contexts if within_std(c, sensor))


def exclude_mismatched_key(contexts, sensor):
    return tuple(c for c in contexts if c.identifying_key in sensor.values)


def add_sensor(contexts, sensor):
    return tuple(c.with_sensor(sensor) for c in contexts)


_C = ValueKind.CONTEXTS

CONTEXT_REGISTRY = register_registry(
    Registry(
        "C",
        [
            DslFunction(1, "exclude_strings", _C, _C, exclude_strings),
            DslFunction(2, "exclude_numbers", _C, _C, exclude_numbers),
            DslFunction(3, "exclude_empty", _C, _C, exclude_empty),
            DslFunction(4, "exclude_dates", _C, _C, exclude_dates),
            DslFunction(5, "exclude_outside_std", _C, _C, exclude_outside_std),
            DslFunction(6, "exclude_mismatched_key", _C, _C, exclude_mismatched_key),
            DslFunction(7, "add_sensor", _C, _C, add_sensor),
        ],
    )
)


# -------------------------
# Operations
# -------------------------
def learn_placement(
    sensor: SensorObservation,
    contexts: Sequence[Context],
    expected: Sequence[Context],
    synthesizer: Optional[Synthesizer] = None,
) -> DslProgram:
    synthesizer = synthesizer if synthesizer is not None else Synthesizer()
    example = IoExample(inputs=(tuple(contexts), sensor), output=tuple(expected))
    return synthesizer.synthesize([example], CONTEXT_REGISTRY.registry_id)


def place(sensor: SensorObservation, contexts: Sequence[Context], program: DslProgram) -> Tuple[Context, ...]:
    """Run `program`; survivors carry the sensor, excluded contexts come back untouched."""
    survivors = {c.id: c for c in evaluate(program, tuple(contexts), sensor)}
    return tuple(survivors.get(c.id, c) for c in contexts)


def snapshot(contexts: Iterable[Context]) -> Dict[str, Any]:
    return {c.id: c.snapshot() for c in contexts}


def parse_value(value: Any) -> Any:
    if isinstance(value, str) and _ISO_RE.match(value):
        try:
            return date_parser.isoparse(value)
        except ValueError:
            return value
    return value


def observation_from_json(obj: Dict[str, Any]) -> SensorObservation:
    return SensorObservation(str(obj["name"]), {k: parse_value(v) for k, v in obj["values"].items()})


def context_from_json(obj: Dict[str, Any]) -> Context:
    values: Dict[str, Tuple[Any, ...]] = {}
    names: List[str] = []
    for member in obj["members"]:
        observation = observation_from_json(member)
        names.append(observation.name)
        for key, value in observation.values.items():
            values[key] = values.get(key, ()) + (value,)
    return Context(str(obj["id"]), str(obj["identifying_key"]), tuple(names), values)


def load_contexts(path: str) -> List[Context]:
    with open(path, "r", encoding="utf-8") as f:
        data = json.load(f)
    return [context_from_json(obj) for obj in data["contexts"]]


class ContextStore:
    """
    Live contexts plus the placement programs learned for them.

    Single writer; readers get tuples (immutable snapshots).
    """

    def __init__(self, contexts: Iterable[Context] = ()):
        self._contexts: Dict[str, Context] = {c.id: c for c in contexts}
        self._programs: Dict[str, DslProgram] = {}
        self._lock = threading.Lock()

    @property
    def contexts(self) -> Tuple[Context, ...]:
        with self._lock:
            return tuple(self._contexts.values())

    @property
    def programs(self) -> Dict[str, DslProgram]:
        with self._lock:
            return dict(self._programs)

    def add_program(self, name: str, program: DslProgram) -> None:
        with self._lock:
            self._programs[name] = program

    def place_observation(self, sensor: SensorObservation) -> Tuple[Context, ...]:
        """Run every stored placement program; returns the contexts that changed."""
        changed: Dict[str, Context] = {}
        with self._lock:
            for name, program in self._programs.items():
                current = tuple(self._contexts.values())
                for context in evaluate(program, current, sensor):
                    if context.id in changed:
                        continue
                    self._contexts[context.id] = context
                    changed[context.id] = context
        if changed:
            logger.info("Placed %s into %s.", sensor.name, ", ".join(changed))
        return tuple(changed.values())

    def snapshot(self) -> Dict[str, Any]:
        return snapshot(self.contexts)
