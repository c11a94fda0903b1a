"""
Actuator rules over two sensor modalities.

A rule binds an independent sensor (e.g. phone.pos) to a dependent one
(e.g. living_room.temp) and reads

    ((actuators), k, (reference, trend), (goal, direction))

k is how much the dependent value moves per unit of the independent one.
At runtime an actuator fires when the dependent value is on the wrong side
of the goal and the independent value is close enough for the actuator to
make up the deficit in time.
"""

from __future__ import annotations

import json
import logging
import math
import os
import threading
from dataclasses import dataclass
from typing import Any, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

from gateway.errors import DegenerateTrace, MissingReading
from gateway.files import write_json

logger = logging.getLogger(__name__)

HEATER: int = 1
RESERVED: int = 2
COOLER: int = 3

# actuator id -> (name, sign of its effect on the dependent value)
ACTUATORS: Dict[int, Tuple[str, int]] = {
    HEATER: ("heater", +1),
    COOLER: ("cooler", -1),
}

TOLERANCE: float = 1e-9
COMPARATORS: Tuple[str, str] = (">", "<")


@dataclass(frozen=True)
class SensorKey:
    device: str
    sensor: str

    def __str__(self) -> str:
        return f"{self.device}.{self.sensor}"

    @classmethod
    def parse(cls, text: str) -> "SensorKey":
        device, sep, sensor = str(text).partition(".")
        if not sep or not device or not sensor:
            raise ValueError(f"Sensor key must look like 'device.sensor', got {text!r}.")
        return cls(device, sensor)


@dataclass(frozen=True)
class Trace:
    """End points of one example run."""

    indep_start: float
    indep_end: float
    dep_start: float
    dep_goal: float


@dataclass(frozen=True)
class Rule:
    actuators: Tuple[int, ...]
    slope: float
    reference: Tuple[float, str]
    goal: Tuple[float, str]
    independent: SensorKey
    dependent: SensorKey

    def __post_init__(self):
        object.__setattr__(self, "actuators", tuple(sorted(set(self.actuators))))
        if not self.actuators:
            raise ValueError("A rule drives at least one actuator.")
        if not (math.isfinite(self.slope) and self.slope > 0):
            raise ValueError(f"Slope must be positive, got {self.slope!r}.")
        for _, cmp in (self.reference, self.goal):
            if cmp not in COMPARATORS:
                raise ValueError(f"Comparator must be '>' or '<', got {cmp!r}.")

    def as_tuple(self) -> Tuple[Any, ...]:
        return (self.actuators, self.slope, self.reference, self.goal)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "actuators": list(self.actuators),
            "slope": self.slope,
            "reference": list(self.reference),
            "goal": list(self.goal),
            "independent": str(self.independent),
            "dependent": str(self.dependent),
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "Rule":
        ref_value, trend = data["reference"]
        goal_value, direction = data["goal"]
        return cls(
            actuators=tuple(int(a) for a in data["actuators"]),
            slope=float(data["slope"]),
            reference=(ref_value, str(trend)),
            goal=(goal_value, str(direction)),
            independent=SensorKey.parse(data["independent"]),
            dependent=SensorKey.parse(data["dependent"]),
        )


# -------------------------
# Learning
# -------------------------
def learn_rule(
    trace: Trace,
    candidates: Sequence[int],
    direction: Optional[str] = None,
    independent: SensorKey = SensorKey("phone", "pos"),
    dependent: SensorKey = SensorKey("living_room", "temp"),
) -> Rule:
    """
    Derive a rule from one example trace.

    Args:
        trace: indep_start/indep_end and dep_start/dep_goal of the example.
        candidates: actuator ids that may produce the change.
        direction: '<' if the dependent value must rise to the goal, '>' if
            it must fall. Derived from the trace when omitted.

    Raises:
        DegenerateTrace: zero span on either side, or no candidate actuator
            moves the value the required way.
    """
    span = abs(trace.indep_start - trace.indep_end)
    if span == 0:
        raise DegenerateTrace(f"Independent span is zero ({trace.indep_start} -> {trace.indep_end}).")
    change = abs(trace.dep_goal - trace.dep_start)
    if change == 0:
        raise DegenerateTrace("Dependent value does not change over the trace.")

    if direction is None:
        direction = "<" if trace.dep_start < trace.dep_goal else ">"
    if direction not in COMPARATORS:
        raise ValueError(f"Direction must be '>' or '<', got {direction!r}.")
    trend = ">" if trace.indep_start > trace.indep_end else "<"

    wanted = +1 if direction == "<" else -1
    chosen = [a for a in candidates if a in ACTUATORS and ACTUATORS[a][1] == wanted]
    if not chosen:
        raise DegenerateTrace(f"No actuator among {list(candidates)} moves the value towards the goal.")

    rule = Rule(
        actuators=tuple(chosen),
        slope=change / span,
        reference=(trace.indep_start, trend),
        goal=(trace.dep_goal, direction),
        independent=independent,
        dependent=dependent,
    )
    logger.info("Learned rule %s for %s -> %s.", rule.as_tuple(), independent, dependent)
    return rule


# -------------------------
# Evaluation
# -------------------------
def deficit(rule: Rule, value: float) -> float:
    goal, direction = rule.goal
    return goal - value if direction == "<" else value - goal


def fires(rule: Rule, independent: float, dependent: float) -> bool:
    missing = deficit(rule, dependent)
    if missing <= 0:
        return False
    return independent - missing / rule.slope <= TOLERANCE


def _reading(readings: Mapping[str, float], key: SensorKey) -> float:
    value = readings.get(str(key))
    if value is None:
        raise MissingReading(f"No reading for {key}.")
    return float(value)


def evaluate_rules(rules: Iterable[Rule], readings: Mapping[str, float]) -> Dict[str, bool]:
    """
    Actuator states for the given readings, keyed like 'phone.pos'.

    Every known actuator is present in the result; rules sharing an
    actuator are OR-ed.
    """
    states = {name: False for name, _ in ACTUATORS.values()}
    for rule in rules:
        p = _reading(readings, rule.independent)
        t = _reading(readings, rule.dependent)
        if fires(rule, p, t):
            for actuator in rule.actuators:
                if actuator in ACTUATORS:
                    states[ACTUATORS[actuator][0]] = True
    return states


# -------------------------
# Store
# -------------------------
class RuleStore:
    """Rules keyed by their (independent, dependent) sensor pair."""

    def __init__(self, path: Optional[str] = None):
        self.path = path
        self._rules: Dict[Tuple[SensorKey, SensorKey], List[Rule]] = {}
        self._lock = threading.Lock()

    def store_rule(self, rule: Rule, key: Optional[Tuple[SensorKey, SensorKey]] = None) -> bool:
        """Returns False if an equal rule is already stored under `key`."""
        key = key if key is not None else (rule.independent, rule.dependent)
        with self._lock:
            bucket = self._rules.setdefault(key, [])
            if rule in bucket:
                return False
            bucket.append(rule)
            if self.path:
                self._save()
        return True

    def find_rules(self, key: Tuple[SensorKey, SensorKey]) -> Tuple[Rule, ...]:
        with self._lock:
            return tuple(self._rules.get(key, ()))

    def all_rules(self) -> Tuple[Rule, ...]:
        with self._lock:
            return tuple(r for bucket in self._rules.values() for r in bucket)

    def evaluate(self, readings: Mapping[str, float]) -> Dict[str, bool]:
        return evaluate_rules(self.all_rules(), readings)

    def to_list(self) -> List[Dict[str, Any]]:
        return [
            {"key": [str(indep), str(dep)], "rule": rule.to_dict()}
            for (indep, dep), bucket in self._rules.items()
            for rule in bucket
        ]

    def _save(self) -> None:
        write_json(self.path, self.to_list())

    def load(self) -> int:
        if not self.path or not os.path.exists(self.path):
            return 0
        with open(self.path, "r", encoding="utf-8") as f:
            entries = json.load(f)
        count = 0
        with self._lock:
            for entry in entries:
                indep, dep = entry["key"]
                key = (SensorKey.parse(indep), SensorKey.parse(dep))
                rule = Rule.from_dict(entry["rule"])
                bucket = self._rules.setdefault(key, [])
                if rule not in bucket:
                    bucket.append(rule)
                    count += 1
        return count
