"""
DSL registries, pipeline evaluation and program synthesis.

A program is a linear pipeline of indexed functions taken from one registry
and applied left to right. Programs are found from input/output examples by
enumerating pipelines in an order given by a table of learned Q-values:

    score(p) = sum of q(f) over the distinct functions f of p

Candidates are visited by (score desc, length asc, indices asc). With a
neutral table this is plain shortest-first enumeration.

Registries:
    L  list functions (clustering), defined here
    I  message functions (interoperability), see gateway.interoperability
    C  context functions (placement), see gateway.context_diversity
"""

from __future__ import annotations

import importlib
import itertools
import json
import logging
import math
import re
import threading
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Callable, Dict, Iterable, List, Optional, Sequence, Tuple

from gateway.errors import (
    EmptyListError,
    EvaluationError,
    ExampleConflict,
    KindMismatch,
    NotFound,
    ParseError,
    UnknownIndex,
)
from gateway.files import write_atomic

logger = logging.getLogger(__name__)

DEFAULT_MAX_LEN: int = 4
DEFAULT_ALPHA: float = 0.3
DEFAULT_INITIAL_Q: float = 0.0
SUCCESS_REWARD: float = 1.0

# registries living in other modules are imported on first use
_PROVIDERS: Dict[str, str] = {
    "I": "gateway.interoperability",
    "C": "gateway.context_diversity",
}

_REGISTRY_ID_RE = re.compile(r"[A-Za-z][A-Za-z0-9_]*")


class ValueKind(Enum):
    SCALAR = "scalar"
    LIST = "list"
    CONTEXTS = "contexts"
    RECORD = "record"
    PACKET = "packet"


def _is_scalar(value: Any) -> bool:
    return isinstance(value, (int, float, str))


def _is_context(value: Any) -> bool:
    return hasattr(value, "identifying_key") and hasattr(value, "member_values")


def accepts(kind: ValueKind, value: Any) -> bool:
    """Return True if `value` belongs to `kind`."""
    if kind is ValueKind.SCALAR:
        return _is_scalar(value)
    if kind is ValueKind.LIST:
        return isinstance(value, list) and all(_is_scalar(v) for v in value)
    if kind is ValueKind.CONTEXTS:
        return isinstance(value, tuple) and all(_is_context(v) for v in value)
    if kind is ValueKind.RECORD:
        return isinstance(value, dict)
    if kind is ValueKind.PACKET:
        return isinstance(value, tuple) and not any(_is_context(v) for v in value)
    return False


# -------------------------
# Registries
# -------------------------
@dataclass(frozen=True)
class DslFunction:
    index: int
    name: str
    input_kind: ValueKind
    output_kind: ValueKind
    evaluator: Callable[..., Any] = field(compare=False, repr=False)


class Registry:
    """An indexed, append-only set of DSL functions."""

    def __init__(self, registry_id: str, functions: Iterable[DslFunction] = ()):
        if not _REGISTRY_ID_RE.fullmatch(registry_id):
            raise ValueError(f"Invalid registry id {registry_id!r}.")
        self.registry_id = registry_id
        self._functions: Dict[int, DslFunction] = {}
        for fn in functions:
            self.add(fn)

    def add(self, fn: DslFunction) -> None:
        if fn.index < 1:
            raise ValueError("DSL function indices are positive.")
        if fn.index in self._functions:
            raise ValueError(f"Index {fn.index} already used in registry {self.registry_id}.")
        self._functions[fn.index] = fn

    def __getitem__(self, index: int) -> DslFunction:
        try:
            return self._functions[index]
        except KeyError:
            raise UnknownIndex(f"Registry {self.registry_id} has no index {index}.") from None

    def __contains__(self, index: int) -> bool:
        return index in self._functions

    def __len__(self) -> int:
        return len(self._functions)

    def indices(self) -> List[int]:
        return sorted(self._functions)

    def by_name(self, name: str) -> DslFunction:
        for fn in self._functions.values():
            if fn.name == name:
                return fn
        raise UnknownIndex(f"Registry {self.registry_id} has no function {name!r}.")

    def validate(self, program: "DslProgram") -> None:
        for index in program.stages:
            self[index]


_REGISTRIES: Dict[str, Registry] = {}
_REGISTRIES_LOCK = threading.Lock()


def register_registry(registry: Registry) -> Registry:
    with _REGISTRIES_LOCK:
        _REGISTRIES[registry.registry_id] = registry
    return registry


def get_registry(registry_id: str) -> Registry:
    registry = _REGISTRIES.get(registry_id)
    if registry is None and registry_id in _PROVIDERS:
        importlib.import_module(_PROVIDERS[registry_id])
        registry = _REGISTRIES.get(registry_id)
    if registry is None:
        raise UnknownIndex(f"Unknown registry {registry_id!r}.")
    return registry


# -------------------------
# Registry L: list functions
# -------------------------
def _head(xs: list) -> Any:
    if not xs:
        raise EmptyListError("HEAD of empty list")
    return xs[0]


def _rest(xs: list) -> list:
    if not xs:
        raise EmptyListError("REST of empty list")
    return xs[1:]


def _last(xs: list) -> Any:
    if not xs:
        raise EmptyListError("LAST of empty list")
    return xs[-1]


def _maximum(xs: list) -> Any:
    if not xs:
        raise EmptyListError("MAXIMUM of empty list")
    return max(xs)


def _minimum(xs: list) -> Any:
    if not xs:
        raise EmptyListError("MINIMUM of empty list")
    return min(xs)


_L, _S = ValueKind.LIST, ValueKind.SCALAR

LIST_REGISTRY = register_registry(
    Registry(
        "L",
        [
            DslFunction(1, "HEAD", _L, _S, _head),
            DslFunction(2, "REST", _L, _L, _rest),
            DslFunction(3, "LAST", _L, _S, _last),
            DslFunction(4, "REVERSE", _L, _L, lambda xs: list(reversed(xs))),
            DslFunction(5, "SORT", _L, _L, sorted),
            DslFunction(6, "SUM", _L, _S, sum),
            DslFunction(7, "COUNT", _L, _S, len),
            DslFunction(8, "MAXIMUM", _L, _S, _maximum),
            DslFunction(9, "MINIMUM", _L, _S, _minimum),
        ],
    )
)


# -------------------------
# Programs
# -------------------------
@dataclass(frozen=True)
class DslProgram:
    registry_id: str
    stages: Tuple[int, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "stages", tuple(int(i) for i in self.stages))

    def __len__(self) -> int:
        return len(self.stages)

    def describe(self) -> str:
        """Readable form, e.g. `(2 (extract_packet), 3 (pack_properties))`."""
        registry = get_registry(self.registry_id)
        parts = [f"{i} ({registry[i].name})" for i in self.stages]
        return "(" + ", ".join(parts) + ")"


def serialize_program(program: DslProgram) -> str:
    return program.registry_id + ":" + "".join(f" {i}" for i in program.stages) + "\n"


def parse_program(text: str) -> DslProgram:
    """
    Parse `<registry_id>: <idx> <idx> ...`.

    Raises:
        ParseError: bad syntax, with line/column of the offending character.
        UnknownIndex: an index (or the registry) does not exist.
    """
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise ParseError("empty program file", 1, 1)
    if len(lines) > 1:
        raise ParseError("unexpected content after program line", 2, 1)

    line = lines[0].rstrip("\r")
    head, sep, tail = line.partition(":")
    if not sep:
        raise ParseError("missing ':' after registry id", 1, len(line) + 1)
    if not _REGISTRY_ID_RE.fullmatch(head):
        raise ParseError(f"invalid registry id {head!r}", 1, 1)

    offset = len(head) + 2
    stages: List[int] = []
    for match in re.finditer(r"\S+", tail):
        token = match.group(0)
        if not token.isdigit():
            raise ParseError(f"expected an index, got {token!r}", 1, offset + match.start())
        stages.append(int(token))

    program = DslProgram(head, tuple(stages))
    get_registry(head).validate(program)
    return program


def load_program(path: str) -> DslProgram:
    with open(path, "r", encoding="ascii") as f:
        return parse_program(f.read())


def save_program(program: DslProgram, path: str) -> str:
    return write_atomic(path, serialize_program(program), encoding="ascii")


# -------------------------
# Evaluation
# -------------------------
def _run(registry: Registry, stages: Sequence[int], value: Any, aux: Tuple[Any, ...]) -> Any:
    for position, index in enumerate(stages):
        fn = registry[index]
        if not accepts(fn.input_kind, value):
            raise KindMismatch(
                f"{fn.name} expects {fn.input_kind.value}", stage=position, function=fn.name
            )
        try:
            value = fn.evaluator(value, *aux)
        except EvaluationError as err:
            err.stage = position
            err.function = fn.name
            raise
        except (TypeError, ValueError) as e:
            raise KindMismatch(str(e), stage=position, function=fn.name) from e
    return value


def evaluate(program: DslProgram, value: Any, *aux: Any) -> Any:
    """
    Thread `value` through every stage of `program`.

    Extra positional arguments are handed to every stage unchanged (the new
    sensor for context placement). The empty program returns `value`.
    """
    registry = get_registry(program.registry_id)
    registry.validate(program)
    return _run(registry, program.stages, value, aux)


# -------------------------
# Examples
# -------------------------
@dataclass(frozen=True)
class IoExample:
    inputs: Tuple[Any, ...]
    output: Any

    def __post_init__(self):
        object.__setattr__(self, "inputs", tuple(self.inputs))
        if not self.inputs:
            raise ValueError("An example needs at least one input.")

    @classmethod
    def from_json(cls, obj: Dict[str, Any]) -> "IoExample":
        try:
            return cls(inputs=tuple(obj["input"]), output=obj["output"])
        except (KeyError, TypeError) as e:
            raise ParseError(f"invalid example object: {e}") from None

    def to_json(self) -> Dict[str, Any]:
        return {"input": list(self.inputs), "output": self.output}


def load_examples(path: str) -> List[IoExample]:
    """Load an example file: `[{"input": [...], "output": ...}, ...]`."""
    with open(path, "r", encoding="utf-8") as f:
        try:
            data = json.load(f)
        except json.JSONDecodeError as e:
            raise ParseError(e.msg, e.lineno, e.colno) from None
    if not isinstance(data, list):
        raise ParseError("example file must hold a JSON array")
    return [IoExample.from_json(obj) for obj in data]


def check_examples(examples: Sequence[IoExample]) -> None:
    """Reject empty, kind-inconsistent or contradictory example sets."""
    if not examples:
        raise ValueError("At least one example is required.")
    first = examples[0]
    for ex in examples[1:]:
        if len(ex.inputs) != len(first.inputs) or type(ex.inputs[0]) is not type(first.inputs[0]):
            raise KindMismatch("examples are not kind-consistent")
    for i, a in enumerate(examples):
        for b in examples[i + 1:]:
            if a.inputs == b.inputs and a.output != b.output:
                raise ExampleConflict(f"input {list(a.inputs)!r} maps to both {a.output!r} and {b.output!r}")


def _consistent(registry: Registry, stages: Sequence[int], examples: Sequence[IoExample]) -> bool:
    for ex in examples:
        try:
            result = _run(registry, stages, ex.inputs[0], ex.inputs[1:])
        except EvaluationError:
            return False
        if type(result) is not type(ex.output) or result != ex.output:
            # a bool never matches a number
            if not (isinstance(result, (int, float)) and isinstance(ex.output, (int, float))
                    and not isinstance(result, bool) and not isinstance(ex.output, bool)
                    and result == ex.output):
                return False
    return True


# -------------------------
# Q-table
# -------------------------
class QTable:
    """
    Per-function values ordering the enumeration.

    Single writer: updates are serialized through the table's lock; readers
    work on snapshots.
    """

    def __init__(
        self,
        alpha: float = DEFAULT_ALPHA,
        initial_q: float = DEFAULT_INITIAL_Q,
        entries: Optional[Dict[Tuple[str, int], float]] = None,
    ):
        if not 0.0 < alpha <= 1.0:
            raise ValueError("alpha must be in (0, 1].")
        if not math.isfinite(initial_q):
            raise ValueError("initial_q must be finite.")
        self.alpha = float(alpha)
        self.initial_q = float(initial_q)
        self._entries: Dict[Tuple[str, int], float] = dict(entries or {})
        self._lock = threading.Lock()

    def q(self, registry_id: str, index: int) -> float:
        with self._lock:
            return self._entries.get((registry_id, index), self.initial_q)

    def snapshot(self) -> Dict[Tuple[str, int], float]:
        with self._lock:
            return dict(self._entries)

    def update(self, program: DslProgram, reward: float) -> "QTable":
        """q(f) <- q(f) + alpha * (reward - q(f)) for each distinct f in `program`."""
        with self._lock:
            for index in sorted(set(program.stages)):
                key = (program.registry_id, index)
                old = self._entries.get(key, self.initial_q)
                new = old + self.alpha * (reward - old)
                if not math.isfinite(new):
                    raise ValueError(f"Non-finite q for {key}.")
                self._entries[key] = new
        return self

    def to_dict(self) -> Dict[str, Any]:
        with self._lock:
            return {
                "alpha": self.alpha,
                "initial_q": self.initial_q,
                "entries": [[r, i, q] for (r, i), q in sorted(self._entries.items())],
            }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "QTable":
        entries = {(str(r), int(i)): float(q) for r, i, q in data.get("entries", [])}
        return cls(float(data["alpha"]), float(data["initial_q"]), entries)


def update_q(qtable: QTable, program: DslProgram, reward: float) -> QTable:
    return qtable.update(program, reward)


# -------------------------
# Enumeration / search
# -------------------------
def enumerate_candidates(
    registry: Registry,
    max_len: int,
    entries: Optional[Dict[Tuple[str, int], float]] = None,
    initial_q: float = DEFAULT_INITIAL_Q,
) -> List[Tuple[int, ...]]:
    """All pipelines of length <= max_len in visiting order."""
    entries = entries or {}
    indices = registry.indices()
    pipelines: List[Tuple[int, ...]] = [()]
    for n in range(1, max_len + 1):
        pipelines.extend(itertools.product(indices, repeat=n))

    def score(stages: Tuple[int, ...]) -> float:
        total = math.fsum(entries.get((registry.registry_id, i), initial_q) for i in sorted(set(stages)))
        return round(total, 12)

    return sorted(pipelines, key=lambda p: (-score(p), len(p), p))


def search(
    examples: Sequence[IoExample],
    registry_id: str,
    max_len: int = DEFAULT_MAX_LEN,
    qtable: Optional[QTable] = None,
) -> Tuple[DslProgram, int]:
    """
    Return the first consistent pipeline and the number of candidates visited.

    Pure with respect to the Q-table: it is read, never written.
    """
    if max_len < 1:
        raise ValueError("max_len must be >= 1.")
    check_examples(examples)
    registry = get_registry(registry_id)
    entries = qtable.snapshot() if qtable else {}
    initial_q = qtable.initial_q if qtable else DEFAULT_INITIAL_Q

    visited = 0
    for stages in enumerate_candidates(registry, max_len, entries, initial_q):
        visited += 1
        if _consistent(registry, stages, examples):
            return DslProgram(registry_id, stages), visited
    raise NotFound(f"no pipeline of length <= {max_len} over registry {registry_id} fits the examples", visited)


def accepted_programs(
    examples: Sequence[IoExample], registry_id: str, max_len: int = DEFAULT_MAX_LEN
) -> List[DslProgram]:
    """Every consistent pipeline up to max_len, in neutral enumeration order."""
    check_examples(examples)
    registry = get_registry(registry_id)
    return [
        DslProgram(registry_id, stages)
        for stages in enumerate_candidates(registry, max_len)
        if _consistent(registry, stages, examples)
    ]


class Synthesizer:
    """
    Owns the live Q-table and synthesizes programs against it.

    Successful searches are rewarded with SUCCESS_REWARD; a NotFound leaves
    the table untouched.
    """

    def __init__(self, qtable: Optional[QTable] = None, max_len: int = DEFAULT_MAX_LEN,
                 reward: float = SUCCESS_REWARD):
        self.qtable = qtable if qtable is not None else QTable()
        self.max_len = int(max_len)
        self.reward = float(reward)
        self._lock = threading.Lock()
        self._stats: Dict[str, int] = {
            "runs": 0,
            "successes": 0,
            "not_found": 0,
            "candidates_visited": 0,
            "last_candidates_visited": 0,
        }

    @property
    def stats(self) -> Dict[str, int]:
        with self._lock:
            return dict(self._stats)

    def synthesize(self, examples: Sequence[IoExample], registry_id: str,
                   max_len: Optional[int] = None) -> DslProgram:
        max_len = self.max_len if max_len is None else int(max_len)
        try:
            program, visited = search(examples, registry_id, max_len, self.qtable)
        except NotFound as err:
            self._count(False, err.visited)
            logger.info("Synthesis over %s failed after %d candidates.", registry_id, err.visited)
            raise
        with self._lock:
            self.qtable.update(program, self.reward)
        self._count(True, visited)
        logger.info("Synthesized %s after %d candidates.", serialize_program(program).strip(), visited)
        return program

    def _count(self, success: bool, visited: int) -> None:
        with self._lock:
            self._stats["runs"] += 1
            self._stats["successes" if success else "not_found"] += 1
            self._stats["candidates_visited"] += visited
            self._stats["last_candidates_visited"] = visited


def synthesize(examples: Sequence[IoExample], registry_id: str, max_len: int = DEFAULT_MAX_LEN,
               qtable: Optional[QTable] = None) -> DslProgram:
    """Search, and reward the winner in `qtable` when one is given."""
    program, _ = search(examples, registry_id, max_len, qtable)
    if qtable is not None:
        qtable.update(program, SUCCESS_REWARD)
    return program
