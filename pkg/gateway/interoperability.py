"""
Message dialect translation.

Two MQTT client dialects are bridged by learned programs over registry I:

Dialect P (paho-style), a keyed record:
    {'command', 'qos', 'pos', 'mid', 'info': (flag, *properties),
     'packet': (command, dup, qos, retain, remaining_len, topic_len, topic, mid, payload),
     'to_process'}

Dialect G (gmqtt-style), an ordered sequence:
    (command, dup, qos, retain, remaining_len, topic_len, topic, mid,
     (flag, properties, payload))

Dialect S is the normalized MessageEnvelope; conversions to and from it are
fixed, not learned.
"""

from __future__ import annotations

import logging
import os
import threading
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

from gateway.dsl_synthesis import (
    DslFunction,
    DslProgram,
    IoExample,
    Registry,
    Synthesizer,
    ValueKind,
    evaluate,
    load_program,
    register_registry,
    save_program,
)
from gateway.errors import KindMismatch, NoProgram

logger = logging.getLogger(__name__)

DIALECT_P: str = "P"
DIALECT_G: str = "G"
DIALECT_STANDARD: str = "S"
DIALECTS: Tuple[str, ...] = (DIALECT_P, DIALECT_G, DIALECT_STANDARD)

HEADER_LEN: int = 8
RECORD_KEYS: Tuple[str, ...] = ("command", "qos", "pos", "mid", "info", "packet", "to_process")


def frame_length(remaining_len: int) -> int:
    """Bytes of a whole frame: command byte + varint length + remaining bytes."""
    remaining_len = int(remaining_len)
    if remaining_len < 0:
        raise ValueError("remaining length is non-negative")
    varint = 1
    while remaining_len >= 128 ** varint:
        varint += 1
    return 1 + varint + remaining_len


def tuplify(value: Any) -> Any:
    """JSON arrays -> tuples, recursively (message shapes use tuples)."""
    if isinstance(value, list):
        return tuple(tuplify(v) for v in value)
    if isinstance(value, tuple):
        return tuple(tuplify(v) for v in value)
    if isinstance(value, dict):
        return {k: tuplify(v) for k, v in value.items()}
    return value


def listify(value: Any) -> Any:
    if isinstance(value, (list, tuple)):
        return [listify(v) for v in value]
    if isinstance(value, dict):
        return {k: listify(v) for k, v in value.items()}
    return value


# -------------------------
# Registry I
# -------------------------
def _labeled(payload: Any) -> Tuple[Tuple[str, Any], ...]:
    if isinstance(payload, dict):
        return tuple(payload.items())
    if isinstance(payload, (tuple, list)):
        if all(isinstance(p, tuple) and len(p) == 2 for p in payload) and payload:
            return tuple(payload)
        return tuple((str(i + 1), v) for i, v in enumerate(payload))
    return (("1", payload),)


def _record_packet(record: Dict[str, Any]) -> Tuple[Any, ...]:
    packet = record.get("packet")
    if not isinstance(packet, tuple) or len(packet) != HEADER_LEN + 1 or "info" not in record:
        raise KindMismatch("record carries no packet/info")
    return packet


def unpack_payload(record: Dict[str, Any]) -> Dict[str, Any]:
    packet = _record_packet(record)
    out = dict(record)
    out["packet"] = packet[:HEADER_LEN] + (_labeled(packet[HEADER_LEN]),)
    return out


def extract_packet(record: Dict[str, Any]) -> Tuple[Any, ...]:
    """Raw packet: header + info + payload."""
    packet = _record_packet(record)
    return packet[:HEADER_LEN] + (tuple(record["info"]), packet[HEADER_LEN])


def pack_properties(raw: Tuple[Any, ...]) -> Tuple[Any, ...]:
    """Fold the info and payload of a raw packet into one nested body."""
    if len(raw) != HEADER_LEN + 2 or not isinstance(raw[HEADER_LEN], tuple) or not raw[HEADER_LEN]:
        raise KindMismatch("not a raw packet")
    info, payload = raw[HEADER_LEN], raw[HEADER_LEN + 1]
    return raw[:HEADER_LEN] + ((info[0], tuple(info[1:]), payload),)


def label_packet(packed: Tuple[Any, ...]) -> Dict[str, Any]:
    if len(packed) != HEADER_LEN + 1:
        raise KindMismatch("not a packed packet")
    body = packed[HEADER_LEN]
    if not isinstance(body, tuple) or len(body) != 3 or not isinstance(body[1], tuple):
        raise KindMismatch("packet body is not (flag, properties, payload)")
    flag, properties, payload = body
    return {
        "command": packed[0],
        "qos": packed[2],
        "pos": 0,
        "mid": packed[7],
        "info": (flag,) + properties,
        "packet": packed[:HEADER_LEN] + (payload,),
        "to_process": frame_length(packed[4]),
    }


_R, _P = ValueKind.RECORD, ValueKind.PACKET

MESSAGE_REGISTRY = register_registry(
    Registry(
        "I",
        [
            DslFunction(1, "unpack_payload", _R, _R, unpack_payload),
            DslFunction(2, "extract_packet", _R, _P, extract_packet),
            DslFunction(3, "pack_properties", _P, _P, pack_properties),
            DslFunction(4, "label_packet", _P, _R, label_packet),
        ],
    )
)


# -------------------------
# Envelope
# -------------------------
@dataclass(frozen=True)
class MessageEnvelope:
    """Normalized publish message."""

    command: str = "PUBLISH"
    dup: bool = False
    qos: int = 0
    retain: bool = False
    remaining_len: int = 0
    topic_len: int = 0
    topic: str = ""
    mid: int = 0
    properties: Tuple[str, ...] = ()
    payload_parts: Tuple[Tuple[str, Any], ...] = ()
    extras: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if self.qos not in (0, 1, 2):
            raise ValueError(f"qos must be 0, 1 or 2, got {self.qos!r}.")
        if self.topic and self.topic_len and self.topic_len != len(self.topic.encode("utf-8")):
            raise ValueError("topic_len does not match the topic's byte length.")

    def header(self) -> Tuple[Any, ...]:
        return (self.command, self.dup, self.qos, self.retain,
                self.remaining_len, self.topic_len, self.topic, self.mid)

    def payload(self) -> Any:
        if self.extras.get("payload_style") == "record":
            return dict(self.payload_parts)
        return tuple(v for _, v in self.payload_parts)

    @classmethod
    def _from_parts(cls, header: Sequence[Any], flag: Any, properties: Sequence[Any],
                    payload: Any, **extras: Any) -> "MessageEnvelope":
        command, dup, qos, retain, remaining_len, topic_len, topic, mid = header
        extras["flag"] = flag
        extras["payload_style"] = "record" if isinstance(payload, dict) else "sequence"
        return cls(command, dup, qos, retain, remaining_len, topic_len, topic, mid,
                   tuple(properties), _labeled(payload), extras)

    @classmethod
    def from_record(cls, record: Dict[str, Any]) -> "MessageEnvelope":
        packet = _record_packet(record)
        info = tuple(record["info"])
        return cls._from_parts(packet[:HEADER_LEN], info[0] if info else None, info[1:],
                               packet[HEADER_LEN], pos=record.get("pos", 0))

    @classmethod
    def from_packet(cls, packed: Tuple[Any, ...]) -> "MessageEnvelope":
        if len(packed) != HEADER_LEN + 1:
            raise KindMismatch("not a packed packet")
        flag, properties, payload = packed[HEADER_LEN]
        return cls._from_parts(packed[:HEADER_LEN], flag, properties, payload)

    def to_record(self) -> Dict[str, Any]:
        return {
            "command": self.command,
            "qos": self.qos,
            "pos": self.extras.get("pos", 0),
            "mid": self.mid,
            "info": (self.extras.get("flag"),) + self.properties,
            "packet": self.header() + (self.payload(),),
            "to_process": frame_length(self.remaining_len),
        }

    def to_packet(self) -> Tuple[Any, ...]:
        return self.header() + ((self.extras.get("flag"), self.properties, self.payload()),)


def envelope_for(resource_id: str, payload: bytes, mid: int = 0, qos: int = 0) -> MessageEnvelope:
    """Standard-form envelope for a raw publish or CoAP notification."""
    topic_len = len(resource_id.encode("utf-8"))
    text = payload.decode("utf-8", errors="replace")
    return MessageEnvelope(
        qos=qos,
        remaining_len=2 + topic_len + (2 if qos else 0) + len(payload),
        topic_len=topic_len,
        topic=resource_id,
        mid=mid,
        payload_parts=(("1", text),),
        extras={"payload_style": "sequence", "flag": None},
    )


def to_standard(msg: Any, dialect: str) -> MessageEnvelope:
    if dialect == DIALECT_STANDARD:
        return msg
    if dialect == DIALECT_P:
        return MessageEnvelope.from_record(msg)
    if dialect == DIALECT_G:
        return MessageEnvelope.from_packet(msg)
    raise NoProgram(f"Unknown dialect {dialect!r}.")


def from_standard(envelope: MessageEnvelope, dialect: str) -> Any:
    if dialect == DIALECT_STANDARD:
        return envelope
    if dialect == DIALECT_P:
        return envelope.to_record()
    if dialect == DIALECT_G:
        return envelope.to_packet()
    raise NoProgram(f"Unknown dialect {dialect!r}.")


# -------------------------
# Translation
# -------------------------
@dataclass(frozen=True)
class TranslationProgram:
    source: str
    target: str
    program: DslProgram


class Interoperability:
    """
    Find-cache of learned translation programs.

    Reads are concurrent; learning and persisting are serialized.
    """

    def __init__(self, synthesizer: Optional[Synthesizer] = None, program_dir: Optional[str] = None):
        self.synthesizer = synthesizer if synthesizer is not None else Synthesizer()
        self.program_dir = program_dir
        self._cache: Dict[Tuple[str, str], TranslationProgram] = {}
        self._lock = threading.Lock()

    def _path(self, src: str, dst: str) -> Optional[str]:
        if not self.program_dir:
            return None
        return os.path.join(self.program_dir, f"{src}-{dst}.prog")

    def load_cache(self) -> int:
        """Reload persisted `<src>-<dst>.prog` files; returns how many were found."""
        if not self.program_dir or not os.path.isdir(self.program_dir):
            return 0
        found = 0
        for name in sorted(os.listdir(self.program_dir)):
            stem, ext = os.path.splitext(name)
            src, sep, dst = stem.partition("-")
            if ext != ".prog" or not sep or src not in DIALECTS or dst not in DIALECTS:
                continue
            program = load_program(os.path.join(self.program_dir, name))
            with self._lock:
                self._cache[(src, dst)] = TranslationProgram(src, dst, program)
            found += 1
        return found

    def find(self, src: str, dst: str) -> Optional[TranslationProgram]:
        return self._cache.get((src, dst))

    def learn_translation(self, examples: Sequence[IoExample], src: str, dst: str) -> TranslationProgram:
        program = self.synthesizer.synthesize(examples, MESSAGE_REGISTRY.registry_id)
        learned = TranslationProgram(src, dst, program)
        with self._lock:
            self._cache[(src, dst)] = learned
            path = self._path(src, dst)
            if path:
                save_program(program, path)
        logger.info("Learned %s->%s translation %s.", src, dst, program.describe())
        return learned

    def translate(self, msg: Any, src: str, dst: str) -> Any:
        if src == dst:
            return msg
        if DIALECT_STANDARD in (src, dst):
            return from_standard(to_standard(msg, src), dst)
        learned = self.find(src, dst)
        if learned is None:
            raise NoProgram(f"No translation program for {src}->{dst}.")
        return evaluate(learned.program, msg)

    def translate_or_learn(self, msg: Any, src: str, dst: str, examples: Sequence[IoExample]) -> Any:
        """Cache lookup first; synthesis only on a miss."""
        try:
            return self.translate(msg, src, dst)
        except NoProgram:
            self.learn_translation(examples, src, dst)
            return self.translate(msg, src, dst)

    def programs(self) -> List[TranslationProgram]:
        with self._lock:
            return list(self._cache.values())
