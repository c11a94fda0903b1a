"""
Messages passed between the protocol adapters and the discovery layer.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Any, Dict, Optional


@dataclass(frozen=True)
class InboundMessage:
    """A publish (MQTT) or notification (CoAP) as received by an adapter."""

    resource_id: Optional[str]
    payload: bytes = b""
    protocol: str = "mqtt"
    mid: int = 0
    qos: int = 0


@dataclass(frozen=True)
class Delivered:
    sa_id: int
    resource_id: str


@dataclass(frozen=True)
class ClassificationRequest:
    """An unmatched resource, handed to discovery together with the adapter that saw it."""

    resource_id: str
    raw_payload: bytes
    adapter_ref: int
    received_at: float = field(default_factory=time.time)

    def __post_init__(self):
        if not self.resource_id:
            raise ValueError("A classification request needs a resource identifier.")

    def to_dict(self) -> Dict[str, Any]:
        return {
            "resource_id": self.resource_id,
            "raw_payload": self.raw_payload.decode("utf-8", errors="replace"),
            "adapter_ref": self.adapter_ref,
            "received_at": self.received_at,
        }
