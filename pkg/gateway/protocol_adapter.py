"""
Protocol adapters.

One adapter instance per broker session. Adapters are tried in the order of
a usage ranking (most used first, MQTT before CoAP on ties); the first that
completes a handshake within its retry policy wins and its usage count goes
up. Each connected adapter owns a dispatch table mapping resource
identifiers (MQTT topics, CoAP URIs) to sensor agent ids; anything it does
not know is handed to the classification queue instead of being dropped.

Adapters talk either to a simulated broker (see gateway.simulation) or, in
real mode, to an MQTT broker through paho-mqtt and a CoAP server through
CoAPthon3.
"""

from __future__ import annotations

import ipaddress
import itertools
import logging
import queue
import socket
import threading
import time
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Callable, Dict, List, Optional, Tuple

from gateway.errors import ConnectFailure, InvalidAddress
from gateway.messages import ClassificationRequest, Delivered, InboundMessage

logger = logging.getLogger(__name__)


class Protocol(str, Enum):
    MQTT = "mqtt"
    COAP = "coap"


# tie order of the ranking
PROTOCOL_ORDER: Tuple[Protocol, ...] = (Protocol.MQTT, Protocol.COAP)
DEFAULT_PORTS: Dict[Protocol, int] = {Protocol.MQTT: 1883, Protocol.COAP: 5683}


@dataclass(frozen=True)
class RetryPolicy:
    timeout_s: float
    attempts: int = 1

    def __post_init__(self):
        if not self.timeout_s > 0:
            raise ValueError("timeout_s must be positive.")
        if int(self.attempts) < 1:
            raise ValueError("attempts must be >= 1.")

    @property
    def budget_s(self) -> float:
        return self.timeout_s * self.attempts

    @property
    def timeout_us(self) -> int:
        return int(round(self.timeout_s * 1_000_000))


RETRY_PROFILES: Dict[str, Dict[Protocol, RetryPolicy]] = {
    "default": {
        Protocol.MQTT: RetryPolicy(0.8, 1),
        Protocol.COAP: RetryPolicy(0.5, 1),
    },
    "aggressive": {
        Protocol.MQTT: RetryPolicy(0.5, 2),
        Protocol.COAP: RetryPolicy(0.1, 2),
    },
}


# -------------------------
# Endpoints
# -------------------------
@dataclass(frozen=True)
class Endpoint:
    host: str
    port: int

    def __str__(self) -> str:
        if ":" in self.host:
            return f"[{self.host}]:{self.port}"
        return f"{self.host}:{self.port}"

    @classmethod
    def parse(cls, text: str, default_port: Optional[int] = None) -> "Endpoint":
        """
        Parse 'host:port' ('[v6]:port' for IPv6).

        Raises:
            InvalidAddress: bad port, or a dotted-quad that is not an IPv4 address.
        """
        text = str(text).strip()
        if text.startswith("["):
            host, sep, rest = text[1:].partition("]")
            port_text = rest[1:] if rest.startswith(":") else ""
        else:
            host, sep, port_text = text.rpartition(":")
            if not sep:
                host, port_text = text, ""
        if not host:
            raise InvalidAddress(f"No host in {text!r}.")
        if not port_text:
            if default_port is None:
                raise InvalidAddress(f"No port in {text!r}.")
            port = default_port
        else:
            if not port_text.isdigit():
                raise InvalidAddress(f"Bad port in {text!r}.")
            port = int(port_text)
        if not 0 < port < 65536:
            raise InvalidAddress(f"Port out of range in {text!r}.")

        looks_numeric = all(part.isdigit() for part in host.split("."))
        try:
            ipaddress.ip_address(host)
        except ValueError:
            if looks_numeric or ":" in host:
                raise InvalidAddress(f"{host!r} is not an IP address.") from None
        return cls(host, port)

    @property
    def is_ip(self) -> bool:
        try:
            ipaddress.ip_address(self.host)
            return True
        except ValueError:
            return False

    def resolve(self) -> "Endpoint":
        """Endpoint with the host name replaced by its first address."""
        if self.is_ip:
            return self
        try:
            infos = socket.getaddrinfo(self.host, self.port, type=socket.SOCK_STREAM)
        except socket.gaierror as e:
            raise InvalidAddress(f"Cannot resolve {self.host!r}: {e}") from None
        return Endpoint(infos[0][4][0], self.port)


# -------------------------
# Attempt results
# -------------------------
@dataclass(frozen=True)
class AttemptOutcome:
    attempt: int
    ok: bool
    elapsed_us: int


@dataclass(frozen=True)
class ConnectResult:
    """Success or Fail of one attempt_connect, with the per-attempt outcomes."""

    ok: bool
    elapsed_us: int
    outcomes: Tuple[AttemptOutcome, ...] = ()

    @property
    def elapsed(self) -> float:
        return self.elapsed_us / 1_000_000

    @property
    def first_attempt_failed(self) -> bool:
        return bool(self.outcomes) and not self.outcomes[0].ok


# -------------------------
# Dispatch
# -------------------------
class DispatchTable:
    """Resource identifier -> sensor agent id; exact match, last write wins."""

    def __init__(self):
        self._table: Dict[str, int] = {}
        self._lock = threading.Lock()

    def register(self, resource_id: str, sa_id: int) -> None:
        with self._lock:
            self._table[resource_id] = int(sa_id)

    def unregister(self, resource_id: str) -> None:
        with self._lock:
            self._table.pop(resource_id, None)

    def lookup(self, resource_id: str) -> Optional[int]:
        return self._table.get(resource_id)

    def __contains__(self, resource_id: str) -> bool:
        return resource_id in self._table

    def __len__(self) -> int:
        return len(self._table)

    def to_dict(self) -> Dict[str, int]:
        with self._lock:
            return dict(self._table)


_adapter_ids = itertools.count(1)


class ProtocolAdapter:
    """
    Base adapter: handshake under a retry policy, dispatch of inbound messages.

    Subclasses provide the real-mode handshake and stream; with `broker`
    set, both go to the simulated broker instead.
    """

    protocol: Protocol

    def __init__(
        self,
        endpoint: Endpoint,
        policy: RetryPolicy,
        broker: Any = None,
        request_queue: Optional["queue.Queue[ClassificationRequest]"] = None,
        deliver: Optional[Callable[[int, InboundMessage], None]] = None,
        clock: Callable[[], float] = time.time,
    ):
        self.adapter_id = next(_adapter_ids)
        self.endpoint = endpoint
        self.policy = policy
        self.broker = broker
        self.request_queue = request_queue
        self.deliver = deliver
        self.clock = clock
        self.table = DispatchTable()
        self.connected = False
        self.last_result: Optional[ConnectResult] = None
        self.connect_elapsed_us = 0
        self.connect_log: List[Dict[str, Any]] = []
        self._counts: Dict[str, int] = {"delivered": 0, "classification": 0, "malformed": 0}
        self._counts_lock = threading.Lock()

    def __repr__(self) -> str:
        return f"<{type(self).__name__} {self.adapter_id} {self.endpoint}>"

    @property
    def counts(self) -> Dict[str, int]:
        with self._counts_lock:
            return dict(self._counts)

    def _count(self, key: str) -> None:
        with self._counts_lock:
            self._counts[key] += 1

    # -------------------------
    # Connection
    # -------------------------
    def _handshake(self, timeout_s: float) -> Tuple[bool, int]:
        """One handshake; returns (ok, elapsed us)."""
        if self.broker is not None:
            return self.broker.handshake(self.protocol, self.endpoint, timeout_s)
        start = time.perf_counter_ns()
        try:
            ok = self._real_handshake(timeout_s)
        except OSError as e:
            logger.info("%s handshake with %s failed: %s", self.protocol.value, self.endpoint, e)
            ok = False
        return ok, (time.perf_counter_ns() - start) // 1000

    def _real_handshake(self, timeout_s: float) -> bool:
        raise NotImplementedError

    def _real_open(self) -> None:
        raise NotImplementedError

    def attempt_connect(self, policy: Optional[RetryPolicy] = None) -> ConnectResult:
        """Try up to policy.attempts handshakes, each bounded by policy.timeout_s."""
        policy = policy or self.policy
        outcomes: List[AttemptOutcome] = []
        total = 0
        for attempt in range(1, policy.attempts + 1):
            ok, elapsed = self._handshake(policy.timeout_s)
            total += elapsed
            outcomes.append(AttemptOutcome(attempt, ok, elapsed))
            if ok:
                break
        result = ConnectResult(outcomes[-1].ok, total, tuple(outcomes))
        self.last_result = result
        return result

    def open(self) -> None:
        """Start receiving: subscribe to every topic / observe the server's resources."""
        if self.broker is not None:
            self.broker.subscribe(self.protocol, "#", self.on_message, owner=self.adapter_id, on_lost=self._lost)
        else:
            self._real_open()
        self.connected = True

    def _lost(self) -> None:
        logger.warning("Lost %s session with %s.", self.protocol.value, self.endpoint)
        self.connected = False

    def close(self) -> None:
        if self.broker is not None:
            self.broker.unsubscribe(self.adapter_id)
        self.connected = False

    # -------------------------
    # Dispatch
    # -------------------------
    def register(self, resource_id: str, sa_id: int) -> None:
        self.table.register(resource_id, sa_id)

    def on_message(self, resource_id: Optional[str], payload: bytes, mid: int = 0, qos: int = 0) -> None:
        self.dispatch(InboundMessage(resource_id, payload, self.protocol.value, mid, qos))

    def dispatch(self, message: InboundMessage):
        """
        Route one inbound message.

        Returns:
            Delivered for a registered resource, a ClassificationRequest for
            an unknown one (also put on the request queue), or None for a
            message without a usable resource identifier (counted).
        """
        resource_id = message.resource_id
        if resource_id is None:
            return self._malformed(message, "no resource identifier")

        sa_id = self.table.lookup(resource_id)
        if sa_id is not None:
            if self.deliver is not None:
                self.deliver(sa_id, message)
            self._count("delivered")
            return Delivered(sa_id, resource_id)

        if resource_id == "":
            return self._malformed(message, "empty resource identifier is not registered")

        request = ClassificationRequest(resource_id, message.payload, self.adapter_id, self.clock())
        if self.request_queue is not None:
            self.request_queue.put(request)
        self._count("classification")
        return request

    def _malformed(self, message: InboundMessage, reason: str) -> None:
        self._count("malformed")
        logger.warning("Malformed %s message on %s: %s.", message.protocol, self, reason)
        return None

    def to_dict(self) -> Dict[str, Any]:
        return {
            "adapter_id": self.adapter_id,
            "protocol": self.protocol.value,
            "endpoint": str(self.endpoint),
            "connected": self.connected,
            "resources": len(self.table),
            "counts": self.counts,
        }


class MqttAdapter(ProtocolAdapter):
    protocol = Protocol.MQTT

    _client: Any = None

    def _real_handshake(self, timeout_s: float) -> bool:
        import paho.mqtt.client as mqtt

        connack = threading.Event()

        def on_connect(client, userdata, flags, reason_code, properties=None):
            if not reason_code.is_failure:
                connack.set()

        client = mqtt.Client(mqtt.CallbackAPIVersion.VERSION2)
        client.on_connect = on_connect
        client.connect_timeout = timeout_s
        client.connect(self.endpoint.host, self.endpoint.port)
        client.loop_start()
        if not connack.wait(timeout_s):
            client.loop_stop()
            client.disconnect()
            return False
        self._client = client
        return True

    def _real_open(self) -> None:
        def on_message(client, userdata, msg):
            self.on_message(msg.topic, msg.payload, msg.mid, msg.qos)

        def on_disconnect(client, userdata, flags, reason_code, properties=None):
            if reason_code.is_failure:
                logger.warning("Lost MQTT session with %s: %s.", self.endpoint, reason_code)
                self.connected = False

        self._client.on_message = on_message
        self._client.on_disconnect = on_disconnect
        self._client.subscribe("#")

    def close(self) -> None:
        if self._client is not None:
            self._client.loop_stop()
            self._client.disconnect()
            self._client = None
        super().close()


class CoapAdapter(ProtocolAdapter):
    protocol = Protocol.COAP

    _client: Any = None

    def _real_handshake(self, timeout_s: float) -> bool:
        from coapthon.client.helperclient import HelperClient

        client = HelperClient(server=(self.endpoint.host, self.endpoint.port))
        response = client.discover(timeout=timeout_s)
        if response is None:
            client.stop()
            return False
        self._client = client
        self._links = response.payload or ""
        return True

    def _real_open(self) -> None:
        # observe every resource the server lists in /.well-known/core
        for link in self._links.split(","):
            path = link.split(";")[0].strip().strip("<>")
            if not path:
                continue

            def callback(response, path=path):
                if response is not None:
                    payload = response.payload or ""
                    data = payload.encode("utf-8") if isinstance(payload, str) else bytes(payload)
                    self.on_message(path, data, response.mid or 0)

            self._client.observe(path, callback)

    def close(self) -> None:
        if self._client is not None:
            self._client.stop()
            self._client = None
        super().close()


# -------------------------
# Ranking
# -------------------------
@dataclass
class AdapterDescriptor:
    protocol: Protocol
    retry: RetryPolicy
    factory: Callable[..., ProtocolAdapter] = field(repr=False)
    usage_count: int = 0

    def use(self) -> None:
        self.usage_count += 1


class ProtocolRanking:
    """Adapter descriptors ordered by usage (desc), ties in PROTOCOL_ORDER."""

    def __init__(self, descriptors: Optional[List[AdapterDescriptor]] = None):
        self._descriptors: Dict[Protocol, AdapterDescriptor] = {}
        self._lock = threading.Lock()
        for d in descriptors or []:
            self.add(d)

    @classmethod
    def default(cls, profile: str = "default") -> "ProtocolRanking":
        policies = RETRY_PROFILES[profile]
        return cls([
            AdapterDescriptor(Protocol.MQTT, policies[Protocol.MQTT], MqttAdapter),
            AdapterDescriptor(Protocol.COAP, policies[Protocol.COAP], CoapAdapter),
        ])

    def add(self, descriptor: AdapterDescriptor) -> None:
        with self._lock:
            if descriptor.protocol in self._descriptors:
                raise ValueError(f"Protocol {descriptor.protocol.value} already has a descriptor.")
            self._descriptors[descriptor.protocol] = descriptor

    def __getitem__(self, protocol: Protocol) -> AdapterDescriptor:
        return self._descriptors[Protocol(protocol)]

    def ordered(self) -> List[AdapterDescriptor]:
        def tie(p: Protocol) -> int:
            return PROTOCOL_ORDER.index(p) if p in PROTOCOL_ORDER else len(PROTOCOL_ORDER)

        with self._lock:
            return sorted(self._descriptors.values(), key=lambda d: (-d.usage_count, tie(d.protocol)))

    def record_use(self, protocol: Protocol) -> None:
        with self._lock:
            self._descriptors[Protocol(protocol)].use()

    def to_list(self) -> List[Dict[str, Any]]:
        return [
            {"protocol": d.protocol.value, "usage_count": d.usage_count,
             "timeout_s": d.retry.timeout_s, "attempts": d.retry.attempts}
            for d in self.ordered()
        ]


def attempt_connect(adapter: ProtocolAdapter, endpoint: Endpoint, policy: RetryPolicy) -> ConnectResult:
    adapter.endpoint = endpoint
    return adapter.attempt_connect(policy)


def connect_ranked(
    endpoint: Endpoint,
    ranking: ProtocolRanking,
    protocols: Optional[List[Protocol]] = None,
    observer: Optional[Callable[[Protocol, int, ConnectResult], None]] = None,
    **adapter_kwargs: Any,
) -> Tuple[Protocol, ProtocolAdapter]:
    """
    Connect to `endpoint` with the best-ranked adapter that succeeds.

    Args:
        protocols: restrict the candidates (e.g. a broker's protocol hint).
        observer: called with (protocol, rank, result) after every adapter tried.
        adapter_kwargs: handed to every adapter factory (broker, request_queue,
            deliver, clock).

    Returns:
        (protocol, opened adapter). The adapter's `connect_elapsed_us` is
        the search time: failed ranks' elapsed plus the winner's.

    Raises:
        ConnectFailure: every candidate failed; `attempts` holds one entry
            per adapter tried.
    """
    resolved = endpoint.resolve()
    log: List[Dict[str, Any]] = []
    total = 0
    candidates = [d for d in ranking.ordered() if protocols is None or d.protocol in protocols]
    if not candidates:
        raise ConnectFailure(f"No adapter registered for {endpoint}.", log)

    for rank, descriptor in enumerate(candidates, start=1):
        adapter = descriptor.factory(resolved, descriptor.retry, **adapter_kwargs)
        result = adapter.attempt_connect()
        total += result.elapsed_us
        if observer is not None:
            observer(descriptor.protocol, rank, result)
        log.append({
            "protocol": descriptor.protocol.value,
            "rank": rank,
            "attempts": len(result.outcomes),
            "elapsed": result.elapsed,
        })
        if result.ok:
            ranking.record_use(descriptor.protocol)
            adapter.connect_elapsed_us = total
            adapter.connect_log = log
            adapter.open()
            logger.info("Connected to %s over %s at rank %d (%.3f s).",
                        endpoint, descriptor.protocol.value, rank, total / 1_000_000)
            return descriptor.protocol, adapter
        logger.info("%s adapter failed on %s after %d attempt(s).",
                    descriptor.protocol.value, endpoint, len(result.outcomes))
    raise ConnectFailure(f"All adapters failed to connect to {endpoint}.", log)
