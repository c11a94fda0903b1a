"""
In-process test harness.

SimulatedBroker stands in for an MQTT broker and a CoAP server on one
address. Handshakes take simulated time (integer microseconds) and fail
with an injected, seeded probability; publishes and notifications reach the
adapters subscribed to them.

Timing model per handshake:
    success   MQTT 0.3 s    CoAP 0.05 s
    failure   MQTT 0.5 s    CoAP 0.2 s   (capped by the attempt timeout)
"""

from __future__ import annotations

import logging
import socketserver
import threading
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, Iterable, Optional, Tuple

import numpy as np
from paho.mqtt.client import topic_matches_sub

from gateway.protocol_adapter import Endpoint, Protocol, ProtocolRanking, RetryPolicy
from gateway.stats import RunStats, to_us

logger = logging.getLogger(__name__)

SIM_ADDRESS = Endpoint("127.0.0.1", 1883)


@dataclass(frozen=True)
class SimulatedTiming:
    success_us: Dict[Protocol, int] = field(
        default_factory=lambda: {Protocol.MQTT: to_us(0.3), Protocol.COAP: to_us(0.05)}
    )
    failure_us: Dict[Protocol, int] = field(
        default_factory=lambda: {Protocol.MQTT: to_us(0.5), Protocol.COAP: to_us(0.2)}
    )

    @property
    def mean_failure(self) -> float:
        return float(np.mean(list(self.failure_us.values()))) / 1_000_000


class SimulatedBroker:
    """
    Broker double with fault injection.

    Everything random comes from one generator seeded at construction, so a
    run is reproduced exactly by reusing the seed.
    """

    def __init__(
        self,
        address: Endpoint = SIM_ADDRESS,
        protocols: Iterable[Protocol] = (Protocol.MQTT, Protocol.COAP),
        failure_rate: float = 0.0,
        seed: int = 0,
        timing: Optional[SimulatedTiming] = None,
    ):
        if not 0.0 <= failure_rate < 1.0:
            raise ValueError("failure_rate must be in [0, 1).")
        self.address = address
        self.protocols = tuple(Protocol(p) for p in protocols)
        self.failure_rate = float(failure_rate)
        self.seed = int(seed)
        self.timing = timing or SimulatedTiming()
        self._rng = np.random.default_rng(self.seed)
        self._lock = threading.RLock()
        self._sessions: Dict[int, Tuple[Protocol, str, Callable[..., Any]]] = {}
        self._on_lost: Dict[int, Callable[[], Any]] = {}
        self._clock_us = 0
        self._mid = 0
        self._counts: Dict[str, int] = {"handshakes": 0, "published": 0, "delivered": 0}

    # -------------------------
    # Getters
    # -------------------------
    @property
    def now_us(self) -> int:
        return self._clock_us

    @property
    def counts(self) -> Dict[str, int]:
        with self._lock:
            return dict(self._counts)

    @property
    def sessions(self) -> int:
        return len(self._sessions)

    def reset(self) -> None:
        with self._lock:
            self._rng = np.random.default_rng(self.seed)
            self._sessions = {}
            self._on_lost = {}
            self._clock_us = 0
            self._mid = 0
            self._counts = dict.fromkeys(self._counts, 0)

    # -------------------------
    # Handshake
    # -------------------------
    def handshake(self, protocol: Protocol, endpoint: Endpoint, timeout_s: float) -> Tuple[bool, int]:
        """One connection attempt; returns (ok, simulated elapsed us)."""
        protocol = Protocol(protocol)
        timeout_us = to_us(timeout_s)
        with self._lock:
            self._counts["handshakes"] += 1
            serves = protocol in self.protocols and (endpoint.host, endpoint.port) == (
                self.address.host, self.address.port)
            fault = self._rng.random() < self.failure_rate
            latency = self.timing.success_us[protocol]
            ok = serves and not fault and latency <= timeout_us
            elapsed = latency if ok else min(self.timing.failure_us[protocol], timeout_us)
            self._clock_us += elapsed
        return ok, elapsed

    # -------------------------
    # Messages
    # -------------------------
    def subscribe(self, protocol: Protocol, pattern: str, callback: Callable[..., Any], owner: int,
                  on_lost: Optional[Callable[[], Any]] = None) -> None:
        with self._lock:
            self._sessions[owner] = (Protocol(protocol), pattern, callback)
            if on_lost is not None:
                self._on_lost[owner] = on_lost

    def unsubscribe(self, owner: int) -> None:
        with self._lock:
            self._sessions.pop(owner, None)
            self._on_lost.pop(owner, None)

    def drop_sessions(self) -> int:
        """Cut every session, as a broker restart would; returns how many were cut."""
        with self._lock:
            lost = list(self._on_lost.values())
            count = len(self._sessions)
            self._sessions = {}
            self._on_lost = {}
        for callback in lost:
            callback()
        return count

    def _matching(self, protocol: Protocol, resource_id: Optional[str]):
        with self._lock:
            sessions = list(self._sessions.values())
        for proto, pattern, callback in sessions:
            if proto != protocol:
                continue
            if pattern == "#" or (resource_id is not None and topic_matches_sub(pattern, resource_id)):
                yield callback

    def _send(self, protocol: Protocol, resource_id: Optional[str], payload: bytes, qos: int) -> int:
        with self._lock:
            self._mid += 1
            mid = self._mid
            self._counts["published"] += 1
        delivered = 0
        for callback in self._matching(protocol, resource_id):
            callback(resource_id, payload, mid, qos)
            delivered += 1
        with self._lock:
            self._counts["delivered"] += delivered
        return delivered

    def publish(self, topic: Optional[str], payload: bytes, qos: int = 0) -> int:
        """MQTT publish; returns the number of sessions it reached."""
        return self._send(Protocol.MQTT, topic, payload, qos)

    def notify(self, uri: Optional[str], payload: bytes) -> int:
        """CoAP observe notification."""
        return self._send(Protocol.COAP, uri, payload, 0)


# -------------------------
# Connection trials
# -------------------------
def simulate_connections(
    protocol: Protocol,
    trials: int,
    policy: RetryPolicy,
    failure_rate: float,
    seed: int = 0,
    timing: Optional[SimulatedTiming] = None,
) -> RunStats:
    """
    Connect `trials` times to a broker failing each attempt with `failure_rate`.

    Returns:
        RunStats with the protocol's first-attempt and complete failures.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1.")
    protocol = Protocol(protocol)
    broker = SimulatedBroker(protocols=(protocol,), failure_rate=failure_rate, seed=seed, timing=timing)
    descriptor = ProtocolRanking.default()[protocol]
    adapter = descriptor.factory(broker.address, policy, broker=broker)

    stats = RunStats()
    for _ in range(trials):
        stats.record_connect(protocol.value, adapter.attempt_connect())
    counters = stats.protocols[protocol.value]
    logger.info("%d %s trials: %d first-attempt failures, %d complete failures.",
                trials, protocol.value, counters.first_attempt_failures, counters.complete_failures)
    return stats


# -------------------------
# Echo service for latency probes
# -------------------------
class _EchoHandler(socketserver.BaseRequestHandler):
    def handle(self):
        data, sock = self.request
        sock.sendto(data, self.client_address)


class UdpEchoServer:
    """Local UDP echo service on 127.0.0.1, run on a daemon thread."""

    def __init__(self, host: str = "127.0.0.1", port: int = 0):
        self._server = socketserver.ThreadingUDPServer((host, port), _EchoHandler)
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)

    @property
    def endpoint(self) -> Endpoint:
        host, port = self._server.server_address[:2]
        return Endpoint(host, port)

    def __enter__(self) -> "UdpEchoServer":
        self._thread.start()
        return self

    def __exit__(self, *exc) -> None:
        self._server.shutdown()
        self._server.server_close()
