"""
Discovery: unmatched resources become sensor agents.

For every ClassificationRequest coming off the adapters' queue:

    1. authenticate the resource against the allowlist
    2. build a SensorAgent (attributes from the feature extractor,
       location from the resource identifier)
    3. register the agent with the adapter that saw the message
    4. hand it to the device manager, which picks the cluster
    5. deliver the message that triggered all this

A resource is turned into an agent exactly once; later requests for it
resolve to the same agent. Broker addresses are kept here too.
"""

from __future__ import annotations

import itertools
import logging
import queue
import re
import threading
import time
import zlib
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence

from gateway.device_manager import DeviceManager, SensorAgent
from gateway.errors import AuthenticationFailed, GatewayError, MalformedMessage
from gateway.messages import ClassificationRequest
from gateway.protocol_adapter import Endpoint, Protocol, ProtocolAdapter

logger = logging.getLogger(__name__)
audit = logging.getLogger("gateway.audit")

CONFIG: str = "config"
RUNTIME: str = "runtime"

_NUMBER_RE = re.compile(r"[-+]?\d+(?:\.\d+)?(?:[eE][-+]?\d+)?")


def location_of(resource_id: str) -> str:
    """Longest proper path prefix: 'kista/temp/7' -> 'kista/temp'."""
    head, sep, _ = resource_id.strip("/").rpartition("/")
    return head if sep else resource_id


class Allowlist:
    """Topic-prefix allowlist; an empty list allows everything."""

    def __init__(self, prefixes: Sequence[str] = ()):
        self.prefixes = tuple(prefixes)

    def allows(self, resource_id: str) -> bool:
        return not self.prefixes or any(resource_id.startswith(p) for p in self.prefixes)


class FeatureExtractor:
    """
    resource identifier + payload -> [type code, device id, readings...]

    Type codes are handed out in order of first appearance of the type
    segment (the one before the last). The device id is the last segment if
    it is numeric, otherwise derived from a CRC32 of the identifier.
    """

    def __init__(self):
        self._codes: Dict[str, int] = {}
        self._lock = threading.Lock()

    def type_code(self, kind: str) -> int:
        with self._lock:
            if kind not in self._codes:
                self._codes[kind] = len(self._codes) + 1
            return self._codes[kind]

    def extract(self, resource_id: str, payload: bytes) -> List[int]:
        segments = [s for s in resource_id.strip("/").split("/") if s] or [resource_id]
        kind = segments[-2] if len(segments) > 1 else segments[-1]
        last = segments[-1]
        device_id = int(last) if last.isdigit() else zlib.crc32(resource_id.encode("utf-8")) % 1_000_000
        text = payload.decode("utf-8", errors="replace")
        readings = [int(round(float(n))) for n in _NUMBER_RE.findall(text)]
        return [self.type_code(kind), device_id] + readings


@dataclass(frozen=True)
class BrokerEntry:
    address: Endpoint
    protocol_hint: Optional[Protocol] = None
    added_by: str = CONFIG

    def __post_init__(self):
        if self.added_by not in (CONFIG, RUNTIME):
            raise ValueError(f"added_by must be {CONFIG!r} or {RUNTIME!r}.")

    def to_dict(self) -> Dict[str, object]:
        return {
            "address": str(self.address),
            "protocol_hint": self.protocol_hint.value if self.protocol_hint else None,
            "added_by": self.added_by,
        }


@dataclass(frozen=True)
class SaCreated:
    sa_id: int
    cluster_id: int
    resource_id: str
    created: bool = True


class Discovery:
    """
    Single consumer of the classification queue; also owns the broker list.
    """

    def __init__(
        self,
        device_manager: DeviceManager,
        allowlist: Optional[Allowlist] = None,
        extractor: Optional[FeatureExtractor] = None,
        on_broker_added: Optional[Callable[[BrokerEntry], None]] = None,
        on_delivery: Optional[Callable[[SensorAgent, bytes], None]] = None,
        clock: Callable[[], float] = time.time,
    ):
        self.device_manager = device_manager
        self.allowlist = allowlist or Allowlist()
        self.extractor = extractor or FeatureExtractor()
        self.on_broker_added = on_broker_added
        self.on_delivery = on_delivery
        self.clock = clock
        self.adapters: Dict[int, ProtocolAdapter] = {}
        self.brokers: Dict[Endpoint, BrokerEntry] = {}
        self._by_resource: Dict[str, int] = {}
        self._sa_ids = itertools.count(1)
        self._lock = threading.RLock()
        self._counts: Dict[str, int] = {"created": 0, "resolved": 0, "rejected": 0, "failed": 0}

    @property
    def counts(self) -> Dict[str, int]:
        with self._lock:
            return dict(self._counts)

    def attach(self, adapter: ProtocolAdapter) -> None:
        with self._lock:
            self.adapters[adapter.adapter_id] = adapter

    def detach(self, adapter: ProtocolAdapter) -> None:
        with self._lock:
            self.adapters.pop(adapter.adapter_id, None)

    def sa_for(self, resource_id: str) -> Optional[int]:
        with self._lock:
            return self._by_resource.get(resource_id)

    def resume(self, resources: Dict[int, str]) -> None:
        """Adopt agents created before a restart (sa id -> resource id)."""
        with self._lock:
            for sa_id, resource_id in resources.items():
                self._by_resource.setdefault(resource_id, sa_id)
            start = max([0, *resources, *self._by_resource.values()]) + 1
            self._sa_ids = itertools.count(start)

    # -------------------------
    # Classification
    # -------------------------
    def handle_unsubscribed(self, req: ClassificationRequest) -> SaCreated:
        """
        Turn `req` into a sensor agent, or resolve it to the existing one.

        Raises:
            AuthenticationFailed: the allowlist rejects the resource; nothing
                is created or registered.
            MalformedMessage: the request names an adapter that is gone.
        """
        with self._lock:
            adapter = self.adapters.get(req.adapter_ref)
            if adapter is None:
                raise MalformedMessage(f"Adapter {req.adapter_ref} is not attached.")
            if not self.allowlist.allows(req.resource_id):
                self._counts["rejected"] += 1
                audit.warning("Rejected resource %r from adapter %d.", req.resource_id, req.adapter_ref)
                raise AuthenticationFailed(f"Resource {req.resource_id!r} is not allowed.")

            existing = self._by_resource.get(req.resource_id)
            if existing is not None:
                adapter.register(req.resource_id, existing)
                self._counts["resolved"] += 1
                agent = self.device_manager.activate(existing)
                if agent is not None:
                    self._deliver(agent, req.raw_payload)
                cluster_id = self.device_manager.cluster_of(existing)
                return SaCreated(existing, cluster_id if cluster_id is not None else -1,
                                 req.resource_id, created=False)

            agent = SensorAgent(
                sa_id=next(self._sa_ids),
                attributes=self.extractor.extract(req.resource_id, req.raw_payload),
                resource_id=req.resource_id,
                location=location_of(req.resource_id),
            )
            adapter.register(req.resource_id, agent.sa_id)
            try:
                cluster_id = self.device_manager.insert(agent)
            except GatewayError:
                adapter.table.unregister(req.resource_id)
                raise
            self._by_resource[req.resource_id] = agent.sa_id
            self._deliver(agent, req.raw_payload)
            self._counts["created"] += 1
        logger.info("Created SA %d for %r in cluster %d.", agent.sa_id, req.resource_id, cluster_id)
        return SaCreated(agent.sa_id, cluster_id, req.resource_id)

    def _deliver(self, agent: SensorAgent, payload: bytes) -> None:
        agent.deliver(payload, self.clock())
        if self.on_delivery is not None:
            self.on_delivery(agent, payload)

    def process(self, requests: "queue.Queue[Optional[ClassificationRequest]]",
                stop: Optional[threading.Event] = None) -> None:
        """Consume `requests` until a None sentinel arrives or `stop` is set."""
        while stop is None or not stop.is_set():
            try:
                req = requests.get(timeout=0.1)
            except queue.Empty:
                continue
            try:
                if req is None:
                    return
                self.handle_unsubscribed(req)
            except GatewayError as err:
                with self._lock:
                    self._counts["failed"] += 1
                logger.warning("Classification of %r failed: %s", req.resource_id, err)
            except Exception:
                with self._lock:
                    self._counts["failed"] += 1
                logger.exception("Classification of %r crashed.", req.resource_id)
            finally:
                requests.task_done()

    # -------------------------
    # Brokers
    # -------------------------
    def add_broker(self, entry: BrokerEntry) -> bool:
        """Store `entry` and schedule a connection; a known address is a no-op."""
        with self._lock:
            if entry.address in self.brokers:
                return False
            self.brokers[entry.address] = entry
        logger.info("Broker %s added (%s).", entry.address, entry.added_by)
        if self.on_broker_added is not None:
            self.on_broker_added(entry)
        return True

    def broker_list(self) -> List[BrokerEntry]:
        with self._lock:
            return list(self.brokers.values())
