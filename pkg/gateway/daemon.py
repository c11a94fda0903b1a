"""
The gateway supervisor.

Gateway owns every module and wires them together:

    broker session -> ProtocolAdapter.dispatch
        known resource   -> SensorAgent.deliver -> context placement
        unknown resource -> request queue -> Discovery -> DeviceManager

Brokers are connected through the protocol ranking; a session that fails or
is lost is retried with exponential backoff. `run` adds the admin HTTP API
and turns SIGTERM/SIGINT into a clean shutdown: the request queue is drained
and every cluster is archived before the process exits.
"""

from __future__ import annotations

import json
import logging
import os
import queue
import signal
import threading
import time
from typing import Any, Dict, Iterator, List, Optional, Sequence

from gateway.config import GatewayConfig
from gateway.context_diversity import (
    Context,
    ContextStore,
    SensorObservation,
    learn_placement,
    load_contexts,
    parse_value,
)
from gateway.device_manager import CLUSTERING_PROGRAM, DeviceManager, SensorAgent
from gateway.discovery import RUNTIME, Allowlist, BrokerEntry, Discovery
from gateway.dsl_synthesis import (
    DslProgram,
    QTable,
    Synthesizer,
    load_examples,
    load_program,
    parse_program,
    save_program,
)
from gateway.errors import ConnectFailure, GatewayError
from gateway.interoperability import Interoperability
from gateway.logic import Rule, RuleStore, Trace, learn_rule
from gateway.messages import InboundMessage
from gateway.protocol_adapter import (
    PROTOCOL_ORDER,
    AdapterDescriptor,
    CoapAdapter,
    ConnectResult,
    Endpoint,
    MqttAdapter,
    Protocol,
    ProtocolAdapter,
    ProtocolRanking,
    connect_ranked,
)
from gateway.simulation import SimulatedBroker
from gateway.stats import RunStats

logger = logging.getLogger(__name__)

BACKOFF_BASE_S: float = 1.0
BACKOFF_CAP_S: float = 30.0
# clustering by device type when nothing else is configured
DEFAULT_CLUSTERING = "L: 1\n"
PLACEMENT_PREFIX = "placement_"
RULES_FILE = "rules.json"
MAINTENANCE_INTERVAL_S: float = 60.0

FACTORIES = {Protocol.MQTT: MqttAdapter, Protocol.COAP: CoapAdapter}


def backoff_delays(base: float = BACKOFF_BASE_S, cap: float = BACKOFF_CAP_S) -> Iterator[float]:
    """1, 2, 4, ... seconds, never more than `cap`."""
    delay = base
    while True:
        yield min(delay, cap)
        delay = min(delay * 2, cap)


class Gateway:
    """
    Supervisor of one gateway process.

    Broker sessions run independently; admin commands (add_broker, recluster,
    learning) are serialized on the supervisor lock.
    """

    def __init__(self, config: Optional[GatewayConfig] = None, broker: Optional[SimulatedBroker] = None,
                 clock=time.time):
        self.config = config or GatewayConfig()
        self.clock = clock
        cfg = self.config
        self.program_dir = cfg.resolve(cfg.gateway.program_dir)
        self.archive_dir = cfg.resolve(cfg.gateway.archive_dir)

        self.stats = RunStats()
        self.synthesizer = Synthesizer(QTable(cfg.dsl.alpha, cfg.dsl.initial_q), cfg.dsl.max_len)
        self.device_manager = DeviceManager(self.synthesizer, self.program_dir, self.archive_dir, clock)
        self.interop = Interoperability(self.synthesizer, self.program_dir)
        self.rules = RuleStore(cfg.resolve(cfg.dsl.rules) or os.path.join(self.program_dir, RULES_FILE))
        self.contexts = ContextStore()
        self.requests: "queue.Queue[Any]" = queue.Queue()
        self.discovery = Discovery(
            self.device_manager,
            Allowlist(cfg.gateway.allowlist),
            on_broker_added=self._on_broker_added,
            on_delivery=self._observe,
            clock=clock,
        )
        self.ranking = ProtocolRanking(
            [AdapterDescriptor(p, cfg.retry[p], FACTORIES[p]) for p in PROTOCOL_ORDER]
        )
        if broker is None and cfg.harness.simulate:
            broker = SimulatedBroker(failure_rate=cfg.harness.failure_rate, seed=cfg.harness.seed)
        self.broker = broker

        self.adapters: Dict[Endpoint, ProtocolAdapter] = {}
        # every adapter ever opened, for the dispatch counters
        self._history: List[ProtocolAdapter] = []
        self._stop = threading.Event()
        self._threads: List[threading.Thread] = []
        self._lock = threading.RLock()
        self._connect_lock = threading.Lock()
        self.started = False

    # -------------------------
    # Lifecycle
    # -------------------------
    def start(self) -> "Gateway":
        """Load programs and stores, start the consumer, connect the configured brokers."""
        cfg = self.config
        for path in (self.program_dir, self.archive_dir):
            os.makedirs(path, exist_ok=True)

        self._load_clustering()
        self.interop.load_cache()
        self.rules.load()
        self._load_contexts()
        self.device_manager.load_archive_index()
        self.discovery.resume(self.device_manager.archived_resources())

        self._spawn("discovery", self.discovery.process, self.requests, self._stop)
        if cfg.gateway.ttl != float("inf"):
            self._spawn("maintenance", self._maintenance)
        self.started = True
        for entry in cfg.brokers:
            self.discovery.add_broker(entry)
        logger.info("Gateway started with %d broker(s).", len(cfg.brokers))
        return self

    def stop(self) -> List[int]:
        """Drain the request queue, close all sessions and archive every cluster."""
        if not self.started:
            return []
        self.requests.join()
        self._stop.set()
        for thread in self._threads:
            thread.join(timeout=5.0)
        with self._lock:
            for adapter in self.adapters.values():
                adapter.close()
            self.adapters.clear()
        archived = self.device_manager.archive_all()
        self.started = False
        logger.info("Gateway stopped; archived clusters %s.", archived)
        return archived

    def _spawn(self, name: str, target, *args) -> threading.Thread:
        thread = threading.Thread(target=target, args=args, name=f"gateway-{name}", daemon=True)
        self._threads.append(thread)
        thread.start()
        return thread

    def _load_clustering(self) -> DslProgram:
        cfg = self.config
        saved = os.path.join(self.program_dir, CLUSTERING_PROGRAM)
        configured = cfg.resolve(cfg.dsl.clustering_program)
        examples = cfg.resolve(cfg.dsl.clustering_examples)
        for path in (configured, saved):
            if path and os.path.exists(path):
                return self.device_manager.load_clustering_program(path)
        if examples:
            self.device_manager.regenerate(load_examples(examples), saved)
            return self.device_manager.active_program
        program = parse_program(DEFAULT_CLUSTERING)
        self.device_manager.set_program(program)
        return program

    def _load_contexts(self) -> None:
        path = self.config.resolve(self.config.dsl.contexts)
        contexts = load_contexts(path) if path else []
        self.contexts = ContextStore(contexts)
        for name in sorted(os.listdir(self.program_dir)):
            stem, ext = os.path.splitext(name)
            if ext == ".prog" and stem.startswith(PLACEMENT_PREFIX):
                program = load_program(os.path.join(self.program_dir, name))
                self.contexts.add_program(stem[len(PLACEMENT_PREFIX):], program)

    def _maintenance(self) -> None:
        ttl = self.config.gateway.ttl
        while not self._stop.wait(min(ttl, MAINTENANCE_INTERVAL_S)):
            try:
                self.device_manager.evict_inactive(ttl)
            except (GatewayError, OSError) as err:
                logger.warning("Eviction failed: %s", err)

    # -------------------------
    # Brokers
    # -------------------------
    def add_broker(self, address: str, protocol: Optional[str] = None) -> bool:
        hint = Protocol(protocol) if protocol else None
        entry = BrokerEntry(Endpoint.parse(address), hint, RUNTIME)
        return self.discovery.add_broker(entry)

    def _on_broker_added(self, entry: BrokerEntry) -> None:
        if not self.started:
            return
        if self._connect(entry) is None:
            self._spawn(f"session-{entry.address}", self._reconnect, entry)

    def _record(self, protocol: Protocol, rank: int, result: ConnectResult) -> None:
        self.stats.record_connect(protocol.value, result)

    def _connect(self, entry: BrokerEntry) -> Optional[ProtocolAdapter]:
        """One connection search over the ranking; None if every adapter failed."""
        protocols = [entry.protocol_hint] if entry.protocol_hint else None
        # one search at a time keeps simulated runs reproducible
        with self._connect_lock:
            try:
                protocol, adapter = connect_ranked(
                    entry.address,
                    self.ranking,
                    protocols,
                    observer=self._record,
                    broker=self.broker,
                    request_queue=self.requests,
                    deliver=self._deliver,
                    clock=self.clock,
                )
            except ConnectFailure as err:
                logger.warning("%s (%s)", err, err.attempts)
                return None
            except GatewayError as err:
                logger.warning("Cannot connect to %s: %s", entry.address, err)
                return None
        rank = adapter.connect_log[-1]["rank"]
        self.stats.record_rank(rank, adapter.connect_elapsed_us)
        with self._lock:
            self.adapters[entry.address] = adapter
            self._history.append(adapter)
        self.discovery.attach(adapter)
        return adapter

    def _reconnect(self, entry: BrokerEntry) -> None:
        delays = backoff_delays()
        while not self._stop.wait(next(delays)):
            logger.info("Reconnecting to %s.", entry.address)
            if self._connect(entry) is not None:
                return

    def check_sessions(self) -> List[Endpoint]:
        """Replace lost sessions; returns the addresses being reconnected."""
        lost = []
        with self._lock:
            for address, adapter in list(self.adapters.items()):
                if not adapter.connected:
                    del self.adapters[address]
                    self.discovery.detach(adapter)
                    lost.append(address)
        for address in lost:
            self._spawn(f"session-{address}", self._reconnect, self.discovery.brokers[address])
        return lost

    # -------------------------
    # Messages
    # -------------------------
    def _deliver(self, sa_id: int, message: InboundMessage) -> None:
        try:
            agent = self.device_manager.activate(sa_id)
        except GatewayError as err:
            logger.warning("Cannot restore SA %d: %s", sa_id, err)
            return
        if agent is None:
            logger.warning("Message for unknown SA %d on %r.", sa_id, message.resource_id)
            return
        agent.deliver(message.payload, self.clock())
        self._observe(agent, message.payload)

    def _observe(self, agent: SensorAgent, payload: bytes) -> None:
        """Feed JSON-object payloads into the context placement programs."""
        if not self.contexts.programs:
            return
        try:
            values = json.loads(payload)
        except (ValueError, UnicodeDecodeError):
            return
        if not isinstance(values, dict) or not values:
            return
        observation = SensorObservation(agent.resource_id, {k: parse_value(v) for k, v in values.items()})
        try:
            self.contexts.place_observation(observation)
        except GatewayError as err:
            logger.warning("Context placement of %s failed: %s", agent.resource_id, err)

    # -------------------------
    # Admin
    # -------------------------
    def recluster(self) -> int:
        with self._lock:
            return self.device_manager.recluster()

    def learn_placement(self, name: str, sensor: SensorObservation, expected: Sequence[Context]) -> DslProgram:
        """Synthesize a placement program from the current contexts and persist it."""
        with self._lock:
            program = learn_placement(sensor, self.contexts.contexts, expected, self.synthesizer)
            save_program(program, os.path.join(self.program_dir, f"{PLACEMENT_PREFIX}{name}.prog"))
            self.contexts.add_program(name, program)
        return program

    def learn_rule(self, trace: Trace, candidates: Sequence[int], **kwargs: Any) -> Rule:
        with self._lock:
            rule = learn_rule(trace, candidates, **kwargs)
            self.rules.store_rule(rule)
        return rule

    def run_stats(self) -> RunStats:
        """Connection counters plus the live dispatch and synthesis counters."""
        snapshot = self.stats.copy()
        with self._lock:
            history = list(self._history)
        for adapter in history:
            snapshot.add_dispatch(adapter.counts)
        snapshot.add_synthesis(self.synthesizer.stats)
        return snapshot

    def status(self) -> Dict[str, Any]:
        with self._lock:
            adapters = [a.to_dict() for a in self.adapters.values()]
        return {
            "brokers": [b.to_dict() for b in self.discovery.broker_list()],
            "adapters": adapters,
            "ranking": self.ranking.to_list(),
            "discovery": self.discovery.counts,
            "device_manager": self.device_manager.to_dict(),
            "stats": self.run_stats().to_dict(),
        }


# -------------------------
# Process entry point
# -------------------------
def run(config: GatewayConfig, serve_admin: bool = True) -> int:
    """
    Run the gateway until SIGTERM or SIGINT; returns the exit code.

    Raises:
        GatewayError: startup failed (bad program file, unreadable fixture).
    """
    gateway = Gateway(config)
    stop = threading.Event()

    def on_signal(signum, frame):
        logger.info("Received signal %d, shutting down.", signum)
        stop.set()

    signal.signal(signal.SIGTERM, on_signal)
    signal.signal(signal.SIGINT, on_signal)

    gateway.start()
    server = None
    if serve_admin and config.gateway.admin_port:
        from werkzeug.serving import make_server

        from gateway.app import create_app

        server = make_server(config.gateway.admin_host, config.gateway.admin_port,
                             create_app(gateway), threaded=True)
        threading.Thread(target=server.serve_forever, name="gateway-admin", daemon=True).start()
        logger.info("Admin API on http://%s:%d.", config.gateway.admin_host, config.gateway.admin_port)

    while not stop.wait(1.0):
        gateway.check_sessions()

    if server is not None:
        server.shutdown()
    gateway.stop()
    return 0
